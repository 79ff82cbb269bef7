//! Depth-bounded reference trees.
//!
//! Depth 0 holds the record's own references. Pages at depths below
//! `max_depth` are fetched and the links they contain become their children;
//! nodes at `max_depth` are kept but never fetched. Git links are leaves at
//! every depth. Fetching is delegated to a [`PageFetcher`], which receives one
//! batch per level so an implementation can fan out concurrently while the
//! tree itself stays deterministic.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::candidate::{CandidateFlag, CandidateKey, CommitSha, PendingExpansion, Source, VfcCandidate};
use crate::category::Category;
use crate::link::{classify, HostAllowlist, LinkKind};
use crate::record::NvdRecord;
use crate::url;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FetchStatus {
    Fetched,
    Cached,
    Failed,
    SkippedByPolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefNode {
    pub url: String,
    pub depth: u32,
    pub parent: Option<String>,
    pub fetch_status: FetchStatus,
    pub discovered_links: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CrawlPolicy {
    pub max_depth: u32,
    pub per_host_delay_ms: u64,
    pub global_concurrency: u32,
    pub timeout_secs: u64,
    pub max_pages_per_record: u32,
    pub cache_dir: Option<String>,
}

impl Default for CrawlPolicy {
    fn default() -> Self {
        CrawlPolicy {
            max_depth: 2,
            per_host_delay_ms: 1000,
            global_concurrency: 8,
            timeout_secs: 20,
            max_pages_per_record: 50,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidPolicy {
    pub field: &'static str,
    pub reason: &'static str,
}

impl fmt::Display for InvalidPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

impl CrawlPolicy {
    pub fn validate(&self) -> Result<(), InvalidPolicy> {
        let positive = |field, ok: bool| {
            if ok {
                Ok(())
            } else {
                Err(InvalidPolicy { field, reason: "must be positive" })
            }
        };
        if self.max_depth < 1 {
            return Err(InvalidPolicy { field: "max_depth", reason: "must be at least 1" });
        }
        positive("per_host_delay_ms", self.per_host_delay_ms > 0)?;
        positive("global_concurrency", self.global_concurrency > 0)?;
        positive("timeout_secs", self.timeout_secs > 0)?;
        positive("max_pages_per_record", self.max_pages_per_record > 0)
    }
}

/// Result of fetching one page: its status and the absolute links found on it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageOutcome {
    pub status: FetchStatus,
    pub links: Vec<String>,
}

impl PageOutcome {
    pub fn failed() -> Self {
        PageOutcome { status: FetchStatus::Failed, links: Vec::new() }
    }

    pub fn skipped() -> Self {
        PageOutcome { status: FetchStatus::SkippedByPolicy, links: Vec::new() }
    }
}

pub trait PageFetcher {
    /// Fetch every URL and return one outcome per URL, in input order.
    fn fetch_batch(&mut self, urls: &[String]) -> Vec<PageOutcome>;
}

/// Adapts a per-URL closure into a sequential fetcher.
pub struct FnFetcher<F>(pub F);

impl<F: FnMut(&str) -> PageOutcome> PageFetcher for FnFetcher<F> {
    fn fetch_batch(&mut self, urls: &[String]) -> Vec<PageOutcome> {
        urls.iter().map(|u| (self.0)(u)).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefTree {
    pub nodes: Vec<RefNode>,
    /// The page budget ran out before every fetchable node was fetched.
    pub truncated: bool,
}

impl RefTree {
    pub fn fetched_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n.fetch_status, FetchStatus::Fetched | FetchStatus::Cached))
            .count()
    }
}

/// Tree with only the record's own references, nothing fetched.
pub fn direct_tree(record: &NvdRecord) -> RefTree {
    let mut seen = BTreeSet::new();
    let nodes = record
        .references
        .iter()
        .filter(|r| seen.insert(url::normalize(&r.url)))
        .map(|r| RefNode {
            url: r.url.clone(),
            depth: 0,
            parent: None,
            fetch_status: FetchStatus::SkippedByPolicy,
            discovered_links: Vec::new(),
        })
        .collect();
    RefTree { nodes, truncated: false }
}

pub fn build_tree<F: PageFetcher + ?Sized>(
    record: &NvdRecord,
    policy: &CrawlPolicy,
    allow: &HostAllowlist,
    fetcher: &mut F,
) -> RefTree {
    let mut tree = direct_tree(record);
    let mut seen: BTreeSet<String> = tree.nodes.iter().map(|n| url::normalize(&n.url)).collect();
    let mut budget = policy.max_pages_per_record as usize;
    let mut level_start = 0;

    for depth in 0..policy.max_depth {
        let level_end = tree.nodes.len();
        if level_start == level_end {
            break;
        }
        let mut to_fetch = Vec::new();
        for idx in level_start..level_end {
            let node = &tree.nodes[idx];
            let fetchable = classify(&node.url, allow).is_none()
                && url::split(&node.url).is_some_and(|p| p.is_http());
            if !fetchable {
                continue;
            }
            if budget == 0 {
                tree.truncated = true;
                continue;
            }
            budget -= 1;
            to_fetch.push(idx);
        }

        let urls: Vec<String> = to_fetch.iter().map(|&i| tree.nodes[i].url.clone()).collect();
        let outcomes = if urls.is_empty() {
            Vec::new()
        } else {
            fetcher.fetch_batch(&urls)
        };
        for (&idx, outcome) in to_fetch.iter().zip(outcomes) {
            let mut links = Vec::new();
            let mut local = BTreeSet::new();
            for l in outcome.links {
                let norm = url::normalize(&l);
                if local.insert(norm.clone()) {
                    links.push((l, norm));
                }
            }
            let parent = tree.nodes[idx].url.clone();
            for (l, norm) in &links {
                if seen.insert(norm.clone()) {
                    tree.nodes.push(RefNode {
                        url: l.clone(),
                        depth: depth + 1,
                        parent: Some(parent.clone()),
                        fetch_status: FetchStatus::SkippedByPolicy,
                        discovered_links: Vec::new(),
                    });
                }
            }
            let node = &mut tree.nodes[idx];
            node.fetch_status = outcome.status;
            node.discovered_links = links.into_iter().map(|(l, _)| l).collect();
        }
        level_start = level_end;
    }
    tree
}

/// Output of harvesting one record's tree: commit candidates plus links that
/// still need forge expansion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct S1Harvest {
    pub candidates: Vec<VfcCandidate>,
    pub expansions: Vec<PendingExpansion>,
}

/// Collect candidate-eligible forge links from a tree. Each carries the
/// depth it was found at and whether its originating NVD reference was
/// tagged Patch.
pub fn harvest_s1(
    record: &NvdRecord,
    tree: &RefTree,
    allow: &HostAllowlist,
    category: Category,
    now: DateTime<Utc>,
) -> S1Harvest {
    let root_patch: BTreeMap<String, bool> = record
        .references
        .iter()
        .map(|r| (url::normalize(&r.url), r.is_patch()))
        .fold(BTreeMap::new(), |mut m, (u, p)| {
            *m.entry(u).or_insert(false) |= p;
            m
        });
    let parent_of: BTreeMap<String, Option<String>> = tree
        .nodes
        .iter()
        .map(|n| (url::normalize(&n.url), n.parent.as_ref().map(|p| url::normalize(p))))
        .collect();
    let origin_patch = |node: &RefNode| -> bool {
        let mut cur = url::normalize(&node.url);
        // Depth bounds the walk; the cap guards malformed input.
        for _ in 0..=node.depth {
            match parent_of.get(&cur) {
                Some(Some(p)) => cur = p.clone(),
                _ => break,
            }
        }
        root_patch.get(&cur).copied().unwrap_or(false)
    };

    let mut cands: BTreeMap<CandidateKey, VfcCandidate> = BTreeMap::new();
    let mut expansions = Vec::new();
    let mut seen_links = BTreeSet::new();
    for node in &tree.nodes {
        let Some(link) = classify(&node.url, allow) else { continue };
        if !link.kind.is_candidate_eligible() {
            continue;
        }
        let source = Source::S1 { depth: node.depth, patch_tagged: origin_patch(node) };
        let mut flags = BTreeSet::new();
        if tree.truncated {
            flags.insert(CandidateFlag::TruncatedCrawl);
        }
        if link.kind == LinkKind::Commit {
            let Ok(sha) = CommitSha::parse(&link.ident) else { continue };
            let mut c = VfcCandidate::new(
                record.cve_id.clone(),
                link.repo_id(),
                sha,
                source,
                category,
                now,
            );
            c.flags.extend(flags);
            cands
                .entry(c.key())
                .and_modify(|e| e.sources.extend(c.sources.iter().cloned()))
                .or_insert(c);
        } else if seen_links.insert(link.clone()) {
            expansions.push(PendingExpansion {
                cve_id: record.cve_id.clone(),
                link,
                source,
                category,
                flags,
            });
        }
    }
    S1Harvest {
        candidates: cands.into_values().collect(),
        expansions,
    }
}

impl fmt::Display for FetchStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            FetchStatus::Fetched => "fetched",
            FetchStatus::Cached => "cached",
            FetchStatus::Failed => "failed",
            FetchStatus::SkippedByPolicy => "skipped",
        };
        f.write_str(s)
    }
}

impl RefNode {
    pub fn is_root(&self) -> bool {
        self.depth == 0
    }
}
