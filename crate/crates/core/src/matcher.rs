//! Cross-validation of forge links against a record's CPE products.
//!
//! Tokens are lowercased and stripped of `-`, `_` and `.` before comparison.
//! Token similarity is the maximum of exact equality (1.0), containment of
//! one token in the other (0.9, shorter token at least three characters) and
//! the normalized edit-distance ratio `1 - lev(a, b) / max(|a|, |b|)`.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::candidate::{CandidateFlag, Source, VfcCandidate};
use crate::cpe::Cpe23;
use crate::record::NvdRecord;

pub const DEFAULT_THRESHOLD: f64 = 0.8;
const CONTAINMENT_SCORE: f64 = 0.9;
const MIN_CONTAINED_LEN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MatchOn {
    None,
    VendorOwner,
    ProductRepo,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchVerdict {
    pub matched: bool,
    pub score: f64,
    pub matched_on: MatchOn,
}

impl MatchVerdict {
    pub const NONE: MatchVerdict = MatchVerdict {
        matched: false,
        score: 0.0,
        matched_on: MatchOn::None,
    };
}

/// Known CPE-token to forge-token aliases (organization renames and the
/// like). Keys and values are stored normalized.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AliasTable(BTreeMap<String, BTreeSet<String>>);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AliasParseError {
    pub line: usize,
}

impl fmt::Display for AliasParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: expected cpe_token=forge_token", self.line)
    }
}

impl AliasTable {
    /// Parse `cpe_token=forge_token` lines. Blank lines and `#` comments are
    /// skipped.
    pub fn parse(text: &str) -> Result<Self, AliasParseError> {
        let mut t = AliasTable::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (a, b) = line
                .split_once('=')
                .filter(|(a, b)| !a.trim().is_empty() && !b.trim().is_empty())
                .ok_or(AliasParseError { line: i + 1 })?;
            t.insert(a, b);
        }
        Ok(t)
    }

    pub fn insert(&mut self, cpe_token: &str, forge_token: &str) {
        self.0
            .entry(normalize_token(cpe_token))
            .or_default()
            .insert(normalize_token(forge_token));
    }

    fn expand<'a>(&'a self, token: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        core::iter::once(token).chain(self.0.get(token).into_iter().flatten().map(String::as_str))
    }
}

pub fn normalize_token(s: &str) -> String {
    s.chars()
        .filter(|c| !matches!(c, '-' | '_' | '.'))
        .flat_map(char::to_lowercase)
        .collect()
}

fn levenshtein(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = alloc::vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Similarity of two already-normalized tokens, in `[0, 1]`.
pub fn token_similarity(a: &str, b: &str) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    let ac: Vec<char> = a.chars().collect();
    let bc: Vec<char> = b.chars().collect();
    let longest = ac.len().max(bc.len());
    let ratio = 1.0 - levenshtein(&ac, &bc) as f64 / longest as f64;
    let shortest = ac.len().min(bc.len());
    let contained = shortest >= MIN_CONTAINED_LEN && (a.contains(b) || b.contains(a));
    if contained {
        ratio.max(CONTAINMENT_SCORE)
    } else {
        ratio
    }
}

fn best(cpe_token: &str, forge_tokens: &[String], aliases: &AliasTable) -> f64 {
    aliases
        .expand(cpe_token)
        .flat_map(|c| forge_tokens.iter().map(move |f| token_similarity(c, f)))
        .fold(0.0, f64::max)
}

/// Score `owner/repo` against the record's CPEs. The score is the maximum,
/// over CPEs, of the better of product-vs-repo and vendor-vs-owner.
pub fn match_repo(
    owner: &str,
    repo: &str,
    cpes: &[Cpe23],
    threshold: f64,
    aliases: &AliasTable,
) -> MatchVerdict {
    let repo_tokens = [normalize_token(repo)];
    // Nested owners (GitLab subgroups) compare on the full path and on each
    // segment.
    let mut owner_tokens: Vec<String> = owner.split('/').map(normalize_token).collect();
    if owner_tokens.len() > 1 {
        owner_tokens.push(normalize_token(owner));
    }

    let mut verdict = MatchVerdict::NONE;
    for cpe in cpes {
        let product = cpe
            .product_token()
            .map_or(0.0, |p| best(&normalize_token(&p), &repo_tokens, aliases));
        let vendor = cpe
            .vendor_token()
            .map_or(0.0, |v| best(&normalize_token(&v), &owner_tokens, aliases));
        let score = product.max(vendor);
        let on = match (product >= threshold, vendor >= threshold) {
            (true, true) => MatchOn::Both,
            (true, false) => MatchOn::ProductRepo,
            (false, true) => MatchOn::VendorOwner,
            (false, false) => MatchOn::None,
        };
        if (score, on) > (verdict.score, verdict.matched_on) {
            verdict = MatchVerdict {
                matched: on != MatchOn::None,
                score,
                matched_on: on,
            };
        }
    }
    verdict
}

/// Whether any CPE carries a concrete vendor or product to compare against.
pub fn has_usable_cpe(cpes: &[Cpe23]) -> bool {
    cpes.iter()
        .any(|c| c.vendor_token().is_some() || c.product_token().is_some())
}

pub fn match_link(
    link: &crate::link::GitLink,
    cpes: &[Cpe23],
    threshold: f64,
    aliases: &AliasTable,
) -> MatchVerdict {
    match_repo(&link.owner, &link.repo, cpes, threshold, aliases)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<VfcCandidate>,
    pub rejected: Vec<(VfcCandidate, MatchVerdict)>,
}

/// Split candidates into kept and rejected by CPE cross-validation.
///
/// Records without usable CPE data keep every candidate, flagged
/// `unvalidated`. Candidates asserted as fixes by an advisory source are
/// kept regardless of the match.
pub fn filter_candidates(
    cands: Vec<VfcCandidate>,
    record: &NvdRecord,
    threshold: f64,
    aliases: &AliasTable,
) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    let usable = has_usable_cpe(&record.cpes);
    for c in cands {
        if !usable {
            out.kept.push(c.with_flag(CandidateFlag::Unvalidated));
            continue;
        }
        let (owner, repo) = c.owner_repo().map_or((String::new(), String::new()), |(o, r)| {
            (o.to_string(), r.to_string())
        });
        let v = match_repo(&owner, &repo, &record.cpes, threshold, aliases);
        let asserted = c
            .sources
            .iter()
            .any(|s| matches!(s, Source::S2 { source_asserted: true, .. }));
        if v.matched || asserted {
            out.kept.push(c);
        } else {
            out.rejected.push((c, v));
        }
    }
    out
}
