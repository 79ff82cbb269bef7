//! Ranked commit lists produced by repository-search tools, the score
//! threshold that turns them into candidates, and Recall@k.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::candidate::{CommitSha, Score, Source, VfcCandidate};
use crate::category::Category;
use crate::link::{classify, HostAllowlist};
use crate::record::CveId;

/// Default cut-off for Prospector relevance scores.
pub const DEFAULT_MIN_SCORE: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCommit {
    pub sha: String,
    pub score: f64,
    pub rank: u32,
}

/// One tool's ranking for one `(cve, repository)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolRanking {
    pub tool: String,
    pub cve_id: CveId,
    pub repo_url: String,
    pub entries: Vec<RankedCommit>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RankingError {
    /// Ranks are not exactly `1..=n`.
    RankGap { expected: u32, found: u32 },
    DuplicateRank(u32),
}

impl fmt::Display for RankingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankingError::RankGap { expected, found } => {
                write!(f, "expected rank {expected}, found {found}")
            }
            RankingError::DuplicateRank(r) => write!(f, "duplicate rank {r}"),
        }
    }
}

impl ToolRanking {
    /// Sort entries by rank and check ranks run `1..=n` without gaps.
    pub fn normalize(&mut self) -> Result<(), RankingError> {
        self.entries.sort_by_key(|e| e.rank);
        for (i, e) in self.entries.iter().enumerate() {
            let expected = i as u32 + 1;
            if e.rank != expected {
                if i > 0 && self.entries[i - 1].rank == e.rank {
                    return Err(RankingError::DuplicateRank(e.rank));
                }
                return Err(RankingError::RankGap { expected, found: e.rank });
            }
        }
        Ok(())
    }

    /// Assign ranks from scores: higher score first, ties by ascending SHA.
    pub fn rank_by_score(&mut self) {
        self.entries.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| a.sha.to_ascii_lowercase().cmp(&b.sha.to_ascii_lowercase()))
        });
        for (i, e) in self.entries.iter_mut().enumerate() {
            e.rank = i as u32 + 1;
        }
    }

    pub fn top_k(&self, k: usize) -> impl Iterator<Item = &RankedCommit> {
        self.entries.iter().filter(move |e| (e.rank as usize) <= k)
    }
}

/// How the score cut-off is applied. The default is strict (`score > min`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreThreshold {
    pub min_score: f64,
    pub inclusive: bool,
}

impl Default for ScoreThreshold {
    fn default() -> Self {
        ScoreThreshold { min_score: DEFAULT_MIN_SCORE, inclusive: false }
    }
}

impl ScoreThreshold {
    pub fn strict(min_score: f64) -> Self {
        ScoreThreshold { min_score, inclusive: false }
    }

    pub fn admits(&self, score: f64) -> bool {
        if self.inclusive {
            score >= self.min_score
        } else {
            score > self.min_score
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct S3Harvest {
    pub candidates: Vec<VfcCandidate>,
    /// Rankings dropped because the CVE is unknown or the repository URL is
    /// not a forge repository.
    pub skipped: Vec<(CveId, String)>,
}

/// Turn above-threshold ranking entries into candidates, in ranking order.
pub fn harvest_s3<F>(
    rankings: &[ToolRanking],
    threshold: ScoreThreshold,
    allow: &HostAllowlist,
    category_of: F,
    now: DateTime<Utc>,
) -> S3Harvest
where
    F: Fn(&CveId) -> Option<Category>,
{
    let mut out = S3Harvest::default();
    for r in rankings {
        let repo = classify(&r.repo_url, allow);
        let (Some(category), Some(repo)) = (category_of(&r.cve_id), repo) else {
            out.skipped.push((r.cve_id.clone(), r.repo_url.clone()));
            continue;
        };
        for e in r.entries.iter().filter(|e| threshold.admits(e.score)) {
            let Ok(sha) = CommitSha::parse(&e.sha) else { continue };
            out.candidates.push(VfcCandidate::new(
                r.cve_id.clone(),
                repo.repo_id(),
                sha,
                Source::S3 { tool: r.tool.clone(), score: Score(e.score), rank: e.rank },
                category,
                now,
            ));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecallError {
    /// No ground truth at all, or a CVE with an empty truth set.
    EmptyTruth,
    ZeroK,
}

impl fmt::Display for RecallError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecallError::EmptyTruth => f.write_str("ground truth is empty"),
            RecallError::ZeroK => f.write_str("k must be positive"),
        }
    }
}

/// `(true fixes found in any top-k list for their CVE, all true fixes)`.
pub fn recall_counts(
    rankings: &[ToolRanking],
    truth: &BTreeMap<CveId, BTreeSet<String>>,
    k: usize,
) -> Result<(u64, u64), RecallError> {
    if k == 0 {
        return Err(RecallError::ZeroK);
    }
    if truth.is_empty() || truth.values().any(BTreeSet::is_empty) {
        return Err(RecallError::EmptyTruth);
    }
    let mut top: BTreeMap<&CveId, BTreeSet<String>> = BTreeMap::new();
    for r in rankings {
        top.entry(&r.cve_id)
            .or_default()
            .extend(r.top_k(k).map(|e| e.sha.to_ascii_lowercase()));
    }
    let mut hits = 0;
    let mut total = 0;
    for (cve, shas) in truth {
        let found = top.get(cve);
        for sha in shas {
            total += 1;
            if found.is_some_and(|f| f.contains(&sha.to_ascii_lowercase())) {
                hits += 1;
            }
        }
    }
    Ok((hits, total))
}

/// Fraction of ground-truth fixes appearing within the top `k` predictions.
pub fn recall_at_k(
    rankings: &[ToolRanking],
    truth: &BTreeMap<CveId, BTreeSet<String>>,
    k: usize,
) -> Result<f64, RecallError> {
    let (hits, total) = recall_counts(rankings, truth, k)?;
    Ok(hits as f64 / total as f64)
}
