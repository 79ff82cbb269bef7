//! Verdicts from human verification and the tallies derived from them.
//!
//! Verdict history is append-only; the latest verdict per
//! `(candidate, annotator)` counts. `Unsure` verdicts are left out of both
//! precision numerators and of the commit-level denominator, and are
//! reported separately.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::metrics::Tally;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Decision {
    TrueVfc,
    NotVfc,
    Unsure,
}

impl Decision {
    pub fn is_resolved(self) -> bool {
        self != Decision::Unsure
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdict {
    pub candidate_id: String,
    pub annotator: String,
    pub decision: Decision,
    #[serde(default)]
    pub note: String,
    pub decided_at: DateTime<Utc>,
}

/// Record part of a candidate id (`CVE:repo:sha`).
pub fn record_of(candidate_id: &str) -> &str {
    candidate_id.split_once(':').map_or(candidate_id, |(c, _)| c)
}

/// Latest decision per candidate for each annotator, in log order.
pub fn latest_by_annotator<'a, I>(history: I) -> BTreeMap<String, BTreeMap<String, Decision>>
where
    I: IntoIterator<Item = &'a Verdict>,
{
    let mut out: BTreeMap<String, BTreeMap<String, Decision>> = BTreeMap::new();
    for v in history {
        out.entry(v.annotator.clone())
            .or_default()
            .insert(v.candidate_id.clone(), v.decision);
    }
    out
}

/// Precision counts plus the unsure tally for one set of decisions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveTally {
    #[serde(flatten)]
    pub tally: Tally,
    pub unsure: u64,
    /// Candidates with any decision, unsure included.
    pub reviewed: u64,
}

/// Tally a candidate-to-decision map. Records count as sampled once one of
/// their candidates has a resolved decision.
pub fn tally_decisions<'a, I>(decisions: I) -> LiveTally
where
    I: IntoIterator<Item = (&'a str, Decision)>,
{
    let mut out = LiveTally::default();
    let mut sampled: BTreeSet<&str> = BTreeSet::new();
    let mut true_records: BTreeSet<&str> = BTreeSet::new();
    for (cand, d) in decisions {
        out.reviewed += 1;
        let rec = record_of(cand);
        match d {
            Decision::TrueVfc => {
                out.tally.candidate_vfcs += 1;
                out.tally.true_vfcs += 1;
                sampled.insert(rec);
                true_records.insert(rec);
            }
            Decision::NotVfc => {
                out.tally.candidate_vfcs += 1;
                sampled.insert(rec);
            }
            Decision::Unsure => out.unsure += 1,
        }
    }
    out.tally.sampled_records = sampled.len() as u64;
    out.tally.true_records = true_records.len() as u64;
    out
}

/// Consensus across annotators: a candidate is decided when every resolved
/// verdict on it agrees. Returns the agreed decisions and the number of
/// candidates left in disagreement.
pub fn consensus(
    by_annotator: &BTreeMap<String, BTreeMap<String, Decision>>,
) -> (BTreeMap<String, Decision>, u64) {
    let mut seen: BTreeMap<&str, BTreeSet<Decision>> = BTreeMap::new();
    for decisions in by_annotator.values() {
        for (c, d) in decisions {
            seen.entry(c.as_str()).or_default().insert(*d);
        }
    }
    let mut agreed = BTreeMap::new();
    let mut disagreements = 0;
    for (c, ds) in seen {
        let resolved: Vec<Decision> = ds.iter().copied().filter(|d| d.is_resolved()).collect();
        match resolved.as_slice() {
            [] => {
                agreed.insert(c.into(), Decision::Unsure);
            }
            [d] => {
                agreed.insert(c.into(), *d);
            }
            _ => disagreements += 1,
        }
    }
    (agreed, disagreements)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoOverlap;

impl fmt::Display for NoOverlap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("annotators share no resolved items")
    }
}

/// 2x2 agreement table: `both_true`, `a_true_b_not`, `a_not_b_true`, `both_not`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgreementTable {
    pub both_true: u64,
    pub a_true_b_not: u64,
    pub a_not_b_true: u64,
    pub both_not: u64,
}

impl AgreementTable {
    pub fn total(&self) -> u64 {
        self.both_true + self.a_true_b_not + self.a_not_b_true + self.both_not
    }

    pub fn observed_agreement(&self) -> f64 {
        (self.both_true + self.both_not) as f64 / self.total() as f64
    }

    /// Cohen's kappa, `(p_o - p_e) / (1 - p_e)`, evaluated over integer
    /// counts. Tables where chance agreement is total (both raters used a
    /// single label) score 1.0 on full agreement.
    pub fn kappa(&self) -> Result<f64, NoOverlap> {
        let n = self.total() as i128;
        if n == 0 {
            return Err(NoOverlap);
        }
        let agree = (self.both_true + self.both_not) as i128;
        let a_true = (self.both_true + self.a_true_b_not) as i128;
        let b_true = (self.both_true + self.a_not_b_true) as i128;
        let chance = a_true * b_true + (n - a_true) * (n - b_true);
        let denom = n * n - chance;
        if denom == 0 {
            return Ok(if agree == n { 1.0 } else { 0.0 });
        }
        Ok((n * agree - chance) as f64 / denom as f64)
    }
}

/// Agreement table over items both annotators resolved.
pub fn agreement_table(
    a: &BTreeMap<String, Decision>,
    b: &BTreeMap<String, Decision>,
) -> AgreementTable {
    let mut t = AgreementTable::default();
    for (item, da) in a {
        let Some(db) = b.get(item) else { continue };
        match (da, db) {
            (Decision::TrueVfc, Decision::TrueVfc) => t.both_true += 1,
            (Decision::TrueVfc, Decision::NotVfc) => t.a_true_b_not += 1,
            (Decision::NotVfc, Decision::TrueVfc) => t.a_not_b_true += 1,
            (Decision::NotVfc, Decision::NotVfc) => t.both_not += 1,
            _ => {}
        }
    }
    t
}

/// Two-rater Cohen's kappa over TrueVfc/NotVfc; unsure items are dropped
/// pairwise.
pub fn kappa(a: &BTreeMap<String, Decision>, b: &BTreeMap<String, Decision>) -> Result<f64, NoOverlap> {
    agreement_table(a, b).kappa()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;
    use alloc::string::ToString;

    #[test]
    fn fixed_table() {
        let t = AgreementTable { both_true: 40, a_true_b_not: 10, a_not_b_true: 10, both_not: 40 };
        assert_eq!(t.kappa(), Ok(0.6));
    }

    #[test]
    fn perfect_and_chance() {
        let a: BTreeMap<String, Decision> = (0..20)
            .map(|i| (i.to_string(), if i % 3 == 0 { Decision::TrueVfc } else { Decision::NotVfc }))
            .collect();
        assert_eq!(kappa(&a, &a), Ok(1.0));
        let t = AgreementTable { both_true: 25, a_true_b_not: 25, a_not_b_true: 25, both_not: 25 };
        assert_eq!(t.kappa(), Ok(0.0));
        let all_true: BTreeMap<String, Decision> =
            (0..5).map(|i| (i.to_string(), Decision::TrueVfc)).collect();
        assert_eq!(kappa(&all_true, &all_true), Ok(1.0));
        assert_eq!(kappa(&BTreeMap::new(), &a), Err(NoOverlap));
    }

    #[test]
    fn unsure_dropped_pairwise() {
        let mut a = BTreeMap::new();
        let mut b = BTreeMap::new();
        a.insert("x".to_string(), Decision::Unsure);
        b.insert("x".to_string(), Decision::TrueVfc);
        assert_eq!(kappa(&a, &b), Err(NoOverlap));
    }

    #[test]
    fn tally_counts_unsure_separately() {
        let ds: Vec<(String, Decision)> = (0..12)
            .map(|i| {
                let d = match i {
                    0..=8 => Decision::TrueVfc,
                    9 => Decision::NotVfc,
                    _ => Decision::Unsure,
                };
                (format!("CVE-2020-{:04}:github.com/o/r:abcdef{i}", 1000 + i / 2), d)
            })
            .collect();
        let t = tally_decisions(ds.iter().map(|(c, d)| (c.as_str(), *d)));
        assert_eq!(t.tally.candidate_vfcs, 10);
        assert_eq!(t.tally.true_vfcs, 9);
        assert_eq!(t.unsure, 2);
        assert_eq!(t.reviewed, 12);
        assert_eq!(t.tally.sampled_records, 5);
        assert_eq!(t.tally.true_records, 5);
    }

    #[test]
    fn consensus_splits_disagreement() {
        let mut m: BTreeMap<String, BTreeMap<String, Decision>> = BTreeMap::new();
        m.entry("a".into()).or_default().insert("c1".into(), Decision::TrueVfc);
        m.entry("b".into()).or_default().insert("c1".into(), Decision::TrueVfc);
        m.entry("a".into()).or_default().insert("c2".into(), Decision::TrueVfc);
        m.entry("b".into()).or_default().insert("c2".into(), Decision::NotVfc);
        m.entry("b".into()).or_default().insert("c3".into(), Decision::Unsure);
        m.entry("a".into()).or_default().insert("c3".into(), Decision::NotVfc);
        let (agreed, dis) = consensus(&m);
        assert_eq!(dis, 1);
        assert_eq!(agreed["c1"], Decision::TrueVfc);
        assert_eq!(agreed["c3"], Decision::NotVfc);
        assert!(!agreed.contains_key("c2"));
    }
}
