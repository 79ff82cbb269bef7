//! Deduplicated candidate corpus with source provenance, and the record- and
//! commit-level overlap between sources.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::candidate::{CandidateFlag, CandidateKey, SourceKind, VfcCandidate};
use crate::record::CveId;

/// Candidates keyed by `(cve_id, repo_id, sha)`; iteration follows that order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CandidateStore {
    items: BTreeMap<CandidateKey, VfcCandidate>,
}

impl CandidateStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Merge any number of batches into a fresh store.
    pub fn merge<I, B>(batches: I) -> Self
    where
        I: IntoIterator<Item = B>,
        B: IntoIterator<Item = VfcCandidate>,
    {
        let mut s = CandidateStore::new();
        for b in batches {
            s.extend(b);
        }
        s.compact();
        s
    }

    /// Union candidates in without compacting.
    pub fn extend<I: IntoIterator<Item = VfcCandidate>>(&mut self, batch: I) {
        for c in batch {
            self.insert(c);
        }
    }

    pub fn insert(&mut self, c: VfcCandidate) {
        match self.items.get_mut(&c.key()) {
            Some(e) => absorb(e, c),
            None => {
                self.items.insert(c.key(), c);
            }
        }
    }

    /// Fold provisional SHA prefixes into the unique longer SHA they prefix
    /// within the same `(cve, repo)`. Ambiguous prefixes stay separate.
    pub fn compact(&mut self) {
        let mut groups: BTreeMap<(CveId, String), Vec<CandidateKey>> = BTreeMap::new();
        for k in self.items.keys() {
            groups.entry((k.0.clone(), k.1.clone())).or_default().push(k.clone());
        }
        for keys in groups.into_values() {
            if keys.len() < 2 {
                continue;
            }
            // Shortest first so chains of prefixes collapse toward the full id.
            let mut by_len = keys.clone();
            by_len.sort_by_key(|k| (k.2.as_str().len(), k.2.clone()));
            for short in &by_len {
                if short.2.is_full() || !self.items.contains_key(short) {
                    continue;
                }
                let longer: Vec<&CandidateKey> = by_len
                    .iter()
                    .filter(|k| k.2.as_str().len() > short.2.as_str().len())
                    .filter(|k| short.2.is_prefix_of(&k.2))
                    .filter(|k| self.items.contains_key(*k))
                    .collect();
                // Distinct maximal targets: discard those that prefix another.
                let targets: Vec<&CandidateKey> = longer
                    .iter()
                    .copied()
                    .filter(|t| !longer.iter().any(|o| o.2 != t.2 && t.2.is_prefix_of(&o.2)))
                    .collect();
                if targets.len() == 1 {
                    let c = self.items.remove(short).expect("present");
                    let target = self.items.get_mut(targets[0]).expect("present");
                    absorb(target, c);
                }
            }
        }
        for c in self.items.values_mut() {
            if c.sha.is_full() {
                c.flags.remove(&CandidateFlag::ProvisionalSha);
            } else {
                c.flags.insert(CandidateFlag::ProvisionalSha);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &VfcCandidate> {
        self.items.values()
    }

    pub fn get(&self, key: &CandidateKey) -> Option<&VfcCandidate> {
        self.items.get(key)
    }

    pub fn into_vec(self) -> Vec<VfcCandidate> {
        self.items.into_values().collect()
    }

    /// Distinct records with at least one candidate.
    pub fn records(&self) -> BTreeSet<&CveId> {
        self.items.keys().map(|k| &k.0).collect()
    }

    pub fn records_from(&self, kind: SourceKind) -> BTreeSet<&CveId> {
        self.iter()
            .filter(|c| c.has_source(kind))
            .map(|c| &c.cve_id)
            .collect()
    }

    pub fn vfcs_from(&self, kind: SourceKind) -> BTreeSet<&CandidateKey> {
        self.items
            .iter()
            .filter(|(_, c)| c.has_source(kind))
            .map(|(k, _)| k)
            .collect()
    }

    pub fn overlap(&self, sources: &BTreeSet<SourceKind>) -> OverlapReport {
        overlap(self, sources)
    }
}

impl FromIterator<VfcCandidate> for CandidateStore {
    fn from_iter<T: IntoIterator<Item = VfcCandidate>>(iter: T) -> Self {
        CandidateStore::merge([iter.into_iter().collect::<Vec<_>>()])
    }
}

fn absorb(into: &mut VfcCandidate, from: VfcCandidate) {
    into.sources.extend(from.sources);
    into.flags.extend(from.flags);
    if from.first_seen < into.first_seen {
        into.first_seen = from.first_seen;
    }
    if from.category < into.category {
        into.category = from.category;
    }
}

/// Set cardinalities for one group of sources. For a pair `(A, B)`,
/// `unique[A] + shared == total[A]`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapCounts {
    pub shared: u64,
    pub unique: BTreeMap<SourceKind, u64>,
    pub total: BTreeMap<SourceKind, u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapEntry {
    pub sources: Vec<SourceKind>,
    pub records: OverlapCounts,
    pub vfcs: OverlapCounts,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub entries: Vec<OverlapEntry>,
}

impl OverlapReport {
    pub fn entry(&self, sources: &[SourceKind]) -> Option<&OverlapEntry> {
        self.entries.iter().find(|e| e.sources == sources)
    }

    /// Check `unique + shared == total` for every pair entry.
    pub fn pair_identities_hold(&self) -> bool {
        self.entries
            .iter()
            .filter(|e| e.sources.len() == 2)
            .all(|e| [&e.records, &e.vfcs].iter().all(|c| c.identity_holds()))
    }
}

impl OverlapCounts {
    fn identity_holds(&self) -> bool {
        self.total
            .iter()
            .all(|(k, t)| self.unique.get(k).copied().unwrap_or(0) + self.shared == *t)
    }
}

/// Counts over explicit member sets: `shared` is the intersection of all
/// sets, `unique[k]` the members of `k` found in no other set of the group.
pub fn overlap_counts<T: Ord>(sets: &[(SourceKind, BTreeSet<T>)]) -> OverlapCounts {
    let mut out = OverlapCounts::default();
    let Some(((_, first), rest)) = sets.split_first() else {
        return out;
    };
    out.shared = first
        .iter()
        .filter(|x| rest.iter().all(|(_, s)| s.contains(*x)))
        .count() as u64;
    for (i, (k, s)) in sets.iter().enumerate() {
        let unique = s
            .iter()
            .filter(|x| sets.iter().enumerate().all(|(j, (_, o))| j == i || !o.contains(*x)))
            .count() as u64;
        out.unique.insert(*k, unique);
        out.total.insert(*k, s.len() as u64);
    }
    out
}

/// Record- and VFC-level overlap for every pair of the given sources, plus
/// the full group when three are given. Fewer than two sources yields an
/// empty report.
pub fn overlap(store: &CandidateStore, sources: &BTreeSet<SourceKind>) -> OverlapReport {
    let kinds: Vec<SourceKind> = sources.iter().copied().collect();
    let mut groups: Vec<Vec<SourceKind>> = Vec::new();
    for i in 0..kinds.len() {
        for j in i + 1..kinds.len() {
            groups.push(alloc::vec![kinds[i], kinds[j]]);
        }
    }
    if kinds.len() > 2 {
        groups.push(kinds.clone());
    }
    let entries = groups
        .into_iter()
        .map(|g| {
            let rec: Vec<_> = g.iter().map(|k| (*k, store.records_from(*k))).collect();
            let vfc: Vec<_> = g.iter().map(|k| (*k, store.vfcs_from(*k))).collect();
            OverlapEntry {
                records: overlap_counts(&rec),
                vfcs: overlap_counts(&vfc),
                sources: g,
            }
        })
        .collect();
    OverlapReport { entries }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use crate::candidate::{AdvisoryDb, CommitSha, Source};
    use crate::category::Category;
    use chrono::DateTime;

    const FULL: &str = "0123abcd0123abcd0123abcd0123abcd0123abcd";

    fn cand(sha: &str, source: Source) -> VfcCandidate {
        VfcCandidate::new(
            CveId::parse("CVE-2020-1000").unwrap(),
            "github.com/o/r",
            CommitSha::parse(sha).unwrap(),
            source,
            Category::C1,
            DateTime::UNIX_EPOCH,
        )
    }

    fn s1() -> Source {
        Source::S1 { depth: 0, patch_tagged: true }
    }
    fn s2() -> Source {
        Source::S2 { db_name: AdvisoryDb::OsvDev, source_asserted: false }
    }

    #[test]
    fn same_commit_two_sources() {
        let st = CandidateStore::merge([vec![cand(FULL, s1())], vec![cand(FULL, s2())]]);
        assert_eq!(st.len(), 1);
        let c = st.iter().next().unwrap();
        assert_eq!(c.source_kinds().len(), 2);
    }

    #[test]
    fn prefix_collapses() {
        let st = CandidateStore::merge([vec![cand("0123abcd", s1())], vec![cand(FULL, s2())]]);
        assert_eq!(st.len(), 1);
        let c = st.iter().next().unwrap();
        assert_eq!(c.sha.as_str(), FULL);
        assert!(!c.flags.contains(&CandidateFlag::ProvisionalSha));
        assert_eq!(c.sources.len(), 2);
    }

    #[test]
    fn ambiguous_prefix_stays() {
        let other = "0123abcdffffffffffffffffffffffffffffffff";
        let st = CandidateStore::merge([vec![cand("0123abcd", s1()), cand(FULL, s2()), cand(other, s2())]]);
        assert_eq!(st.len(), 3);
    }

    #[test]
    fn overlap_pairs() {
        let st = CandidateStore::merge([vec![cand(FULL, s1())]]);
        let r = overlap(&st, &[SourceKind::S1, SourceKind::S2].into_iter().collect());
        let e = r.entry(&[SourceKind::S1, SourceKind::S2]).unwrap();
        assert_eq!(e.vfcs.shared, 0);
        assert_eq!(e.vfcs.unique[&SourceKind::S1], 1);
        assert_eq!(e.vfcs.unique[&SourceKind::S2], 0);
        assert!(r.pair_identities_hold());
        assert!(overlap(&st, &[SourceKind::S1].into_iter().collect()).entries.is_empty());
    }
}
