use std::collections::BTreeSet;

use chrono::{DateTime, TimeZone, Utc};
use proptest::prelude::*;
use vfcmap_core::candidate::{AdvisoryDb, Score, SourceKind};
use vfcmap_core::store::overlap_counts;
use vfcmap_core::{CandidateFlag, CandidateStore, Category, CommitSha, CveId, Source, VfcCandidate};

fn t(day: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 1, day, 0, 0, 0).unwrap()
}

fn cand(cve: &str, repo: &str, sha: &str, src: Source) -> VfcCandidate {
    VfcCandidate::new(CveId::parse(cve).unwrap(), repo, CommitSha::parse(sha).unwrap(), src, Category::C1, t(1))
}

fn s1() -> Source {
    Source::S1 { depth: 0, patch_tagged: true }
}
fn s2() -> Source {
    Source::S2 { db_name: AdvisoryDb::OsvDev, source_asserted: true }
}
fn s3() -> Source {
    Source::S3 { tool: "prospector".into(), score: Score(72.5), rank: 1 }
}

#[test]
fn golden_three_source_merge() {
    // S1: five commits over three records.
    let a = [
        cand("CVE-2020-0001", "github.com/o/a", "1111111111111111111111111111111111111111", s1()),
        cand("CVE-2020-0001", "github.com/o/a", "2222222222222222222222222222222222222222", s1()),
        cand("CVE-2020-0002", "github.com/o/b", "3333333333333333333333333333333333333333", s1()),
        cand("CVE-2020-0003", "github.com/o/c", "4444444444444444444444444444444444444444", s1()),
        cand("CVE-2020-0003", "github.com/o/c", "5555555555555555555555555555555555555555", s1()),
    ];
    // S2: four, two shared with S1 (one of them by abbreviated SHA).
    let b = [
        cand("CVE-2020-0001", "github.com/o/a", "1111111111111111111111111111111111111111", s2()),
        cand("CVE-2020-0002", "github.com/O/B", "33333333", s2()),
        cand("CVE-2020-0004", "github.com/o/d", "6666666666666666666666666666666666666666", s2()),
        cand("CVE-2020-0004", "github.com/o/d", "7777777777777777777777777777777777777777", s2()),
    ];
    // S3: two, one shared with S2.
    let c = [
        cand("CVE-2020-0004", "github.com/o/d", "7777777777777777777777777777777777777777", s3()),
        cand("CVE-2020-0005", "github.com/o/e", "8888888888888888888888888888888888888888", s3()),
    ];
    let store = CandidateStore::merge([a.to_vec(), b.to_vec(), c.to_vec()]);
    assert_eq!(store.len(), 8);
    let folded = store
        .iter()
        .find(|x| x.sha.as_str().starts_with("3333"))
        .unwrap();
    assert!(folded.sha.is_full());
    assert!(!folded.flags.contains(&CandidateFlag::ProvisionalSha));
    assert_eq!(folded.source_kinds(), BTreeSet::from([SourceKind::S1, SourceKind::S2]));

    let report = store.overlap(&SourceKind::ALL.into_iter().collect());
    let s1s2 = report.entry(&[SourceKind::S1, SourceKind::S2]).unwrap();
    assert_eq!(s1s2.vfcs.shared, 2);
    assert_eq!(s1s2.vfcs.unique[&SourceKind::S1], 3);
    assert_eq!(s1s2.vfcs.unique[&SourceKind::S2], 2);
    let s2s3 = report.entry(&[SourceKind::S2, SourceKind::S3]).unwrap();
    assert_eq!(s2s3.vfcs.shared, 1);
    assert!(report.pair_identities_hold());
}

#[test]
fn ambiguous_prefix_stays_separate() {
    let store = CandidateStore::merge([vec![
        cand("CVE-2020-0001", "github.com/o/a", "abcdef1111111111111111111111111111111111", s1()),
        cand("CVE-2020-0001", "github.com/o/a", "abcdef2222222222222222222222222222222222", s1()),
        cand("CVE-2020-0001", "github.com/o/a", "abcdef1", s2()),
    ]]);
    assert_eq!(store.len(), 2);
}

#[test]
fn published_overlap_arithmetic() {
    // S1 covers 20,360 records, S2 18,985, 14,375 in both.
    let a: BTreeSet<u32> = (0..20_360).collect();
    let b: BTreeSet<u32> = (20_360 - 14_375..20_360 - 14_375 + 18_985).collect();
    let c = overlap_counts(&[(SourceKind::S1, a), (SourceKind::S2, b)]);
    assert_eq!(c.shared, 14_375);
    assert_eq!(c.unique[&SourceKind::S1], 5_985);
    assert_eq!(c.unique[&SourceKind::S2], 4_610);
}

#[test]
fn trivial_overlaps() {
    let a: BTreeSet<u32> = (0..5).collect();
    let b: BTreeSet<u32> = (5..9).collect();
    let disjoint = overlap_counts(&[(SourceKind::S1, a.clone()), (SourceKind::S2, b)]);
    assert_eq!(disjoint.shared, 0);
    let same = overlap_counts(&[(SourceKind::S1, a.clone()), (SourceKind::S2, a)]);
    assert_eq!(same.unique[&SourceKind::S1], 0);
    assert_eq!(same.unique[&SourceKind::S2], 0);
    assert_eq!(same.shared, 5);
}

fn source() -> impl Strategy<Value = Source> {
    prop_oneof![
        (0u32..3, any::<bool>()).prop_map(|(depth, patch_tagged)| Source::S1 { depth, patch_tagged }),
        (prop::sample::select(AdvisoryDb::ALL.to_vec()), any::<bool>())
            .prop_map(|(db_name, source_asserted)| Source::S2 { db_name, source_asserted }),
        (60u32..100, 1u32..5).prop_map(|(s, rank)| Source::S3 { tool: "t".into(), score: Score(s as f64), rank }),
    ]
}

fn candidate() -> impl Strategy<Value = VfcCandidate> {
    (
        0u32..6,
        prop::sample::select(vec!["github.com/o/a", "github.com/o/b", "gitlab.com/g/c"]),
        prop::sample::select(vec![
            "aaaaaaa", "aaaaaaaa11", "aaaaaaaa1111111111111111111111111111111f",
            "bbbbbbbb22222222222222222222222222222222", "bbbbbbb", "ccccccc3",
            "dddddddd44444444444444444444444444444444",
        ]),
        source(),
        prop::sample::select(Category::ALL.to_vec()),
        1u32..28,
        prop::collection::btree_set(prop::sample::select(vec![CandidateFlag::Unvalidated, CandidateFlag::TruncatedCrawl]), 0..2),
    )
        .prop_map(|(cve, repo, sha, src, cat, day, flags)| {
            let mut c = VfcCandidate::new(
                CveId::parse(&format!("CVE-2021-{:04}", 1000 + cve)).unwrap(),
                repo,
                CommitSha::parse(sha).unwrap(),
                src,
                cat,
                t(day),
            );
            c.flags.extend(flags);
            c
        })
}

fn batches() -> impl Strategy<Value = Vec<Vec<VfcCandidate>>> {
    prop::collection::vec(prop::collection::vec(candidate(), 0..12), 0..5)
}

fn sorted(s: &CandidateStore) -> Vec<VfcCandidate> {
    s.iter().cloned().collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn merge_is_idempotent(bs in batches()) {
        let once = CandidateStore::merge(bs.clone());
        let twice = CandidateStore::merge(bs.iter().cloned().chain(bs.iter().cloned()));
        prop_assert_eq!(sorted(&once), sorted(&twice));
        let again = CandidateStore::merge([sorted(&once)]);
        prop_assert_eq!(sorted(&once), sorted(&again));
    }

    #[test]
    fn merge_ignores_order(bs in batches(), seed in any::<u64>()) {
        let forward = CandidateStore::merge(bs.clone());
        let mut flat: Vec<VfcCandidate> = bs.into_iter().flatten().collect();
        let idx = vfcmap_core::sample::sample_indices(flat.len(), flat.len(), seed).unwrap();
        flat = idx.into_iter().map(|i| flat[i].clone()).collect();
        let shuffled = CandidateStore::merge([flat]);
        prop_assert_eq!(sorted(&forward), sorted(&shuffled));
    }

    #[test]
    fn merged_keys_are_unique_and_full_shas_absorb_prefixes(bs in batches()) {
        let s = CandidateStore::merge(bs);
        let keys: Vec<_> = s.iter().map(|c| c.key()).collect();
        prop_assert_eq!(keys.iter().collect::<BTreeSet<_>>().len(), keys.len());
        for a in s.iter() {
            prop_assert!(!a.sources.is_empty());
            prop_assert_eq!(a.flags.contains(&CandidateFlag::ProvisionalSha), !a.sha.is_full());
            let longer: Vec<_> = s
                .iter()
                .filter(|b| b.cve_id == a.cve_id && b.repo_id == a.repo_id && b.sha != a.sha && a.sha.is_prefix_of(&b.sha))
                .collect();
            // A prefix survives only when it is ambiguous.
            prop_assert!(longer.len() != 1, "{} kept beside {}", a.sha.as_str(), longer[0].sha.as_str());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn overlap_identity_on_random_stores(bs in batches()) {
        let s = CandidateStore::merge(bs);
        let report = s.overlap(&SourceKind::ALL.into_iter().collect());
        prop_assert!(report.pair_identities_hold());
        for e in &report.entries {
            for k in &e.sources {
                prop_assert_eq!(e.vfcs.total[k], s.vfcs_from(*k).len() as u64);
                prop_assert_eq!(e.records.total[k], s.records_from(*k).len() as u64);
                if e.sources.len() == 2 {
                    prop_assert_eq!(e.vfcs.unique[k] + e.vfcs.shared, e.vfcs.total[k]);
                    prop_assert_eq!(e.records.unique[k] + e.records.shared, e.records.total[k]);
                }
            }
        }
    }
}
