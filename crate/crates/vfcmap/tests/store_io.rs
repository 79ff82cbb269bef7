use chrono::{TimeZone, Utc};
use proptest::prelude::*;
use vfcmap::store_io::{append_log, compact, export, import, read_snapshot, replay_log, ExportFormat};
use vfcmap_core::candidate::{AdvisoryDb, Score};
use vfcmap_core::{CandidateFlag, CandidateStore, Category, CommitSha, CveId, Source, VfcCandidate};

fn source() -> impl Strategy<Value = Source> {
    prop_oneof![
        (0u32..3, any::<bool>()).prop_map(|(depth, patch_tagged)| Source::S1 { depth, patch_tagged }),
        (prop::sample::select(AdvisoryDb::ALL.to_vec()), any::<bool>())
            .prop_map(|(db_name, source_asserted)| Source::S2 { db_name, source_asserted }),
        (0u32..4000, 1u32..20, "[a-z][a-z0-9-]{0,8}")
            .prop_map(|(s, rank, tool)| Source::S3 { tool, score: Score(s as f64 / 4.0), rank }),
    ]
}

fn candidate() -> impl Strategy<Value = VfcCandidate> {
    (
        0u32..20,
        prop::sample::select(vec!["github.com/o/a", "github.com/o/b", "gitlab.com/g/sub/c", "bitbucket.org/x/y"]),
        "[0-9a-f]{7,12}|[0-9a-f]{40}",
        prop::collection::vec(source(), 1..3),
        prop::sample::select(Category::ALL.to_vec()),
        0i64..100_000_000,
        prop::collection::btree_set(
            prop::sample::select(vec![CandidateFlag::Unvalidated, CandidateFlag::TruncatedCrawl]),
            0..3,
        ),
    )
        .prop_map(|(cve, repo, sha, sources, cat, secs, flags)| {
            let mut it = sources.into_iter();
            let mut c = VfcCandidate::new(
                CveId::parse(&format!("CVE-2020-{:05}", 10_000 + cve)).unwrap(),
                repo,
                CommitSha::parse(&sha).unwrap(),
                it.next().unwrap(),
                cat,
                Utc.timestamp_opt(1_600_000_000 + secs, 0).unwrap(),
            );
            c.sources.extend(it);
            c.flags.extend(flags);
            c
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn export_import_round_trips(cands in prop::collection::vec(candidate(), 0..25)) {
        let store = CandidateStore::merge([cands]);
        let dir = tempfile::tempdir().unwrap();
        let want: Vec<VfcCandidate> = store.iter().cloned().collect();
        for (name, fmt) in [("s.jsonl", ExportFormat::Jsonl), ("s.csv", ExportFormat::Csv)] {
            let p = dir.path().join(name);
            export(&store, fmt, &p, true).unwrap();
            prop_assert_eq!(&import(&p, fmt).unwrap(), &want);
        }
    }

    #[test]
    fn log_replay_equals_merge(batches in prop::collection::vec(prop::collection::vec(candidate(), 0..8), 0..4)) {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("store.log");
        for b in &batches {
            append_log(&log, b).unwrap();
        }
        let merged = CandidateStore::merge(batches.clone());
        let replayed = replay_log(&log).unwrap();
        prop_assert_eq!(replayed.iter().cloned().collect::<Vec<_>>(), merged.iter().cloned().collect::<Vec<_>>());
        let snap = dir.path().join("store.jsonl");
        let compacted = compact(&log, &snap).unwrap();
        prop_assert_eq!(read_snapshot(&snap).unwrap().iter().cloned().collect::<Vec<_>>(), compacted.iter().cloned().collect::<Vec<_>>());
    }
}

#[test]
fn empty_store_export_needs_flag() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("e.csv");
    assert!(export(&CandidateStore::default(), ExportFormat::Csv, &p, false).is_err());
    export(&CandidateStore::default(), ExportFormat::Csv, &p, true).unwrap();
    assert!(import(&p, ExportFormat::Csv).unwrap().is_empty());
}
