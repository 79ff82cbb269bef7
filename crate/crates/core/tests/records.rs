use std::collections::BTreeMap;

use chrono::DateTime;
use proptest::prelude::*;
use vfcmap_core::candidate::AdvisoryDb;
use vfcmap_core::matcher::{match_repo, normalize_token};
use vfcmap_core::{
    categorize, filter_candidates, is_git_reference, partition, AliasTable, CandidateFlag, Category, CommitSha, Cpe23,
    CveId, HostAllowlist, MatchOn, NvdRecord, Reference, Source, VfcCandidate,
};

fn record(refs: Vec<Reference>, cpes: &[&str]) -> NvdRecord {
    NvdRecord {
        cve_id: CveId::parse("CVE-2021-0001").unwrap(),
        description: String::new(),
        published: DateTime::UNIX_EPOCH,
        references: refs,
        cpes: cpes.iter().map(|c| Cpe23::parse(c).unwrap()).collect(),
    }
}

const URLS: &[&str] = &[
    "https://github.com/o/r/commit/0123456789abcdef0123456789abcdef01234567",
    "https://github.com/o/r/pull/3",
    "https://gitlab.com/g/p/-/issues/9",
    "https://bitbucket.org/o/r/commits/abcdef0",
    "https://github.com/advisories/GHSA-aaaa-bbbb-cccc",
    "https://www.debian.org/security/2021/dsa-5000",
    "https://vendor.example/advisory",
    "https://gist.github.com/u/0123",
];

fn reference() -> impl Strategy<Value = Reference> {
    (
        prop::sample::select(URLS.to_vec()),
        prop::collection::vec(prop::sample::select(vec!["Patch", "Vendor Advisory", "Exploit", "patch"]), 0..3),
    )
        .prop_map(|(u, tags)| Reference::new(u, &tags))
}

/// The four predicates, each evaluated on its own.
fn predicates(r: &NvdRecord, allow: &HostAllowlist) -> [bool; 4] {
    let git: Vec<&Reference> = r.references.iter().filter(|x| is_git_reference(x, allow)).collect();
    let non_git: Vec<&Reference> = r.references.iter().filter(|x| !is_git_reference(x, allow)).collect();
    let c1 = git.iter().any(|x| x.is_patch());
    let c2 = !git.is_empty() && git.iter().all(|x| !x.is_patch());
    let c3 = git.is_empty() && non_git.iter().any(|x| x.is_patch());
    let c4 = git.is_empty() && non_git.iter().all(|x| !x.is_patch());
    [c1, c2, c3, c4]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn exactly_one_category(refs in prop::collection::vec(reference(), 0..6)) {
        let allow = HostAllowlist::default();
        let r = record(refs, &[]);
        let p = predicates(&r, &allow);
        prop_assert_eq!(p.iter().filter(|x| **x).count(), 1);
        let idx = Category::ALL.iter().position(|c| *c == categorize(&r, &allow)).unwrap();
        prop_assert!(p[idx]);
    }

    #[test]
    fn partition_counts_ignore_order(recs in prop::collection::vec(prop::collection::vec(reference(), 0..4), 0..20), seed in any::<u64>()) {
        let allow = HostAllowlist::default();
        let records: Vec<NvdRecord> = recs.into_iter().map(|r| record(r, &[])).collect();
        let shuffled: Vec<NvdRecord> = vfcmap_core::sample::draw_sample(&records, records.len(), seed).unwrap();
        let a = partition(&records, &allow);
        prop_assert_eq!(a.counts(), partition(&shuffled, &allow).counts());
        prop_assert_eq!(a.total(), records.len());
    }

    #[test]
    fn tagging_a_git_reference_moves_c2_to_c1(refs in prop::collection::vec(reference(), 0..5)) {
        let allow = HostAllowlist::default();
        // Force C2: lead with a git reference and strip patch tags from every git reference.
        let mut refs = refs;
        refs.insert(0, Reference::new(URLS[1], &[]));
        for x in refs.iter_mut().filter(|x| is_git_reference(x, &allow)) {
            x.tags.retain(|t| !t.eq_ignore_ascii_case("patch"));
        }
        let r = record(refs, &[]);
        prop_assert_eq!(categorize(&r, &allow), Category::C2);
        let mut tagged = r.clone();
        let i = tagged.references.iter().position(|x| is_git_reference(x, &allow)).unwrap();
        tagged.references[i].tags.push("Patch".into());
        prop_assert_eq!(categorize(&tagged, &allow), Category::C1);
    }
}

#[test]
fn category_examples() {
    let allow = HostAllowlist::default();
    assert_eq!(categorize(&record(vec![], &[]), &allow), Category::C4);
    let c2 = record(
        vec![
            Reference::new("https://gitlab.com/g/p/-/issues/9", &[]),
            Reference::new("https://vendor.example/advisory", &["Patch"]),
        ],
        &[],
    );
    assert_eq!(categorize(&c2, &allow), Category::C2);
    let c3 = record(vec![Reference::new("https://vendor.example/advisory", &["Patch"])], &[]);
    assert_eq!(partition(&[c3], &allow).counts(), [0, 0, 1, 0]);
    assert_eq!(partition(&[], &allow).counts(), [0, 0, 0, 0]);
}

fn cpe_value() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("*".to_string()),
        Just("-".to_string()),
        "[a-z0-9][a-z0-9_]{0,10}",
        "[a-z0-9]{1,5}\\\\[:!()][a-z0-9]{1,5}",
        "[a-z0-9]{1,5}\\*",
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn cpe_round_trip(part in prop::sample::select(vec!['a', 'o', 'h']), values in prop::collection::vec(cpe_value(), 10)) {
        let s = format!("cpe:2.3:{part}:{}", values.join(":"));
        let parsed = Cpe23::parse(&s).unwrap();
        prop_assert_eq!(parsed.to_string(), s.clone());
        prop_assert_eq!(Cpe23::parse(&parsed.to_string()).unwrap(), parsed);
    }

    #[test]
    fn cpe_parse_never_panics(s in "cpe:2\\.3:[aoh*]:[ -~]{0,60}") {
        let _ = Cpe23::parse(&s);
    }
}

#[test]
fn cpe_rejects_malformed() {
    for bad in [
        "cpe:/a:vendor:product",
        "cpe:2.3:a:vendor:product",
        "cpe:2.3:x:v:p:*:*:*:*:*:*:*:*",
        "cpe:2.3:a:v:p:*:*:*:*:*:*:*:*:*",
        "cpe:2.3:a:v p:p:*:*:*:*:*:*:*:*",
    ] {
        assert!(Cpe23::parse(bad).is_err(), "{bad}");
    }
}

fn cpes(list: &[&str]) -> Vec<Cpe23> {
    list.iter().map(|c| Cpe23::parse(c).unwrap()).collect()
}

#[test]
fn matcher_examples() {
    let none = AliasTable::default();
    let v = match_repo("locustio", "locust", &cpes(&["cpe:2.3:a:locust:locust:*:*:*:*:*:*:*:*"]), 0.8, &none);
    assert!(v.matched);
    let v = match_repo("phpmyadmin", "phpmyadmin", &cpes(&["cpe:2.3:a:phpmyadmin:phpmyadmin:3.4.0:*:*:*:*:*:*:*"]), 0.8, &none);
    assert_eq!(v.matched_on, MatchOn::Both);
    let v = match_repo("torvalds", "linux", &cpes(&["cpe:2.3:a:wordpress:wordpress:*:*:*:*:*:*:*:*"]), 0.8, &none);
    assert!(!v.matched);
    assert_eq!(v.matched_on, MatchOn::None);
}

fn cand(repo: &str, sha: &str, src: Source) -> VfcCandidate {
    VfcCandidate::new(CveId::parse("CVE-2021-0001").unwrap(), repo, CommitSha::parse(sha).unwrap(), src, Category::C2, DateTime::UNIX_EPOCH)
}

#[test]
fn filter_examples() {
    let s1 = Source::S1 { depth: 0, patch_tagged: false };
    let three = vec![
        cand("github.com/locustio/locust", "aaaaaaa", s1.clone()),
        cand("github.com/torvalds/linux", "bbbbbbb", s1.clone()),
        cand("github.com/other/thing", "ccccccc", s1.clone()),
    ];
    let r = record(vec![], &["cpe:2.3:a:locust:locust:*:*:*:*:*:*:*:*"]);
    let out = filter_candidates(three.clone(), &r, 0.8, &AliasTable::default());
    assert_eq!((out.kept.len(), out.rejected.len()), (1, 2));

    let bare = record(vec![], &[]);
    let out = filter_candidates(three, &bare, 0.8, &AliasTable::default());
    assert_eq!(out.kept.len(), 3);
    assert!(out.kept.iter().all(|c| c.flags.contains(&CandidateFlag::Unvalidated)));

    let out = filter_candidates(vec![], &r, 0.8, &AliasTable::default());
    assert!(out.kept.is_empty() && out.rejected.is_empty());

    let asserted = Source::S2 { db_name: AdvisoryDb::OsvDev, source_asserted: true };
    let out = filter_candidates(vec![cand("github.com/torvalds/linux", "bbbbbbb", asserted)], &r, 0.8, &AliasTable::default());
    assert_eq!(out.kept.len(), 1);
}

#[test]
fn aliases_bridge_renames() {
    let mut aliases = AliasTable::default();
    aliases.insert("mozilla", "mozilla-mobile");
    let c = cpes(&["cpe:2.3:a:mozilla:focus:*:*:*:*:*:*:*:*"]);
    assert!(match_repo("mozilla-mobile", "focus-android-x", &c, 0.95, &aliases).matched);
    assert!(!match_repo("mozilla-mobile", "focus-android-x", &c, 0.95, &AliasTable::default()).matched);
}

fn token() -> impl Strategy<Value = String> {
    "[a-z][a-z0-9]{1,8}([-_.][a-z0-9]{1,5})?"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn match_ignores_case_and_separators(owner in token(), repo in token(), vendor in token(), product in token()) {
        let c = cpes(&[&format!("cpe:2.3:a:{vendor}:{product}:*:*:*:*:*:*:*:*")]);
        let a = match_repo(&owner, &repo, &c, 0.8, &AliasTable::default());
        let shouted = match_repo(&owner.to_uppercase().replace('-', "_"), &repo.to_uppercase().replace('.', "-"), &c, 0.8, &AliasTable::default());
        prop_assert_eq!(a.matched, shouted.matched);
        prop_assert_eq!(a.score, shouted.score);
        prop_assert!(!a.matched || a.score >= 0.8);
        prop_assert_eq!(normalize_token(&owner), normalize_token(&owner.to_uppercase()));
    }

    #[test]
    fn filter_partitions_and_is_monotone(
        repos in prop::collection::vec((token(), token()), 0..8),
        vendor in token(), product in token(),
        lo in 0.0f64..1.0, hi in 0.0f64..1.0,
    ) {
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let s1 = Source::S1 { depth: 0, patch_tagged: false };
        let cands: Vec<VfcCandidate> = repos
            .iter()
            .enumerate()
            .map(|(i, (o, r))| cand(&format!("github.com/{o}/{r}"), &format!("{:07x}", i + 0x1000000), s1.clone()))
            .collect();
        let cpe = format!("cpe:2.3:a:{vendor}:{product}:*:*:*:*:*:*:*:*");
        let rec = record(vec![], &[&cpe]);
        let at = |t| filter_candidates(cands.clone(), &rec, t, &AliasTable::default());
        let (a, b) = (at(lo), at(hi));
        prop_assert_eq!(a.kept.len() + a.rejected.len(), cands.len());
        let mut all: Vec<String> = a.kept.iter().chain(a.rejected.iter().map(|(c, _)| c)).map(|c| c.id()).collect();
        all.sort();
        let mut input: Vec<String> = cands.iter().map(|c| c.id()).collect();
        input.sort();
        prop_assert_eq!(all, input);
        let kept_hi: BTreeMap<String, ()> = b.kept.iter().map(|c| (c.id(), ())).collect();
        let kept_lo: BTreeMap<String, ()> = a.kept.iter().map(|c| (c.id(), ())).collect();
        prop_assert!(kept_hi.keys().all(|k| kept_lo.contains_key(k)));
    }
}
