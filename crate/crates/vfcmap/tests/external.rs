use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use chrono::DateTime;
use vfcmap::external::{harvest_s2, AdvisoryLink, ExternalClient, S2Options};
use vfcmap::governor::HostGovernor;
use vfcmap::http::{Cassette, MissPolicy, NoSleep};
use vfcmap::nvd::load_snapshot;
use vfcmap_core::candidate::AdvisoryDb;
use vfcmap_core::{categorize, AliasTable, CveId, HostAllowlist, Source};

fn e2e() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/e2e")
}

fn client() -> ExternalClient {
    ExternalClient::new(
        Arc::new(Cassette::new(e2e().join("cassettes"), MissPolicy::NotFound)),
        Arc::new(HostGovernor::new(Duration::ZERO)),
    )
    .with_sleeper(Arc::new(NoSleep::default()))
}

fn cve(s: &str) -> CveId {
    CveId::parse(s).unwrap()
}

fn urls(links: &[AdvisoryLink]) -> Vec<(&str, bool)> {
    links.iter().map(|l| (l.url.as_str(), l.asserted)).collect()
}

#[test]
fn osv_fix_reference_and_git_range() {
    let links = client().lookup(AdvisoryDb::OsvDev, &cve("CVE-2024-10006")).unwrap();
    let fix = "https://github.com/example-org/frobnicator/commit/d164be2c359b3c1bb7e4c0f4132dc5f736845511";
    assert!(links.iter().any(|l| l.url == fix && l.asserted));
    let web = "https://github.com/other-org/unrelated/commit/666f1626ad51c99c10ae69aceaf2b4dd00914c19";
    assert!(links.iter().any(|l| l.url == web && !l.asserted));
    assert_eq!(links.iter().filter(|l| l.url == fix).count(), 1);
}

#[test]
fn ghsa_references() {
    let links = client().lookup(AdvisoryDb::GitHubAdvisory, &cve("CVE-2024-10001")).unwrap();
    assert!(urls(&links).contains(&("https://github.com/locustio/locust/commit/56fdac24ba6bce032e77e1620a54a2c30f7e4aad", false)));
}

#[test]
fn snyk_follows_search_to_advisory_page() {
    let links = client().lookup(AdvisoryDb::Snyk, &cve("CVE-2021-26559")).unwrap();
    let got: Vec<&str> = links.iter().map(|l| l.url.as_str()).collect();
    assert_eq!(
        got,
        vec![
            "https://github.com/apache/airflow/commit/66546738312663687cb660602d25ea2a12146e8d",
            "https://lists.apache.org/thread.html/r3d5b2e8e7a9%40%3Cusers.airflow.apache.org%3E",
        ]
    );
}

#[test]
fn django_section_scoped_to_the_cve() {
    let links = client().lookup(AdvisoryDb::DjangoSecurity, &cve("CVE-2023-36053")).unwrap();
    let got: BTreeSet<&str> = links.iter().map(|l| l.url.as_str()).collect();
    let want = BTreeSet::from([
        "https://github.com/django/django/commit/f878723414fce4cf81ae61c18a42d53f535d3224",
        "https://github.com/django/django/commit/83091e6a403e7dd012e8e9ba3e0872065ff9b6ce",
        "https://github.com/django/django/commit/4911f2dc57291cd1853b0b2233711c7380c9a947",
    ]);
    assert_eq!(got, want);
}

#[test]
fn unknown_cve_yields_nothing() {
    assert!(client().lookup(AdvisoryDb::OsvDev, &cve("CVE-1999-0001")).unwrap().is_empty());
}

#[test]
fn harvest_matches_hand_enumerated_s2_rows() {
    let allow = HostAllowlist::default();
    let records: Vec<_> = load_snapshot(&e2e().join("snapshot.json"))
        .unwrap()
        .records
        .into_iter()
        .map(|r| {
            let c = categorize(&r, &allow);
            (r, c)
        })
        .collect();
    let sources = [AdvisoryDb::OsvDev, AdvisoryDb::GitHubAdvisory, AdvisoryDb::Snyk, AdvisoryDb::DjangoSecurity];
    let aliases = AliasTable::default();
    let opts = S2Options {
        sources: &sources,
        allow: &allow,
        threshold: 0.8,
        aliases: &aliases,
        now: DateTime::UNIX_EPOCH,
        concurrency: 4,
    };
    let h = harvest_s2(&client(), &records, &opts);
    assert!(h.failures.is_empty(), "{:?}", h.failures);

    let got: BTreeSet<(String, String, String)> = h
        .candidates
        .iter()
        .map(|c| (c.cve_id.to_string(), c.repo_id.clone(), c.sha.as_str().to_string()))
        .collect();
    let table = std::fs::read_to_string(e2e().join("expected_candidates.tsv")).unwrap();
    let want: BTreeSet<(String, String, String)> = table
        .lines()
        .skip(1)
        .filter_map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            f[3].split(',').any(|s| s == "S2").then(|| (f[0].into(), f[1].into(), f[2].into()))
        })
        .collect();
    assert_eq!(got, want);

    // The unrelated repository from the OSV WEB reference fails the CPE check.
    assert!(h.rejected.iter().any(|(c, _)| c.repo_id == "github.com/other-org/unrelated"));
    assert!(h
        .candidates
        .iter()
        .all(|c| c.sources.iter().all(|s| matches!(s, Source::S2 { .. }))));
}
