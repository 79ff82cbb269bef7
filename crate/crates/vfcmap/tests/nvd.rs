use std::sync::Arc;
use std::time::Duration;

use chrono::{TimeZone, Utc};
use serde_json::{json, Value};
use vfcmap::governor::HostGovernor;
use vfcmap::http::{write_entry, Cassette, MissPolicy, NoSleep, Request, Response, RetryPolicy};
use vfcmap::nvd::{load_snapshot, NvdClient, NvdError};
use vfcmap_core::{partition, Category, HostAllowlist};

fn fixture(rel: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(rel)
}

#[test]
fn snapshot_partition_matches_golden() {
    let snap = load_snapshot(&fixture("nvd/snapshot-200.json")).unwrap();
    assert_eq!(snap.records.len(), 200);
    assert!(snap.rejected.is_empty());

    let golden: Value = serde_json::from_slice(&std::fs::read(fixture("nvd/golden_partition.json")).unwrap()).unwrap();
    let allow = HostAllowlist::default();
    let p = partition(&snap.records, &allow);
    let counts = p.counts();
    for (i, c) in Category::ALL.iter().enumerate() {
        assert_eq!(counts[i] as u64, golden["counts"][c.to_string()].as_u64().unwrap(), "{c}");
    }
    let expected = golden["records"].as_array().unwrap();
    assert_eq!(expected.len(), snap.records.len());
    for (r, e) in snap.records.iter().zip(expected) {
        assert_eq!(r.cve_id.to_string(), e["cve_id"].as_str().unwrap());
        assert_eq!(vfcmap_core::categorize(r, &allow).to_string(), e["category"].as_str().unwrap(), "{}", r.cve_id);
    }
}

fn client(dir: &std::path::Path) -> NvdClient {
    let mut c = NvdClient::new(Arc::new(Cassette::new(dir, MissPolicy::Error)), None);
    c.api_base = "https://nvd.test/cves".into();
    c.page_size = 3;
    c.prefetch = 2;
    c.sleeper = Arc::new(NoSleep::default());
    c.governor = Arc::new(HostGovernor::new(Duration::ZERO));
    c.retry = RetryPolicy { max_attempts: 3, ..RetryPolicy::default() };
    c
}

fn respond(dir: &std::path::Path, url: &str, status: u16, body: &Value) {
    let resp = Response {
        status,
        url: url.into(),
        headers: vec![("content-type".into(), "application/json".into())],
        body: body.to_string().into_bytes(),
        from_cache: false,
    };
    write_entry(dir, &Request::get(url), &resp).unwrap();
}

#[test]
fn two_pages_in_api_order() {
    let dir = tempfile::tempdir().unwrap();
    let raw: Value = serde_json::from_slice(&std::fs::read(fixture("nvd/snapshot-200.json")).unwrap()).unwrap();
    let vulns = raw["vulnerabilities"].as_array().unwrap();
    let c = client(dir.path());
    let since = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
    let until = Utc.with_ymd_and_hms(2021, 3, 1, 0, 0, 0).unwrap();
    for (start, page) in [(0, &vulns[0..3]), (3, &vulns[3..6])] {
        let body = json!({"totalResults": 6, "startIndex": start, "resultsPerPage": 3, "vulnerabilities": page});
        respond(dir.path(), &c.page_url(since, until, start), 200, &body);
    }
    let got: Vec<String> = c.fetch_records(since, until).map(|r| r.unwrap().cve_id.to_string()).collect();
    let want: Vec<String> = vulns[0..6].iter().map(|v| v["cve"]["id"].as_str().unwrap().to_string()).collect();
    assert_eq!(got, want);
}

#[test]
fn persistent_503_surfaces_after_retries() {
    let dir = tempfile::tempdir().unwrap();
    let c = client(dir.path());
    let since = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
    let until = Utc.with_ymd_and_hms(2021, 2, 1, 0, 0, 0).unwrap();
    respond(dir.path(), &c.page_url(since, until, 0), 503, &json!({}));
    let mut stream = c.fetch_records(since, until);
    match stream.next() {
        Some(Err(NvdError::HttpFailure { status: 503, .. })) => {}
        other => panic!("expected 503 failure, got {other:?}"),
    }
    assert!(stream.next().is_none());
}

#[test]
fn long_ranges_are_split_into_windows() {
    let dir = tempfile::tempdir().unwrap();
    let c = client(dir.path());
    let since = Utc.with_ymd_and_hms(2021, 1, 1, 0, 0, 0).unwrap();
    let mid = since + chrono::TimeDelta::days(120);
    let until = Utc.with_ymd_and_hms(2021, 6, 1, 0, 0, 0).unwrap();
    let empty = json!({"totalResults": 0, "vulnerabilities": []});
    respond(dir.path(), &c.page_url(since, mid, 0), 200, &empty);
    respond(dir.path(), &c.page_url(mid, until, 0), 200, &empty);
    assert_eq!(c.fetch_records(since, until).count(), 0);
}
