use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};
use vfcmap::forge::{CommitRef, ForgeClient, ForgeError, ForgeTokens, Resolution};
use vfcmap::http::{write_entry, Cassette, MissPolicy, NoSleep, Request, Response};
use vfcmap_core::link::{classify, GitLink, HostAllowlist};
use vfcmap_core::CommitSha;

const A: &str = "1f2e3d4c5b6a79881f2e3d4c5b6a79881f2e3d4c";
const B: &str = "9a8b7c6d5e4f30219a8b7c6d5e4f30219a8b7c6d";
const M: &str = "00112233445566778899aabbccddeeff00112233";

fn put(dir: &Path, url: &str, status: u16, headers: &[(&str, &str)], body: &Value) {
    let resp = Response {
        status,
        url: url.into(),
        headers: headers.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        body: body.to_string().into_bytes(),
        from_cache: false,
    };
    write_entry(dir, &Request::get(url), &resp).unwrap();
}

fn client(dir: &Path) -> ForgeClient {
    ForgeClient::new(Arc::new(Cassette::new(dir, MissPolicy::NotFound)), ForgeTokens::default())
        .with_sleeper(Arc::new(NoSleep::default()))
}

fn link(url: &str) -> GitLink {
    classify(url, &HostAllowlist::default()).unwrap()
}

fn shas(refs: &[CommitRef]) -> Vec<&str> {
    refs.iter().map(|c| c.sha.as_str()).collect()
}

#[test]
fn github_pull_lists_commits_in_api_order() {
    let dir = tempfile::tempdir().unwrap();
    let base = "https://api.github.com/repos/acme/widget/pulls/12";
    put(dir.path(), base, 200, &[], &json!({"number": 12, "merged_at": null, "merge_commit_sha": M}));
    put(dir.path(), &format!("{base}/commits?per_page=100"), 200, &[], &json!([{"sha": B}, {"sha": A}]));
    let got = client(dir.path()).expand(&link("https://github.com/acme/widget/pull/12")).unwrap();
    assert_eq!(shas(&got), vec![B, A]);
    assert!(got.iter().all(|c| c.repo_id == "github.com/acme/widget"));
}

#[test]
fn merged_pull_adds_merge_commit_and_follows_pages() {
    let dir = tempfile::tempdir().unwrap();
    let base = "https://api.github.com/repos/acme/widget/pulls/13";
    let first = format!("{base}/commits?per_page=100");
    let second = format!("{base}/commits?per_page=100&page=2");
    put(dir.path(), base, 200, &[], &json!({"merged_at": "2024-01-01T00:00:00Z", "merge_commit_sha": M}));
    put(dir.path(), &first, 200, &[("link", &format!("<{second}>; rel=\"next\""))], &json!([{"sha": A}]));
    put(dir.path(), &second, 200, &[], &json!([{"sha": B}, {"sha": A}]));
    let got = client(dir.path()).expand(&link("https://github.com/acme/widget/pull/13")).unwrap();
    assert_eq!(shas(&got), vec![A, B, M]);
}

#[test]
fn issue_without_references_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let url = "https://api.github.com/repos/acme/widget/issues/7/timeline?per_page=100";
    put(dir.path(), url, 200, &[], &json!([{"event": "labeled"}, {"event": "commented", "commit_id": null}]));
    let got = client(dir.path()).expand(&link("https://github.com/acme/widget/issues/7")).unwrap();
    assert!(got.is_empty());
}

#[test]
fn issue_reference_keeps_the_commit_repository() {
    let dir = tempfile::tempdir().unwrap();
    let url = "https://api.github.com/repos/acme/widget/issues/8/timeline?per_page=100";
    let events = json!([
        {"event": "referenced", "commit_id": A, "commit_url": format!("https://api.github.com/repos/acme/fork/commits/{A}")},
        {"event": "closed", "commit_id": B},
    ]);
    put(dir.path(), url, 200, &[], &events);
    let got = client(dir.path()).expand(&link("https://github.com/acme/widget/issues/8")).unwrap();
    assert_eq!(got[0].repo_id, "github.com/acme/fork");
    assert_eq!(got[1].repo_id, "github.com/acme/widget");
}

#[test]
fn gitlab_merge_request_with_squash() {
    let dir = tempfile::tempdir().unwrap();
    let base = "https://gitlab.com/api/v4/projects/grp%2Fproj/merge_requests/4";
    put(dir.path(), base, 200, &[], &json!({"merge_commit_sha": null, "squash_commit_sha": M}));
    put(dir.path(), &format!("{base}/commits?per_page=100"), 200, &[], &json!([{"id": A}]));
    let got = client(dir.path()).expand(&link("https://gitlab.com/grp/proj/-/merge_requests/4")).unwrap();
    assert_eq!(shas(&got), vec![A, M]);
}

#[test]
fn deleted_repository_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let err = client(dir.path()).expand(&link("https://github.com/gone/away/pull/1")).unwrap_err();
    assert!(matches!(err, ForgeError::NotFound { .. }), "{err:?}");
}

#[test]
fn commit_links_are_not_expandable() {
    let dir = tempfile::tempdir().unwrap();
    let err = client(dir.path()).expand(&link(&format!("https://github.com/acme/widget/commit/{A}"))).unwrap_err();
    assert!(matches!(err, ForgeError::NotExpandable { .. }));
}

#[test]
fn short_sha_resolves_and_missing_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    put(dir.path(), "https://api.github.com/repos/acme/widget/commits/1f2e3d4", 200, &[], &json!({"sha": A}));
    put(dir.path(), "https://api.github.com/repos/acme/widget/commits/abcdef0", 422, &[], &json!({"message": "No commit found"}));
    let c = client(dir.path());

    let short = CommitRef::new("github.com/acme/widget", CommitSha::parse("1f2e3d4").unwrap());
    assert!(short.is_provisional());
    match c.resolve_commit(&short).unwrap() {
        Resolution::Resolved(r) => {
            assert_eq!(r.sha.as_str(), A);
            assert_eq!(r.short_sha_source.as_deref(), Some("1f2e3d4"));
        }
        other => panic!("{other:?}"),
    }

    let gone = CommitRef::new("github.com/acme/widget", CommitSha::parse("abcdef0").unwrap());
    assert_eq!(c.resolve_commit(&gone).unwrap(), Resolution::Missing);
    let unknown = CommitRef::new("github.com/acme/widget", CommitSha::parse("7777777").unwrap());
    assert_eq!(c.resolve_commit(&unknown).unwrap(), Resolution::Missing);

    let full = CommitRef::new("github.com/acme/widget", CommitSha::parse(B).unwrap());
    assert_eq!(c.resolve_commit(&full).unwrap(), Resolution::Resolved(full.clone()));
}

#[test]
fn resolution_must_extend_the_prefix() {
    let dir = tempfile::tempdir().unwrap();
    put(dir.path(), "https://api.github.com/repos/acme/widget/commits/1f2e3d4", 200, &[], &json!({"sha": B}));
    let short = CommitRef::new("github.com/acme/widget", CommitSha::parse("1f2e3d4").unwrap());
    assert!(matches!(client(dir.path()).resolve_commit(&short), Err(ForgeError::ApiSchema { .. })));
}
