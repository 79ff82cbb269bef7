//! Forge URL grammar: turn arbitrary reference URLs into structured links to
//! commits, pull/merge requests, issues and other repository pages.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use crate::record::Reference;
use crate::url::{self, UrlParts};

pub const GITHUB: &str = "github.com";
pub const GITLAB: &str = "gitlab.com";
pub const BITBUCKET: &str = "bitbucket.org";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LinkKind {
    Commit,
    Pull,
    MergeRequest,
    Issue,
    Compare,
    Release,
    Tag,
    RepoHome,
    Other,
}

impl LinkKind {
    /// Kinds that feed the candidate pipeline. Compare, release, tag and
    /// repository-home links are recognized but never produce candidates.
    pub fn is_candidate_eligible(self) -> bool {
        matches!(
            self,
            LinkKind::Commit | LinkKind::Pull | LinkKind::MergeRequest | LinkKind::Issue
        )
    }

    /// Kinds that must be expanded through a forge API into commits.
    pub fn needs_expansion(self) -> bool {
        matches!(self, LinkKind::Pull | LinkKind::MergeRequest | LinkKind::Issue)
    }
}

/// A parsed forge link.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GitLink {
    pub host: String,
    /// Owner path; GitLab subgroups are joined with `/`.
    pub owner: String,
    pub repo: String,
    pub kind: LinkKind,
    pub ident: String,
}

impl GitLink {
    /// Lowercase `host/owner/repo`.
    pub fn repo_id(&self) -> String {
        format!("{}/{}/{}", self.host, self.owner, self.repo).to_ascii_lowercase()
    }

    /// Canonical web URL for this link.
    pub fn web_url(&self) -> String {
        let base = format!("https://{}/{}/{}", self.host, self.owner, self.repo);
        let gitlab_like = self.host != GITHUB && self.host != BITBUCKET;
        match (self.kind, self.host.as_str()) {
            (LinkKind::Commit, BITBUCKET) => format!("{base}/commits/{}", self.ident),
            (LinkKind::Commit, _) if gitlab_like => format!("{base}/-/commit/{}", self.ident),
            (LinkKind::Commit, _) => format!("{base}/commit/{}", self.ident),
            (LinkKind::Pull, BITBUCKET) => format!("{base}/pull-requests/{}", self.ident),
            (LinkKind::Pull, _) => format!("{base}/pull/{}", self.ident),
            (LinkKind::MergeRequest, _) => format!("{base}/-/merge_requests/{}", self.ident),
            (LinkKind::Issue, _) if gitlab_like => format!("{base}/-/issues/{}", self.ident),
            (LinkKind::Issue, _) => format!("{base}/issues/{}", self.ident),
            _ => base,
        }
    }
}

impl fmt::Display for GitLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} {}", self.kind, self.repo_id())?;
        if !self.ident.is_empty() {
            write!(f, " {}", self.ident)?;
        }
        Ok(())
    }
}

/// Set of hosts treated as Git forges. Hosts are lowercase with any `www.`
/// prefix stripped.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HostAllowlist(BTreeSet<String>);

impl Default for HostAllowlist {
    fn default() -> Self {
        HostAllowlist([GITHUB, GITLAB, BITBUCKET].iter().map(|h| h.to_string()).collect())
    }
}

impl HostAllowlist {
    pub fn new<I, S>(hosts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        HostAllowlist(hosts.into_iter().map(|h| canonical_host(h.as_ref())).collect())
    }

    pub fn with_host(mut self, host: &str) -> Self {
        self.0.insert(canonical_host(host));
        self
    }

    pub fn contains(&self, host: &str) -> bool {
        self.0.contains(&canonical_host(host))
    }

    pub fn hosts(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

fn canonical_host(h: &str) -> String {
    let h = h.trim().trim_end_matches('.').to_ascii_lowercase();
    match h.strip_prefix("www.") {
        Some(rest) => rest.to_owned(),
        None => h,
    }
}

pub fn is_sha(s: &str) -> bool {
    (7..=40).contains(&s.len()) && s.bytes().all(|b| b.is_ascii_hexdigit())
}

fn is_number(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()) && s.bytes().any(|b| b != b'0')
}

/// Strip `.patch`/`.diff` suffixes GitHub and GitLab serve raw commits under.
fn strip_commit_suffix(s: &str) -> &str {
    s.strip_suffix(".patch")
        .or_else(|| s.strip_suffix(".diff"))
        .unwrap_or(s)
}

fn strip_git(s: &str) -> &str {
    s.strip_suffix(".git").unwrap_or(s)
}

fn number(s: &str) -> Option<String> {
    is_number(s).then(|| s.trim_start_matches('0').to_owned())
}

// First path segments on github.com that are site pages, not owners.
const GITHUB_RESERVED: &[&str] = &[
    "about", "advisories", "apps", "blog", "collections", "contact", "customer-stories",
    "enterprise", "events", "explore", "features", "gist", "issues", "login", "marketplace",
    "new", "notifications", "orgs", "pricing", "pulls", "search", "security", "settings",
    "site", "sponsors", "topics", "trending", "users",
];

const BITBUCKET_RESERVED: &[&str] = &["account", "dashboard", "product", "site", "support"];

const GITLAB_RESERVED: &[&str] = &[
    "-", "api", "dashboard", "explore", "groups", "help", "projects", "search", "users",
];

/// Classify a URL as a forge link. `None` means not a Git reference: either
/// the host is not allowlisted or the path shape is not a repository route.
pub fn classify(raw: &str, allow: &HostAllowlist) -> Option<GitLink> {
    let parts = url::split(raw)?;
    if !parts.is_http() {
        return None;
    }
    let host = canonical_host(&parts.host);
    if !allow.contains(&host) {
        return None;
    }
    let segs: Vec<&str> = parts.segments().collect();
    let mut link = match host.as_str() {
        GITHUB => github(&segs),
        BITBUCKET => bitbucket(&segs),
        GITLAB => gitlab_like(&segs),
        _ => cgit(&segs, &parts).or_else(|| gitlab_like(&segs)),
    }?;
    link.host = host;
    if link.kind == LinkKind::Commit {
        link.ident = link.ident.to_ascii_lowercase();
    }
    Some(link)
}

pub fn is_git_reference(r: &Reference, allow: &HostAllowlist) -> bool {
    classify(&r.url, allow).is_some()
}

fn make(owner: &str, repo: &str, kind: LinkKind, ident: &str) -> GitLink {
    GitLink {
        host: String::new(),
        owner: owner.to_owned(),
        repo: strip_git(repo).to_owned(),
        kind,
        ident: ident.to_owned(),
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s != "."
        && s != ".."
        && s.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn github(segs: &[&str]) -> Option<GitLink> {
    let (owner, repo, rest) = match segs {
        [o, r, rest @ ..] => (*o, *r, rest),
        _ => return None,
    };
    if GITHUB_RESERVED.contains(&owner.to_ascii_lowercase().as_str())
        || !valid_name(owner)
        || !valid_name(strip_git(repo))
    {
        return None;
    }
    use LinkKind::*;
    Some(match rest {
        [] => make(owner, repo, RepoHome, ""),
        ["commit" | "commits", sha, ..] if is_sha(strip_commit_suffix(sha)) => {
            make(owner, repo, Commit, strip_commit_suffix(sha))
        }
        ["pull", _, "commits", sha, ..] if is_sha(strip_commit_suffix(sha)) => {
            make(owner, repo, Commit, strip_commit_suffix(sha))
        }
        ["pull", n, ..] => make(owner, repo, Pull, &number(strip_commit_suffix(n))?),
        ["issues", n, ..] => make(owner, repo, Issue, &number(n)?),
        ["compare", spec @ ..] if !spec.is_empty() => make(owner, repo, Compare, &spec.join("/")),
        ["releases", "tag", tag @ ..] if !tag.is_empty() => {
            make(owner, repo, Release, &tag.join("/"))
        }
        ["releases", ..] => make(owner, repo, Release, ""),
        ["tags", ..] => make(owner, repo, Tag, ""),
        _ => make(owner, repo, Other, ""),
    })
}

fn bitbucket(segs: &[&str]) -> Option<GitLink> {
    let (owner, repo, rest) = match segs {
        [o, r, rest @ ..] => (*o, *r, rest),
        _ => return None,
    };
    if BITBUCKET_RESERVED.contains(&owner.to_ascii_lowercase().as_str())
        || !valid_name(owner)
        || !valid_name(strip_git(repo))
    {
        return None;
    }
    use LinkKind::*;
    Some(match rest {
        [] => make(owner, repo, RepoHome, ""),
        ["commits" | "commit", sha, ..] if is_sha(sha) => make(owner, repo, Commit, sha),
        ["pull-requests" | "pull-request", _, "commits", sha, ..] if is_sha(sha) => {
            make(owner, repo, Commit, sha)
        }
        ["pull-requests" | "pull-request", n, ..] => make(owner, repo, Pull, &number(n)?),
        ["issues", n, ..] => make(owner, repo, Issue, &number(n)?),
        ["branches", "compare", spec @ ..] if !spec.is_empty() => {
            make(owner, repo, Compare, &spec.join("/"))
        }
        ["downloads", ..] => make(owner, repo, Release, ""),
        _ => make(owner, repo, Other, ""),
    })
}

/// GitLab, and the default for self-hosted forges (GitLab, Gitea, Gogs).
/// Repository path ends at a `-` segment or at the first route keyword.
fn gitlab_like(segs: &[&str]) -> Option<GitLink> {
    const ROUTES: &[&str] = &[
        "commit", "commits", "merge_requests", "pulls", "pull", "issues", "compare", "releases",
        "tags", "tree", "blob", "src", "raw", "wiki", "wikis",
    ];
    if segs.len() < 2 {
        return None;
    }
    if GITLAB_RESERVED.contains(&segs[0].to_ascii_lowercase().as_str()) {
        return None;
    }
    let split = match segs.iter().position(|s| *s == "-") {
        Some(i) => i,
        None => segs
            .iter()
            .enumerate()
            .skip(2)
            .find(|(_, s)| ROUTES.contains(s))
            .map_or(segs.len(), |(i, _)| i),
    };
    if split < 2 {
        return None;
    }
    let (path, rest) = segs.split_at(split);
    let rest = rest.strip_prefix(&["-"][..]).unwrap_or(rest);
    let (repo, owners) = path.split_last()?;
    if !owners.iter().all(|o| valid_name(o)) || !valid_name(strip_git(repo)) {
        return None;
    }
    let owner = owners.join("/");
    use LinkKind::*;
    Some(match rest {
        [] => make(&owner, repo, RepoHome, ""),
        ["commit" | "commits", sha, ..] if is_sha(strip_commit_suffix(sha)) => {
            make(&owner, repo, Commit, strip_commit_suffix(sha))
        }
        ["merge_requests", n, ..] => make(&owner, repo, MergeRequest, &number(n)?),
        ["pulls" | "pull", n, ..] => make(&owner, repo, Pull, &number(n)?),
        ["issues", n, ..] => make(&owner, repo, Issue, &number(n)?),
        ["compare", spec @ ..] if !spec.is_empty() => make(&owner, repo, Compare, &spec.join("/")),
        ["releases", tag, ..] => make(&owner, repo, Release, tag),
        ["releases"] => make(&owner, repo, Release, ""),
        ["tags", tag, ..] => make(&owner, repo, Tag, tag),
        ["tags"] => make(&owner, repo, Tag, ""),
        _ => make(&owner, repo, Other, ""),
    })
}

/// cgit, as on git.kernel.org: `/<path>/<repo>.git/commit/?id=<sha>`.
fn cgit(segs: &[&str], parts: &UrlParts<'_>) -> Option<GitLink> {
    let at = segs.iter().position(|s| s.ends_with(".git"))?;
    let (path, rest) = segs.split_at(at + 1);
    let (repo, owners) = path.split_last()?;
    let owner = if owners.is_empty() {
        "-".to_string()
    } else {
        owners.join("/")
    };
    let kind_ident = match rest {
        [] => (LinkKind::RepoHome, String::new()),
        ["commit", ..] | ["patch", ..] => {
            let id = parts.query_param("id")?;
            if !is_sha(id) {
                return None;
            }
            (LinkKind::Commit, id.to_owned())
        }
        ["tag", ..] => (LinkKind::Tag, parts.query_param("h").unwrap_or("").to_owned()),
        _ => (LinkKind::Other, String::new()),
    };
    Some(make(&owner, repo, kind_ident.0, &kind_ident.1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(u: &str) -> Option<GitLink> {
        classify(u, &HostAllowlist::default())
    }

    #[test]
    fn canonical_commit() {
        let sha = "4cf6a4fca0ec40c7fd7bb61f00e10c03d3f1bbb4";
        let l = c(&format!("https://github.com/locustio/locust/commit/{sha}")).unwrap();
        assert_eq!(
            l,
            GitLink {
                host: "github.com".into(),
                owner: "locustio".into(),
                repo: "locust".into(),
                kind: LinkKind::Commit,
                ident: sha.into(),
            }
        );
        let upper = c(&format!(
            "https://github.com/locustio/locust/commit/{}",
            sha.to_ascii_uppercase()
        ))
        .unwrap();
        assert_eq!(upper.ident, sha);
    }

    #[test]
    fn not_git() {
        assert!(c("https://www.debian.org/security/2011/dsa-2286").is_none());
        assert!(c("https://github.com/advisories/GHSA-1234-5678-9abc").is_none());
        assert!(c("https://github.com/torvalds").is_none());
        assert!(c("ftp://github.com/a/b").is_none());
    }

    #[test]
    fn merge_request_with_query() {
        let l = c("https://gitlab.com/gitlab-org/gitlab/-/merge_requests/12345?diff=split").unwrap();
        assert_eq!(l.kind, LinkKind::MergeRequest);
        assert_eq!(l.ident, "12345");
        assert_eq!(l.repo_id(), "gitlab.com/gitlab-org/gitlab");
    }

    #[test]
    fn repo_id_stable() {
        let a = c("https://GitHub.com/Owner/Repo.git/").unwrap();
        let b = c("https://github.com/owner/repo?tab=readme#top").unwrap();
        assert_eq!(a.repo_id(), b.repo_id());
        assert_eq!(a.kind, LinkKind::RepoHome);
    }

    #[test]
    fn zero_issue_number_rejected() {
        assert!(c("https://github.com/a/b/issues/0").is_none());
        assert!(c("https://github.com/a/b/pull/x1").is_none());
    }

    #[test]
    fn self_hosted_cgit() {
        let allow = HostAllowlist::default().with_host("git.kernel.org");
        let l = classify(
            "https://git.kernel.org/pub/scm/linux/kernel/git/torvalds/linux.git/commit/?id=0a1b2c3d4e5f",
            &allow,
        )
        .unwrap();
        assert_eq!(l.kind, LinkKind::Commit);
        assert_eq!(l.repo, "linux");
        assert_eq!(l.owner, "pub/scm/linux/kernel/git/torvalds");
        assert!(c("https://git.kernel.org/pub/scm/linux/kernel/git/torvalds/linux.git/").is_none());
    }

    #[test]
    fn web_url_reclassifies() {
        for u in [
            "https://github.com/a/b/commit/abcdef1",
            "https://github.com/a/b/pull/3",
            "https://gitlab.com/g/s/r/-/merge_requests/7",
            "https://gitlab.com/g/r/-/issues/9",
            "https://bitbucket.org/a/b/commits/abcdef12",
            "https://bitbucket.org/a/b/pull-requests/4",
        ] {
            let l = c(u).unwrap();
            assert_eq!(c(&l.web_url()).unwrap(), l, "{u}");
        }
    }
}
