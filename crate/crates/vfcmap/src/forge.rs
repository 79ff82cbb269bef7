//! Forge REST clients: expand pull/merge requests and issues into commits,
//! and resolve abbreviated commit ids.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use vfcmap_core::link::{GitLink, LinkKind, BITBUCKET, GITHUB, GITLAB};
use vfcmap_core::CommitSha;

use crate::http::{send_with_retry, HttpError, Request, Response, RetryError, RetryPolicy, Sleeper, Transport};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CommitRef {
    /// Lowercase `host/owner/repo`.
    pub repo_id: String,
    pub sha: CommitSha,
    /// The abbreviated id this ref was resolved from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub short_sha_source: Option<String>,
}

impl CommitRef {
    pub fn new(repo_id: impl Into<String>, sha: CommitSha) -> Self {
        CommitRef { repo_id: repo_id.into().to_ascii_lowercase(), sha, short_sha_source: None }
    }

    pub fn is_provisional(&self) -> bool {
        !self.sha.is_full()
    }

    fn split(&self) -> Option<(&str, &str, &str)> {
        let (host, path) = self.repo_id.split_once('/')?;
        let (owner, repo) = path.rsplit_once('/')?;
        Some((host, owner, repo))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Resolution {
    Resolved(CommitRef),
    /// The forge does not know the commit (rebased, squashed, private).
    Missing,
}

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("not found: {url}")]
    NotFound { url: String },
    #[error("rate limited: {url}")]
    RateLimited { url: String },
    #[error("unexpected API payload from {url}: field `{field}`")]
    ApiSchema { url: String, field: String },
    #[error("HTTP {status} from {url}")]
    HttpFailure { status: u16, url: String },
    #[error("no API client for host {host}")]
    Unsupported { host: String },
    #[error("{kind:?} links cannot be expanded")]
    NotExpandable { kind: LinkKind },
    #[error(transparent)]
    Http(#[from] HttpError),
}

impl From<RetryError> for ForgeError {
    fn from(e: RetryError) -> Self {
        match e {
            RetryError::RateLimited { url, .. } => ForgeError::RateLimited { url },
            RetryError::HttpFailure { status, url, .. } => ForgeError::HttpFailure { status, url },
            RetryError::Http(h) => ForgeError::Http(h),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ForgeKind {
    GitHub,
    GitLab,
    Bitbucket,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ForgeTokens {
    pub github: Option<String>,
    pub gitlab: Option<String>,
    pub bitbucket: Option<String>,
}

impl ForgeTokens {
    pub fn from_env() -> Self {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.is_empty());
        ForgeTokens {
            github: var("GITHUB_TOKEN"),
            gitlab: var("GITLAB_TOKEN"),
            bitbucket: var("BITBUCKET_TOKEN"),
        }
    }
}

pub struct ForgeClient {
    transport: Arc<dyn Transport>,
    tokens: ForgeTokens,
    retry: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
    kinds: BTreeMap<String, ForgeKind>,
    github_api: String,
    bitbucket_api: String,
    // One lock per forge: requests that spend the same token budget go
    // one at a time.
    gates: BTreeMap<ForgeKind, Mutex<()>>,
}

fn field(url: &str, field: impl Into<String>) -> ForgeError {
    ForgeError::ApiSchema { url: url.into(), field: field.into() }
}

fn sha_at(url: &str, v: &Value, path: &str) -> Result<CommitSha, ForgeError> {
    v.as_str().and_then(|s| CommitSha::parse(s).ok()).ok_or_else(|| field(url, path))
}

fn link_next(resp: &Response) -> Option<String> {
    let header = resp.header("link")?;
    header.split(',').find_map(|part| {
        let (target, params) = part.split_once(';')?;
        params
            .split(';')
            .any(|p| p.trim() == "rel=\"next\"")
            .then(|| target.trim().trim_start_matches('<').trim_end_matches('>').to_string())
    })
}

fn push_unique(out: &mut Vec<CommitRef>, seen: &mut BTreeSet<(String, String)>, c: CommitRef) {
    if seen.insert((c.repo_id.clone(), c.sha.as_str().to_string())) {
        out.push(c);
    }
}

impl ForgeClient {
    pub fn new(transport: Arc<dyn Transport>, tokens: ForgeTokens) -> Self {
        let kinds = [(GITHUB, ForgeKind::GitHub), (GITLAB, ForgeKind::GitLab), (BITBUCKET, ForgeKind::Bitbucket)]
            .into_iter()
            .map(|(h, k)| (h.to_string(), k))
            .collect();
        ForgeClient {
            transport,
            tokens,
            retry: RetryPolicy::default(),
            sleeper: Arc::new(crate::http::RealSleep),
            kinds,
            github_api: "https://api.github.com".into(),
            bitbucket_api: "https://api.bitbucket.org/2.0".into(),
            gates: [ForgeKind::GitHub, ForgeKind::GitLab, ForgeKind::Bitbucket]
                .into_iter()
                .map(|k| (k, Mutex::new(())))
                .collect(),
        }
    }

    pub fn with_sleeper(mut self, s: Arc<dyn Sleeper>) -> Self {
        self.sleeper = s;
        self
    }

    pub fn with_retry(mut self, r: RetryPolicy) -> Self {
        self.retry = r;
        self
    }

    /// Treat `host` as a self-hosted instance of `kind`.
    pub fn with_host(mut self, host: &str, kind: ForgeKind) -> Self {
        self.kinds.insert(host.to_ascii_lowercase(), kind);
        self
    }

    fn kind_of(&self, host: &str) -> Result<ForgeKind, ForgeError> {
        self.kinds
            .get(&host.to_ascii_lowercase())
            .copied()
            .ok_or_else(|| ForgeError::Unsupported { host: host.into() })
    }

    fn gitlab_project(host: &str, owner: &str, repo: &str) -> String {
        let path: String = url::form_urlencoded::byte_serialize(format!("{owner}/{repo}").as_bytes()).collect();
        format!("https://{host}/api/v4/projects/{path}")
    }

    /// GET `url` as JSON. 404 and 410 become `NotFound`.
    fn get(&self, kind: ForgeKind, url: &str) -> Result<(Value, Response), ForgeError> {
        let mut req = Request::get(url);
        match kind {
            ForgeKind::GitHub => {
                req = req.header("accept", "application/vnd.github+json");
                if let Some(t) = &self.tokens.github {
                    req = req.header("authorization", format!("Bearer {t}"));
                }
            }
            ForgeKind::GitLab => {
                if let Some(t) = &self.tokens.gitlab {
                    req = req.header("private-token", t.clone());
                }
            }
            ForgeKind::Bitbucket => {
                if let Some(t) = &self.tokens.bitbucket {
                    req = req.header("authorization", format!("Bearer {t}"));
                }
            }
        }
        let resp = {
            let _gate = self.gates[&kind].lock().expect("forge gate");
            send_with_retry(&*self.transport, &req, &self.retry, &*self.sleeper)?
        };
        match resp.status {
            404 | 410 => return Err(ForgeError::NotFound { url: url.into() }),
            s if !(200..300).contains(&s) => return Err(ForgeError::HttpFailure { status: s, url: url.into() }),
            _ => {}
        }
        let v = resp.json().map_err(|_| field(url, "<body>"))?;
        Ok((v, resp))
    }

    /// Every element of a paginated array endpoint, following `Link: next`.
    fn get_all(&self, kind: ForgeKind, first: &str) -> Result<Vec<Value>, ForgeError> {
        let mut out = Vec::new();
        let mut next = Some(first.to_string());
        let mut visited = BTreeSet::new();
        while let Some(url) = next.take() {
            if !visited.insert(url.clone()) {
                break;
            }
            let (v, resp) = self.get(kind, &url)?;
            match v {
                Value::Array(items) => out.extend(items),
                _ => return Err(field(&url, "<array>")),
            }
            next = link_next(&resp);
        }
        Ok(out)
    }

    /// Commits behind a pull request, merge request or issue link.
    pub fn expand(&self, link: &GitLink) -> Result<Vec<CommitRef>, ForgeError> {
        if !link.kind.needs_expansion() {
            return Err(ForgeError::NotExpandable { kind: link.kind });
        }
        let kind = self.kind_of(&link.host)?;
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        match (kind, link.kind) {
            (ForgeKind::GitHub, LinkKind::Pull) => self.github_pull(link, &mut out, &mut seen)?,
            (ForgeKind::GitHub, _) => self.github_issue(link, &mut out, &mut seen)?,
            (ForgeKind::GitLab, LinkKind::Issue) => self.gitlab_issue(link, &mut out, &mut seen)?,
            (ForgeKind::GitLab, _) => self.gitlab_mr(link, &mut out, &mut seen)?,
            (ForgeKind::Bitbucket, LinkKind::Issue) => {
                // Bitbucket issues carry no commit linkage; only existence is checked.
                let url = format!("{}/repositories/{}/{}/issues/{}", self.bitbucket_api, link.owner, link.repo, link.ident);
                self.get(kind, &url)?;
            }
            (ForgeKind::Bitbucket, _) => self.bitbucket_pull(link, &mut out, &mut seen)?,
        }
        Ok(out)
    }

    fn github_pull(&self, link: &GitLink, out: &mut Vec<CommitRef>, seen: &mut BTreeSet<(String, String)>) -> Result<(), ForgeError> {
        let base = format!("{}/repos/{}/{}/pulls/{}", self.github_api, link.owner, link.repo, link.ident);
        let (pr, _) = self.get(ForgeKind::GitHub, &base)?;
        let commits_url = format!("{base}/commits?per_page=100");
        for (i, c) in self.get_all(ForgeKind::GitHub, &commits_url)?.iter().enumerate() {
            let sha = sha_at(&commits_url, &c["sha"], &format!("[{i}].sha"))?;
            push_unique(out, seen, CommitRef::new(link.repo_id(), sha));
        }
        // GitHub fills merge_commit_sha with a test merge on open PRs; only
        // a merged PR's merge commit is part of the repository history.
        if pr.get("merged_at").is_some_and(|m| !m.is_null()) {
            let sha = sha_at(&base, &pr["merge_commit_sha"], "merge_commit_sha")?;
            push_unique(out, seen, CommitRef::new(link.repo_id(), sha));
        }
        Ok(())
    }

    fn github_issue(&self, link: &GitLink, out: &mut Vec<CommitRef>, seen: &mut BTreeSet<(String, String)>) -> Result<(), ForgeError> {
        let url = format!(
            "{}/repos/{}/{}/issues/{}/timeline?per_page=100",
            self.github_api, link.owner, link.repo, link.ident
        );
        for (i, ev) in self.get_all(ForgeKind::GitHub, &url)?.iter().enumerate() {
            let event = ev.get("event").and_then(Value::as_str).unwrap_or_default();
            if !matches!(event, "referenced" | "closed") {
                continue;
            }
            let Some(id) = ev.get("commit_id").filter(|v| !v.is_null()) else { continue };
            let sha = sha_at(&url, id, &format!("[{i}].commit_id"))?;
            // commit_url names the repository the commit lives in, which
            // may differ from the issue's.
            let repo_id = ev
                .get("commit_url")
                .and_then(Value::as_str)
                .and_then(|u| {
                    let rest = u.split("/repos/").nth(1)?;
                    let mut parts = rest.split('/');
                    Some(format!("{GITHUB}/{}/{}", parts.next()?, parts.next()?))
                })
                .unwrap_or_else(|| link.repo_id());
            push_unique(out, seen, CommitRef::new(repo_id, sha));
        }
        Ok(())
    }

    fn gitlab_mr(&self, link: &GitLink, out: &mut Vec<CommitRef>, seen: &mut BTreeSet<(String, String)>) -> Result<(), ForgeError> {
        let base = format!("{}/merge_requests/{}", Self::gitlab_project(&link.host, &link.owner, &link.repo), link.ident);
        let (mr, _) = self.get(ForgeKind::GitLab, &base)?;
        let commits_url = format!("{base}/commits?per_page=100");
        for (i, c) in self.get_all(ForgeKind::GitLab, &commits_url)?.iter().enumerate() {
            let sha = sha_at(&commits_url, &c["id"], &format!("[{i}].id"))?;
            push_unique(out, seen, CommitRef::new(link.repo_id(), sha));
        }
        for key in ["merge_commit_sha", "squash_commit_sha"] {
            if let Some(v) = mr.get(key).filter(|v| !v.is_null()) {
                let sha = sha_at(&base, v, key)?;
                push_unique(out, seen, CommitRef::new(link.repo_id(), sha));
            }
        }
        Ok(())
    }

    fn gitlab_issue(&self, link: &GitLink, out: &mut Vec<CommitRef>, seen: &mut BTreeSet<(String, String)>) -> Result<(), ForgeError> {
        let url = format!(
            "{}/issues/{}/notes?per_page=100&sort=asc",
            Self::gitlab_project(&link.host, &link.owner, &link.repo),
            link.ident
        );
        for note in self.get_all(ForgeKind::GitLab, &url)? {
            if note.get("system").and_then(Value::as_bool) != Some(true) {
                continue;
            }
            let body = note.get("body").and_then(Value::as_str).unwrap_or_default();
            let Some(target) = body.strip_prefix("mentioned in commit ") else { continue };
            let target = target.split_whitespace().next().unwrap_or_default();
            let (repo_id, sha) = match target.rsplit_once('@') {
                Some((path, sha)) if path.contains('/') => (format!("{}/{}", link.host, path), sha),
                Some((_, sha)) => (link.repo_id(), sha),
                None => (link.repo_id(), target),
            };
            if let Ok(sha) = CommitSha::parse(sha) {
                push_unique(out, seen, CommitRef::new(repo_id, sha));
            }
        }
        Ok(())
    }

    fn bitbucket_pull(&self, link: &GitLink, out: &mut Vec<CommitRef>, seen: &mut BTreeSet<(String, String)>) -> Result<(), ForgeError> {
        let base = format!("{}/repositories/{}/{}/pullrequests/{}", self.bitbucket_api, link.owner, link.repo, link.ident);
        let (pr, _) = self.get(ForgeKind::Bitbucket, &base)?;
        let mut next = Some(format!("{base}/commits"));
        let mut visited = BTreeSet::new();
        while let Some(url) = next.take() {
            if !visited.insert(url.clone()) {
                break;
            }
            let (page, _) = self.get(ForgeKind::Bitbucket, &url)?;
            let values = page.get("values").and_then(Value::as_array).ok_or_else(|| field(&url, "values"))?;
            for (i, c) in values.iter().enumerate() {
                let sha = sha_at(&url, &c["hash"], &format!("values[{i}].hash"))?;
                push_unique(out, seen, CommitRef::new(link.repo_id(), sha));
            }
            next = page.get("next").and_then(Value::as_str).map(str::to_string);
        }
        if let Some(h) = pr.get("merge_commit").and_then(|m| m.get("hash")).filter(|v| !v.is_null()) {
            let sha = sha_at(&base, h, "merge_commit.hash")?;
            push_unique(out, seen, CommitRef::new(link.repo_id(), sha));
        }
        Ok(())
    }

    /// Expand an abbreviated id to the full one. Full ids are returned as-is
    /// without a request.
    pub fn resolve_commit(&self, c: &CommitRef) -> Result<Resolution, ForgeError> {
        if c.sha.is_full() {
            return Ok(Resolution::Resolved(c.clone()));
        }
        let (host, owner, repo) = c.split().ok_or_else(|| ForgeError::Unsupported { host: c.repo_id.clone() })?;
        let kind = self.kind_of(host)?;
        let short = c.sha.as_str();
        let (url, key) = match kind {
            ForgeKind::GitHub => (format!("{}/repos/{owner}/{repo}/commits/{short}", self.github_api), "sha"),
            ForgeKind::GitLab => (
                format!("{}/repository/commits/{short}", Self::gitlab_project(host, owner, repo)),
                "id",
            ),
            ForgeKind::Bitbucket => (format!("{}/repositories/{owner}/{repo}/commit/{short}", self.bitbucket_api), "hash"),
        };
        let v = match self.get(kind, &url) {
            Ok((v, _)) => v,
            Err(ForgeError::NotFound { .. }) | Err(ForgeError::HttpFailure { status: 422, .. }) => {
                return Ok(Resolution::Missing)
            }
            Err(e) => return Err(e),
        };
        let full = sha_at(&url, &v[key], key)?;
        if !c.sha.is_prefix_of(&full) || !full.is_full() {
            return Err(field(&url, key));
        }
        Ok(Resolution::Resolved(CommitRef {
            repo_id: c.repo_id.clone(),
            sha: full,
            short_sha_source: Some(short.to_string()),
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_link_header() {
        let r = Response {
            status: 200,
            url: String::new(),
            headers: vec![(
                "link".into(),
                r#"<https://api.test/x?page=2>; rel="next", <https://api.test/x?page=5>; rel="last""#.into(),
            )],
            body: Vec::new(),
            from_cache: false,
        };
        assert_eq!(link_next(&r).as_deref(), Some("https://api.test/x?page=2"));
    }

    #[test]
    fn gitlab_project_path_is_encoded() {
        assert_eq!(
            ForgeClient::gitlab_project("gitlab.com", "group/sub", "repo"),
            "https://gitlab.com/api/v4/projects/group%2Fsub%2Frepo"
        );
    }
}
