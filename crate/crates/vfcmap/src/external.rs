//! Source S2: external advisory databases, queried by API (OSV, GitHub
//! Advisory) or scraped (Snyk, Ubuntu, NiFi, Django).

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use scraper::Selector;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;
use vfcmap_core::candidate::{AdvisoryDb, CandidateKey, PendingExpansion};
use vfcmap_core::link::{classify, HostAllowlist, LinkKind};
use vfcmap_core::matcher::{filter_candidates, AliasTable, MatchVerdict};
use vfcmap_core::{Category, CommitSha, CveId, NvdRecord, Source, VfcCandidate};

use crate::governor::HostGovernor;
use crate::html;
use crate::http::{send_with_retry, HttpError, Request, RetryError, RetryPolicy, Sleeper, Transport};

#[derive(Debug, Error)]
pub enum ExternalError {
    #[error("rate limited: {url}")]
    RateLimited { url: String },
    #[error("unexpected advisory payload from {url}: field `{field}`")]
    ApiSchema { url: String, field: String },
    #[error("HTTP {status} from {url}")]
    HttpFailure { status: u16, url: String },
    #[error("invalid selector for {db:?}: {selector}")]
    BadSelector { db: AdvisoryDb, selector: String },
    #[error("no access method configured for {0:?}")]
    NotConfigured(AdvisoryDb),
    #[error(transparent)]
    Http(#[from] HttpError),
}

impl From<RetryError> for ExternalError {
    fn from(e: RetryError) -> Self {
        match e {
            RetryError::RateLimited { url, .. } => ExternalError::RateLimited { url },
            RetryError::HttpFailure { status, url, .. } => ExternalError::HttpFailure { status, url },
            RetryError::Http(h) => ExternalError::Http(h),
        }
    }
}

/// A URL an advisory lists for a CVE. `asserted` marks links the source
/// itself labels as the fix.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AdvisoryLink {
    pub url: String,
    pub asserted: bool,
}

/// How to scrape one advisory site. `{cve}` in the template is replaced
/// with the CVE id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScrapeConfig {
    pub url_template: String,
    /// Anchors on the first page leading to the per-advisory pages.
    #[serde(default)]
    pub follow_selector: Option<String>,
    pub region_selector: String,
    /// Keep only the innermost region elements mentioning the CVE.
    #[serde(default)]
    pub cve_scoped: bool,
    /// Off in live mode unless explicitly allowed.
    #[serde(default)]
    pub restricted: bool,
}

pub fn default_scrapers() -> BTreeMap<AdvisoryDb, ScrapeConfig> {
    let cfg = |t: &str, f: Option<&str>, r: &str, scoped, restricted| ScrapeConfig {
        url_template: t.into(),
        follow_selector: f.map(str::to_string),
        region_selector: r.into(),
        cve_scoped: scoped,
        restricted,
    };
    BTreeMap::from([
        (
            AdvisoryDb::Snyk,
            cfg(
                "https://security.snyk.io/vuln/?search={cve}",
                Some("a[href*='/vuln/SNYK-']"),
                "[data-snyk-test='references'], section.references, #references",
                false,
                true,
            ),
        ),
        (
            AdvisoryDb::UbuntuSecurity,
            cfg("https://ubuntu.com/security/{cve}", None, "#references, section.references", false, true),
        ),
        (
            AdvisoryDb::NifiApacheSecurity,
            cfg("https://nifi.apache.org/documentation/security/", None, "section, article, div.advisory", true, false),
        ),
        (
            AdvisoryDb::DjangoSecurity,
            cfg("https://docs.djangoproject.com/en/dev/releases/security/", None, "section, li", true, false),
        ),
    ])
}

pub struct ExternalClient {
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    sleeper: Arc<dyn Sleeper>,
    governor: Arc<HostGovernor>,
    pub osv_api: String,
    pub ghsa_api: String,
    github_token: Option<String>,
    scrapers: BTreeMap<AdvisoryDb, ScrapeConfig>,
}

fn schema(url: &str, field: impl Into<String>) -> ExternalError {
    ExternalError::ApiSchema { url: url.into(), field: field.into() }
}

impl ExternalClient {
    pub fn new(transport: Arc<dyn Transport>, governor: Arc<HostGovernor>) -> Self {
        ExternalClient {
            transport,
            retry: RetryPolicy::default(),
            sleeper: Arc::new(crate::http::RealSleep),
            governor,
            osv_api: "https://api.osv.dev/v1".into(),
            ghsa_api: "https://api.github.com".into(),
            github_token: None,
            scrapers: default_scrapers(),
        }
    }

    pub fn with_github_token(mut self, t: Option<String>) -> Self {
        self.github_token = t;
        self
    }

    pub fn with_sleeper(mut self, s: Arc<dyn Sleeper>) -> Self {
        self.sleeper = s;
        self
    }

    pub fn with_scraper(mut self, db: AdvisoryDb, cfg: ScrapeConfig) -> Self {
        self.scrapers.insert(db, cfg);
        self
    }

    pub fn scraper(&self, db: AdvisoryDb) -> Option<&ScrapeConfig> {
        self.scrapers.get(&db)
    }

    /// GET with retries; `None` for 404.
    fn fetch(&self, req: Request) -> Result<Option<crate::http::Response>, ExternalError> {
        if let Ok(u) = url::Url::parse(&req.url) {
            self.governor.wait(u.host_str().unwrap_or_default());
        }
        let resp = send_with_retry(&*self.transport, &req, &self.retry, &*self.sleeper)?;
        match resp.status {
            404 | 410 => Ok(None),
            s if (200..300).contains(&s) => Ok(Some(resp)),
            s => Err(ExternalError::HttpFailure { status: s, url: req.url }),
        }
    }

    pub fn lookup(&self, db: AdvisoryDb, cve: &CveId) -> Result<Vec<AdvisoryLink>, ExternalError> {
        match db {
            AdvisoryDb::OsvDev | AdvisoryDb::GitHubAdvisory => self.query_api(db, cve),
            _ => self.scrape_page(db, cve),
        }
    }

    pub fn query_api(&self, db: AdvisoryDb, cve: &CveId) -> Result<Vec<AdvisoryLink>, ExternalError> {
        match db {
            AdvisoryDb::OsvDev => self.osv(cve),
            AdvisoryDb::GitHubAdvisory => self.ghsa(cve),
            other => Err(ExternalError::NotConfigured(other)),
        }
    }

    fn osv(&self, cve: &CveId) -> Result<Vec<AdvisoryLink>, ExternalError> {
        let url = format!("{}/vulns/{}", self.osv_api, cve);
        let Some(resp) = self.fetch(Request::get(&url))? else { return Ok(Vec::new()) };
        let doc = resp.json().map_err(|_| schema(&url, "<body>"))?;
        parse_osv(&url, &doc)
    }

    fn ghsa(&self, cve: &CveId) -> Result<Vec<AdvisoryLink>, ExternalError> {
        let url = format!("{}/advisories?cve_id={}&per_page=100", self.ghsa_api, cve);
        let mut req = Request::get(&url).header("accept", "application/vnd.github+json");
        if let Some(t) = &self.github_token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let Some(resp) = self.fetch(req)? else { return Ok(Vec::new()) };
        let doc = resp.json().map_err(|_| schema(&url, "<body>"))?;
        parse_ghsa(&url, &doc)
    }

    /// Links in the reference region of the source's page for `cve`.
    pub fn scrape_page(&self, db: AdvisoryDb, cve: &CveId) -> Result<Vec<AdvisoryLink>, ExternalError> {
        let cfg = self.scrapers.get(&db).ok_or(ExternalError::NotConfigured(db))?;
        let sel = |s: &str| Selector::parse(s).map_err(|_| ExternalError::BadSelector { db, selector: s.into() });
        let region = sel(&cfg.region_selector)?;
        let url = cfg.url_template.replace("{cve}", cve.as_str());
        let Some(first) = self.fetch(Request::get(&url))? else { return Ok(Vec::new()) };
        let pages = match &cfg.follow_selector {
            None => vec![first],
            Some(f) => {
                let follow = sel(f)?;
                let targets = html::select_links(&first.text(), &first.url, &follow);
                let mut pages = Vec::new();
                for t in targets.into_iter().take(5) {
                    if let Some(p) = self.fetch(Request::get(&t))? {
                        pages.push(p);
                    }
                }
                pages
            }
        };
        let mention = cfg.cve_scoped.then_some(cve.as_str());
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for p in pages {
            for l in html::extract_region_links(&p.text(), &p.url, &region, mention) {
                if seen.insert(l.clone()) {
                    out.push(AdvisoryLink { url: l, asserted: false });
                }
            }
        }
        Ok(out)
    }
}

/// OSV record: `references[]` (type FIX is asserted) and the `fixed`
/// events of GIT ranges, as commit URLs.
pub fn parse_osv(url: &str, doc: &Value) -> Result<Vec<AdvisoryLink>, ExternalError> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut push = |u: String, asserted: bool, out: &mut Vec<AdvisoryLink>| {
        if seen.insert(u.clone()) {
            out.push(AdvisoryLink { url: u, asserted });
        } else if asserted {
            if let Some(e) = out.iter_mut().find(|e| e.url == u) {
                e.asserted = true;
            }
        }
    };
    match doc.get("references") {
        None | Some(Value::Null) => {}
        Some(Value::Array(refs)) => {
            for (i, r) in refs.iter().enumerate() {
                let u = r.get("url").and_then(Value::as_str).ok_or_else(|| schema(url, format!("references[{i}].url")))?;
                let fix = r.get("type").and_then(Value::as_str) == Some("FIX");
                push(u.to_string(), fix, &mut out);
            }
        }
        Some(_) => return Err(schema(url, "references")),
    }
    let affected = match doc.get("affected") {
        None | Some(Value::Null) => &[][..],
        Some(Value::Array(a)) => a.as_slice(),
        Some(_) => return Err(schema(url, "affected")),
    };
    for (i, a) in affected.iter().enumerate() {
        let ranges = a.get("ranges").and_then(Value::as_array).map_or(&[][..], Vec::as_slice);
        for (j, r) in ranges.iter().enumerate() {
            if r.get("type").and_then(Value::as_str) != Some("GIT") {
                continue;
            }
            let repo = r
                .get("repo")
                .and_then(Value::as_str)
                .ok_or_else(|| schema(url, format!("affected[{i}].ranges[{j}].repo")))?;
            let events = r.get("events").and_then(Value::as_array).map_or(&[][..], Vec::as_slice);
            for ev in events {
                if let Some(sha) = ev.get("fixed").and_then(Value::as_str) {
                    let repo = repo.trim_end_matches('/').trim_end_matches(".git");
                    push(format!("{repo}/commit/{sha}"), true, &mut out);
                }
            }
        }
    }
    Ok(out)
}

/// GitHub global advisories: an array of advisories, each with a string
/// array `references`.
pub fn parse_ghsa(url: &str, doc: &Value) -> Result<Vec<AdvisoryLink>, ExternalError> {
    let advisories = doc.as_array().ok_or_else(|| schema(url, "<array>"))?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, a) in advisories.iter().enumerate() {
        let refs = match a.get("references") {
            None | Some(Value::Null) => continue,
            Some(Value::Array(r)) => r,
            Some(_) => return Err(schema(url, format!("[{i}].references"))),
        };
        for (j, r) in refs.iter().enumerate() {
            let u = r.as_str().ok_or_else(|| schema(url, format!("[{i}].references[{j}]")))?;
            if seen.insert(u.to_string()) {
                out.push(AdvisoryLink { url: u.into(), asserted: false });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SourceFailure {
    pub cve_id: CveId,
    pub db: AdvisoryDb,
    pub error: String,
}

#[derive(Debug, Default)]
pub struct S2Harvest {
    pub candidates: Vec<VfcCandidate>,
    pub expansions: Vec<PendingExpansion>,
    pub rejected: Vec<(VfcCandidate, MatchVerdict)>,
    pub failures: Vec<SourceFailure>,
}

pub struct S2Options<'a> {
    pub sources: &'a [AdvisoryDb],
    pub allow: &'a HostAllowlist,
    pub threshold: f64,
    pub aliases: &'a AliasTable,
    pub now: DateTime<Utc>,
    pub concurrency: usize,
}

fn harvest_record(
    client: &ExternalClient,
    record: &NvdRecord,
    category: Category,
    opts: &S2Options<'_>,
) -> S2Harvest {
    let mut out = S2Harvest::default();
    let mut cands: BTreeMap<CandidateKey, VfcCandidate> = BTreeMap::new();
    let mut expansions: BTreeMap<_, PendingExpansion> = BTreeMap::new();
    for &db in opts.sources {
        let links = match client.lookup(db, &record.cve_id) {
            Ok(l) => l,
            Err(e) => {
                out.failures.push(SourceFailure { cve_id: record.cve_id.clone(), db, error: e.to_string() });
                continue;
            }
        };
        for l in links {
            let Some(link) = classify(&l.url, opts.allow) else { continue };
            if !link.kind.is_candidate_eligible() {
                continue;
            }
            let source = Source::S2 { db_name: db, source_asserted: l.asserted };
            if link.kind == LinkKind::Commit {
                let Ok(sha) = CommitSha::parse(&link.ident) else { continue };
                let c = VfcCandidate::new(record.cve_id.clone(), link.repo_id(), sha, source, category, opts.now);
                match cands.get_mut(&c.key()) {
                    Some(e) => e.sources.extend(c.sources),
                    None => {
                        cands.insert(c.key(), c);
                    }
                }
            } else {
                expansions
                    .entry((link.clone(), db))
                    .and_modify(|e: &mut PendingExpansion| {
                        if l.asserted {
                            e.source = source.clone();
                        }
                    })
                    .or_insert(PendingExpansion {
                        cve_id: record.cve_id.clone(),
                        link,
                        source,
                        category,
                        flags: BTreeSet::new(),
                    });
            }
        }
    }
    let filtered = filter_candidates(cands.into_values().collect(), record, opts.threshold, opts.aliases);
    out.candidates = filtered.kept;
    out.rejected = filtered.rejected;
    out.expansions = expansions.into_values().collect();
    out
}

/// Query every enabled source for every record. Records are processed
/// concurrently; the result lists follow record order.
pub fn harvest_s2(client: &ExternalClient, records: &[(NvdRecord, Category)], opts: &S2Options<'_>) -> S2Harvest {
    let slots: Vec<Mutex<Option<S2Harvest>>> = records.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..opts.concurrency.clamp(1, records.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((rec, cat)) = records.get(i) else { break };
                let h = harvest_record(client, rec, *cat, opts);
                *slots[i].lock().expect("slot") = Some(h);
            });
        }
    });
    let mut out = S2Harvest::default();
    for slot in slots {
        let h = slot.into_inner().expect("slot").unwrap_or_default();
        out.candidates.extend(h.candidates);
        out.expansions.extend(h.expansions);
        out.rejected.extend(h.rejected);
        out.failures.extend(h.failures);
    }
    out
}
