//! NVD API 2.0 ingestion: local snapshots and the paginated live API.

use std::collections::{BTreeSet, VecDeque};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, NaiveDateTime, TimeDelta, Utc};
use serde_json::Value;
use thiserror::Error;
use vfcmap_core::{CveId, Cpe23, NvdRecord, Reference};

use crate::governor::HostGovernor;
use crate::http::{send_with_retry, HttpError, Request, RetryError, RetryPolicy, Sleeper, Transport};

pub const DEFAULT_API_BASE: &str = "https://services.nvd.nist.gov/rest/json/cves/2.0";

/// The API refuses publication-date windows longer than this.
const MAX_WINDOW_DAYS: i64 = 120;

#[derive(Debug, Error)]
pub enum NvdError {
    #[error("malformed snapshot{}: {reason}", index.map(|i| format!(" at entry {i}")).unwrap_or_default())]
    MalformedSnapshot { index: Option<usize>, reason: String },
    #[error("snapshot contains no vulnerability entries")]
    EmptySnapshot,
    #[error("HTTP {status} from {url}")]
    HttpFailure { status: u16, url: String },
    #[error("rate limited by {url}")]
    RateLimited { url: String },
    #[error(transparent)]
    Http(#[from] HttpError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl From<RetryError> for NvdError {
    fn from(e: RetryError) -> Self {
        match e {
            RetryError::RateLimited { url, .. } => NvdError::RateLimited { url },
            RetryError::HttpFailure { status, url, .. } => NvdError::HttpFailure { status, url },
            RetryError::Http(h) => NvdError::Http(h),
        }
    }
}

/// An entry left out of the record list.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Rejected {
    pub index: usize,
    pub cve_id: String,
    pub reason: String,
}

/// Something dropped from an otherwise loaded record.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct Warning {
    pub cve_id: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshot {
    pub records: Vec<NvdRecord>,
    pub rejected: Vec<Rejected>,
    pub warnings: Vec<Warning>,
}

fn malformed(index: usize, reason: impl Into<String>) -> NvdError {
    NvdError::MalformedSnapshot { index: Some(index), reason: reason.into() }
}

fn parse_published(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Some(t.with_timezone(&Utc));
    }
    // The API emits local-less timestamps; they are UTC.
    NaiveDateTime::parse_from_str(s, "%Y-%m-%dT%H:%M:%S%.f")
        .ok()
        .map(|t| t.and_utc())
}

enum Entry {
    Record(NvdRecord, Vec<Warning>),
    Rejected(Rejected),
}

fn parse_entry(index: usize, entry: &Value) -> Result<Entry, NvdError> {
    let cve = entry.get("cve").ok_or_else(|| malformed(index, "missing field `cve`"))?;
    let id = cve
        .get("id")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed(index, "missing field `cve.id`"))?;
    let cve_id = CveId::parse(id).map_err(|e| malformed(index, e.to_string()))?;

    if let Some(status) = cve.get("vulnStatus").and_then(Value::as_str) {
        if status.eq_ignore_ascii_case("rejected") {
            return Ok(Entry::Rejected(Rejected {
                index,
                cve_id: id.to_string(),
                reason: "vulnStatus is Rejected".into(),
            }));
        }
    }

    let published = cve
        .get("published")
        .and_then(Value::as_str)
        .ok_or_else(|| malformed(index, "missing field `cve.published`"))?;
    let published =
        parse_published(published).ok_or_else(|| malformed(index, format!("bad timestamp {published:?}")))?;

    let descriptions = cve.get("descriptions").and_then(Value::as_array);
    let description = descriptions
        .and_then(|ds| {
            ds.iter()
                .find(|d| d.get("lang").and_then(Value::as_str) == Some("en"))
                .or_else(|| ds.first())
        })
        .and_then(|d| d.get("value"))
        .and_then(Value::as_str)
        .unwrap_or_default()
        .to_string();

    let mut warnings = Vec::new();
    let mut references = Vec::new();
    let refs = match cve.get("references") {
        None | Some(Value::Null) => &[][..],
        Some(Value::Array(a)) => a.as_slice(),
        Some(_) => return Err(malformed(index, "`cve.references` is not an array")),
    };
    for (j, r) in refs.iter().enumerate() {
        let url = r
            .get("url")
            .and_then(Value::as_str)
            .ok_or_else(|| malformed(index, format!("missing field `cve.references[{j}].url`")))?;
        let absolute_http = url::Url::parse(url).is_ok_and(|u| matches!(u.scheme(), "http" | "https"));
        if !absolute_http {
            warnings.push(Warning { cve_id: id.into(), message: format!("dropped non-http reference {url:?}") });
            continue;
        }
        let tags = r
            .get("tags")
            .and_then(Value::as_array)
            .map(|ts| ts.iter().filter_map(Value::as_str).map(str::to_string).collect())
            .unwrap_or_default();
        references.push(Reference { url: url.to_string(), tags });
    }

    // Configurations are flattened: every cpeMatch criteria string, in
    // document order, without duplicates.
    let mut cpes = Vec::new();
    let mut seen = BTreeSet::new();
    let configs = cve.get("configurations").and_then(Value::as_array).map_or(&[][..], Vec::as_slice);
    for config in configs {
        let nodes = config.get("nodes").and_then(Value::as_array).map_or(&[][..], Vec::as_slice);
        for node in nodes {
            let matches = node.get("cpeMatch").and_then(Value::as_array).map_or(&[][..], Vec::as_slice);
            for m in matches {
                let Some(criteria) = m.get("criteria").and_then(Value::as_str) else { continue };
                match Cpe23::parse(criteria) {
                    Ok(c) => {
                        if seen.insert(c.to_string()) {
                            cpes.push(c);
                        }
                    }
                    Err(e) => warnings.push(Warning {
                        cve_id: id.into(),
                        message: format!("dropped CPE {criteria:?}: {e}"),
                    }),
                }
            }
        }
    }

    Ok(Entry::Record(NvdRecord { cve_id, description, published, references, cpes }, warnings))
}

/// Parse the `vulnerabilities` array of one API response (or a snapshot),
/// numbering entries from `offset`.
fn parse_vulnerabilities(doc: &Value, offset: usize, out: &mut Snapshot, seen: &mut BTreeSet<CveId>) -> Result<usize, NvdError> {
    if doc.get("CVE_Items").is_some() {
        return Err(NvdError::MalformedSnapshot {
            index: None,
            reason: "legacy 1.1 feed format is not supported".into(),
        });
    }
    let vulns = doc
        .get("vulnerabilities")
        .and_then(Value::as_array)
        .ok_or_else(|| NvdError::MalformedSnapshot { index: None, reason: "missing `vulnerabilities` array".into() })?;
    for (i, v) in vulns.iter().enumerate() {
        let index = offset + i;
        match parse_entry(index, v)? {
            Entry::Record(r, w) => {
                if !seen.insert(r.cve_id.clone()) {
                    return Err(malformed(index, format!("duplicate {}", r.cve_id)));
                }
                out.records.push(r);
                out.warnings.extend(w);
            }
            Entry::Rejected(r) => out.rejected.push(r),
        }
    }
    Ok(vulns.len())
}

pub fn parse_snapshot(bytes: &[u8]) -> Result<Snapshot, NvdError> {
    let doc: Value = serde_json::from_slice(bytes)
        .map_err(|e| NvdError::MalformedSnapshot { index: None, reason: e.to_string() })?;
    let mut out = Snapshot::default();
    let n = parse_vulnerabilities(&doc, 0, &mut out, &mut BTreeSet::new())?;
    if n == 0 {
        return Err(NvdError::EmptySnapshot);
    }
    Ok(out)
}

pub fn load_snapshot(path: &Path) -> Result<Snapshot, NvdError> {
    let bytes = std::fs::read(path).map_err(|source| NvdError::Io { path: path.display().to_string(), source })?;
    parse_snapshot(&bytes)
}

/// Read the canonical line-delimited record file.
pub fn read_records(path: &Path) -> Result<Vec<NvdRecord>, crate::fsutil::JsonlError> {
    crate::fsutil::read_jsonl(path)
}

pub fn write_records(path: &Path, records: &[NvdRecord]) -> std::io::Result<()> {
    crate::fsutil::write_jsonl(path, records)
}

/// Client for the paginated `cves/2.0` endpoint.
pub struct NvdClient {
    pub transport: Arc<dyn Transport>,
    pub api_base: String,
    pub api_key: Option<String>,
    pub page_size: u32,
    /// Pages requested concurrently once the total is known (1..=4).
    pub prefetch: usize,
    pub retry: RetryPolicy,
    pub sleeper: Arc<dyn Sleeper>,
    pub governor: Arc<HostGovernor>,
}

impl NvdClient {
    pub fn new(transport: Arc<dyn Transport>, api_key: Option<String>) -> Self {
        // Published limits: 5 requests per 30 s without a key, 50 with one.
        let delay = if api_key.is_some() { Duration::from_millis(600) } else { Duration::from_secs(6) };
        NvdClient {
            transport,
            api_base: DEFAULT_API_BASE.into(),
            api_key,
            page_size: 2000,
            prefetch: 4,
            retry: RetryPolicy::default(),
            sleeper: Arc::new(crate::http::RealSleep),
            governor: Arc::new(HostGovernor::new(delay)),
        }
    }

    pub fn page_url(&self, since: DateTime<Utc>, until: DateTime<Utc>, start: usize) -> String {
        let fmt = "%Y-%m-%dT%H:%M:%S%.3fZ";
        format!(
            "{}?pubStartDate={}&pubEndDate={}&resultsPerPage={}&startIndex={}",
            self.api_base,
            since.format(fmt),
            until.format(fmt),
            self.page_size,
            start
        )
    }

    fn fetch_page(&self, url: &str) -> Result<Value, NvdError> {
        let mut req = Request::get(url);
        if let Some(k) = &self.api_key {
            req = req.header("apiKey", k.clone());
        }
        if let Ok(u) = url::Url::parse(url) {
            self.governor.wait(u.host_str().unwrap_or_default());
        }
        let resp = send_with_retry(&*self.transport, &req, &self.retry, &*self.sleeper)?;
        if !resp.is_success() {
            return Err(NvdError::HttpFailure { status: resp.status, url: url.into() });
        }
        resp.json().map_err(|e| NvdError::MalformedSnapshot { index: None, reason: format!("{url}: {e}") })
    }

    /// Records published in `[since, until]`, in API order.
    pub fn fetch_records(&self, since: DateTime<Utc>, until: DateTime<Utc>) -> RecordStream<'_> {
        let mut windows = VecDeque::new();
        let mut start = since;
        while start < until {
            let end = (start + TimeDelta::days(MAX_WINDOW_DAYS)).min(until);
            windows.push_back((start, end));
            start = end;
        }
        RecordStream {
            client: self,
            windows,
            current: None,
            buffer: VecDeque::new(),
            seen: BTreeSet::new(),
            offset: 0,
            failed: false,
        }
    }
}

struct Window {
    since: DateTime<Utc>,
    until: DateTime<Utc>,
    next_start: usize,
    total: Option<usize>,
}

/// Ordered record stream over all pages of all windows.
pub struct RecordStream<'a> {
    client: &'a NvdClient,
    windows: VecDeque<(DateTime<Utc>, DateTime<Utc>)>,
    current: Option<Window>,
    buffer: VecDeque<NvdRecord>,
    seen: BTreeSet<CveId>,
    offset: usize,
    failed: bool,
}

impl RecordStream<'_> {
    fn absorb(&mut self, doc: &Value) -> Result<(usize, usize), NvdError> {
        let total = doc.get("totalResults").and_then(Value::as_u64).ok_or_else(|| {
            NvdError::MalformedSnapshot { index: None, reason: "missing `totalResults`".into() }
        })? as usize;
        let mut page = Snapshot::default();
        let n = parse_vulnerabilities(doc, self.offset, &mut page, &mut self.seen)?;
        self.offset += n;
        for w in &page.warnings {
            tracing::warn!(cve = %w.cve_id, "{}", w.message);
        }
        for r in &page.rejected {
            tracing::info!(cve = %r.cve_id, "skipped: {}", r.reason);
        }
        self.buffer.extend(page.records);
        Ok((n, total))
    }

    fn refill(&mut self) -> Result<bool, NvdError> {
        loop {
            let Some(w) = self.current.as_mut() else {
                let Some((since, until)) = self.windows.pop_front() else { return Ok(false) };
                self.current = Some(Window { since, until, next_start: 0, total: None });
                continue;
            };
            let client = self.client;
            let (since, until) = (w.since, w.until);
            match w.total {
                Some(total) if w.next_start >= total => {
                    self.current = None;
                }
                None => {
                    let doc = client.fetch_page(&client.page_url(since, until, w.next_start))?;
                    let (n, total) = self.absorb(&doc)?;
                    let w = self.current.as_mut().expect("window");
                    w.total = Some(total);
                    w.next_start = if n == 0 { total } else { w.next_start + n };
                    if !self.buffer.is_empty() {
                        return Ok(true);
                    }
                }
                Some(total) => {
                    let step = client.page_size as usize;
                    let starts: Vec<usize> = (0..client.prefetch.clamp(1, 4))
                        .map(|i| w.next_start + i * step)
                        .filter(|s| *s < total)
                        .collect();
                    let urls: Vec<String> = starts.iter().map(|s| client.page_url(since, until, *s)).collect();
                    let docs: Vec<Result<Value, NvdError>> = std::thread::scope(|s| {
                        let hs: Vec<_> = urls.iter().map(|u| s.spawn(move || client.fetch_page(u))).collect();
                        hs.into_iter().map(|h| h.join().expect("page fetch thread")).collect()
                    });
                    for doc in docs {
                        let (n, _) = self.absorb(&doc?)?;
                        let w = self.current.as_mut().expect("window");
                        w.next_start = if n == 0 { total } else { w.next_start + n };
                    }
                    if !self.buffer.is_empty() {
                        return Ok(true);
                    }
                }
            }
        }
    }
}

impl Iterator for RecordStream<'_> {
    type Item = Result<NvdRecord, NvdError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        if self.buffer.is_empty() {
            match self.refill() {
                Ok(true) => {}
                Ok(false) => return None,
                Err(e) => {
                    self.failed = true;
                    return Some(Err(e));
                }
            }
        }
        self.buffer.pop_front().map(Ok)
    }
}
