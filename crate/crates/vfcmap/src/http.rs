//! HTTP plumbing shared by every networked stage.
//!
//! All requests go through a [`Transport`]. Three implementations exist:
//! [`LiveTransport`] dials the network, [`Cassette`] replays recorded
//! responses from disk and never dials, and [`Cached`] wraps a live transport
//! with a read-through cache in the same on-disk format. A cache entry lives
//! at `<dir>/<sha256(key)>.resp` where the key is the URL for GETs and
//! `POST <url>\n<body>` for POSTs.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Duration;

use sha2::{Digest, Sha256};
use thiserror::Error;

const MAGIC: &str = "VFCMAP-RESP 1";

static NETWORK_FORBIDDEN: AtomicBool = AtomicBool::new(false);

/// Refuse every live dial for the rest of the process.
pub fn forbid_network() {
    NETWORK_FORBIDDEN.store(true, Ordering::SeqCst);
}

pub fn network_forbidden() -> bool {
    NETWORK_FORBIDDEN.load(Ordering::SeqCst)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Request {
    pub method: Method,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Option<Vec<u8>>,
}

impl Request {
    pub fn get(url: impl Into<String>) -> Self {
        Request { method: Method::Get, url: url.into(), headers: Vec::new(), body: None }
    }

    pub fn post_json(url: impl Into<String>, body: &serde_json::Value) -> Self {
        Request {
            method: Method::Post,
            url: url.into(),
            headers: vec![("content-type".into(), "application/json".into())],
            body: Some(body.to_string().into_bytes()),
        }
    }

    pub fn header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.push((name.to_ascii_lowercase(), value.into()));
        self
    }

    /// Cache identity. Headers (tokens in particular) are not part of it.
    pub fn cache_key(&self) -> String {
        match (&self.method, &self.body) {
            (Method::Get, _) => self.url.clone(),
            (Method::Post, body) => {
                let body = body.as_deref().map(String::from_utf8_lossy).unwrap_or_default();
                format!("POST {}\n{}", self.url, body)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub status: u16,
    /// Final URL after redirects.
    pub url: String,
    /// Header names are lowercase.
    pub headers: Vec<(String, String)>,
    pub body: Vec<u8>,
    pub from_cache: bool,
}

impl Response {
    pub fn header(&self, name: &str) -> Option<&str> {
        let name = name.to_ascii_lowercase();
        self.headers.iter().find(|(k, _)| *k == name).map(|(_, v)| v.as_str())
    }

    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn text(&self) -> String {
        String::from_utf8_lossy(&self.body).into_owned()
    }

    pub fn json(&self) -> Result<serde_json::Value, serde_json::Error> {
        serde_json::from_slice(&self.body)
    }
}

#[derive(Debug, Error)]
pub enum HttpError {
    #[error("request to {url} failed: {reason}")]
    Transport { url: String, reason: String },
    #[error("network access is forbidden in cassette mode ({url})")]
    NetworkForbidden { url: String },
    #[error("no cassette entry for {url}")]
    CassetteMiss { url: String },
    #[error("corrupt cache entry {path}: {reason}")]
    CorruptEntry { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub trait Transport: Send + Sync {
    fn send(&self, req: &Request) -> Result<Response, HttpError>;
}

impl<T: Transport + ?Sized> Transport for std::sync::Arc<T> {
    fn send(&self, req: &Request) -> Result<Response, HttpError> {
        (**self).send(req)
    }
}

pub fn entry_path(dir: &Path, req: &Request) -> PathBuf {
    let digest = Sha256::digest(req.cache_key().as_bytes());
    dir.join(format!("{}.resp", hex::encode(digest)))
}

pub fn encode_entry(resp: &Response) -> Vec<u8> {
    let mut out = format!("{MAGIC}\nstatus: {}\nurl: {}\n", resp.status, resp.url);
    for (k, v) in &resp.headers {
        out.push_str(&format!("header: {k}: {v}\n"));
    }
    out.push('\n');
    let mut bytes = out.into_bytes();
    bytes.extend_from_slice(&resp.body);
    bytes
}

pub fn decode_entry(path: &Path, raw: &[u8]) -> Result<Response, HttpError> {
    let corrupt = |reason: &str| HttpError::CorruptEntry { path: path.to_owned(), reason: reason.into() };
    let split = raw
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| corrupt("missing header terminator"))?;
    let head = std::str::from_utf8(&raw[..split]).map_err(|_| corrupt("header is not UTF-8"))?;
    let body = raw[split + 2..].to_vec();
    let mut lines = head.lines();
    if lines.next() != Some(MAGIC) {
        return Err(corrupt("bad magic line"));
    }
    let mut status = None;
    let mut url = None;
    let mut headers = Vec::new();
    for line in lines {
        if let Some(v) = line.strip_prefix("status: ") {
            status = Some(v.trim().parse::<u16>().map_err(|_| corrupt("bad status"))?);
        } else if let Some(v) = line.strip_prefix("url: ") {
            url = Some(v.to_string());
        } else if let Some(v) = line.strip_prefix("header: ") {
            let (k, val) = v.split_once(": ").ok_or_else(|| corrupt("bad header line"))?;
            headers.push((k.to_ascii_lowercase(), val.to_string()));
        } else {
            return Err(corrupt("unknown header block line"));
        }
    }
    Ok(Response {
        status: status.ok_or_else(|| corrupt("missing status"))?,
        url: url.ok_or_else(|| corrupt("missing url"))?,
        headers,
        body,
        from_cache: true,
    })
}

pub fn read_entry(path: &Path) -> Result<Option<Response>, HttpError> {
    match fs::read(path) {
        Ok(raw) => decode_entry(path, &raw).map(Some),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Store a response for `req` under `dir`, atomically.
pub fn write_entry(dir: &Path, req: &Request, resp: &Response) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = entry_path(dir, req);
    crate::fsutil::write_atomic(&path, &encode_entry(resp))?;
    Ok(path)
}

/// Direct network access.
pub struct LiveTransport {
    client: reqwest::blocking::Client,
}

impl LiveTransport {
    pub fn new(timeout: Duration, user_agent: &str) -> Result<Self, HttpError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .user_agent(user_agent)
            .build()
            .map_err(|e| HttpError::Transport { url: String::new(), reason: e.to_string() })?;
        Ok(LiveTransport { client })
    }
}

impl Transport for LiveTransport {
    fn send(&self, req: &Request) -> Result<Response, HttpError> {
        if network_forbidden() {
            return Err(HttpError::NetworkForbidden { url: req.url.clone() });
        }
        let fail = |e: reqwest::Error| HttpError::Transport { url: req.url.clone(), reason: e.to_string() };
        let mut b = match req.method {
            Method::Get => self.client.get(&req.url),
            Method::Post => self.client.post(&req.url),
        };
        for (k, v) in &req.headers {
            b = b.header(k, v);
        }
        if let Some(body) = &req.body {
            b = b.body(body.clone());
        }
        let resp = b.send().map_err(fail)?;
        let status = resp.status().as_u16();
        let url = resp.url().to_string();
        let headers = resp
            .headers()
            .iter()
            .filter_map(|(k, v)| Some((k.as_str().to_ascii_lowercase(), v.to_str().ok()?.to_string())))
            .collect();
        let body = resp.bytes().map_err(fail)?.to_vec();
        Ok(Response { status, url, headers, body, from_cache: false })
    }
}

/// What a cassette does with a request it has no recording for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MissPolicy {
    Error,
    /// Answer with a synthesized 404 carrying `x-cassette-miss: 1`.
    NotFound,
}

/// Replays recorded responses; never touches the network.
pub struct Cassette {
    dir: PathBuf,
    miss: MissPolicy,
}

impl Cassette {
    pub fn new(dir: impl Into<PathBuf>, miss: MissPolicy) -> Self {
        Cassette { dir: dir.into(), miss }
    }
}

impl Transport for Cassette {
    fn send(&self, req: &Request) -> Result<Response, HttpError> {
        match read_entry(&entry_path(&self.dir, req))? {
            Some(r) => Ok(r),
            None if self.miss == MissPolicy::NotFound => Ok(Response {
                status: 404,
                url: req.url.clone(),
                headers: vec![("x-cassette-miss".into(), "1".into())],
                body: Vec::new(),
                from_cache: true,
            }),
            None => Err(HttpError::CassetteMiss { url: req.url.clone() }),
        }
    }
}

/// Read-through cache over another transport. Transient failures (429 and
/// 5xx) are not stored.
pub struct Cached<T> {
    inner: T,
    dir: PathBuf,
}

impl<T: Transport> Cached<T> {
    pub fn new(inner: T, dir: impl Into<PathBuf>) -> Self {
        Cached { inner, dir: dir.into() }
    }
}

impl<T: Transport> Transport for Cached<T> {
    fn send(&self, req: &Request) -> Result<Response, HttpError> {
        if let Some(hit) = read_entry(&entry_path(&self.dir, req))? {
            return Ok(hit);
        }
        let resp = self.inner.send(req)?;
        if resp.status != 429 && resp.status < 500 {
            write_entry(&self.dir, req, &resp)?;
        }
        Ok(resp)
    }
}

pub trait Sleeper: Send + Sync {
    fn sleep(&self, d: Duration);
}

pub struct RealSleep;

impl Sleeper for RealSleep {
    fn sleep(&self, d: Duration) {
        std::thread::sleep(d);
    }
}

/// Records requested delays instead of sleeping.
#[derive(Default)]
pub struct NoSleep(pub std::sync::Mutex<Vec<Duration>>);

impl Sleeper for NoSleep {
    fn sleep(&self, d: Duration) {
        self.0.lock().expect("sleep log").push(d);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(60),
        }
    }
}

#[derive(Debug, Error)]
pub enum RetryError {
    #[error("rate limited at {url} after {attempts} attempts")]
    RateLimited { url: String, attempts: u32 },
    #[error("HTTP {status} from {url} after {attempts} attempts")]
    HttpFailure { status: u16, url: String, attempts: u32 },
    #[error(transparent)]
    Http(#[from] HttpError),
}

fn is_rate_limited(r: &Response) -> bool {
    r.status == 429 || (r.status == 403 && r.header("x-ratelimit-remaining") == Some("0"))
}

fn is_transient(r: &Response) -> bool {
    is_rate_limited(r) || matches!(r.status, 500 | 502 | 503 | 504)
}

impl RetryPolicy {
    fn backoff(&self, attempt: u32, resp: Option<&Response>) -> Duration {
        let hinted = resp
            .and_then(|r| r.header("retry-after"))
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let exp = self.base_delay.saturating_mul(1u32 << attempt.min(16));
        hinted.unwrap_or(exp).min(self.max_delay)
    }
}

/// Send with bounded retries on 429/5xx and transport errors, honoring
/// `Retry-After`. Non-transient statuses (404 included) are returned as-is.
pub fn send_with_retry(
    t: &dyn Transport,
    req: &Request,
    policy: &RetryPolicy,
    sleeper: &dyn Sleeper,
) -> Result<Response, RetryError> {
    let attempts = policy.max_attempts.max(1);
    let mut last: Option<Result<Response, HttpError>> = None;
    for attempt in 0..attempts {
        if attempt > 0 {
            let prev = last.as_ref().and_then(|r| r.as_ref().ok());
            sleeper.sleep(policy.backoff(attempt - 1, prev));
        }
        match t.send(req) {
            Ok(r) if !is_transient(&r) => return Ok(r),
            Err(e @ (HttpError::NetworkForbidden { .. } | HttpError::CassetteMiss { .. } | HttpError::CorruptEntry { .. })) => {
                return Err(e.into())
            }
            other => last = Some(other),
        }
    }
    match last.expect("at least one attempt") {
        Ok(r) if is_rate_limited(&r) => Err(RetryError::RateLimited { url: req.url.clone(), attempts }),
        Ok(r) => Err(RetryError::HttpFailure { status: r.status, url: req.url.clone(), attempts }),
        Err(e) => Err(e.into()),
    }
}
