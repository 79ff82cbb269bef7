//! Live or replayed page fetching for reference-tree construction.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use texting_robots::Robot;
use vfcmap_core::link::HostAllowlist;
use vfcmap_core::tree::{build_tree, CrawlPolicy, FetchStatus, PageFetcher, PageOutcome, RefTree};
use vfcmap_core::NvdRecord;

use crate::governor::HostGovernor;
use crate::html;
use crate::http::{Request, Transport};

pub const USER_AGENT: &str = concat!("vfcmap/", env!("CARGO_PKG_VERSION"));

/// One request as seen by the crawler, for audit logs and tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchLogEntry {
    pub url: String,
    pub status: FetchStatus,
}

/// Fetches pages through a [`Transport`] with per-host spacing, robots.txt
/// checks and bounded parallelism.
pub struct Crawler {
    transport: Arc<dyn Transport>,
    governor: Arc<HostGovernor>,
    concurrency: usize,
    allow: HostAllowlist,
    respect_robots: bool,
    agent: String,
    robots: Mutex<HashMap<String, Option<Arc<Robot>>>>,
    log: Mutex<Vec<FetchLogEntry>>,
}

impl Crawler {
    pub fn new(transport: Arc<dyn Transport>, policy: &CrawlPolicy, allow: HostAllowlist) -> Self {
        Crawler {
            transport,
            governor: Arc::new(HostGovernor::new(Duration::from_millis(policy.per_host_delay_ms))),
            concurrency: policy.global_concurrency.max(1) as usize,
            allow,
            respect_robots: true,
            agent: USER_AGENT.into(),
            robots: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn respect_robots(mut self, on: bool) -> Self {
        self.respect_robots = on;
        self
    }

    pub fn with_governor(mut self, g: Arc<HostGovernor>) -> Self {
        self.governor = g;
        self
    }

    /// Every page request made so far, in completion order.
    pub fn take_log(&self) -> Vec<FetchLogEntry> {
        std::mem::take(&mut self.log.lock().expect("log lock"))
    }

    fn robot_for(&self, origin: &url::Url) -> Option<Arc<Robot>> {
        let key = origin.origin().ascii_serialization();
        if let Some(r) = self.robots.lock().expect("robots lock").get(&key) {
            return r.clone();
        }
        let robots_url = format!("{key}/robots.txt");
        self.governor.wait(origin.host_str().unwrap_or_default());
        let parsed = match self.transport.send(&Request::get(&robots_url)) {
            Ok(r) if r.is_success() => Robot::new(&self.agent, &r.body).ok().map(Arc::new),
            // Missing or unreadable robots.txt imposes no restriction.
            _ => None,
        };
        self.robots.lock().expect("robots lock").insert(key, parsed.clone());
        parsed
    }

    fn fetch_one(&self, raw: &str) -> PageOutcome {
        let Ok(u) = url::Url::parse(raw) else { return PageOutcome::failed() };
        let host = u.host_str().unwrap_or_default().to_string();
        if self.respect_robots && !self.allow.contains(&host) {
            if let Some(robot) = self.robot_for(&u) {
                if !robot.allowed(raw) {
                    return PageOutcome::skipped();
                }
            }
        }
        self.governor.wait(&host);
        let outcome = match self.transport.send(&Request::get(raw)) {
            Ok(r) if r.is_success() => {
                let status = if r.from_cache { FetchStatus::Cached } else { FetchStatus::Fetched };
                let links = if html::is_html_like(r.header("content-type"), &r.body) {
                    html::extract_links(&r.text(), &r.url)
                } else {
                    Vec::new()
                };
                PageOutcome { status, links }
            }
            Ok(_) => PageOutcome::failed(),
            Err(e) => {
                tracing::debug!(url = raw, "fetch failed: {e}");
                PageOutcome::failed()
            }
        };
        self.log.lock().expect("log lock").push(FetchLogEntry { url: raw.into(), status: outcome.status });
        outcome
    }

    pub fn build_tree(&self, record: &NvdRecord, policy: &CrawlPolicy) -> RefTree {
        let mut f = self;
        build_tree(record, policy, &self.allow, &mut f)
    }
}

impl PageFetcher for &Crawler {
    fn fetch_batch(&mut self, urls: &[String]) -> Vec<PageOutcome> {
        let slots: Vec<Mutex<Option<PageOutcome>>> = urls.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let crawler: &Crawler = self;
        std::thread::scope(|s| {
            for _ in 0..crawler.concurrency.min(urls.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= urls.len() {
                        break;
                    }
                    let out = crawler.fetch_one(&urls[i]);
                    *slots[i].lock().expect("slot") = Some(out);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot").unwrap_or_else(PageOutcome::failed))
            .collect()
    }
}
