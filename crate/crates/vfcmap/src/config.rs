//! Pipeline configuration: one TOML file. Relative paths resolve against
//! the file's directory. Only forge and NVD tokens come from the
//! environment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::Deserialize;
use thiserror::Error;
use vfcmap_core::candidate::AdvisoryDb;
use vfcmap_core::link::HostAllowlist;
use vfcmap_core::metrics;
use vfcmap_core::ranking::ScoreThreshold;
use vfcmap_core::tree::CrawlPolicy;
use vfcmap_core::{AliasTable, Category};

use crate::external::ScrapeConfig;
use crate::s3::ReportFormat;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {field}: {reason}")]
    ConfigInvalid { field: String, reason: String },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::ConfigInvalid { field: field.into(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Live,
    Cassette,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(Mode::Live),
            "cassette" => Ok(Mode::Cassette),
            other => Err(format!("unknown mode {other:?} (expected live or cassette)")),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RawPaths {
    snapshot: Option<PathBuf>,
    work_dir: Option<PathBuf>,
    cassette_dir: Option<PathBuf>,
    cache_dir: Option<PathBuf>,
    verdicts: Option<PathBuf>,
    aliases: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RawNvd {
    api_base: Option<String>,
    since: Option<DateTime<Utc>>,
    until: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawCrawl {
    max_depth: u32,
    per_host_delay_ms: u64,
    global_concurrency: u32,
    timeout_secs: u64,
    max_pages_per_record: u32,
    respect_robots: bool,
    categories: Vec<String>,
}

impl Default for RawCrawl {
    fn default() -> Self {
        let p = CrawlPolicy::default();
        RawCrawl {
            max_depth: p.max_depth,
            per_host_delay_ms: p.per_host_delay_ms,
            global_concurrency: p.global_concurrency,
            timeout_secs: p.timeout_secs,
            max_pages_per_record: p.max_pages_per_record,
            respect_robots: true,
            categories: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RawHosts {
    extra: Vec<String>,
    /// `host = "github" | "gitlab" | "bitbucket"` for self-hosted forges.
    forges: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawExternal {
    sources: Vec<String>,
    allow_restricted_scrapers: bool,
    concurrency: usize,
    osv_api: Option<String>,
    ghsa_api: Option<String>,
    scrapers: BTreeMap<String, ScrapeConfig>,
}

impl Default for RawExternal {
    fn default() -> Self {
        RawExternal {
            sources: AdvisoryDb::ALL.iter().map(|d| d.slug().to_string()).collect(),
            allow_restricted_scrapers: false,
            concurrency: 4,
            osv_api: None,
            ghsa_api: None,
            scrapers: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReport {
    path: PathBuf,
    format: String,
    tool: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawS3 {
    min_score: f64,
    inclusive: bool,
    reports: Vec<RawReport>,
}

impl Default for RawS3 {
    fn default() -> Self {
        let t = ScoreThreshold::default();
        RawS3 { min_score: t.min_score, inclusive: t.inclusive, reports: Vec::new() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawSampling {
    seed: u64,
    confidence: f64,
    margin: f64,
}

impl Default for RawSampling {
    fn default() -> Self {
        RawSampling { seed: 0, confidence: 0.95, margin: 0.05 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawMatcher {
    threshold: f64,
}

impl Default for RawMatcher {
    fn default() -> Self {
        RawMatcher { threshold: vfcmap_core::matcher::DEFAULT_THRESHOLD }
    }
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RawMetrics {
    total_records: Option<u64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    mode: Mode,
    fixed_time: Option<DateTime<Utc>>,
    paths: RawPaths,
    nvd: RawNvd,
    crawl: RawCrawl,
    hosts: RawHosts,
    external: RawExternal,
    s3: RawS3,
    sampling: RawSampling,
    matcher: RawMatcher,
    metrics: RawMetrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToolReport {
    pub path: PathBuf,
    pub format: ReportFormat,
    pub tool: String,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub fixed_time: Option<DateTime<Utc>>,
    pub snapshot: Option<PathBuf>,
    pub work_dir: PathBuf,
    pub cassette_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub verdicts: Option<PathBuf>,
    pub nvd_api_base: Option<String>,
    pub nvd_window: Option<(DateTime<Utc>, DateTime<Utc>)>,
    pub crawl: CrawlPolicy,
    pub respect_robots: bool,
    /// Categories crawled; empty means all.
    pub crawl_categories: Vec<Category>,
    pub allow: HostAllowlist,
    pub forge_hosts: BTreeMap<String, crate::forge::ForgeKind>,
    pub sources: Vec<AdvisoryDb>,
    pub allow_restricted_scrapers: bool,
    pub external_concurrency: usize,
    pub osv_api: Option<String>,
    pub ghsa_api: Option<String>,
    pub scrapers: BTreeMap<AdvisoryDb, ScrapeConfig>,
    pub s3_threshold: ScoreThreshold,
    pub tool_reports: Vec<ToolReport>,
    pub seed: u64,
    pub confidence: f64,
    pub margin: f64,
    pub threshold: f64,
    pub aliases: AliasTable,
    pub total_records: Option<u64>,
    pub tokens: Tokens,
}

/// Credentials read from the environment.
#[derive(Debug, Clone, Default)]
pub struct Tokens {
    pub nvd_api_key: Option<String>,
    pub forge: crate::forge::ForgeTokens,
}

impl Tokens {
    pub fn from_env() -> Self {
        Tokens {
            nvd_api_key: std::env::var("NVD_API_KEY").ok().filter(|k| !k.is_empty()),
            forge: crate::forge::ForgeTokens::from_env(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid("config", format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| format!("at byte {}", s.start)).unwrap_or_else(|| "config".into());
            invalid(field, e.message().to_string())
        })?;
        Self::from_raw(raw, base)
    }

    fn from_raw(raw: RawConfig, base: &Path) -> Result<Self, ConfigError> {
        let abs = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let crawl = CrawlPolicy {
            max_depth: raw.crawl.max_depth,
            per_host_delay_ms: raw.crawl.per_host_delay_ms,
            global_concurrency: raw.crawl.global_concurrency,
            timeout_secs: raw.crawl.timeout_secs,
            max_pages_per_record: raw.crawl.max_pages_per_record,
            cache_dir: raw.paths.cache_dir.clone().map(|p| abs(p).display().to_string()),
        };
        crawl.validate().map_err(|e| invalid(format!("crawl.{}", e.field), e.reason))?;
        let crawl_categories = raw
            .crawl
            .categories
            .iter()
            .map(|c| Category::from_str(c).map_err(|_| invalid("crawl.categories", format!("unknown category {c:?}"))))
            .collect::<Result<_, _>>()?;

        let mut allow = HostAllowlist::default();
        for h in &raw.hosts.extra {
            allow = allow.with_host(h);
        }
        let mut forge_hosts = BTreeMap::new();
        for (host, kind) in &raw.hosts.forges {
            let k = match kind.as_str() {
                "github" => crate::forge::ForgeKind::GitHub,
                "gitlab" => crate::forge::ForgeKind::GitLab,
                "bitbucket" => crate::forge::ForgeKind::Bitbucket,
                other => return Err(invalid(format!("hosts.forges.{host}"), format!("unknown forge kind {other:?}"))),
            };
            allow = allow.with_host(host);
            forge_hosts.insert(host.to_ascii_lowercase(), k);
        }

        let sources = raw
            .external
            .sources
            .iter()
            .map(|s| AdvisoryDb::from_str(s).map_err(|e| invalid("external.sources", e)))
            .collect::<Result<Vec<_>, _>>()?;
        let mut scrapers = BTreeMap::new();
        for (name, s) in raw.external.scrapers {
            let db = AdvisoryDb::from_str(&name).map_err(|e| invalid(format!("external.scrapers.{name}"), e))?;
            if !s.url_template.contains("{cve}") && !s.cve_scoped {
                return Err(invalid(
                    format!("external.scrapers.{name}.url_template"),
                    "must contain {cve} unless cve_scoped is set",
                ));
            }
            for (field, sel) in [("region_selector", Some(&s.region_selector)), ("follow_selector", s.follow_selector.as_ref())] {
                if let Some(sel) = sel {
                    scraper::Selector::parse(sel)
                        .map_err(|e| invalid(format!("external.scrapers.{name}.{field}"), e.to_string()))?;
                }
            }
            scrapers.insert(db, s);
        }
        if raw.external.concurrency == 0 {
            return Err(invalid("external.concurrency", "must be positive"));
        }

        if !raw.s3.min_score.is_finite() {
            return Err(invalid("s3.min_score", "must be a finite number"));
        }
        let tool_reports = raw
            .s3
            .reports
            .into_iter()
            .enumerate()
            .map(|(i, r)| {
                let format = ReportFormat::from_str(&r.format).map_err(|e| invalid(format!("s3.reports[{i}].format"), e))?;
                Ok(ToolReport { path: abs(r.path), format, tool: r.tool })
            })
            .collect::<Result<_, ConfigError>>()?;

        if metrics::z_score(raw.sampling.confidence).is_none() {
            return Err(invalid("sampling.confidence", "must be one of 0.90, 0.95, 0.99"));
        }
        if !(raw.sampling.margin > 0.0 && raw.sampling.margin < 1.0) {
            return Err(invalid("sampling.margin", "must be in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&raw.matcher.threshold) {
            return Err(invalid("matcher.threshold", "must be in [0, 1]"));
        }
        let aliases = match &raw.paths.aliases {
            Some(p) => {
                let p = abs(p.clone());
                let text = std::fs::read_to_string(&p).map_err(|e| invalid("paths.aliases", format!("{}: {e}", p.display())))?;
                AliasTable::parse(&text).map_err(|e| invalid("paths.aliases", e.to_string()))?
            }
            None => AliasTable::default(),
        };
        let nvd_window = match (raw.nvd.since, raw.nvd.until) {
            (Some(s), Some(u)) if s <= u => Some((s, u)),
            (Some(_), Some(_)) => return Err(invalid("nvd.since", "must not be after nvd.until")),
            (None, None) => None,
            _ => return Err(invalid("nvd", "since and until must be given together")),
        };
        let cassette_dir = raw.paths.cassette_dir.map(&abs);
        if raw.mode == Mode::Cassette && cassette_dir.is_none() {
            return Err(invalid("paths.cassette_dir", "required in cassette mode"));
        }

        Ok(PipelineConfig {
            mode: raw.mode,
            fixed_time: raw.fixed_time,
            snapshot: raw.paths.snapshot.map(&abs),
            work_dir: abs(raw.paths.work_dir.unwrap_or_else(|| PathBuf::from("out"))),
            cassette_dir,
            cache_dir: raw.paths.cache_dir.map(&abs),
            verdicts: raw.paths.verdicts.map(&abs),
            nvd_api_base: raw.nvd.api_base,
            nvd_window,
            crawl,
            respect_robots: raw.crawl.respect_robots,
            crawl_categories,
            allow,
            forge_hosts,
            sources,
            allow_restricted_scrapers: raw.external.allow_restricted_scrapers,
            external_concurrency: raw.external.concurrency,
            osv_api: raw.external.osv_api,
            ghsa_api: raw.external.ghsa_api,
            scrapers,
            s3_threshold: ScoreThreshold { min_score: raw.s3.min_score, inclusive: raw.s3.inclusive },
            tool_reports,
            seed: raw.sampling.seed,
            confidence: raw.sampling.confidence,
            margin: raw.sampling.margin,
            threshold: raw.matcher.threshold,
            aliases,
            total_records: raw.metrics.total_records,
            tokens: Tokens::default(),
        })
    }

    pub fn with_env_tokens(mut self) -> Self {
        self.tokens = Tokens::from_env();
        self
    }

    /// Timestamp stamped on new candidates and reports.
    pub fn now(&self) -> DateTime<Utc> {
        match (self.fixed_time, self.mode) {
            (Some(t), _) => t,
            (None, Mode::Cassette) => DateTime::UNIX_EPOCH,
            (None, Mode::Live) => Utc::now(),
        }
    }
}
