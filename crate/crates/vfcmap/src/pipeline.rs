//! Pipeline stages. Each stage reads its inputs from files and writes its
//! artifacts atomically, so stages can run one by one from the command line
//! or chained by [`run_all`] with a resumable checkpoint.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use vfcmap_core::candidate::{CandidateFlag, PendingExpansion};
use vfcmap_core::link::HostAllowlist;
use vfcmap_core::matcher::MatchVerdict;
use vfcmap_core::metrics::Percent;
use vfcmap_core::tree::{harvest_s1, RefTree};
use vfcmap_core::{categorize, filter_candidates, CandidateStore, Category, CommitSha, CveId, NvdRecord, VfcCandidate};

use crate::config::{Mode, PipelineConfig, ToolReport};
use crate::crawler::{Crawler, USER_AGENT};
use crate::external::{harvest_s2, ExternalClient, S2Options};
use crate::forge::{CommitRef, ForgeClient, Resolution};
use crate::fsutil;
use crate::governor::HostGovernor;
use crate::http::{self, Cached, Cassette, LiveTransport, MissPolicy, NoSleep, RealSleep, Sleeper, Transport};
use crate::nvd::{self, NvdClient};
use crate::report::{self, ReportInputs};
use crate::review::{self, SessionRequest};
use crate::s3;
use crate::store_io::{self, ExportFormat};

#[derive(Debug, Error)]
#[error("stage {stage} failed: {cause}")]
pub struct StageFailed {
    pub stage: &'static str,
    pub cause: String,
}

fn fail(stage: &'static str) -> impl Fn(&dyn std::fmt::Display) -> StageFailed {
    move |e| StageFailed { stage, cause: e.to_string() }
}

/// What a stage did. `partial` counts per-item failures that were logged
/// and skipped.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    pub outputs: Vec<PathBuf>,
    pub partial: u64,
    pub notes: Vec<String>,
}

/// Default artifact locations under the work directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Artifacts { dir: dir.into() }
    }
    fn p(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
    pub fn records(&self) -> PathBuf {
        self.p("records.jsonl")
    }
    pub fn ingest_report(&self) -> PathBuf {
        self.p("ingest.json")
    }
    pub fn categories(&self) -> PathBuf {
        self.p("categories.jsonl")
    }
    pub fn category_summary(&self) -> PathBuf {
        self.p("categories.csv")
    }
    pub fn candidates(&self, tag: &str) -> PathBuf {
        self.p(&format!("candidates.{tag}.jsonl"))
    }
    pub fn expansions(&self, tag: &str) -> PathBuf {
        self.p(&format!("expansions.{tag}.jsonl"))
    }
    pub fn rejected(&self, tag: &str) -> PathBuf {
        self.p(&format!("rejected.{tag}.jsonl"))
    }
    pub fn failures(&self, tag: &str) -> PathBuf {
        self.p(&format!("failures.{tag}.jsonl"))
    }
    pub fn trees(&self) -> PathBuf {
        self.p("trees.jsonl")
    }
    pub fn resolutions(&self) -> PathBuf {
        self.p("resolutions.jsonl")
    }
    pub fn store_log(&self) -> PathBuf {
        self.p("store.log.jsonl")
    }
    pub fn store(&self) -> PathBuf {
        self.p("store.jsonl")
    }
    pub fn sample(&self) -> PathBuf {
        self.p("sample.json")
    }
    pub fn report(&self) -> PathBuf {
        self.p("report.json")
    }
    pub fn export(&self, format: ExportFormat) -> PathBuf {
        match format {
            ExportFormat::Csv => self.p("export.csv"),
            ExportFormat::Jsonl => self.p("export.jsonl"),
        }
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.p("checkpoint.json")
    }
}

/// Network plumbing shared by the stages.
pub struct Env {
    pub cfg: PipelineConfig,
    pub transport: Arc<dyn Transport>,
    pub sleeper: Arc<dyn Sleeper>,
}

impl Env {
    /// In cassette mode every request is answered from the cassette
    /// directory and live dials are refused for the rest of the process.
    pub fn new(cfg: PipelineConfig) -> Result<Self, StageFailed> {
        let (transport, sleeper): (Arc<dyn Transport>, Arc<dyn Sleeper>) = match cfg.mode {
            Mode::Cassette => {
                http::forbid_network();
                let dir = cfg.cassette_dir.clone().expect("validated: cassette mode has a cassette dir");
                (Arc::new(Cassette::new(dir, MissPolicy::NotFound)), Arc::new(NoSleep(Mutex::new(Vec::new()))))
            }
            Mode::Live => {
                let live = LiveTransport::new(Duration::from_secs(cfg.crawl.timeout_secs), USER_AGENT)
                    .map_err(|e| fail("setup")(&e))?;
                let t: Arc<dyn Transport> = match &cfg.cache_dir {
                    Some(dir) => Arc::new(Cached::new(live, dir.clone())),
                    None => Arc::new(live),
                };
                (t, Arc::new(RealSleep))
            }
        };
        Ok(Env { cfg, transport, sleeper })
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.cfg.now()
    }

    fn governor(&self, delay: Duration) -> Arc<HostGovernor> {
        match self.cfg.mode {
            Mode::Cassette => Arc::new(HostGovernor::new(Duration::ZERO)),
            Mode::Live => Arc::new(HostGovernor::new(delay)),
        }
    }

    fn forge(&self) -> ForgeClient {
        let mut f = ForgeClient::new(self.transport.clone(), self.cfg.tokens.forge.clone()).with_sleeper(self.sleeper.clone());
        for (host, kind) in &self.cfg.forge_hosts {
            f = f.with_host(host, *kind);
        }
        f
    }
}

fn read_records(stage: &'static str, path: &Path) -> Result<Vec<NvdRecord>, StageFailed> {
    nvd::read_records(path).map_err(|e| fail(stage)(&e))
}

fn read_optional<T: for<'de> Deserialize<'de>>(stage: &'static str, path: &Path) -> Result<Vec<T>, StageFailed> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    fsutil::read_jsonl(path).map_err(|e| fail(stage)(&e))
}

fn write_lines<T: Serialize>(stage: &'static str, path: &Path, items: impl IntoIterator<Item = T>) -> Result<(), StageFailed> {
    fsutil::write_jsonl(path, items).map_err(|e| fail(stage)(&format!("{}: {e}", path.display())))
}

fn categories_of(records: &[NvdRecord], allow: &HostAllowlist) -> BTreeMap<CveId, Category> {
    records.iter().map(|r| (r.cve_id.clone(), categorize(r, allow))).collect()
}

#[derive(Serialize)]
struct IngestReport<'a> {
    records: usize,
    rejected: &'a [nvd::Rejected],
    warnings: &'a [nvd::Warning],
}

/// Load the NVD snapshot (or page through the API) into the record file.
pub fn ingest(env: &Env, snapshot: Option<&Path>, out: &Path, report_out: &Path) -> Result<StageSummary, StageFailed> {
    const STAGE: &str = "ingest";
    let snap = match (snapshot, env.cfg.nvd_window) {
        (Some(p), _) => nvd::load_snapshot(p).map_err(|e| fail(STAGE)(&e))?,
        (None, Some((since, until))) => {
            let mut client = NvdClient::new(env.transport.clone(), env.cfg.tokens.nvd_api_key.clone());
            if let Some(base) = &env.cfg.nvd_api_base {
                client.api_base = base.clone();
            }
            client.sleeper = env.sleeper.clone();
            if env.cfg.mode == Mode::Cassette {
                client.governor = env.governor(Duration::ZERO);
            }
            let records = client.fetch_records(since, until).collect::<Result<Vec<_>, _>>().map_err(|e| fail(STAGE)(&e))?;
            nvd::Snapshot { records, ..Default::default() }
        }
        (None, None) => {
            return Err(StageFailed { stage: STAGE, cause: "no snapshot path and no nvd.since/nvd.until window".into() })
        }
    };
    nvd::write_records(out, &snap.records).map_err(|e| fail(STAGE)(&e))?;
    let rep = IngestReport { records: snap.records.len(), rejected: &snap.rejected, warnings: &snap.warnings };
    fsutil::write_json(report_out, &rep).map_err(|e| fail(STAGE)(&e))?;
    Ok(StageSummary {
        stage: STAGE.into(),
        outputs: vec![out.into(), report_out.into()],
        partial: 0,
        notes: vec![format!(
            "{} records, {} rejected, {} warnings",
            snap.records.len(),
            snap.rejected.len(),
            snap.warnings.len()
        )],
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryAssignment {
    pub cve_id: CveId,
    pub category: Category,
}

/// `(category, count, percent)` rows.
pub fn category_table(records: &[NvdRecord], allow: &HostAllowlist) -> Vec<(Category, u64, Option<Percent>)> {
    let part = vfcmap_core::partition(records, allow);
    let total = part.total() as u64;
    Category::ALL
        .iter()
        .map(|c| {
            let n = part.count(*c) as u64;
            (*c, n, Percent::new(n, total).ok())
        })
        .collect()
}

pub fn categorize_stage(
    env: &Env,
    records_path: &Path,
    out: &Path,
    summary_out: &Path,
) -> Result<StageSummary, StageFailed> {
    const STAGE: &str = "categorize";
    let records = read_records(STAGE, records_path)?;
    let assignments: Vec<CategoryAssignment> = records
        .iter()
        .map(|r| CategoryAssignment { cve_id: r.cve_id.clone(), category: categorize(r, &env.cfg.allow) })
        .collect();
    write_lines(STAGE, out, &assignments)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["category", "count", "percent"]).expect("in-memory write");
    let table = category_table(&records, &env.cfg.allow);
    for (c, n, p) in &table {
        let pct = p.map(|p| format!("{:.1}", p.value())).unwrap_or_default();
        w.write_record([c.label(), &n.to_string(), &pct]).expect("in-memory write");
    }
    let bytes = w.into_inner().expect("flush");
    fsutil::write_atomic(summary_out, &bytes).map_err(|e| fail(STAGE)(&e))?;
    Ok(StageSummary {
        stage: STAGE.into(),
        outputs: vec![out.into(), summary_out.into()],
        partial: 0,
        notes: table.iter().map(|(c, n, _)| format!("{c}: {n}")).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectedCandidate {
    pub candidate: VfcCandidate,
    pub verdict: MatchVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeRecord {
    pub cve_id: CveId,
    pub tree: RefTree,
}

pub struct HarvestPaths<'a> {
    pub candidates: &'a Path,
    pub expansions: &'a Path,
    pub rejected: &'a Path,
}

/// Build reference trees for the selected categories and harvest S1.
pub fn crawl(
    env: &Env,
    records_path: &Path,
    categories: &[Category],
    out: HarvestPaths<'_>,
    trees_out: Option<&Path>,
) -> Result<StageSummary, StageFailed> {
    const STAGE: &str = "crawl";
    let records = read_records(STAGE, records_path)?;
    let cfg = &env.cfg;
    let crawler = Crawler::new(env.transport.clone(), &cfg.crawl, cfg.allow.clone())
        .respect_robots(cfg.respect_robots)
        .with_governor(env.governor(Duration::from_millis(cfg.crawl.per_host_delay_ms)));
    let now = env.now();
    let mut cands = Vec::new();
    let mut expansions = Vec::new();
    let mut rejected = Vec::new();
    let mut trees = Vec::new();
    let mut failed_pages = 0u64;
    for r in &records {
        let cat = categorize(r, &cfg.allow);
        if !categories.is_empty() && !categories.contains(&cat) {
            continue;
        }
        let tree = crawler.build_tree(r, &cfg.crawl);
        failed_pages += tree.nodes.iter().filter(|n| n.fetch_status == vfcmap_core::tree::FetchStatus::Failed).count() as u64;
        let h = harvest_s1(r, &tree, &cfg.allow, cat, now);
        let f = filter_candidates(h.candidates, r, cfg.threshold, &cfg.aliases);
        cands.extend(f.kept);
        rejected.extend(f.rejected.into_iter().map(|(candidate, verdict)| RejectedCandidate { candidate, verdict }));
        expansions.extend(h.expansions);
        trees.push(TreeRecord { cve_id: r.cve_id.clone(), tree });
    }
    write_lines(STAGE, out.candidates, &cands)?;
    write_lines(STAGE, out.expansions, &expansions)?;
    write_lines(STAGE, out.rejected, &rejected)?;
    let mut outputs = vec![out.candidates.into(), out.expansions.into(), out.rejected.into()];
    if let Some(t) = trees_out {
        write_lines(STAGE, t, &trees)?;
        outputs.push(t.into());
    }
    Ok(StageSummary {
        stage: STAGE.into(),
        outputs,
        // Dead references are an expected outcome of crawling, not a stage failure.
        partial: 0,
        notes: vec![format!(
            "{} trees, {} candidates, {} pending expansions, {} rejected by CPE, {} failed pages",
            trees.len(),
            cands.len(),
            expansions.len(),
            rejected.len(),
            failed_pages
        )],
    })
}

/// Query the advisory databases for every record (source S2).
pub fn external(
    env: &Env,
    records_path: &Path,
    sources: &[vfcmap_core::candidate::AdvisoryDb],
    out: HarvestPaths<'_>,
    failures_out: &Path,
) -> Result<StageSummary, StageFailed> {
    const STAGE: &str = "external";
    let records = read_records(STAGE, records_path)?;
    let cfg = &env.cfg;
    let mut client = ExternalClient::new(env.transport.clone(), env.governor(Duration::from_millis(cfg.crawl.per_host_delay_ms)))
        .with_github_token(cfg.tokens.forge.github.clone())
        .with_sleeper(env.sleeper.clone());
    if let Some(u) = &cfg.osv_api {
        client.osv_api = u.clone();
    }
    if let Some(u) = &cfg.ghsa_api {
        client.ghsa_api = u.clone();
    }
    for (db, sc) in &cfg.scrapers {
        client = client.with_scraper(*db, sc.clone());
    }
    let mut notes = Vec::new();
    let enabled: Vec<_> = sources
        .iter()
        .copied()
        .filter(|db| {
            let restricted = client.scraper(*db).is_some_and(|s| s.restricted);
            let on = !restricted || cfg.mode == Mode::Cassette || cfg.allow_restricted_scrapers;
            if !on {
                notes.push(format!("{} skipped: restricted scraper (set external.allow_restricted_scrapers)", db.slug()));
            }
            on
        })
        .collect();
    let input: Vec<(NvdRecord, Category)> = records.into_iter().map(|r| {
        let c = categorize(&r, &cfg.allow);
        (r, c)
    }).collect();
    let opts = S2Options {
        sources: &enabled,
        allow: &cfg.allow,
        threshold: cfg.threshold,
        aliases: &cfg.aliases,
        now: env.now(),
        concurrency: cfg.external_concurrency,
    };
    let h = harvest_s2(&client, &input, &opts);
    write_lines(STAGE, out.candidates, &h.candidates)?;
    write_lines(STAGE, out.expansions, &h.expansions)?;
    write_lines(
        STAGE,
        out.rejected,
        h.rejected.iter().map(|(candidate, verdict)| RejectedCandidate { candidate: candidate.clone(), verdict: *verdict }),
    )?;
    #[derive(Serialize)]
    struct Failure<'a> {
        cve_id: &'a CveId,
        source: &'a str,
        error: &'a str,
    }
    write_lines(
        STAGE,
        failures_out,
        h.failures.iter().map(|f| Failure { cve_id: &f.cve_id, source: f.db.slug(), error: &f.error }),
    )?;
    notes.push(format!(
        "{} candidates, {} pending expansions, {} rejected by CPE, {} lookup failures",
        h.candidates.len(),
        h.expansions.len(),
        h.rejected.len(),
        h.failures.len()
    ));
    Ok(StageSummary {
        stage: STAGE.into(),
        outputs: vec![out.candidates.into(), out.expansions.into(), out.rejected.into(), failures_out.into()],
        partial: h.failures.len() as u64,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolutionStatus {
    Resolved,
    Missing,
    Unsupported,
    Failed,
}

/// Outcome of resolving one abbreviated SHA.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShaResolution {
    pub repo_id: String,
    pub short: String,
    pub status: ResolutionStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub full: Option<CommitSha>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpansionFailure {
    pub cve_id: CveId,
    pub url: String,
    pub error: String,
}

pub struct ExpandPaths<'a> {
    pub candidates: &'a Path,
    pub rejected: &'a Path,
    pub failures: &'a Path,
    pub resolutions: &'a Path,
}

/// Expand pull request, merge request and issue links into commits, apply
/// the CPE filter to what they yield, and resolve abbreviated SHAs seen in
/// any candidate file.
pub fn expand(
    env: &Env,
    records_path: &Path,
    expansion_files: &[PathBuf],
    candidate_files: &[PathBuf],
    out: ExpandPaths<'_>,
) -> Result<StageSummary, StageFailed> {
    const STAGE: &str = "expand";
    let records = read_records(STAGE, records_path)?;
    let by_cve: BTreeMap<&CveId, &NvdRecord> = records.iter().map(|r| (&r.cve_id, r)).collect();
    let mut pending: Vec<PendingExpansion> = Vec::new();
    for f in expansion_files {
        pending.extend(read_optional::<PendingExpansion>(STAGE, f)?);
    }
    let forge = env.forge();
    let now = env.now();

    let mut expanded: BTreeMap<String, Result<Vec<CommitRef>, String>> = BTreeMap::new();
    for p in &pending {
        let key = p.link.web_url();
        if !expanded.contains_key(&key) {
            let r = forge.expand(&p.link).map_err(|e| e.to_string());
            expanded.insert(key, r);
        }
    }

    let mut per_record: BTreeMap<CveId, Vec<VfcCandidate>> = BTreeMap::new();
    let mut failures = Vec::new();
    for p in &pending {
        match &expanded[&p.link.web_url()] {
            Ok(commits) => {
                for c in commits {
                    let mut cand = VfcCandidate::new(p.cve_id.clone(), c.repo_id.clone(), c.sha.clone(), p.source.clone(), p.category, now);
                    cand.flags.extend(p.flags.iter().copied());
                    per_record.entry(p.cve_id.clone()).or_default().push(cand);
                }
            }
            Err(e) => failures.push(ExpansionFailure { cve_id: p.cve_id.clone(), url: p.link.web_url(), error: e.clone() }),
        }
    }
    let mut kept = Vec::new();
    let mut rejected = Vec::new();
    for (cve, cands) in per_record {
        match by_cve.get(&cve) {
            Some(r) => {
                let f = filter_candidates(cands, r, env.cfg.threshold, &env.cfg.aliases);
                kept.extend(f.kept);
                rejected.extend(f.rejected.into_iter().map(|(candidate, verdict)| RejectedCandidate { candidate, verdict }));
            }
            None => kept.extend(cands.into_iter().map(|c| c.with_flag(CandidateFlag::Unvalidated))),
        }
    }

    let mut short: BTreeSet<(String, CommitSha)> = BTreeSet::new();
    for f in candidate_files {
        for c in read_optional::<VfcCandidate>(STAGE, f)? {
            if !c.sha.is_full() {
                short.insert((c.repo_id, c.sha));
            }
        }
    }
    short.extend(kept.iter().filter(|c| !c.sha.is_full()).map(|c| (c.repo_id.clone(), c.sha.clone())));
    let resolutions: Vec<ShaResolution> = short
        .into_iter()
        .map(|(repo_id, sha)| {
            let short = sha.as_str().to_string();
            let (status, full, error) = match forge.resolve_commit(&CommitRef::new(repo_id.clone(), sha)) {
                Ok(Resolution::Resolved(c)) => (ResolutionStatus::Resolved, Some(c.sha), None),
                Ok(Resolution::Missing) => (ResolutionStatus::Missing, None, None),
                Err(crate::forge::ForgeError::Unsupported { .. }) => (ResolutionStatus::Unsupported, None, None),
                Err(e) => (ResolutionStatus::Failed, None, Some(e.to_string())),
            };
            ShaResolution { repo_id, short, status, full, error }
        })
        .collect();
    let unresolved = resolutions.iter().filter(|r| r.status == ResolutionStatus::Failed).count() as u64;

    write_lines(STAGE, out.candidates, &kept)?;
    write_lines(STAGE, out.rejected, &rejected)?;
    write_lines(STAGE, out.failures, &failures)?;
    write_lines(STAGE, out.resolutions, &resolutions)?;
    Ok(StageSummary {
        stage: STAGE.into(),
        outputs: vec![out.candidates.into(), out.rejected.into(), out.failures.into(), out.resolutions.into()],
        partial: failures.len() as u64 + unresolved,
        notes: vec![format!(
            "{} links expanded into {} candidates ({} rejected by CPE), {} failures, {} short SHAs checked",
            expanded.len(),
            kept.len(),
            rejected.len(),
            failures.len(),
            resolutions.len()
        )],
    })
}

/// Ingest tool rankings and keep entries above the score threshold (source S3).
pub fn s3_stage(env: &Env, records_path: &Path, reports: &[ToolReport], out: &Path) -> Result<StageSummary, StageFailed> {
    const STAGE: &str = "s3";
    let records = read_records(STAGE, records_path)?;
    let cats = categories_of(&records, &env.cfg.allow);
    let mut rankings = Vec::new();
    for r in reports {
        rankings.extend(s3::ingest_tool_output(&r.path, r.format, &r.tool).map_err(|e| fail(STAGE)(&e))?);
    }
    let h = vfcmap_core::ranking::harvest_s3(&rankings, env.cfg.s3_threshold, &env.cfg.allow, |c| cats.get(c).copied(), env.now());
    write_lines(STAGE, out, &h.candidates)?;
    Ok(StageSummary {
        stage: STAGE.into(),
        outputs: vec![out.into()],
        partial: 0,
        notes: vec![format!(
            "{} rankings, {} candidates, {} rankings skipped (unknown CVE or non-forge repository)",
            rankings.len(),
            h.candidates.len(),
            h.skipped.len()
        )],
    })
}

/// Replace resolved abbreviated SHAs by their full ids.
pub fn apply_resolutions(cands: &mut [VfcCandidate], resolutions: &[ShaResolution]) {
    let map: BTreeMap<(&str, &str), &CommitSha> = resolutions
        .iter()
        .filter_map(|r| r.full.as_ref().map(|f| ((r.repo_id.as_str(), r.short.as_str()), f)))
        .collect();
    for c in cands {
        if let Some(full) = map.get(&(c.repo_id.as_str(), c.sha.as_str())) {
            c.sha = (*full).clone();
            c.flags.remove(&CandidateFlag::ProvisionalSha);
        }
    }
}

/// Append candidate batches to the store log and compact it into the snapshot.
pub fn merge(inputs: &[PathBuf], resolutions: Option<&Path>, log: &Path, snapshot: &Path) -> Result<StageSummary, StageFailed> {
    const STAGE: &str = "merge";
    let res: Vec<ShaResolution> = match resolutions {
        Some(p) => read_optional(STAGE, p)?,
        None => Vec::new(),
    };
    let mut appended = 0;
    for f in inputs {
        let mut batch: Vec<VfcCandidate> = read_optional(STAGE, f)?;
        apply_resolutions(&mut batch, &res);
        appended += batch.len();
        store_io::append_log(log, &batch).map_err(|e| fail(STAGE)(&e))?;
    }
    let store = store_io::compact(log, snapshot).map_err(|e| fail(STAGE)(&e))?;
    Ok(StageSummary {
        stage: STAGE.into(),
        outputs: vec![log.into(), snapshot.into()],
        partial: 0,
        notes: vec![format!("{appended} candidates appended, {} in store", store.len())],
    })
}

fn read_store(stage: &'static str, path: &Path) -> Result<CandidateStore, StageFailed> {
    store_io::read_snapshot(path).map_err(|e| fail(stage)(&e))
}

/// Draw the review sample for the whole store.
pub fn sample(env: &Env, store_path: &Path, req: &SessionRequest, out: &Path) -> Result<StageSummary, StageFailed> {
    const STAGE: &str = "sample";
    let store = read_store(STAGE, store_path)?;
    let id = store_io::snapshot_id(&store);
    match review::create_session(&store, &id, req, format!("sample-{}", req.seed), env.now()) {
        Ok(s) => {
            fsutil::write_json(out, &s).map_err(|e| fail(STAGE)(&e))?;
            Ok(StageSummary {
                stage: STAGE.into(),
                outputs: vec![out.into()],
                partial: 0,
                notes: vec![format!(
                    "{} of {} records drawn, {} candidates",
                    s.sample_size,
                    s.population,
                    s.sample.len()
                )],
            })
        }
        Err(review::ReviewError::EmptyPopulation) => Ok(StageSummary {
            stage: STAGE.into(),
            outputs: Vec::new(),
            partial: 0,
            notes: vec!["store is empty; no sample drawn".into()],
        }),
        Err(e) => Err(fail(STAGE)(&e)),
    }
}

/// Assemble the metrics report.
pub fn metrics(
    env: &Env,
    store_path: &Path,
    verdicts: Option<&Path>,
    total_records: u64,
    out: &Path,
) -> Result<StageSummary, StageFailed> {
    const STAGE: &str = "metrics";
    let store = read_store(STAGE, store_path)?;
    let vs = match verdicts.filter(|p| p.exists()) {
        Some(p) => review::read_verdicts(p).map_err(|e| fail(STAGE)(&e))?,
        None => Vec::new(),
    };
    let inputs = ReportInputs { total_records, seed: Some(env.cfg.seed), manual_study: None };
    let rep = report::assemble(&store, &vs, &inputs, env.now());
    fsutil::write_json(out, &rep).map_err(|e| fail(STAGE)(&e))?;
    let mut notes = vec![format!("{} verdicts over {} candidates", vs.len(), store.len())];
    if let Some(p) = rep.overall.precision_vfcs {
        notes.push(format!("VFC precision {p}"));
    }
    Ok(StageSummary { stage: STAGE.into(), outputs: vec![out.into()], partial: 0, notes })
}

pub fn export(store_path: &Path, format: ExportFormat, out: &Path, allow_empty: bool) -> Result<StageSummary, StageFailed> {
    const STAGE: &str = "export";
    let store = read_store(STAGE, store_path)?;
    store_io::export(&store, format, out, allow_empty).map_err(|e| fail(STAGE)(&e))?;
    Ok(StageSummary {
        stage: STAGE.into(),
        outputs: vec![out.into()],
        partial: 0,
        notes: vec![format!("{} candidates", store.len())],
    })
}

pub const STAGES: [&str; 10] =
    ["ingest", "categorize", "crawl", "external", "s3", "expand", "merge", "sample", "metrics", "export"];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config_digest: String,
    pub completed: Vec<StageSummary>,
}

impl Checkpoint {
    fn done(&self, stage: &str) -> bool {
        self.completed.iter().any(|s| s.stage == stage)
    }
}

/// Which S1/S2 pending-expansion and candidate files feed `expand` and `merge`.
const HARVEST_TAGS: [&str; 2] = ["s1", "s2"];

fn run_stage(env: &Env, a: &Artifacts, stage: &str) -> Result<StageSummary, StageFailed> {
    let cfg = &env.cfg;
    match stage {
        "ingest" => ingest(env, cfg.snapshot.as_deref(), &a.records(), &a.ingest_report()),
        "categorize" => categorize_stage(env, &a.records(), &a.categories(), &a.category_summary()),
        "crawl" => crawl(
            env,
            &a.records(),
            &cfg.crawl_categories,
            HarvestPaths { candidates: &a.candidates("s1"), expansions: &a.expansions("s1"), rejected: &a.rejected("s1") },
            Some(&a.trees()),
        ),
        "external" => external(
            env,
            &a.records(),
            &cfg.sources,
            HarvestPaths { candidates: &a.candidates("s2"), expansions: &a.expansions("s2"), rejected: &a.rejected("s2") },
            &a.failures("s2"),
        ),
        "expand" => expand(
            env,
            &a.records(),
            &HARVEST_TAGS.map(|t| a.expansions(t)),
            &[a.candidates("s1"), a.candidates("s2"), a.candidates("s3")],
            ExpandPaths {
                candidates: &a.candidates("expanded"),
                rejected: &a.rejected("expanded"),
                failures: &a.failures("expand"),
                resolutions: &a.resolutions(),
            },
        ),
        "s3" => s3_stage(env, &a.records(), &cfg.tool_reports, &a.candidates("s3")),
        "merge" => merge(
            &[a.candidates("s1"), a.candidates("s2"), a.candidates("expanded"), a.candidates("s3")],
            Some(&a.resolutions()),
            &a.store_log(),
            &a.store(),
        ),
        "sample" => sample(
            env,
            &a.store(),
            &SessionRequest { seed: cfg.seed, confidence: cfg.confidence, margin: cfg.margin, ..Default::default() },
            &a.sample(),
        ),
        "metrics" => {
            let total = match cfg.total_records {
                Some(n) => n,
                None => read_records("metrics", &a.records())?.len() as u64,
            };
            metrics(env, &a.store(), cfg.verdicts.as_deref(), total, &a.report())
        }
        "export" => {
            let csv = export(&a.store(), ExportFormat::Csv, &a.export(ExportFormat::Csv), true)?;
            let jsonl = export(&a.store(), ExportFormat::Jsonl, &a.export(ExportFormat::Jsonl), true)?;
            Ok(StageSummary { outputs: [csv.outputs, jsonl.outputs].concat(), ..csv })
        }
        other => Err(StageFailed { stage: "pipeline", cause: format!("unknown stage {other}") }),
    }
}

/// Outcome of `pipeline all`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineOutcome {
    pub ran: Vec<StageSummary>,
    pub skipped: Vec<String>,
    /// Per-item failures across all completed stages.
    pub partial: u64,
}

/// Run every stage in order. Stages recorded in the checkpoint are skipped
/// unless the config changed or `restart` is set; the first failing stage
/// stops the run with the checkpoint intact.
pub fn run_all(env: &Env, config_text: &str, restart: bool) -> Result<PipelineOutcome, StageFailed> {
    let a = Artifacts::new(&env.cfg.work_dir);
    std::fs::create_dir_all(&a.dir).map_err(|e| fail("pipeline")(&format!("{}: {e}", a.dir.display())))?;
    let digest = hex::encode(Sha256::digest(config_text.as_bytes()));
    let mut cp: Checkpoint = match std::fs::read(a.checkpoint()) {
        Ok(b) if !restart => serde_json::from_slice(&b).unwrap_or_default(),
        _ => Checkpoint::default(),
    };
    if cp.config_digest != digest {
        cp = Checkpoint { config_digest: digest, completed: Vec::new() };
    }
    let mut out = PipelineOutcome { ran: Vec::new(), skipped: Vec::new(), partial: 0 };
    for stage in STAGES {
        if cp.done(stage) {
            out.skipped.push(stage.into());
            continue;
        }
        tracing::info!(stage, "running");
        let s = run_stage(env, &a, stage)?;
        for n in &s.notes {
            tracing::info!(stage, "{n}");
        }
        cp.completed.push(s.clone());
        fsutil::write_json(&a.checkpoint(), &cp).map_err(|e| fail("pipeline")(&e))?;
        out.ran.push(s);
    }
    out.partial = cp.completed.iter().map(|s| s.partial).sum();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use vfcmap_core::Source;

    #[test]
    fn resolutions_replace_short_shas() {
        let mut c = vec![VfcCandidate::new(
            CveId::parse("CVE-2020-0001").unwrap(),
            "github.com/o/r",
            CommitSha::parse("abcdef12").unwrap(),
            Source::S1 { depth: 0, patch_tagged: false },
            Category::C2,
            DateTime::UNIX_EPOCH,
        )];
        let full = CommitSha::parse(&format!("abcdef12{}", "0".repeat(32))).unwrap();
        apply_resolutions(
            &mut c,
            &[ShaResolution {
                repo_id: "github.com/o/r".into(),
                short: "abcdef12".into(),
                status: ResolutionStatus::Resolved,
                full: Some(full.clone()),
                error: None,
            }],
        );
        assert_eq!(c[0].sha, full);
        assert!(c[0].flags.is_empty());
    }
}
