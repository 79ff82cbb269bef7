//! Command-line entry point. Every path flag defaults to the matching
//! artifact under the configured work directory.
//!
//! Exit codes: 0 success, 2 config error, 3 stage failure, 4 partial
//! (some per-item failures were logged and skipped).

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use vfcmap_core::candidate::{AdvisoryDb, SourceKind};
use vfcmap_core::Category;

use crate::config::{Mode, PipelineConfig, ToolReport};
use crate::pipeline::{self, Artifacts, Env, ExpandPaths, HarvestPaths, StageFailed, StageSummary};
use crate::review::{ReviewService, SessionRequest};
use crate::s3::ReportFormat;
use crate::store_io::ExportFormat;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_STAGE: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "vfcmap", version, about = "Map CVE records to candidate vulnerability-fixing commits")]
pub struct Cli {
    /// Pipeline config (TOML). Without one, built-in defaults apply and the
    /// work directory is ./out.
    #[arg(long, global = true, env = "VFCMAP_CONFIG")]
    pub config: Option<PathBuf>,
    /// Override the config's mode.
    #[arg(long, global = true, value_parser = Mode::from_str)]
    pub mode: Option<Mode>,
    /// Override the config's work directory.
    #[arg(long, global = true)]
    pub work_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load an NVD 2.0 snapshot (or page through the API) into records.jsonl.
    Ingest {
        #[arg(long)]
        snapshot: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Assign C1-C4 to each record and print the summary table.
    Categorize {
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Build reference trees and harvest S1 candidates.
    Crawl {
        #[arg(long)]
        records: Option<PathBuf>,
        /// Comma-separated categories, e.g. C3,C4. Defaults to the config's list (all when empty).
        #[arg(long, value_delimiter = ',', value_parser = Category::from_str)]
        category: Vec<Category>,
        /// Read the crawl policy and hosts from this config file instead of --config.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[command(flatten)]
        out: HarvestOut,
        #[arg(long)]
        trees: Option<PathBuf>,
    },
    /// Query advisory databases for S2 candidates.
    External {
        #[arg(long)]
        records: Option<PathBuf>,
        /// Comma-separated: osv, ghsa, snyk, ubuntu, nifi, django.
        #[arg(long, value_delimiter = ',', value_parser = AdvisoryDb::from_str)]
        sources: Vec<AdvisoryDb>,
        #[command(flatten)]
        out: HarvestOut,
        #[arg(long)]
        failures: Option<PathBuf>,
    },
    /// Expand PR/MR/issue links into commits and resolve short SHAs.
    Expand {
        #[arg(long)]
        records: Option<PathBuf>,
        /// Pending-expansion files (default: the crawl and external outputs).
        #[arg(long = "expansions")]
        expansions: Vec<PathBuf>,
        /// Candidate files scanned for abbreviated SHAs.
        #[arg(long = "candidates")]
        candidates: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        rejected: Option<PathBuf>,
        #[arg(long)]
        failures: Option<PathBuf>,
        #[arg(long)]
        resolutions: Option<PathBuf>,
    },
    /// Repository-search tool output (S3).
    S3 {
        #[command(subcommand)]
        command: S3Command,
    },
    /// Append candidate files to the store log and compact the snapshot.
    Merge {
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        resolutions: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a review sample from the store.
    Sample {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', value_parser = SourceKind::from_str)]
        source: Vec<SourceKind>,
        #[arg(long, value_delimiter = ',', value_parser = Category::from_str)]
        category: Vec<Category>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Human review service.
    Review {
        #[command(subcommand)]
        command: ReviewCommand,
    },
    /// Assemble the metrics report.
    Metrics {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long)]
        verdicts: Option<PathBuf>,
        /// All NVD records, the coverage denominator (default: records.jsonl line count).
        #[arg(long)]
        total_records: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export the store as CSV or JSONL, sorted by (cve, repo, sha).
    Export {
        #[arg(long)]
        store: Option<PathBuf>,
        #[arg(long, default_value = "csv", value_parser = ExportFormat::from_str)]
        format: ExportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        allow_empty: bool,
    },
    /// Run stages in sequence.
    Pipeline {
        #[command(subcommand)]
        command: PipelineCommand,
    },
}

#[derive(Debug, Args)]
pub struct HarvestOut {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    expansions_out: Option<PathBuf>,
    #[arg(long)]
    rejected_out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum S3Command {
    Ingest {
        /// Tool output file(s); default: the config's reports.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "generic-ranked", value_parser = ReportFormat::from_str)]
        format: ReportFormat,
        #[arg(long, default_value = "prospector")]
        tool: String,
        #[arg(long)]
        min_score: Option<f64>,
        /// Admit scores equal to the threshold.
        #[arg(long)]
        inclusive: bool,
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    Serve {
        #[arg(long)]
        store: Option<PathBuf>,
        /// Append-only verdict log.
        #[arg(long)]
        verdicts: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        /// Records file for candidate context.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Static UI bundle to serve at /.
        #[arg(long)]
        ui: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum PipelineCommand {
    All {
        /// Ignore the checkpoint and run every stage.
        #[arg(long)]
        restart: bool,
    },
}

/// Failure with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<StageFailed> for CliError {
    fn from(e: StageFailed) -> Self {
        CliError { code: EXIT_STAGE, message: e.to_string() }
    }
}

fn config_error(e: impl std::fmt::Display) -> CliError {
    CliError { code: EXIT_CONFIG, message: e.to_string() }
}

fn load_config(path: Option<&Path>) -> Result<(PipelineConfig, String), CliError> {
    let (text, base) = match path {
        Some(p) => (
            std::fs::read_to_string(p).map_err(|e| config_error(format!("{}: {e}", p.display())))?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (String::new(), std::env::current_dir().unwrap_or_default()),
    };
    let cfg = PipelineConfig::parse(&text, &base).map_err(config_error)?;
    Ok((cfg, text))
}

fn report(s: &StageSummary) {
    for n in &s.notes {
        eprintln!("{}: {n}", s.stage);
    }
}

fn finish(s: StageSummary) -> Result<i32, CliError> {
    report(&s);
    Ok(if s.partial > 0 { EXIT_PARTIAL } else { EXIT_OK })
}

fn or(p: Option<PathBuf>, default: PathBuf) -> PathBuf {
    p.unwrap_or(default)
}

fn ensure_dir(a: &Artifacts) -> Result<(), CliError> {
    std::fs::create_dir_all(&a.dir).map_err(|e| CliError { code: EXIT_STAGE, message: format!("{}: {e}", a.dir.display()) })
}

pub fn run(cli: Cli) -> Result<i32, CliError> {
    let (mut cfg, text) = load_config(cli.config.as_deref())?;
    if let Some(m) = cli.mode {
        cfg.mode = m;
        if m == Mode::Cassette && cfg.cassette_dir.is_none() {
            return Err(config_error("invalid config: paths.cassette_dir: required in cassette mode"));
        }
    }
    if let Some(w) = cli.work_dir {
        cfg.work_dir = w;
    }
    if let Command::Crawl { policy: Some(p), .. } = &cli.command {
        let (policy_cfg, _) = load_config(Some(p))?;
        cfg.crawl = policy_cfg.crawl;
        cfg.respect_robots = policy_cfg.respect_robots;
        cfg.allow = policy_cfg.allow;
        cfg.crawl_categories = policy_cfg.crawl_categories;
    }
    let cfg = cfg.with_env_tokens();
    let a = Artifacts::new(&cfg.work_dir);
    ensure_dir(&a)?;

    match cli.command {
        Command::Ingest { snapshot, out } => {
            let env = Env::new(cfg)?;
            let snap = snapshot.or(env.cfg.snapshot.clone());
            finish(pipeline::ingest(&env, snap.as_deref(), &or(out, a.records()), &a.ingest_report())?)
        }
        Command::Categorize { records, out, summary } => {
            let env = Env::new(cfg)?;
            let records = or(records, a.records());
            let s = pipeline::categorize_stage(&env, &records, &or(out, a.categories()), &or(summary, a.category_summary()))?;
            let recs = crate::nvd::read_records(&records).map_err(|e| CliError { code: EXIT_STAGE, message: e.to_string() })?;
            println!("category\tcount\tpercent");
            for (c, n, p) in pipeline::category_table(&recs, &env.cfg.allow) {
                println!("{c}\t{n}\t{}", p.map(|p| p.to_string()).unwrap_or_else(|| "-".into()));
            }
            finish(s)
        }
        Command::Crawl { records, category, out, trees, .. } => {
            let env = Env::new(cfg)?;
            let cats = if category.is_empty() { env.cfg.crawl_categories.clone() } else { category };
            let (c, e, r) = (or(out.out, a.candidates("s1")), or(out.expansions_out, a.expansions("s1")), or(out.rejected_out, a.rejected("s1")));
            finish(pipeline::crawl(
                &env,
                &or(records, a.records()),
                &cats,
                HarvestPaths { candidates: &c, expansions: &e, rejected: &r },
                Some(&or(trees, a.trees())),
            )?)
        }
        Command::External { records, sources, out, failures } => {
            let env = Env::new(cfg)?;
            let sources = if sources.is_empty() { env.cfg.sources.clone() } else { sources };
            let (c, e, r) = (or(out.out, a.candidates("s2")), or(out.expansions_out, a.expansions("s2")), or(out.rejected_out, a.rejected("s2")));
            finish(pipeline::external(
                &env,
                &or(records, a.records()),
                &sources,
                HarvestPaths { candidates: &c, expansions: &e, rejected: &r },
                &or(failures, a.failures("s2")),
            )?)
        }
        Command::Expand { records, expansions, candidates, out, rejected, failures, resolutions } => {
            let env = Env::new(cfg)?;
            let expansions = if expansions.is_empty() { vec![a.expansions("s1"), a.expansions("s2")] } else { expansions };
            let candidates =
                if candidates.is_empty() { vec![a.candidates("s1"), a.candidates("s2"), a.candidates("s3")] } else { candidates };
            let (c, r, f, z) = (
                or(out, a.candidates("expanded")),
                or(rejected, a.rejected("expanded")),
                or(failures, a.failures("expand")),
                or(resolutions, a.resolutions()),
            );
            finish(pipeline::expand(
                &env,
                &or(records, a.records()),
                &expansions,
                &candidates,
                ExpandPaths { candidates: &c, rejected: &r, failures: &f, resolutions: &z },
            )?)
        }
        Command::S3 { command: S3Command::Ingest { inputs, format, tool, min_score, inclusive, records, out } } => {
            let mut cfg = cfg;
            if let Some(m) = min_score {
                cfg.s3_threshold.min_score = m;
            }
            if inclusive {
                cfg.s3_threshold.inclusive = true;
            }
            let reports = if inputs.is_empty() {
                cfg.tool_reports.clone()
            } else {
                inputs.into_iter().map(|path| ToolReport { path, format, tool: tool.clone() }).collect()
            };
            let env = Env::new(cfg)?;
            finish(pipeline::s3_stage(&env, &or(records, a.records()), &reports, &or(out, a.candidates("s3")))?)
        }
        Command::Merge { inputs, resolutions, log, out } => {
            let inputs = if inputs.is_empty() {
                ["s1", "s2", "expanded", "s3"].map(|t| a.candidates(t)).to_vec()
            } else {
                inputs
            };
            let res = resolutions.unwrap_or_else(|| a.resolutions());
            finish(pipeline::merge(&inputs, Some(&res), &or(log, a.store_log()), &or(out, a.store()))?)
        }
        Command::Sample { store, source, category, seed, out } => {
            let env = Env::new(cfg)?;
            let req = SessionRequest {
                source_filter: source.into_iter().collect(),
                category_filter: category.into_iter().collect(),
                confidence: env.cfg.confidence,
                margin: env.cfg.margin,
                seed: seed.unwrap_or(env.cfg.seed),
            };
            finish(pipeline::sample(&env, &or(store, a.store()), &req, &or(out, a.sample()))?)
        }
        Command::Review { command: ReviewCommand::Serve { store, verdicts, listen, records, ui } } => {
            let store_path = or(store, a.store());
            let store = crate::store_io::read_snapshot(&store_path)
                .map_err(|e| CliError { code: EXIT_STAGE, message: e.to_string() })?;
            let records_path = records.unwrap_or_else(|| a.records());
            let recs = if records_path.exists() {
                crate::nvd::read_records(&records_path).map_err(|e| CliError { code: EXIT_STAGE, message: e.to_string() })?
            } else {
                Vec::new()
            };
            let log = verdicts.or(cfg.verdicts.clone()).unwrap_or_else(|| a.dir.join("verdicts.jsonl"));
            let svc = ReviewService::open(store, recs, log).map_err(|e| CliError { code: EXIT_STAGE, message: e.to_string() })?;
            let rt = tokio::runtime::Runtime::new().map_err(|e| CliError { code: EXIT_STAGE, message: e.to_string() })?;
            rt.block_on(crate::review::serve(svc, listen, ui))
                .map_err(|e| CliError { code: EXIT_STAGE, message: format!("review service: {e}") })?;
            Ok(EXIT_OK)
        }
        Command::Metrics { store, verdicts, total_records, out } => {
            let total = match total_records.or(cfg.total_records) {
                Some(n) => n,
                None => crate::nvd::read_records(&a.records())
                    .map_err(|e| CliError {
                        code: EXIT_STAGE,
                        message: format!("--total-records not given and records unreadable: {e}"),
                    })?
                    .len() as u64,
            };
            let verdicts = verdicts.or(cfg.verdicts.clone());
            let env = Env::new(cfg)?;
            finish(pipeline::metrics(&env, &or(store, a.store()), verdicts.as_deref(), total, &or(out, a.report()))?)
        }
        Command::Export { store, format, out, allow_empty } => {
            finish(pipeline::export(&or(store, a.store()), format, &or(out, a.export(format)), allow_empty)?)
        }
        Command::Pipeline { command: PipelineCommand::All { restart } } => {
            let env = Env::new(cfg)?;
            let o = pipeline::run_all(&env, &text, restart)?;
            for s in &o.ran {
                report(s);
            }
            if !o.skipped.is_empty() {
                eprintln!("pipeline: resumed, skipped completed stages: {}", o.skipped.join(", "));
            }
            Ok(if o.partial > 0 { EXIT_PARTIAL } else { EXIT_OK })
        }
    }
}
