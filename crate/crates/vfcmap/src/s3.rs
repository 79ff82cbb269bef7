//! Source S3 input formats: the `generic-ranked` CSV interchange and
//! Prospector JSON reports.
//!
//! generic-ranked is UTF-8 CSV with the header `cve_id,repo_url,sha,score,rank`
//! and one row per ranked commit. Rows for one `(cve_id, repo_url)` form one
//! ranking; ranks must run `1..=n` within it.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde_json::Value;
use thiserror::Error;
use vfcmap_core::ranking::{RankedCommit, ToolRanking};
use vfcmap_core::CveId;

pub const GENERIC_HEADER: [&str; 5] = ["cve_id", "repo_url", "sha", "score", "rank"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    GenericRanked,
    ProspectorReport,
}

impl FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "generic-ranked" => Ok(ReportFormat::GenericRanked),
            "prospector-report" => Ok(ReportFormat::ProspectorReport),
            other => Err(format!("unknown report format {other:?} (expected generic-ranked or prospector-report)")),
        }
    }
}

/// One problem in a report. Line 0 means the problem is not tied to a line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReportIssue {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum S3Error {
    #[error("malformed report:{}", fmt_issues(.0))]
    MalformedReport(Vec<ReportIssue>),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn fmt_issues(issues: &[ReportIssue]) -> String {
    issues.iter().fold(String::new(), |mut s, i| {
        if i.line > 0 {
            s.push_str(&format!("\n  line {}: {}", i.line, i.reason));
        } else {
            s.push_str(&format!("\n  {}", i.reason));
        }
        s
    })
}

fn issue(line: usize, reason: impl fmt::Display) -> ReportIssue {
    ReportIssue { line, reason: reason.to_string() }
}

pub fn ingest_tool_output(path: &Path, format: ReportFormat, tool: &str) -> Result<Vec<ToolRanking>, S3Error> {
    let text = std::fs::read_to_string(path).map_err(|source| S3Error::Io { path: path.display().to_string(), source })?;
    match format {
        ReportFormat::GenericRanked => parse_generic(&text, tool),
        ReportFormat::ProspectorReport => parse_prospector(&text, tool),
    }
}

pub fn parse_generic(text: &str, tool: &str) -> Result<Vec<ToolRanking>, S3Error> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let mut issues = Vec::new();
    match rdr.headers() {
        Ok(h) if h.iter().eq(GENERIC_HEADER.iter().copied()) => {}
        Ok(h) => issues.push(issue(1, format!("header must be {:?}, found {:?}", GENERIC_HEADER.join(","), h.iter().collect::<Vec<_>>().join(",")))),
        Err(e) => issues.push(issue(1, e)),
    }
    if !issues.is_empty() {
        return Err(S3Error::MalformedReport(issues));
    }

    let mut order: Vec<(String, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String), (ToolRanking, BTreeMap<u32, usize>)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line() as usize);
                issues.push(issue(line, e));
                continue;
            }
        };
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 5 {
            issues.push(issue(line, format!("expected 5 fields, found {}", rec.len())));
            continue;
        }
        let cve = match CveId::parse(&rec[0]) {
            Ok(c) => c,
            Err(e) => {
                issues.push(issue(line, e));
                continue;
            }
        };
        let score = match rec[3].parse::<f64>() {
            Ok(s) if s.is_finite() => s,
            _ => {
                issues.push(issue(line, format!("bad score {:?}", &rec[3])));
                continue;
            }
        };
        let rank = match rec[4].parse::<u32>() {
            Ok(r) if r > 0 => r,
            _ => {
                issues.push(issue(line, format!("bad rank {:?}", &rec[4])));
                continue;
            }
        };
        if rec[2].is_empty() || !rec[2].bytes().all(|b| b.is_ascii_hexdigit()) {
            issues.push(issue(line, format!("bad sha {:?}", &rec[2])));
            continue;
        }
        let key = (rec[0].to_string(), rec[1].to_string());
        let (ranking, ranks) = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key.clone());
            (
                ToolRanking { tool: tool.into(), cve_id: cve, repo_url: rec[1].into(), entries: Vec::new() },
                BTreeMap::new(),
            )
        });
        if let Some(prev) = ranks.insert(rank, line) {
            issues.push(issue(line, format!("duplicate rank {rank} for {} (first at line {prev})", &rec[0])));
            continue;
        }
        ranking.entries.push(RankedCommit { sha: rec[2].to_ascii_lowercase(), score, rank });
    }

    let mut out = Vec::new();
    for key in order {
        let (mut ranking, ranks) = groups.remove(&key).expect("grouped");
        if let Err(e) = ranking.normalize() {
            let line = ranks.values().min().copied().unwrap_or(0);
            issues.push(issue(line, format!("{} {}: {e}", key.0, key.1)));
        }
        out.push(ranking);
    }
    if issues.is_empty() {
        Ok(out)
    } else {
        issues.sort_by_key(|i| i.line);
        Err(S3Error::MalformedReport(issues))
    }
}

/// Prospector JSON: one report object, an array of them, or one per line.
/// Each report names the CVE and repository under `parameters`; a commit's
/// score is its `relevance`, or the sum of its matched rules' relevance.
pub fn parse_prospector(text: &str, tool: &str) -> Result<Vec<ToolRanking>, S3Error> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let docs: Vec<(usize, Value)> = match serde_json::from_str::<Value>(text) {
        Ok(Value::Array(a)) => a.into_iter().map(|v| (0, v)).collect(),
        Ok(v) => vec![(0, v)],
        Err(_) => {
            let mut docs = Vec::new();
            for (i, l) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
                match serde_json::from_str(l) {
                    Ok(v) => docs.push((i + 1, v)),
                    Err(e) => return Err(S3Error::MalformedReport(vec![issue(i + 1, e)])),
                }
            }
            docs
        }
    };
    let mut issues = Vec::new();
    let mut out = Vec::new();
    for (line, d) in docs {
        let params = &d["parameters"];
        let cve = params["vulnerability_id"].as_str().and_then(|s| CveId::parse(s).ok());
        let repo = params["repository_url"].as_str();
        let (Some(cve), Some(repo)) = (cve, repo) else {
            issues.push(issue(line, "report lacks parameters.vulnerability_id or parameters.repository_url"));
            continue;
        };
        let Some(commits) = d["commits"].as_array() else {
            issues.push(issue(line, "report lacks a commits array"));
            continue;
        };
        let mut ranking = ToolRanking { tool: tool.into(), cve_id: cve, repo_url: repo.into(), entries: Vec::new() };
        for (i, c) in commits.iter().enumerate() {
            let Some(sha) = c["commit_id"].as_str() else {
                issues.push(issue(line, format!("commits[{i}].commit_id missing")));
                continue;
            };
            let score = c["relevance"].as_f64().unwrap_or_else(|| {
                c["matched_rules"]
                    .as_array()
                    .map_or(0.0, |rs| rs.iter().filter_map(|r| r["relevance"].as_f64()).sum())
            });
            ranking.entries.push(RankedCommit { sha: sha.to_ascii_lowercase(), score, rank: 0 });
        }
        ranking.rank_by_score();
        out.push(ranking);
    }
    if issues.is_empty() {
        Ok(out)
    } else {
        Err(S3Error::MalformedReport(issues))
    }
}

/// Serialize rankings as generic-ranked CSV.
pub fn write_generic(rankings: &[ToolRanking]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(GENERIC_HEADER).expect("in-memory write");
    for r in rankings {
        for e in &r.entries {
            w.write_record([
                r.cve_id.as_str(),
                r.repo_url.as_str(),
                e.sha.as_str(),
                &e.score.to_string(),
                &e.rank.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}
