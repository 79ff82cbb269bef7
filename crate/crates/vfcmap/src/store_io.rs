//! Candidate store persistence: the append-only log, compacted snapshots,
//! and JSONL/CSV export.
//!
//! The log holds one candidate per line in arrival order and may contain
//! the same key many times; compaction merges it into a snapshot sorted by
//! `(cve_id, repo_id, sha)`.

use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use thiserror::Error;
use vfcmap_core::candidate::{AdvisoryDb, CandidateFlag, Score};
use vfcmap_core::{CandidateStore, Category, CommitSha, CveId, Source, VfcCandidate};

use crate::fsutil::{self, JsonlError};

pub const CSV_HEADER: [&str; 7] = ["cve_id", "repo_id", "sha", "sources", "category", "first_seen", "flags"];

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("refusing to export an empty store (pass --allow-empty)")]
    EmptyStore,
    #[error("I/O failure on {path}: {source}")]
    IoFailure { path: String, source: std::io::Error },
    #[error(transparent)]
    Jsonl(#[from] JsonlError),
    #[error("{path}:{line}: {reason}")]
    Csv { path: String, line: usize, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::IoFailure { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Jsonl,
    Csv,
}

impl FromStr for ExportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(ExportFormat::Jsonl),
            "csv" => Ok(ExportFormat::Csv),
            other => Err(format!("unknown export format {other:?} (expected jsonl or csv)")),
        }
    }
}

/// Append a batch to the log, one fsync per batch.
pub fn append_log(log: &Path, batch: &[VfcCandidate]) -> Result<(), StoreError> {
    if let Some(dir) = log.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut f = OpenOptions::new().create(true).append(true).open(log).map_err(io_err(log))?;
    f.write_all(&fsutil::to_jsonl(batch)).map_err(io_err(log))?;
    f.sync_all().map_err(io_err(log))
}

/// Merge the whole log into a store.
pub fn replay_log(log: &Path) -> Result<CandidateStore, StoreError> {
    if !log.exists() {
        return Ok(CandidateStore::new());
    }
    let items: Vec<VfcCandidate> = fsutil::read_jsonl(log)?;
    Ok(CandidateStore::merge([items]))
}

/// Replay the log and atomically replace the snapshot with the result.
pub fn compact(log: &Path, snapshot: &Path) -> Result<CandidateStore, StoreError> {
    let store = replay_log(log)?;
    write_snapshot(snapshot, &store)?;
    Ok(store)
}

pub fn write_snapshot(path: &Path, store: &CandidateStore) -> Result<(), StoreError> {
    fsutil::write_jsonl(path, store.iter()).map_err(io_err(path))
}

pub fn read_snapshot(path: &Path) -> Result<CandidateStore, StoreError> {
    let items: Vec<VfcCandidate> = fsutil::read_jsonl(path)?;
    Ok(CandidateStore::merge([items]))
}

/// Content id of a store: SHA-256 over its canonical JSONL form.
pub fn snapshot_id(store: &CandidateStore) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(fsutil::to_jsonl(store.iter())))
}

/// `S1(depth=0,patch_tagged=true)` and friends.
pub fn format_source(s: &Source) -> String {
    match s {
        Source::S1 { depth, patch_tagged } => format!("S1(depth={depth},patch_tagged={patch_tagged})"),
        Source::S2 { db_name, source_asserted } => {
            format!("S2(db_name={},source_asserted={source_asserted})", db_name.slug())
        }
        Source::S3 { tool, score, rank } => format!("S3(tool={tool},score={},rank={rank})", score.0),
    }
}

pub fn parse_source(s: &str) -> Result<Source, String> {
    let bad = || format!("bad source {s:?}");
    let (kind, rest) = s.split_once('(').ok_or_else(bad)?;
    let body = rest.strip_suffix(')').ok_or_else(bad)?;
    let mut fields = std::collections::BTreeMap::new();
    for kv in body.split(',') {
        let (k, v) = kv.split_once('=').ok_or_else(bad)?;
        fields.insert(k, v);
    }
    let get = |k: &str| fields.get(k).copied().ok_or_else(|| format!("{s:?} lacks {k}"));
    let boolean = |v: &str| v.parse::<bool>().map_err(|_| bad());
    match kind {
        "S1" => Ok(Source::S1 {
            depth: get("depth")?.parse().map_err(|_| bad())?,
            patch_tagged: boolean(get("patch_tagged")?)?,
        }),
        "S2" => Ok(Source::S2 {
            db_name: AdvisoryDb::from_str(get("db_name")?).map_err(|_| bad())?,
            source_asserted: boolean(get("source_asserted")?)?,
        }),
        "S3" => Ok(Source::S3 {
            tool: get("tool")?.to_string(),
            score: Score(get("score")?.parse().map_err(|_| bad())?),
            rank: get("rank")?.parse().map_err(|_| bad())?,
        }),
        _ => Err(bad()),
    }
}

pub fn to_csv(store: &CandidateStore) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for c in store.iter() {
        let sources: Vec<String> = c.sources.iter().map(format_source).collect();
        let flags: Vec<&str> = c.flags.iter().map(|f| f.as_str()).collect();
        w.write_record([
            c.cve_id.as_str(),
            c.repo_id.as_str(),
            c.sha.as_str(),
            &sources.join(";"),
            c.category.label(),
            &c.first_seen.to_rfc3339_opts(chrono::SecondsFormat::AutoSi, true),
            &flags.join(";"),
        ])
        .expect("in-memory write");
    }
    w.into_inner().expect("flush")
}

pub fn from_csv(path_label: &str, bytes: &[u8]) -> Result<Vec<VfcCandidate>, StoreError> {
    let mut rdr = csv::Reader::from_reader(bytes);
    let err = |line: usize, reason: String| StoreError::Csv { path: path_label.into(), line, reason };
    let header = rdr.headers().map_err(|e| err(1, e.to_string()))?;
    if !header.iter().eq(CSV_HEADER.iter().copied()) {
        return Err(err(1, format!("header must be {}", CSV_HEADER.join(","))));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| err(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let cve_id = CveId::parse(&rec[0]).map_err(|e| err(line, e.to_string()))?;
        let sha = CommitSha::parse(&rec[2]).map_err(|e| err(line, e.to_string()))?;
        let sources: BTreeSet<Source> = rec[3]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(parse_source)
            .collect::<Result<_, _>>()
            .map_err(|e| err(line, e))?;
        if sources.is_empty() {
            return Err(err(line, "candidate has no sources".into()));
        }
        let category = Category::from_str(&rec[4]).map_err(|e| err(line, e.to_string()))?;
        let first_seen = DateTime::parse_from_rfc3339(&rec[5])
            .map_err(|e| err(line, e.to_string()))?
            .with_timezone(&Utc);
        let flags: BTreeSet<CandidateFlag> = rec[6]
            .split(';')
            .filter(|s| !s.is_empty())
            .map(CandidateFlag::from_str)
            .collect::<Result<_, _>>()
            .map_err(|e| err(line, e))?;
        out.push(VfcCandidate {
            cve_id,
            repo_id: rec[1].to_string(),
            sha,
            sources,
            category,
            first_seen,
            flags,
        });
    }
    Ok(out)
}

pub fn export(store: &CandidateStore, format: ExportFormat, path: &Path, allow_empty: bool) -> Result<(), StoreError> {
    if store.is_empty() && !allow_empty {
        return Err(StoreError::EmptyStore);
    }
    let bytes = match format {
        ExportFormat::Jsonl => fsutil::to_jsonl(store.iter()),
        ExportFormat::Csv => to_csv(store),
    };
    fsutil::write_atomic(path, &bytes).map_err(io_err(path))
}

/// Read an export back. The result is not compacted, so an export
/// round-trips exactly.
pub fn import(path: &Path, format: ExportFormat) -> Result<Vec<VfcCandidate>, StoreError> {
    match format {
        ExportFormat::Jsonl => Ok(fsutil::read_jsonl(path)?),
        ExportFormat::Csv => {
            let bytes = std::fs::read(path).map_err(io_err(path))?;
            from_csv(&path.display().to_string(), &bytes)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn source_text_round_trip() {
        for s in [
            Source::S1 { depth: 2, patch_tagged: false },
            Source::S2 { db_name: AdvisoryDb::GitHubAdvisory, source_asserted: true },
            Source::S3 { tool: "prospector".into(), score: Score(72.5), rank: 3 },
        ] {
            assert_eq!(parse_source(&format_source(&s)).unwrap(), s);
        }
        assert!(parse_source("S4(x=1)").is_err());
    }

    #[test]
    fn log_compaction_dedupes() {
        let dir = tempfile::tempdir().unwrap();
        let log = dir.path().join("store.log.jsonl");
        let c = VfcCandidate::new(
            CveId::parse("CVE-2020-1000").unwrap(),
            "github.com/o/r",
            CommitSha::parse("abcdef1").unwrap(),
            Source::S1 { depth: 0, patch_tagged: true },
            Category::C1,
            DateTime::UNIX_EPOCH,
        );
        append_log(&log, std::slice::from_ref(&c)).unwrap();
        append_log(&log, std::slice::from_ref(&c)).unwrap();
        let snap = dir.path().join("store.jsonl");
        let st = compact(&log, &snap).unwrap();
        assert_eq!(st.len(), 1);
        assert_eq!(read_snapshot(&snap).unwrap(), st);
    }

    #[test]
    fn empty_export_needs_flag() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        assert!(matches!(export(&CandidateStore::new(), ExportFormat::Csv, &p, false), Err(StoreError::EmptyStore)));
        export(&CandidateStore::new(), ExportFormat::Csv, &p, true).unwrap();
        assert!(import(&p, ExportFormat::Csv).unwrap().is_empty());
    }
}
