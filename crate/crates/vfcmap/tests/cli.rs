use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn e2e() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/e2e")
}

fn vfcmap(config: &Path, work: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vfcmap"))
        .arg("--config")
        .arg(config)
        .arg("--work-dir")
        .arg(work)
        .args(args)
        .env_remove("VFCMAP_CONFIG")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

const GOLDEN: [&str; 3] = ["export.csv", "report.json", "store.jsonl"];

fn assert_golden(work: &Path) {
    for f in GOLDEN {
        let got = std::fs::read(work.join(f)).unwrap();
        let want = std::fs::read(e2e().join("golden").join(f)).unwrap();
        assert!(got == want, "{f} differs from golden");
    }
}

#[test]
fn pipeline_matches_golden_and_resumes() {
    let work = tempfile::tempdir().unwrap();
    let cfg = e2e().join("config.toml");
    let o = vfcmap(&cfg, work.path(), &["pipeline", "all"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_golden(work.path());

    let before: Vec<Vec<u8>> = GOLDEN.iter().map(|f| std::fs::read(work.path().join(f)).unwrap()).collect();
    let o = vfcmap(&cfg, work.path(), &["pipeline", "all"]);
    assert_eq!(code(&o), 0);
    let after: Vec<Vec<u8>> = GOLDEN.iter().map(|f| std::fs::read(work.path().join(f)).unwrap()).collect();
    assert_eq!(before, after);

    let o = vfcmap(&cfg, work.path(), &["pipeline", "all", "--restart"]);
    assert_eq!(code(&o), 0);
    assert_golden(work.path());
}

#[test]
fn stages_one_at_a_time_match_golden() {
    let work = tempfile::tempdir().unwrap();
    let cfg = e2e().join("config.toml");
    let stages: [&[&str]; 10] = [
        &["ingest"],
        &["categorize"],
        &["crawl"],
        &["external"],
        &["s3", "ingest"],
        &["expand"],
        &["merge"],
        &["sample"],
        &["metrics"],
        &["export"],
    ];
    for s in stages {
        let o = vfcmap(&cfg, work.path(), s);
        assert_eq!(code(&o), 0, "{s:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_golden(work.path());
}

#[test]
fn categorize_prints_a_table() {
    let work = tempfile::tempdir().unwrap();
    let cfg = e2e().join("config.toml");
    vfcmap(&cfg, work.path(), &["ingest"]);
    let o = vfcmap(&cfg, work.path(), &["categorize"]);
    let out = String::from_utf8(o.stdout).unwrap();
    for c in ["C1", "C2", "C3", "C4"] {
        assert!(out.contains(c), "{out}");
    }
}

#[test]
fn exit_codes() {
    let work = tempfile::tempdir().unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    let text = std::fs::read_to_string(e2e().join("config.toml")).unwrap();
    std::fs::write(&bad, text.replace("max_depth = 2", "max_depth = 0")).unwrap();
    assert_eq!(code(&vfcmap(&bad, work.path(), &["ingest"])), 2);
    assert_eq!(code(&vfcmap(&dir.path().join("missing.toml"), work.path(), &["ingest"])), 2);
    assert_ne!(code(&vfcmap(&e2e().join("config.toml"), work.path(), &["bogus"])), 0);
    // s3 needs the records written by ingest.
    assert_eq!(code(&vfcmap(&e2e().join("config.toml"), work.path(), &["s3", "ingest"])), 3);
}

#[test]
fn advisory_outage_is_partial() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    for f in ["config.toml", "snapshot.json", "tool.csv", "verdicts.jsonl"] {
        std::fs::copy(e2e().join(f), root.join(f)).unwrap();
    }
    let cas = root.join("cassettes");
    std::fs::create_dir(&cas).unwrap();
    for e in std::fs::read_dir(e2e().join("cassettes")).unwrap() {
        let e = e.unwrap();
        std::fs::copy(e.path(), cas.join(e.file_name())).unwrap();
    }
    let url = "https://api.osv.dev/v1/vulns/CVE-2024-10006";
    let resp = vfcmap::http::Response {
        status: 503,
        url: url.into(),
        headers: vec![],
        body: Vec::new(),
        from_cache: false,
    };
    vfcmap::http::write_entry(&cas, &vfcmap::http::Request::get(url), &resp).unwrap();
    let work = root.join("out");
    let o = vfcmap(&root.join("config.toml"), &work, &["pipeline", "all"]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(work.join("export.csv").exists());
}
