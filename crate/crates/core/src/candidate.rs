//! Candidate vulnerability-fixing commits and their provenance.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use core::cmp::Ordering;
use core::fmt;
use core::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::category::Category;
use crate::link::is_sha;
use crate::record::CveId;

/// Lowercase hex commit id, 7 to 40 characters. Anything shorter than 40 is
/// a provisional prefix awaiting resolution.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CommitSha(String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidSha(pub String);

impl fmt::Display for InvalidSha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "not a 7-40 digit hex commit id: {:?}", self.0)
    }
}

impl CommitSha {
    pub fn parse(s: &str) -> Result<Self, InvalidSha> {
        let s = s.trim();
        if is_sha(s) {
            Ok(CommitSha(s.to_ascii_lowercase()))
        } else {
            Err(InvalidSha(s.to_string()))
        }
    }

    pub fn is_full(&self) -> bool {
        self.0.len() == 40
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// True when `self` is a (possibly equal) prefix of `other`.
    pub fn is_prefix_of(&self, other: &CommitSha) -> bool {
        other.0.starts_with(&self.0)
    }
}

impl fmt::Display for CommitSha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for CommitSha {
    type Err = InvalidSha;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CommitSha::parse(s)
    }
}

impl Serialize for CommitSha {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for CommitSha {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        CommitSha::parse(&String::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// Tool score with a total order, so sources can live in ordered sets.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Score(pub f64);

impl PartialEq for Score {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}
impl Eq for Score {}
impl PartialOrd for Score {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Score {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}
impl core::hash::Hash for Score {
    fn hash<H: core::hash::Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

/// External security databases consulted for the advisory source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AdvisoryDb {
    Snyk,
    GitHubAdvisory,
    UbuntuSecurity,
    NifiApacheSecurity,
    DjangoSecurity,
    OsvDev,
}

impl AdvisoryDb {
    pub const ALL: [AdvisoryDb; 6] = [
        AdvisoryDb::Snyk,
        AdvisoryDb::GitHubAdvisory,
        AdvisoryDb::UbuntuSecurity,
        AdvisoryDb::NifiApacheSecurity,
        AdvisoryDb::DjangoSecurity,
        AdvisoryDb::OsvDev,
    ];

    /// Short name used on the command line.
    pub fn slug(self) -> &'static str {
        match self {
            AdvisoryDb::Snyk => "snyk",
            AdvisoryDb::GitHubAdvisory => "ghsa",
            AdvisoryDb::UbuntuSecurity => "ubuntu",
            AdvisoryDb::NifiApacheSecurity => "nifi",
            AdvisoryDb::DjangoSecurity => "django",
            AdvisoryDb::OsvDev => "osv",
        }
    }

    /// API-backed databases; the rest are scraped.
    pub fn has_api(self) -> bool {
        matches!(self, AdvisoryDb::GitHubAdvisory | AdvisoryDb::OsvDev)
    }
}

impl FromStr for AdvisoryDb {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        AdvisoryDb::ALL
            .into_iter()
            .find(|d| d.slug().eq_ignore_ascii_case(s) || format!("{d:?}").eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown advisory database {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SourceKind {
    S1,
    S2,
    S3,
}

impl SourceKind {
    pub const ALL: [SourceKind; 3] = [SourceKind::S1, SourceKind::S2, SourceKind::S3];
}

impl FromStr for SourceKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "S1" => Ok(SourceKind::S1),
            "S2" => Ok(SourceKind::S2),
            "S3" => Ok(SourceKind::S3),
            other => Err(format!("unknown source {other:?}")),
        }
    }
}

impl fmt::Display for SourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// Where a candidate came from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "source")]
pub enum Source {
    /// NVD references, found at `depth` in the reference tree.
    S1 { depth: u32, patch_tagged: bool },
    /// External advisory database.
    S2 { db_name: AdvisoryDb, source_asserted: bool },
    /// Repository-search tool ranking.
    S3 { tool: String, score: Score, rank: u32 },
}

impl Source {
    pub fn kind(&self) -> SourceKind {
        match self {
            Source::S1 { .. } => SourceKind::S1,
            Source::S2 { .. } => SourceKind::S2,
            Source::S3 { .. } => SourceKind::S3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateFlag {
    /// Record had no CPE data to cross-validate against.
    Unvalidated,
    ProvisionalSha,
    /// Found in a reference tree that hit the page budget.
    TruncatedCrawl,
}

impl CandidateFlag {
    pub fn as_str(self) -> &'static str {
        match self {
            CandidateFlag::Unvalidated => "unvalidated",
            CandidateFlag::ProvisionalSha => "provisional_sha",
            CandidateFlag::TruncatedCrawl => "truncated_crawl",
        }
    }
}

impl FromStr for CandidateFlag {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "unvalidated" => Ok(CandidateFlag::Unvalidated),
            "provisional_sha" => Ok(CandidateFlag::ProvisionalSha),
            "truncated_crawl" => Ok(CandidateFlag::TruncatedCrawl),
            other => Err(format!("unknown flag {other:?}")),
        }
    }
}

/// Identity of a candidate within a store.
pub type CandidateKey = (CveId, String, CommitSha);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VfcCandidate {
    pub cve_id: CveId,
    pub repo_id: String,
    pub sha: CommitSha,
    pub sources: BTreeSet<Source>,
    pub category: Category,
    pub first_seen: DateTime<Utc>,
    #[serde(default)]
    pub flags: BTreeSet<CandidateFlag>,
}

impl VfcCandidate {
    pub fn new(
        cve_id: CveId,
        repo_id: impl Into<String>,
        sha: CommitSha,
        source: Source,
        category: Category,
        first_seen: DateTime<Utc>,
    ) -> Self {
        let mut flags = BTreeSet::new();
        if !sha.is_full() {
            flags.insert(CandidateFlag::ProvisionalSha);
        }
        let mut sources = BTreeSet::new();
        sources.insert(source);
        VfcCandidate {
            cve_id,
            repo_id: repo_id.into().to_ascii_lowercase(),
            sha,
            sources,
            category,
            first_seen,
            flags,
        }
    }

    pub fn with_flag(mut self, flag: CandidateFlag) -> Self {
        self.flags.insert(flag);
        self
    }

    pub fn key(&self) -> CandidateKey {
        (self.cve_id.clone(), self.repo_id.clone(), self.sha.clone())
    }

    /// Stable textual id, `CVE:host/owner/repo:sha`.
    pub fn id(&self) -> String {
        format!("{}:{}:{}", self.cve_id, self.repo_id, self.sha)
    }

    pub fn has_source(&self, kind: SourceKind) -> bool {
        self.sources.iter().any(|s| s.kind() == kind)
    }

    pub fn source_kinds(&self) -> BTreeSet<SourceKind> {
        self.sources.iter().map(Source::kind).collect()
    }

    /// Owner and repository name split out of `repo_id`.
    pub fn owner_repo(&self) -> Option<(&str, &str)> {
        let (_, path) = self.repo_id.split_once('/')?;
        path.rsplit_once('/')
    }
}

/// A pull request, merge request or issue link awaiting expansion into
/// commits through its forge API. Carries the provenance its commits inherit.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PendingExpansion {
    pub cve_id: CveId,
    pub link: crate::link::GitLink,
    pub source: Source,
    pub category: Category,
    #[serde(default)]
    pub flags: BTreeSet<CandidateFlag>,
}

impl PendingExpansion {
    /// Candidate for one commit produced by expanding this link.
    pub fn candidate(&self, sha: CommitSha, first_seen: DateTime<Utc>) -> VfcCandidate {
        let mut c = VfcCandidate::new(
            self.cve_id.clone(),
            self.link.repo_id(),
            sha,
            self.source.clone(),
            self.category,
            first_seen,
        );
        c.flags.extend(self.flags.iter().copied());
        c
    }
}
