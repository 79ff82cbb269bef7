//! Internal record model for NVD entries.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cpe::Cpe23;

/// A CVE identifier, `CVE-YYYY-NNNN` with four or more trailing digits.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CveId(String);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InvalidCveId(pub String);

impl fmt::Display for InvalidCveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "not a CVE identifier: {:?}", self.0)
    }
}

impl CveId {
    pub fn parse(s: &str) -> Result<Self, InvalidCveId> {
        let s = s.trim();
        let ok = s
            .strip_prefix("CVE-")
            .and_then(|rest| rest.split_once('-'))
            .is_some_and(|(year, seq)| {
                year.len() == 4
                    && year.bytes().all(|b| b.is_ascii_digit())
                    && seq.len() >= 4
                    && seq.bytes().all(|b| b.is_ascii_digit())
            });
        if ok {
            Ok(CveId(s.to_string()))
        } else {
            Err(InvalidCveId(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for CveId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for CveId {
    type Err = InvalidCveId;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CveId::parse(s)
    }
}

impl Serialize for CveId {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for CveId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        CveId::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// One reference link attached to a record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reference {
    pub url: String,
    /// Tags in the order the source listed them; deduplicated on load.
    #[serde(default)]
    pub tags: Vec<String>,
}

impl Reference {
    pub fn new(url: impl Into<String>, tags: &[&str]) -> Self {
        Reference {
            url: url.into(),
            tags: tags.iter().map(|t| t.to_string()).collect(),
        }
    }

    /// Case-insensitive, whitespace-trimmed exact tag match.
    pub fn has_tag(&self, tag: &str) -> bool {
        let tag = tag.trim();
        self.tags.iter().any(|t| t.trim().eq_ignore_ascii_case(tag))
    }

    pub fn is_patch(&self) -> bool {
        self.has_tag("Patch")
    }

    /// Tags folded to lowercase for set comparison.
    pub fn tag_set(&self) -> BTreeSet<String> {
        self.tags
            .iter()
            .map(|t| t.trim().to_ascii_lowercase())
            .filter(|t| !t.is_empty())
            .collect()
    }
}

/// A normalized NVD record. Serializes to the canonical line format
/// `{cve_id, description, published, references:[{url,tags}], cpes:[string]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NvdRecord {
    pub cve_id: CveId,
    pub description: String,
    pub published: DateTime<Utc>,
    pub references: Vec<Reference>,
    #[serde(with = "cpe_strings")]
    pub cpes: Vec<Cpe23>,
}

mod cpe_strings {
    use super::*;
    use serde::ser::SerializeSeq;

    pub fn serialize<S: Serializer>(cpes: &[Cpe23], s: S) -> Result<S::Ok, S::Error> {
        let mut seq = s.serialize_seq(Some(cpes.len()))?;
        for c in cpes {
            seq.serialize_element(&c.to_string())?;
        }
        seq.end()
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Cpe23>, D::Error> {
        Vec::<String>::deserialize(d)?
            .iter()
            .map(|s| Cpe23::parse(s).map_err(serde::de::Error::custom))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cve_pattern() {
        assert!(CveId::parse("CVE-2011-2505").is_ok());
        assert!(CveId::parse("CVE-2021-1234567").is_ok());
        assert!(CveId::parse("CVE-21-1234").is_err());
        assert!(CveId::parse("CVE-2021-123").is_err());
        assert!(CveId::parse("cve-2021-1234").is_err());
        assert!(CveId::parse("GHSA-xxxx-yyyy-zzzz").is_err());
    }

    #[test]
    fn tags_compare_case_insensitively() {
        let r = Reference::new("https://example.org", &[" patch ", "Third Party Advisory"]);
        assert!(r.is_patch());
        assert!(r.has_tag("third party advisory"));
        assert!(!r.has_tag("Patched"));
        assert!(!Reference::new("https://example.org", &[]).is_patch());
    }
}
