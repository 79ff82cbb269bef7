//! The four mutually exclusive record categories, decided by whether a
//! record has Git references and whether any reference carries a Patch tag.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::link::{is_git_reference, HostAllowlist};
use crate::record::NvdRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    /// At least one Git reference tagged Patch.
    C1,
    /// Git references, none tagged Patch.
    C2,
    /// No Git reference; some other reference tagged Patch.
    C3,
    /// Everything else, including records without references.
    C4,
}

impl Category {
    pub const ALL: [Category; 4] = [Category::C1, Category::C2, Category::C3, Category::C4];

    pub fn label(self) -> &'static str {
        match self {
            Category::C1 => "C1",
            Category::C2 => "C2",
            Category::C3 => "C3",
            Category::C4 => "C4",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Category {
    type Err = UnknownCategory;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "C1" => Ok(Category::C1),
            "C2" => Ok(Category::C2),
            "C3" => Ok(Category::C3),
            "C4" => Ok(Category::C4),
            _ => Err(UnknownCategory),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UnknownCategory;

impl fmt::Display for UnknownCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("category must be one of C1, C2, C3, C4")
    }
}

impl core::error::Error for UnknownCategory {}

pub fn categorize(record: &NvdRecord, allow: &HostAllowlist) -> Category {
    let mut has_git = false;
    let mut git_patch = false;
    let mut other_patch = false;
    for r in &record.references {
        let patch = r.is_patch();
        if is_git_reference(r, allow) {
            has_git = true;
            git_patch |= patch;
        } else {
            other_patch |= patch;
        }
    }
    match (has_git, git_patch, other_patch) {
        (true, true, _) => Category::C1,
        (true, false, _) => Category::C2,
        (false, _, true) => Category::C3,
        (false, _, false) => Category::C4,
    }
}

/// Records grouped by category, in input order within each group.
#[derive(Debug, Clone, Default)]
pub struct Partition<'a> {
    pub groups: BTreeMap<Category, Vec<&'a NvdRecord>>,
}

impl<'a> Partition<'a> {
    pub fn count(&self, c: Category) -> usize {
        self.groups.get(&c).map_or(0, Vec::len)
    }

    pub fn counts(&self) -> [usize; 4] {
        Category::ALL.map(|c| self.count(c))
    }

    pub fn total(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }
}

pub fn partition<'a>(records: &'a [NvdRecord], allow: &HostAllowlist) -> Partition<'a> {
    let mut groups: BTreeMap<Category, Vec<&NvdRecord>> =
        Category::ALL.iter().map(|c| (*c, Vec::new())).collect();
    for r in records {
        groups.entry(categorize(r, allow)).or_default().push(r);
    }
    Partition { groups }
}
