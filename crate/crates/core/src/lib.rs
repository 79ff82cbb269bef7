//! Pure core of the vfcmap pipeline.
//!
//! Everything here is `no_std` + `alloc`: parsing of forge links and CPE 2.3
//! names, the four-way record categorization, depth-bounded reference tree
//! assembly over an abstract page fetcher, CPE cross-validation, candidate
//! merging with provenance, and the dataset metrics (sample sizes,
//! precision, coverage, Recall@k, Cohen's kappa). IO, HTTP and file formats
//! live in the `vfcmap` crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod candidate;
pub mod category;
pub mod cpe;
pub mod link;
pub mod matcher;
pub mod metrics;
pub mod ranking;
pub mod record;
pub mod review;
pub mod sample;
pub mod store;
pub mod tree;
pub mod url;

pub use candidate::{CandidateFlag, CommitSha, Source, VfcCandidate};
pub use category::{categorize, partition, Category, Partition};
pub use cpe::{Cpe23, CpeError, CpePart, CpeValue};
pub use link::{classify, is_git_reference, GitLink, HostAllowlist, LinkKind};
pub use matcher::{filter_candidates, match_link, AliasTable, MatchOn, MatchVerdict};
pub use metrics::{Percent, Tally};
pub use record::{CveId, NvdRecord, Reference};
pub use store::{CandidateStore, OverlapReport};
