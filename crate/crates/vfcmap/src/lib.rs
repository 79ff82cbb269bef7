//! I/O, network clients, persistence, the review service and the command
//! line for the vfcmap pipeline. Pure logic lives in `vfcmap-core`.

pub mod crawler;
pub mod external;
pub mod forge;
pub mod fsutil;
pub mod governor;
pub mod html;
pub mod http;
pub mod nvd;
pub mod s3;
pub mod store_io;
pub mod report;
pub mod review;
pub mod config;
pub mod pipeline;
pub mod cli;
