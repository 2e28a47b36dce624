//! File formats, configuration, the parallel runner and the command line
//! for the `plugid-core` simulator and classifier.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod export;
pub mod records;
pub mod runner;
