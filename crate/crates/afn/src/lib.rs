//! File formats, checkpoints, the synthetic generator and the command line
//! for `afn-core`.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod error;
pub mod parallel;
pub mod report;
pub mod synth;
pub mod tsv;
