//! Dataset and checkpoint files, run configuration and the experiment command line for
//! `viewgrid-core`.

pub mod ablate;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset_io;
pub mod report;
