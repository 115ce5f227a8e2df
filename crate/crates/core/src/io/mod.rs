//! Files, data and the outside world: configs, artifacts, datasets,
//! synthetic corpora, benchmarks and the command line.

pub mod artifact;
pub mod bench;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod run;
pub mod synth;
