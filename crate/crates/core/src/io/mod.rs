//! File formats, configuration and the per-mode runner.

pub mod config;
pub mod geo;
pub mod ingest;
pub mod output;
pub mod run;

pub use config::{load_config, Manifest, Mode, Preset, RunConfig};
pub use run::{run, RunError, RunReport};
