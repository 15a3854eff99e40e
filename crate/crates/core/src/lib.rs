//! Nested hierarchical Dirichlet process (nHDP) mixtures for clustering
//! areal units observed at two nested resolutions.
//!
//! Low-resolution units (groups) are clustered into restaurants and
//! high-resolution units (customers) into dishes of a Chinese restaurant
//! franchise, so high-resolution clusters may cross low-resolution ones.
//! The sampler is a marginal split-merge MCMC over tables, dishes and
//! restaurants with optional parallel tempering.

pub mod baseline;
pub mod data;
pub mod enumerate;
pub mod eval;
pub mod error;
pub mod io;
pub mod model;
pub mod sampler;
pub mod state;
pub mod synth;

pub use data::TwoLevelDataset;
pub use error::{Error, Result};
pub use model::{ClusterStats, Concentration, Hyperparams};
pub use state::{CrfState, PartitionPair};
