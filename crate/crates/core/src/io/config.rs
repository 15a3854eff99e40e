//! Run configuration and the reproducibility manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::eval::MinViConfig;
use crate::model::Hyperparams;
use crate::sampler::ChainConfig;
use crate::synth::SynthParams;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Output directory used when neither the config nor the command line names one.
pub const DEFAULT_OUT_DIR: &str = "nhdp-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Ingest,
    Synth,
    Fit,
    Summarize,
    Eval,
    Baseline,
    PriorCheck,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Ingest => "ingest",
            Mode::Synth => "synth",
            Mode::Fit => "fit",
            Mode::Summarize => "summarize",
            Mode::Eval => "eval",
            Mode::Baseline => "baseline",
            Mode::PriorCheck => "prior-check",
        }
    }
}

/// Named hyperparameter defaults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Fixed concentrations `(1, 0.5, 1)`, `Inv-Gamma(5, 1)`, `k0 = 1/100`.
    Simulation,
    /// Standardized real data: random concentrations, `Inv-Gamma(8.25, 1.8125)`, `k0 = 1/10`.
    #[default]
    Real,
}

impl Preset {
    pub fn hyperparams(self) -> Hyperparams {
        match self {
            Preset::Simulation => Hyperparams::simulation_default(),
            Preset::Real => Hyperparams::real_data_default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriorCheck {
    pub n_groups: usize,
    pub per_group: usize,
}

impl Default for PriorCheck {
    fn default() -> Self {
        PriorCheck {
            n_groups: 2,
            per_group: 1,
        }
    }
}

/// Everything one invocation needs. Stored whole in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    /// Areal table (`unit_id,parent_id,density` or `...,count,area`).
    #[serde(default)]
    pub data: Option<PathBuf>,
    /// Event CSV (`lon,lat[,year]`) for ingest.
    #[serde(default)]
    pub points: Option<PathBuf>,
    /// GeoJSON polygons for ingest.
    #[serde(default)]
    pub polygons: Option<PathBuf>,
    /// Directory holding the samples of an earlier fit.
    #[serde(default)]
    pub run_dir: Option<PathBuf>,
    /// `truth.json` written by synth.
    #[serde(default)]
    pub truth: Option<PathBuf>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub preset: Preset,
    /// Replaces the preset when given.
    #[serde(default)]
    pub hyperparams: Option<Hyperparams>,
    #[serde(default)]
    pub chain: ChainConfig,
    #[serde(default)]
    pub synth: Option<SynthParams>,
    #[serde(default)]
    pub minvi: MinViConfig,
    /// Largest K scanned by the k-means baseline.
    #[serde(default)]
    pub k_max: Option<usize>,
    #[serde(default)]
    pub prior_check: PriorCheck,
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn new(mode: Mode) -> Self {
        RunConfig {
            mode,
            data: None,
            points: None,
            polygons: None,
            run_dir: None,
            truth: None,
            output_dir: None,
            standardize: true,
            preset: Preset::default(),
            hyperparams: None,
            chain: ChainConfig::default(),
            synth: None,
            minvi: MinViConfig::default(),
            k_max: None,
            prior_check: PriorCheck::default(),
        }
    }

    pub fn effective_hyperparams(&self) -> Hyperparams {
        self.hyperparams.clone().unwrap_or_else(|| self.preset.hyperparams())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    /// Mode-specific fields are present and referenced files exist.
    pub fn validate(&self) -> Result<()> {
        let need = |field: &Option<PathBuf>, name: &str| -> Result<()> {
            match field {
                None => Err(Error::Config(format!("{} needs {name}", self.mode.name()))),
                Some(p) if !p.exists() => Err(Error::Config(format!("{name} {} does not exist", p.display()))),
                Some(_) => Ok(()),
            }
        };
        match self.mode {
            Mode::Ingest => {
                if self.data.is_some() {
                    need(&self.data, "data")?;
                } else {
                    need(&self.points, "points")?;
                    need(&self.polygons, "polygons")?;
                }
            }
            Mode::Synth => {
                if self.synth.is_none() {
                    return Err(Error::Config("synth needs synthetic data parameters".into()));
                }
            }
            Mode::Fit | Mode::Baseline => need(&self.data, "data")?,
            Mode::Summarize => {
                need(&self.data, "data")?;
                need(&self.run_dir, "run_dir")?;
            }
            Mode::Eval => {
                need(&self.data, "data")?;
                need(&self.run_dir, "run_dir")?;
                need(&self.truth, "truth")?;
            }
            Mode::PriorCheck => {
                if self.prior_check.n_groups < 2 || self.prior_check.per_group == 0 {
                    return Err(Error::Config("prior-check needs at least 2 groups with 1 unit each".into()));
                }
            }
        }
        self.chain.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.effective_hyperparams().validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the JSON form without the output directory, so a replay
    /// into another directory hashes the same.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = None;
        Ok(hex(&Sha256::digest(serde_json::to_vec(&c)?)))
    }
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: PathBuf,
    pub sha256: String,
}

impl FileDigest {
    pub fn of(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(FileDigest {
            path: path.to_path_buf(),
            sha256: hex(&Sha256::digest(&bytes)),
        })
    }
}

/// What was run, with which inputs, producing which outputs. Passing it back
/// as the config repeats the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub mode: Mode,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
}

/// Read a config file, or the config embedded in a manifest.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let inner = match value.get("config") {
        Some(c) if value.get("config_hash").is_some() => c.clone(),
        _ => value,
    };
    serde_json::from_value(inner).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
