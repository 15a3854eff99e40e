//! End-to-end execution of one configured mode.

use std::fmt;
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::config::{FileDigest, Manifest, Mode, RunConfig, MANIFEST_FILE};
use super::geo::aggregate_points;
use super::ingest::{dataset_from_records, ingest_table, read_areal_table, records_of, write_areal_table};
use super::output::{
    cluster_rows, read_json, read_samples, write_json, write_partition_pair, write_rows, write_samples,
};
use crate::baseline::multilevel_kmeans;
use crate::data::TwoLevelDataset;
use crate::error::Error;
use crate::eval::{evaluate, minvi_point_estimate, phi_hat, rmse, theta_hat, vi_distance, Level, Metrics};
use crate::model::Hyperparams;
use crate::sampler::{sample_posterior, AcceptanceStats, PosteriorSamples};
use crate::state::PartitionPair;
use crate::synth::{gen_framework1, gen_framework2, SynthParams, SynthTruth};

pub const UNITS_FILE: &str = "units.csv";
pub const DATA_FILE: &str = "data.csv";
pub const HOLDOUT_FILE: &str = "holdout.csv";
pub const TRUTH_FILE: &str = "truth.json";
pub const PARTITION_FILE: &str = "partition.csv";
pub const CLUSTERS_FILE: &str = "clusters.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const KMEANS_PARTITION_FILE: &str = "kmeans_partition.csv";
pub const KMEANS_FILE: &str = "kmeans.json";
pub const PRIOR_CHECK_FILE: &str = "prior_check.json";
pub const INGEST_FILE: &str = "ingest.json";

/// A failure tagged with the stage it happened in.
#[derive(Debug)]
pub struct RunError {
    pub stage: &'static str,
    pub error: Error,
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} failed: {}", self.stage, self.error)
    }
}

impl std::error::Error for RunError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl RunError {
    /// 1 for configuration problems, 2 for bad input data, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match &self.error {
            Error::Config(_) => 1,
            Error::Input { .. }
            | Error::Dataset(_)
            | Error::Standardize(_)
            | Error::Geometry(_)
            | Error::Csv(_)
            | Error::LengthMismatch(..) => 2,
            Error::Io { .. } | Error::Json(_) if self.stage == STAGE_LOAD => 2,
            _ => 3,
        }
    }
}

const STAGE_CONFIG: &str = "config";
const STAGE_LOAD: &str = "load";
const STAGE_WRITE: &str = "write";

trait Stage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, RunError>;
}

impl<T> Stage<T> for crate::error::Result<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, RunError> {
        self.map_err(|error| RunError { stage, error })
    }
}

type RunResult<T> = std::result::Result<T, RunError>;

/// What a run did, for the console.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub outputs: Vec<PathBuf>,
    pub lines: Vec<String>,
}

/// Written by synth; with the data file it rebuilds a [`SynthTruth`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub params: SynthParams,
    pub true_pair: PartitionPair,
    pub true_theta: Vec<f64>,
    pub true_phi: Vec<f64>,
}

impl TruthFile {
    pub fn into_truth(self, dataset: TwoLevelDataset) -> SynthTruth {
        SynthTruth {
            dataset,
            true_pair: self.true_pair,
            true_theta: self.true_theta,
            true_phi: self.true_phi,
            holdout: None,
            params: self.params,
        }
    }
}

/// Fit summary without ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub metrics: Metrics,
    pub acceptance: AcceptanceStats,
    pub n_chains: usize,
    pub mean_sigma2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorCheckReport {
    pub alpha2: f64,
    pub n_groups: usize,
    pub n_draws: usize,
    /// Share of draws in which groups 0 and 1 share a low-resolution cluster.
    pub co_clustering: f64,
    pub target: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineReport {
    pub chosen_k_high: usize,
    pub chosen_k_low: Option<usize>,
    pub silhouette_high: Vec<(usize, f64)>,
    pub silhouette_low: Option<Vec<(usize, f64)>>,
    pub vi_low: Option<f64>,
    pub vi_high: Option<f64>,
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: PathBuf,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    lines: Vec<String>,
}

impl Ctx<'_> {
    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.outputs.push(p.clone());
        p
    }

    fn say(&mut self, line: String) {
        log::info!("{line}");
        self.lines.push(line);
    }

    fn load_data(&mut self) -> RunResult<TwoLevelDataset> {
        let path = self.cfg.data.clone().expect("validated");
        self.inputs.push(path.clone());
        ingest_table(&path, self.cfg.standardize).stage(STAGE_LOAD)
    }

    fn load_samples(&mut self) -> RunResult<PosteriorSamples> {
        let dir = self.cfg.run_dir.clone().expect("validated");
        for f in [
            super::output::DRAWS_FILE,
            super::output::LABELS_LOW_FILE,
            super::output::LABELS_HIGH_FILE,
            super::output::CHAIN_STATS_FILE,
        ] {
            self.inputs.push(dir.join(f));
        }
        read_samples(&dir).stage(STAGE_LOAD)
    }

    fn load_truth(&mut self, data: &TwoLevelDataset) -> RunResult<SynthTruth> {
        let path = self.cfg.truth.clone().expect("validated");
        self.inputs.push(path.clone());
        let file: TruthFile = read_json(&path).stage(STAGE_LOAD)?;
        if file.true_theta.len() != data.n_customers() || file.true_phi.len() != data.n_groups() {
            return Err(RunError {
                stage: STAGE_LOAD,
                error: Error::input(&path, "truth does not match the dataset"),
            });
        }
        Ok(file.into_truth(data.clone()))
    }
}

/// Execute `cfg.mode`, write its outputs and a manifest into the output
/// directory.
pub fn run(cfg: &RunConfig) -> RunResult<RunReport> {
    cfg.validate().stage(STAGE_CONFIG)?;
    let out = cfg.output_dir();
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e)).stage(STAGE_WRITE)?;
    let mut ctx = Ctx {
        cfg,
        out,
        inputs: Vec::new(),
        outputs: Vec::new(),
        lines: Vec::new(),
    };
    match cfg.mode {
        Mode::Ingest => ingest(&mut ctx)?,
        Mode::Synth => synth(&mut ctx)?,
        Mode::Fit => fit(&mut ctx)?,
        Mode::Summarize => {
            let data = ctx.load_data()?;
            let samples = ctx.load_samples()?;
            summarize(&mut ctx, &data, &samples)?;
        }
        Mode::Eval => eval(&mut ctx)?,
        Mode::Baseline => baseline(&mut ctx)?,
        Mode::PriorCheck => prior_check(&mut ctx)?,
    }
    write_manifest(&ctx).stage(STAGE_WRITE)?;
    let manifest = ctx.out.join(MANIFEST_FILE);
    ctx.outputs.push(manifest);
    Ok(RunReport {
        output_dir: ctx.out,
        outputs: ctx.outputs,
        lines: ctx.lines,
    })
}

fn write_manifest(ctx: &Ctx<'_>) -> crate::error::Result<()> {
    let digests = |paths: &[PathBuf]| paths.iter().map(|p| FileDigest::of(p)).collect::<crate::error::Result<Vec<_>>>();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        mode: ctx.cfg.mode,
        seed: ctx.cfg.chain.seed,
        config_hash: ctx.cfg.hash()?,
        config: ctx.cfg.clone(),
        inputs: digests(&ctx.inputs)?,
        outputs: digests(&ctx.outputs)?,
    };
    write_json(&ctx.out.join(MANIFEST_FILE), &manifest)
}

#[derive(Debug, Serialize)]
struct IngestReport {
    n_units: usize,
    n_groups: usize,
    unassigned_points: Option<usize>,
    n_years: Option<usize>,
}

fn ingest(ctx: &mut Ctx<'_>) -> RunResult<()> {
    let cfg = ctx.cfg;
    let (records, unassigned, n_years) = match &cfg.data {
        Some(path) => {
            ctx.inputs.push(path.clone());
            (read_areal_table(path).stage("ingest")?, None, None)
        }
        None => {
            let (points, polygons) = (cfg.points.clone().expect("validated"), cfg.polygons.clone().expect("validated"));
            ctx.inputs.push(points.clone());
            ctx.inputs.push(polygons.clone());
            let agg = aggregate_points(&points, &polygons).stage("ingest")?;
            (agg.records, Some(agg.unassigned), Some(agg.n_years))
        }
    };
    let data = dataset_from_records(&records).stage("ingest")?;
    if cfg.standardize {
        data.standardized().stage("ingest")?;
    }
    let units = ctx.path(UNITS_FILE);
    write_areal_table(&units, &records).stage(STAGE_WRITE)?;
    let report = IngestReport {
        n_units: data.n_customers(),
        n_groups: data.n_groups(),
        unassigned_points: unassigned,
        n_years,
    };
    let path = ctx.path(INGEST_FILE);
    write_json(&path, &report).stage(STAGE_WRITE)?;
    ctx.say(format!("{} units in {} groups", report.n_units, report.n_groups));
    if let Some(u) = unassigned {
        ctx.say(format!("{u} points fell outside every polygon"));
    }
    Ok(())
}

fn synth(ctx: &mut Ctx<'_>) -> RunResult<()> {
    let params = ctx.cfg.synth.clone().expect("validated");
    let truth = match params {
        SynthParams::Mixtures {
            n_groups,
            per_group,
            seed,
        } => gen_framework1(n_groups, per_group, seed),
        SynthParams::Nested {
            n_groups,
            per_group,
            alpha0,
            alpha1,
            alpha2,
            kappa,
            epsilon,
            seed,
        } => gen_framework2(n_groups, per_group, (alpha0, alpha1, alpha2), kappa, epsilon, seed),
    }
    .stage("synth")?;
    let data_path = ctx.path(DATA_FILE);
    write_areal_table(&data_path, &records_of(&truth.dataset)).stage(STAGE_WRITE)?;
    if let Some(h) = &truth.holdout {
        let p = ctx.path(HOLDOUT_FILE);
        write_areal_table(&p, &records_of(h)).stage(STAGE_WRITE)?;
    }
    let file = TruthFile {
        params: truth.params.clone(),
        true_pair: truth.true_pair.clone(),
        true_theta: truth.true_theta.clone(),
        true_phi: truth.true_phi.clone(),
    };
    let p = ctx.path(TRUTH_FILE);
    write_json(&p, &file).stage(STAGE_WRITE)?;
    ctx.say(format!(
        "{} units in {} groups",
        truth.dataset.n_customers(),
        truth.dataset.n_groups()
    ));
    Ok(())
}

fn fit(ctx: &mut Ctx<'_>) -> RunResult<()> {
    let data = ctx.load_data()?;
    let hp = ctx.cfg.effective_hyperparams();
    let samples = sample_posterior(&data, &hp, &ctx.cfg.chain).stage("sample")?;
    for f in [
        super::output::DRAWS_FILE,
        super::output::LABELS_LOW_FILE,
        super::output::LABELS_HIGH_FILE,
        super::output::CHAIN_STATS_FILE,
    ] {
        ctx.outputs.push(ctx.out.join(f));
    }
    write_samples(&ctx.out, &samples, &data).stage(STAGE_WRITE)?;
    ctx.say(format!("{} retained draws", samples.draws.len()));
    summarize(ctx, &data, &samples)
}

fn summarize(ctx: &mut Ctx<'_>, data: &TwoLevelDataset, samples: &PosteriorSamples) -> RunResult<()> {
    let hp: Hyperparams = ctx.cfg.effective_hyperparams();
    let (pair, metrics) = evaluate(samples, None, hp.k0, &ctx.cfg.minvi).stage("summarize")?;
    let p = ctx.path(PARTITION_FILE);
    write_partition_pair(&p, &pair, data).stage(STAGE_WRITE)?;
    let p = ctx.path(CLUSTERS_FILE);
    write_rows(&p, &cluster_rows(&pair, data)).stage(STAGE_WRITE)?;
    let summary = Summary {
        mean_sigma2: samples.draws.iter().map(|d| d.sigma2).sum::<f64>() / samples.draws.len() as f64,
        metrics,
        acceptance: samples.acceptance,
        n_chains: samples.n_chains,
    };
    let p = ctx.path(SUMMARY_FILE);
    write_json(&p, &summary).stage(STAGE_WRITE)?;
    ctx.say(format!(
        "point estimate: {} low-resolution and {} high-resolution clusters",
        summary.metrics.n_clusters_low, summary.metrics.n_clusters_high
    ));
    Ok(())
}

fn eval(ctx: &mut Ctx<'_>) -> RunResult<()> {
    let data = ctx.load_data()?;
    let samples = ctx.load_samples()?;
    let truth = ctx.load_truth(&data)?;
    let hp = ctx.cfg.effective_hyperparams();
    let (pair, mut metrics) = evaluate(&samples, None, hp.k0, &ctx.cfg.minvi).stage("evaluate")?;
    let to_orig = |v: Vec<f64>| match data.transform {
        Some(t) => v.into_iter().map(|z| t.to_original(z)).collect(),
        None => v,
    };
    let theta = to_orig(theta_hat(&samples, &data, hp.k0).stage("evaluate")?);
    let phi = to_orig(phi_hat(&samples, &data).stage("evaluate")?);
    metrics.vi_low = Some(vi_distance(&pair.gamma_l, &truth.true_pair.gamma_l).stage("evaluate")?);
    metrics.vi_high = Some(vi_distance(&pair.gamma_h, &truth.true_pair.gamma_h).stage("evaluate")?);
    metrics.rmse_theta = Some(rmse(&theta, &truth.true_theta).stage("evaluate")?);
    metrics.rmse_phi = Some(rmse(&phi, &truth.true_phi).stage("evaluate")?);
    let count = |l: &[usize]| l.iter().max().map_or(0, |&m| m + 1);
    metrics.true_clusters_low = Some(count(&truth.true_pair.gamma_l));
    metrics.true_clusters_high = Some(count(&truth.true_pair.gamma_h));
    let p = ctx.path(METRICS_FILE);
    write_json(&p, &metrics).stage(STAGE_WRITE)?;
    ctx.say(format!(
        "VI low {:.4}, VI high {:.4}, RMSE theta {:.4}, RMSE phi {:.4}",
        metrics.vi_low.unwrap_or(f64::NAN),
        metrics.vi_high.unwrap_or(f64::NAN),
        metrics.rmse_theta.unwrap_or(f64::NAN),
        metrics.rmse_phi.unwrap_or(f64::NAN)
    ));
    Ok(())
}

fn baseline(ctx: &mut Ctx<'_>) -> RunResult<()> {
    let data = ctx.load_data()?;
    let truth = match ctx.cfg.truth.clone() {
        Some(_) => Some(ctx.load_truth(&data)?),
        None => None,
    };
    let km = multilevel_kmeans(&data, ctx.cfg.k_max, ctx.cfg.chain.seed).stage("baseline")?;
    let p = ctx.path(KMEANS_PARTITION_FILE);
    write_partition_pair(&p, &km.pair, &data).stage(STAGE_WRITE)?;
    let vi = |level: Level| -> RunResult<Option<f64>> {
        truth
            .as_ref()
            .map(|t| vi_distance(level.labels(&km.pair), level.labels(&t.true_pair)))
            .transpose()
            .stage("baseline")
    };
    let report = BaselineReport {
        chosen_k_high: km.high.chosen_k,
        chosen_k_low: km.low.as_ref().map(|l| l.chosen_k),
        silhouette_high: km.high.silhouette_by_k.clone(),
        silhouette_low: km.low.as_ref().map(|l| l.silhouette_by_k.clone()),
        vi_low: vi(Level::Low)?,
        vi_high: vi(Level::High)?,
    };
    let p = ctx.path(KMEANS_FILE);
    write_json(&p, &report).stage(STAGE_WRITE)?;
    ctx.say(format!(
        "k-means chose {} high-resolution and {} low-resolution clusters",
        report.chosen_k_high,
        report.chosen_k_low.map_or_else(|| "no".to_string(), |k| k.to_string())
    ));
    Ok(())
}

/// Share of draws in which groups 0 and 1 share a low-resolution cluster.
pub fn co_clustering(samples: &PosteriorSamples) -> f64 {
    let together = samples.draws.iter().filter(|d| d.pair.gamma_l[0] == d.pair.gamma_l[1]).count();
    together as f64 / samples.draws.len().max(1) as f64
}

fn prior_check(ctx: &mut Ctx<'_>) -> RunResult<()> {
    let pc = ctx.cfg.prior_check;
    let groups = vec![vec![0.0; pc.per_group]; pc.n_groups];
    let data = TwoLevelDataset::from_groups(&groups).stage("prior-check")?;
    let hp = ctx.cfg.effective_hyperparams();
    let mut chain = ctx.cfg.chain.clone();
    chain.prior_only = true;
    let samples = sample_posterior(&data, &hp, &chain).stage("sample")?;
    let report = PriorCheckReport {
        alpha2: hp.alpha2,
        n_groups: pc.n_groups,
        n_draws: samples.draws.len(),
        co_clustering: co_clustering(&samples),
        target: 1.0 / (1.0 + hp.alpha2),
    };
    let p = ctx.path(PRIOR_CHECK_FILE);
    write_json(&p, &report).stage(STAGE_WRITE)?;
    ctx.say(format!(
        "co-clustering frequency {:.4}, target 1/(1+alpha2) = {:.4}",
        report.co_clustering, report.target
    ));
    Ok(())
}

/// Used by tests and examples: the minVI low-resolution estimate alone.
pub fn low_resolution_estimate(samples: &PosteriorSamples, cfg: &RunConfig) -> crate::error::Result<Vec<usize>> {
    Ok(minvi_point_estimate(samples, Level::Low, &cfg.minvi)?.labels)
}

/// Where a run writes by default: `$NHDP_OUT_DIR` or `nhdp-out`.
pub fn default_output_dir() -> PathBuf {
    std::env::var_os("NHDP_OUT_DIR").map_or_else(|| PathBuf::from(super::config::DEFAULT_OUT_DIR), PathBuf::from)
}
