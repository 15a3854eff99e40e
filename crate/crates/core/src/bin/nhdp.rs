use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use nhdp::io::{load_config, run, Mode, Preset, RunConfig};
use nhdp::synth::SynthParams;

#[derive(Parser)]
#[command(name = "nhdp", version, about = "Two-resolution clustering of areal data with the nHDP")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Read an areal table, or aggregate point events into polygons, and validate it.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Event CSV with lon, lat and optional year.
        #[arg(long, requires = "polygons")]
        points: Option<PathBuf>,
        /// GeoJSON FeatureCollection with unit_id and parent_id properties.
        #[arg(long, requires = "points")]
        polygons: Option<PathBuf>,
    },
    /// Generate a synthetic dataset with its ground truth.
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Run the sampler and summarize the posterior.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Point estimates and cluster tables from an earlier fit.
    Summarize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Compare an earlier fit with the synthetic ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        run_dir: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Two-stage k-means with silhouette selection.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        k_max: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Sample the prior on identical units and report the group co-clustering rate.
    PriorCheck {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        chain: ChainArgs,
        #[arg(long)]
        groups: Option<usize>,
        #[arg(long)]
        per_group: Option<usize>,
        #[arg(long)]
        alpha2: Option<f64>,
    },
}

#[derive(Args)]
struct Common {
    /// Config JSON, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, env = "NHDP_OUT_DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Model the raw values instead of z-scores.
    #[arg(long)]
    no_standardize: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Simulation,
    Real,
}

#[derive(Args)]
struct ChainArgs {
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SynthArgs {
    /// 1: independent mixtures per group; 2: nested draws.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    framework: u8,
    #[arg(long, default_value_t = 25)]
    groups: usize,
    #[arg(long, default_value_t = 50)]
    per_group: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    alpha0: f64,
    #[arg(long, default_value_t = 0.5)]
    alpha1: f64,
    #[arg(long, default_value_t = 1.0)]
    alpha2: f64,
    #[arg(long, default_value_t = 0.1)]
    kappa: f64,
    #[arg(long, default_value_t = 0.2)]
    epsilon: f64,
}

impl SynthArgs {
    fn params(&self) -> SynthParams {
        match self.framework {
            1 => SynthParams::Mixtures {
                n_groups: self.groups,
                per_group: self.per_group,
                seed: self.seed,
            },
            _ => SynthParams::Nested {
                n_groups: self.groups,
                per_group: self.per_group,
                alpha0: self.alpha0,
                alpha1: self.alpha1,
                alpha2: self.alpha2,
                kappa: self.kappa,
                epsilon: self.epsilon,
                seed: self.seed,
            },
        }
    }
}

fn set<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

impl Common {
    fn config(&self, mode: Mode) -> Result<RunConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => load_config(path).map_err(|e| e.to_string())?,
            None => RunConfig::new(mode),
        };
        if cfg.mode != mode {
            return Err(format!("config is for {}, not {}", cfg.mode.name(), mode.name()));
        }
        set(&mut cfg.output_dir, self.out.clone());
        if let Some(p) = self.preset {
            cfg.preset = match p {
                PresetArg::Simulation => Preset::Simulation,
                PresetArg::Real => Preset::Real,
            };
            cfg.hyperparams = None;
        }
        if self.no_standardize {
            cfg.standardize = false;
        }
        Ok(cfg)
    }
}

impl ChainArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let c = &mut cfg.chain;
        if let Some(n) = self.iters {
            c.n_iter = n;
            if self.burn_in.is_none() && c.burn_in >= n {
                c.burn_in = n / 6;
            }
        }
        c.burn_in = self.burn_in.unwrap_or(c.burn_in);
        c.thin = self.thin.unwrap_or(c.thin);
        c.n_chains = self.chains.unwrap_or(c.n_chains);
        c.seed = self.seed.unwrap_or(c.seed);
    }
}

fn build(command: Command) -> Result<RunConfig, String> {
    let cfg = match command {
        Command::Ingest {
            common,
            data,
            points,
            polygons,
        } => {
            let mut cfg = common.config(Mode::Ingest)?;
            set(&mut cfg.data, data);
            set(&mut cfg.points, points);
            set(&mut cfg.polygons, polygons);
            cfg
        }
        Command::Synth { common, synth } => {
            let mut cfg = common.config(Mode::Synth)?;
            if common.config.is_none() || cfg.synth.is_none() {
                cfg.synth = Some(synth.params());
            }
            cfg
        }
        Command::Fit { common, chain, data } => {
            let mut cfg = common.config(Mode::Fit)?;
            chain.apply(&mut cfg);
            set(&mut cfg.data, data);
            cfg
        }
        Command::Summarize { common, data, run_dir } => {
            let mut cfg = common.config(Mode::Summarize)?;
            set(&mut cfg.data, data);
            set(&mut cfg.run_dir, run_dir);
            cfg
        }
        Command::Eval {
            common,
            data,
            run_dir,
            truth,
        } => {
            let mut cfg = common.config(Mode::Eval)?;
            set(&mut cfg.data, data);
            set(&mut cfg.run_dir, run_dir);
            set(&mut cfg.truth, truth);
            cfg
        }
        Command::Baseline {
            common,
            data,
            truth,
            k_max,
            seed,
        } => {
            let mut cfg = common.config(Mode::Baseline)?;
            set(&mut cfg.data, data);
            set(&mut cfg.truth, truth);
            set(&mut cfg.k_max, k_max);
            cfg.chain.seed = seed.unwrap_or(cfg.chain.seed);
            cfg
        }
        Command::PriorCheck {
            common,
            chain,
            groups,
            per_group,
            alpha2,
        } => {
            let mut cfg = common.config(Mode::PriorCheck)?;
            chain.apply(&mut cfg);
            cfg.prior_check.n_groups = groups.unwrap_or(cfg.prior_check.n_groups);
            cfg.prior_check.per_group = per_group.unwrap_or(cfg.prior_check.per_group);
            if let Some(a) = alpha2 {
                let mut hp = cfg.effective_hyperparams();
                hp.alpha2 = a;
                hp.alpha_prior = None;
                cfg.hyperparams = Some(hp);
            }
            cfg
        }
    };
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let cfg = match build(cli.command) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("config failed: {msg}");
            return ExitCode::from(1);
        }
    };
    match run(&cfg) {
        Ok(report) => {
            for line in &report.lines {
                println!("{line}");
            }
            println!("wrote {} files to {}", report.outputs.len(), report.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
