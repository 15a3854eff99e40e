//! Generate framework-1 data, fit it, and score the minimum-VI point
//! estimates against the generating partitions.
//!
//! `cargo run --release --example synthetic_recovery -- [per_group] [iters] [seed]`

use nhdp::eval::{evaluate, MinViConfig};
use nhdp::sampler::{sample_posterior, ChainConfig};
use nhdp::synth::gen_framework1;
use nhdp::Hyperparams;

fn main() -> nhdp::Result<()> {
    let args: Vec<u64> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let per_group = *args.first().unwrap_or(&10) as usize;
    let n_iter = *args.get(1).unwrap_or(&3000) as usize;
    let seed = *args.get(2).unwrap_or(&1);

    let truth = gen_framework1(25, per_group, seed)?;
    let hp = Hyperparams::simulation_default();
    let cfg = ChainConfig {
        n_iter,
        burn_in: n_iter / 6,
        seed,
        ..ChainConfig::default()
    };
    let samples = sample_posterior(&truth.dataset, &hp, &cfg)?;
    let (_, m) = evaluate(&samples, Some(&truth), hp.k0, &MinViConfig::default())?;

    println!("{} groups x {per_group} units, {n_iter} sweeps", truth.dataset.n_groups());
    println!(
        "low:  {} clusters (truth {}), VI {:.3}",
        m.n_clusters_low,
        m.true_clusters_low.unwrap_or(0),
        m.vi_low.unwrap_or(f64::NAN)
    );
    println!(
        "high: {} clusters (truth {}), VI {:.3}",
        m.n_clusters_high,
        m.true_clusters_high.unwrap_or(0),
        m.vi_high.unwrap_or(f64::NAN)
    );
    println!(
        "RMSE theta {:.3}, phi {:.3}",
        m.rmse_theta.unwrap_or(f64::NAN),
        m.rmse_phi.unwrap_or(f64::NAN)
    );
    let acc = &samples.acceptance;
    println!(
        "acceptance: tables {:.2}, dishes {:.2}, restaurants {:.2}",
        acc.table.rate(),
        acc.dish.rate(),
        acc.restaurant.rate()
    );
    Ok(())
}
