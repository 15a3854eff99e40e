//! Two-stage k-means comparator: cluster the units, then cluster groups by
//! their share of units in each cluster. Compared with the truth and with
//! a short nHDP fit.

use nhdp::baseline::multilevel_kmeans;
use nhdp::eval::{evaluate, vi_distance, MinViConfig};
use nhdp::sampler::{sample_posterior, ChainConfig};
use nhdp::synth::gen_framework1;
use nhdp::Hyperparams;

fn main() -> nhdp::Result<()> {
    let truth = gen_framework1(25, 10, 4)?;
    let km = multilevel_kmeans(&truth.dataset, None, 4)?;
    println!("k-means chose K = {} for units", km.high.chosen_k);
    if let Some(low) = &km.low {
        println!("and K = {} for groups", low.chosen_k);
        for (k, s) in &low.silhouette_by_k {
            println!("  K = {k:>2}  silhouette {s:.3}");
        }
    }
    let hp = Hyperparams::simulation_default();
    let cfg = ChainConfig {
        n_iter: 3000,
        burn_in: 500,
        seed: 4,
        ..ChainConfig::default()
    };
    let samples = sample_posterior(&truth.dataset, &hp, &cfg)?;
    let (pair, _) = evaluate(&samples, None, hp.k0, &MinViConfig::default())?;
    let t = &truth.true_pair;
    println!(
        "VI to truth   low     high\nk-means      {:.3}   {:.3}\nnHDP         {:.3}   {:.3}",
        vi_distance(&km.pair.gamma_l, &t.gamma_l)?,
        vi_distance(&km.pair.gamma_h, &t.gamma_h)?,
        vi_distance(&pair.gamma_l, &t.gamma_l)?,
        vi_distance(&pair.gamma_h, &t.gamma_h)?,
    );
    Ok(())
}
