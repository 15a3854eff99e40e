//! Sample the prior on identical units and compare the rate at which two
//! groups share a restaurant with its closed form `1 / (1 + alpha2)`.

use nhdp::sampler::{sample_posterior, ChainConfig};
use nhdp::{Hyperparams, TwoLevelDataset};

fn main() -> nhdp::Result<()> {
    let data = TwoLevelDataset::from_groups(&[vec![0.0; 3], vec![0.0; 3]])?;
    for alpha2 in [0.5, 1.0, 2.0] {
        let hp = Hyperparams {
            alpha2,
            alpha_prior: None,
            ..Hyperparams::simulation_default()
        };
        let cfg = ChainConfig {
            n_iter: 50_000,
            burn_in: 1_000,
            prior_only: true,
            seed: 7,
            ..ChainConfig::default()
        };
        let samples = sample_posterior(&data, &hp, &cfg)?;
        let shared = samples.partitions().filter(|p| p.gamma_l[0] == p.gamma_l[1]).count();
        println!(
            "alpha2 = {alpha2}: co-clustering {:.4}, target {:.4}",
            shared as f64 / samples.draws.len() as f64,
            1.0 / (1.0 + alpha2)
        );
    }
    Ok(())
}
