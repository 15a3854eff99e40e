//! On a tiny dataset every franchise state can be listed, so the exact
//! posterior over partition pairs is available. Compare it with the
//! sampler's visit frequencies.

use std::collections::HashMap;

use nhdp::enumerate::enumerate_states;
use nhdp::sampler::{log_target, sample_posterior, ChainConfig};
use nhdp::state::{canonical_labels, induced_partitions};
use nhdp::{Hyperparams, PartitionPair, TwoLevelDataset};

fn key(p: &PartitionPair) -> (Vec<usize>, Vec<usize>) {
    (canonical_labels(&p.gamma_l), canonical_labels(&p.gamma_h))
}

fn main() -> nhdp::Result<()> {
    let data = TwoLevelDataset::from_groups(&[vec![0.3, -0.2], vec![1.1, 0.9], vec![-0.8]])?;
    let hp = Hyperparams {
        sigma2: 0.25,
        alpha_prior: None,
        ..Hyperparams::simulation_default()
    };

    let mut exact: HashMap<_, f64> = HashMap::new();
    let mut logs = Vec::new();
    for state in enumerate_states(&data)? {
        logs.push((key(&induced_partitions(&state)?), log_target(&state, &data, &hp, 1.0)?));
    }
    let max = logs.iter().map(|(_, l)| *l).fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logs.iter().map(|(_, l)| (l - max).exp()).sum();
    for (k, l) in logs {
        *exact.entry(k).or_default() += (l - max).exp() / z;
    }

    let cfg = ChainConfig {
        n_iter: 100_000,
        burn_in: 1_000,
        fix_sigma2: true,
        seed: 3,
        ..ChainConfig::default()
    };
    let samples = sample_posterior(&data, &hp, &cfg)?;
    let mut freq: HashMap<_, f64> = HashMap::new();
    for p in samples.partitions() {
        *freq.entry(key(p)).or_default() += 1.0 / samples.draws.len() as f64;
    }

    let mut rows: Vec<_> = exact.iter().collect();
    rows.sort_by(|a, b| b.1.total_cmp(a.1));
    println!("{:<12} {:<18} {:>8} {:>8}", "gamma_L", "gamma_H", "exact", "sampled");
    for ((l, h), p) in rows.iter().take(10) {
        let s = freq.get(&(l.clone(), h.clone())).unwrap_or(&0.0);
        println!("{:<12} {:<18} {p:>8.4} {s:>8.4}", format!("{l:?}"), format!("{h:?}"));
    }
    let tv: f64 = exact
        .iter()
        .map(|(k, p)| (p - freq.get(k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
        / 2.0;
    println!("{} partition pairs, total variation {tv:.4}", exact.len());
    Ok(())
}
