//! Parallel tempering: rungs at flattened likelihoods run alongside the
//! cold chain and exchange states. Prints the ladder, swap acceptance and
//! the cold chain's log posterior trace.

use nhdp::sampler::{sample_posterior, ChainConfig, Tempering};
use nhdp::synth::gen_framework1;
use nhdp::Hyperparams;

fn main() -> nhdp::Result<()> {
    let truth = gen_framework1(10, 10, 2)?;
    let cfg = ChainConfig {
        n_iter: 1500,
        burn_in: 300,
        n_chains: 2,
        seed: 11,
        tempering: Some(Tempering {
            n_rungs: 4,
            max_temp: 8.0,
        }),
        ..ChainConfig::default()
    };
    let samples = sample_posterior(&truth.dataset, &Hyperparams::simulation_default(), &cfg)?;
    let ladder: Vec<String> = samples.temperatures.iter().map(|t| format!("{t:.2}")).collect();
    println!("temperatures: {}", ladder.join(" "));
    println!(
        "swap acceptance {:.2} over {} proposals",
        samples.acceptance.swap.rate(),
        samples.acceptance.swap.proposed
    );
    for (c, trace) in samples.trace.iter().enumerate() {
        let at: Vec<String> = trace.iter().step_by(250).map(|v| format!("{v:.1}")).collect();
        println!("chain {c} log posterior every 250 sweeps: {}", at.join(" "));
    }
    Ok(())
}
