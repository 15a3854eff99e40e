//! Framework 2 draws data from the nested prior itself: stick-breaking over
//! group clusters, each with its own weights over shared atoms.

use nhdp::synth::gen_framework2;

fn main() -> nhdp::Result<()> {
    for kappa in [0.5, 2.0] {
        let t = gen_framework2(25, 20, (1.0, 0.5, 1.0), kappa, 0.2, 5)?;
        let count = |l: &[usize]| l.iter().max().map_or(0, |m| m + 1);
        println!(
            "kappa {kappa}: {} group clusters, {} unit clusters, phi range {:.2}..{:.2}",
            count(&t.true_pair.gamma_l),
            count(&t.true_pair.gamma_h),
            t.true_phi.iter().copied().fold(f64::INFINITY, f64::min),
            t.true_phi.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        );
    }
    Ok(())
}
