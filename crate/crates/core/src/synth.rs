//! Synthetic two-level datasets with known partitions.
//!
//! Framework 1 draws each group's customers from one of six fixed normal
//! mixtures. Framework 2 draws from a truncated nested HDP, rejecting
//! cluster distributions that are too similar to be told apart.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use crate::data::TwoLevelDataset;
use crate::error::{Error, Result};
use crate::state::{canonical_labels, PartitionPair};

/// Component means of framework 1: spaced 2.5 apart and centered at 0.
pub const FRAMEWORK1_MEANS: [f64; 6] = [-6.25, -3.75, -1.25, 1.25, 3.75, 6.25];

/// Mixture weights of the six framework-1 distributions.
pub const FRAMEWORK1_WEIGHTS: [[f64; 6]; 6] = [
    [0.0, 0.6, 0.3, 0.0, 0.1, 0.0],
    [0.4, 0.0, 0.1, 0.1, 0.4, 0.0],
    [0.1, 0.0, 0.0, 0.0, 0.3, 0.6],
    [0.0, 0.0, 0.5, 0.5, 0.0, 0.0],
    [0.2, 0.2, 0.0, 0.2, 0.2, 0.2],
    [0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
];

/// Observation standard deviation used by both frameworks.
pub const SYNTH_SD: f64 = 0.5;

/// Cap on candidate draws in the framework-2 rejection loop.
pub const MAX_REJECTION_ATTEMPTS: usize = 100_000;

// independent streams so that group-level draws do not depend on n_l
const STREAM_GROUPS: u64 = 0;
const STREAM_CUSTOMERS: u64 = 1;
const STREAM_HOLDOUT: u64 = 2;

fn stream(seed: u64, s: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(s);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "framework", rename_all = "lowercase")]
pub enum SynthParams {
    Mixtures {
        n_groups: usize,
        per_group: usize,
        seed: u64,
    },
    Nested {
        n_groups: usize,
        per_group: usize,
        alpha0: f64,
        alpha1: f64,
        alpha2: f64,
        kappa: f64,
        epsilon: f64,
        seed: u64,
    },
}

/// A generated dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct SynthTruth {
    pub dataset: TwoLevelDataset,
    pub true_pair: PartitionPair,
    /// Mean of each customer's component.
    pub true_theta: Vec<f64>,
    /// Mixture mean of each group's distribution.
    pub true_phi: Vec<f64>,
    /// Fresh observations with the same assignments.
    pub holdout: Option<TwoLevelDataset>,
    pub params: SynthParams,
}

fn draw_categorical<R: Rng + ?Sized>(w: &[f64], rng: &mut R) -> usize {
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, &x) in w.iter().enumerate() {
        if u < x {
            return i;
        }
        u -= x;
    }
    // rounding: last positive weight
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

fn noisy(theta: &[f64], per_group: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let noise = Normal::new(0.0, SYNTH_SD).expect("valid sd");
    theta
        .chunks(per_group)
        .map(|c| c.iter().map(|&t| t + noise.sample(rng)).collect())
        .collect()
}

fn check_sizes(n_groups: usize, per_group: usize) -> Result<()> {
    if n_groups == 0 || per_group == 0 {
        return Err(Error::Synth(format!(
            "need at least one group and one unit per group, got {n_groups} x {per_group}"
        )));
    }
    Ok(())
}

/// Framework 1: every group picks one of six mixtures uniformly; each of its
/// `per_group` customers picks a component by that mixture's weights and
/// observes `N(mean, 0.25)`.
pub fn gen_framework1(n_groups: usize, per_group: usize, seed: u64) -> Result<SynthTruth> {
    check_sizes(n_groups, per_group)?;
    let mut g_rng = stream(seed, STREAM_GROUPS);
    let mixture: Vec<usize> = (0..n_groups).map(|_| g_rng.random_range(0..6)).collect();
    let mut c_rng = stream(seed, STREAM_CUSTOMERS);
    let mut component = Vec::with_capacity(n_groups * per_group);
    for &m in &mixture {
        for _ in 0..per_group {
            component.push(draw_categorical(&FRAMEWORK1_WEIGHTS[m], &mut c_rng));
        }
    }
    let true_theta: Vec<f64> = component.iter().map(|&k| FRAMEWORK1_MEANS[k]).collect();
    let true_phi = mixture
        .iter()
        .map(|&m| {
            FRAMEWORK1_WEIGHTS[m]
                .iter()
                .zip(FRAMEWORK1_MEANS)
                .map(|(w, mu)| w * mu)
                .sum()
        })
        .collect();
    let dataset = TwoLevelDataset::from_groups(&noisy(&true_theta, per_group, &mut c_rng))?;
    let holdout = TwoLevelDataset::from_groups(&noisy(
        &true_theta,
        per_group,
        &mut stream(seed, STREAM_HOLDOUT),
    ))?;
    Ok(SynthTruth {
        dataset,
        true_pair: PartitionPair {
            gamma_l: canonical_labels(&mixture),
            gamma_h: canonical_labels(&component),
        },
        true_theta,
        true_phi,
        holdout: Some(holdout),
        params: SynthParams::Mixtures {
            n_groups,
            per_group,
            seed,
        },
    })
}

/// Total variation distance between two distributions on the same atoms.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch(p.len(), q.len()));
    }
    for (name, d) in [("p", p), ("q", q)] {
        let s: f64 = d.iter().sum();
        if d.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || (s - 1.0).abs() > 1e-9 {
            return Err(Error::Distribution(format!(
                "{name} is not a probability vector (sum {s})"
            )));
        }
    }
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

/// Truncated stick-breaking weights with concentration `alpha`; the last
/// weight closes the stick so the vector sums to one.
pub fn stick_breaking<R: Rng + ?Sized>(alpha: f64, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n == 0 {
        return Ok(Vec::new());
    }
    let beta = Beta::new(1.0, alpha).map_err(|e| Error::Synth(format!("stick-breaking: {e}")))?;
    let mut w = Vec::with_capacity(n);
    let mut rest = 1.0;
    for _ in 0..n - 1 {
        let v: f64 = beta.sample(rng);
        w.push(rest * v);
        rest *= 1.0 - v;
    }
    let head: f64 = w.iter().sum();
    w.push((1.0 - head).max(0.0));
    Ok(w)
}

/// `Dirichlet(alpha * base)` via normalized gammas; `None` if every gamma
/// underflows.
fn dirichlet<R: Rng + ?Sized>(alpha: f64, base: &[f64], rng: &mut R) -> Option<Vec<f64>> {
    let mut g: Vec<f64> = base
        .iter()
        .map(|&b| {
            let shape = alpha * b;
            if shape > 0.0 {
                Gamma::new(shape, 1.0).map_or(0.0, |d| d.sample(rng))
            } else {
                0.0
            }
        })
        .collect();
    let s: f64 = g.iter().sum();
    if !(s > 0.0) || !s.is_finite() {
        return None;
    }
    g.iter_mut().for_each(|x| *x /= s);
    // renormalize once more so the sum is one to rounding
    let s2: f64 = g.iter().sum();
    g.iter_mut().for_each(|x| *x /= s2);
    Some(g)
}

/// Framework 2: data drawn from a truncated nested HDP.
///
/// Groups are assigned to low-resolution clusters by stick-breaking with
/// `alpha2`; each occupied cluster gets a distribution over `n` shared atoms
/// (`n` = total customers) from `Dirichlet(alpha1 * beta)`, with `beta` from
/// stick-breaking with `alpha0`, redrawn until its total variation distance
/// to every earlier cluster exceeds `epsilon`. Occupied atoms get evenly
/// spaced means `kappa * 0.5` apart, centered at 0.
pub fn gen_framework2(
    n_groups: usize,
    per_group: usize,
    alphas: (f64, f64, f64),
    kappa: f64,
    epsilon: f64,
    seed: u64,
) -> Result<SynthTruth> {
    check_sizes(n_groups, per_group)?;
    let (alpha0, alpha1, alpha2) = alphas;
    if [alpha0, alpha1, alpha2].iter().any(|a| !(a.is_finite() && *a > 0.0)) {
        return Err(Error::Synth("concentrations must be positive".into()));
    }
    if !(kappa.is_finite() && kappa > 0.0) {
        return Err(Error::Synth(format!("kappa must be positive, got {kappa}")));
    }
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::Synth(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    let n = n_groups * per_group;
    let mut g_rng = stream(seed, STREAM_GROUPS);
    let cluster_w = stick_breaking(alpha2, n_groups, &mut g_rng)?;
    let z: Vec<usize> = (0..n_groups).map(|_| draw_categorical(&cluster_w, &mut g_rng)).collect();
    let beta = stick_breaking(alpha0, n, &mut g_rng)?;

    let mut occupied: Vec<usize> = z.clone();
    occupied.sort_unstable();
    occupied.dedup();
    let mut dists: Vec<Vec<f64>> = Vec::with_capacity(occupied.len());
    let mut attempts = 0;
    while dists.len() < occupied.len() {
        attempts += 1;
        if attempts > MAX_REJECTION_ATTEMPTS {
            return Err(Error::Synth(format!(
                "no {} cluster distributions with pairwise TV > {epsilon} after {MAX_REJECTION_ATTEMPTS} draws",
                occupied.len()
            )));
        }
        let Some(cand) = dirichlet(alpha1, &beta, &mut g_rng) else {
            continue;
        };
        let mut ok = true;
        for d in &dists {
            if tv_distance(&cand, d)? <= epsilon {
                ok = false;
                break;
            }
        }
        if ok {
            dists.push(cand);
        }
    }
    let dist_of = |cluster: usize| &dists[occupied.binary_search(&cluster).expect("occupied")];

    let mut c_rng = stream(seed, STREAM_CUSTOMERS);
    let mut atom = Vec::with_capacity(n);
    for &c in &z {
        for _ in 0..per_group {
            atom.push(draw_categorical(dist_of(c), &mut c_rng));
        }
    }
    let mut used: Vec<usize> = atom.clone();
    used.sort_unstable();
    used.dedup();
    let k = used.len() as f64;
    let spacing = kappa * SYNTH_SD;
    let mean_of = |a: usize| {
        let i = used.binary_search(&a).expect("used atom") as f64;
        (i - (k - 1.0) / 2.0) * spacing
    };
    let true_theta: Vec<f64> = atom.iter().map(|&a| mean_of(a)).collect();
    let true_phi = z
        .iter()
        .map(|&c| {
            let d = dist_of(c);
            let mass: f64 = used.iter().map(|&a| d[a]).sum();
            if mass > 0.0 {
                used.iter().map(|&a| d[a] * mean_of(a)).sum::<f64>() / mass
            } else {
                0.0
            }
        })
        .collect();
    let dataset = TwoLevelDataset::from_groups(&noisy(&true_theta, per_group, &mut c_rng))?;
    let holdout = TwoLevelDataset::from_groups(&noisy(
        &true_theta,
        per_group,
        &mut stream(seed, STREAM_HOLDOUT),
    ))?;
    Ok(SynthTruth {
        dataset,
        true_pair: PartitionPair {
            gamma_l: canonical_labels(&z),
            gamma_h: canonical_labels(&atom),
        },
        true_theta,
        true_phi,
        holdout: Some(holdout),
        params: SynthParams::Nested {
            n_groups,
            per_group,
            alpha0,
            alpha1,
            alpha2,
            kappa,
            epsilon,
            seed,
        },
    })
}
