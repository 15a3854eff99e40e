//! Conjugate Normal-Normal marginals, Ewens-Pitman partition priors and the
//! parameter updates shared by every sampler move.
//!
//! Observations are `y ~ N(theta, sigma2)` with cluster means
//! `theta ~ N(0, sigma2 / k0)` integrated out. All probabilities are kept in
//! log space.

use std::sync::LazyLock;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::state::CrfState;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Step size of the log-scale random walk used for concentration updates.
pub const ALPHA_STEP: f64 = 0.2;

/// Inverse-gamma prior `Inv-Gamma(shape, scale)` on the within-cluster variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvGammaPrior {
    pub shape: f64,
    pub scale: f64,
}

impl InvGammaPrior {
    /// Moment-matched prior with the given mean and variance.
    pub fn from_moments(mean: f64, variance: f64) -> Result<Self> {
        if !(mean > 0.0 && variance > 0.0) {
            return Err(Error::Hyperparams(
                "inverse-gamma moments must be positive".into(),
            ));
        }
        let shape = mean * mean / variance + 2.0;
        Ok(InvGammaPrior {
            shape,
            scale: mean * (shape - 1.0),
        })
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.scale.ln() - ln_gamma(self.shape) - (self.shape + 1.0) * x.ln()
            - self.scale / x
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        draw_inv_gamma(self.shape, self.scale, rng)
    }
}

/// Normal prior truncated below at zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruncNormal {
    pub mean: f64,
    pub sd: f64,
}

impl TruncNormal {
    /// Unnormalized log density; `-inf` outside the support.
    pub fn ln_density(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        let z = (x - self.mean) / self.sd;
        -0.5 * z * z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaPriors {
    pub alpha0: TruncNormal,
    pub alpha1: TruncNormal,
    pub alpha2: TruncNormal,
}

impl AlphaPriors {
    pub fn all(prior: TruncNormal) -> Self {
        AlphaPriors {
            alpha0: prior,
            alpha1: prior,
            alpha2: prior,
        }
    }

    pub fn get(&self, which: Concentration) -> TruncNormal {
        match which {
            Concentration::Dish => self.alpha0,
            Concentration::Table => self.alpha1,
            Concentration::Restaurant => self.alpha2,
        }
    }
}

/// Which of the three concentration parameters a move targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Concentration {
    /// `alpha0`: partition of tables into dishes.
    Dish,
    /// `alpha1`: partition of customers into tables within a restaurant.
    Table,
    /// `alpha2`: partition of groups into restaurants.
    Restaurant,
}

impl Concentration {
    pub const ALL: [Concentration; 3] = [
        Concentration::Dish,
        Concentration::Table,
        Concentration::Restaurant,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// When present the concentrations are updated by Metropolis-Hastings.
    #[serde(default)]
    pub alpha_prior: Option<AlphaPriors>,
    pub sigma2: f64,
    pub sigma2_prior: InvGammaPrior,
    pub k0: f64,
}

impl Hyperparams {
    /// Settings used for the synthetic studies: fixed concentrations
    /// `(1, 0.5, 1)`, `Inv-Gamma(5, 1)` and `k0 = 1/100`.
    pub fn simulation_default() -> Self {
        Hyperparams {
            alpha0: 1.0,
            alpha1: 0.5,
            alpha2: 1.0,
            alpha_prior: None,
            sigma2: 0.25,
            sigma2_prior: InvGammaPrior {
                shape: 5.0,
                scale: 1.0,
            },
            k0: 0.01,
        }
    }

    /// Settings for standardized real data: sigma2 prior with mean 0.25 and
    /// variance 0.1, `k0 = 1/10`, truncated-normal(2, 1) concentration priors.
    pub fn real_data_default() -> Self {
        Hyperparams {
            alpha0: 2.0,
            alpha1: 2.0,
            alpha2: 2.0,
            alpha_prior: Some(AlphaPriors::all(TruncNormal {
                mean: 2.0,
                sd: 1.0,
            })),
            sigma2: 0.25,
            sigma2_prior: InvGammaPrior {
                shape: 2.625,
                scale: 0.40625,
            },
            k0: 0.1,
        }
    }

    pub fn alpha(&self, which: Concentration) -> f64 {
        match which {
            Concentration::Dish => self.alpha0,
            Concentration::Table => self.alpha1,
            Concentration::Restaurant => self.alpha2,
        }
    }

    pub fn set_alpha(&mut self, which: Concentration, value: f64) {
        match which {
            Concentration::Dish => self.alpha0 = value,
            Concentration::Table => self.alpha1 = value,
            Concentration::Restaurant => self.alpha2 = value,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha0", self.alpha0),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("sigma2", self.sigma2),
            ("k0", self.k0),
            ("beta0", self.sigma2_prior.shape),
            ("beta1", self.sigma2_prior.scale),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Hyperparams(format!(
                    "{name} must be finite and positive, got {v}"
                )));
            }
        }
        if let Some(p) = &self.alpha_prior {
            for which in Concentration::ALL {
                let tn = p.get(which);
                if !(tn.sd.is_finite() && tn.sd > 0.0 && tn.mean.is_finite()) {
                    return Err(Error::Hyperparams(format!(
                        "truncated-normal prior for {which:?} needs finite mean and sd > 0"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sufficient statistics of a cluster of scalar observations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub n: usize,
    pub sum: f64,
    pub sumsq: f64,
}

impl ClusterStats {
    pub fn from_values<I: IntoIterator<Item = f64>>(values: I) -> Self {
        let mut s = ClusterStats::default();
        for y in values {
            s.push(y);
        }
        s
    }

    #[inline]
    pub fn push(&mut self, y: f64) {
        self.n += 1;
        self.sum += y;
        self.sumsq += y * y;
    }

    #[inline]
    pub fn pop(&mut self, y: f64) {
        debug_assert!(self.n > 0);
        self.n -= 1;
        if self.n == 0 {
            *self = ClusterStats::default();
        } else {
            self.sum -= y;
            self.sumsq -= y * y;
        }
    }

    #[inline]
    pub fn merged(&self, other: &ClusterStats) -> ClusterStats {
        ClusterStats {
            n: self.n + other.n,
            sum: self.sum + other.sum,
            sumsq: self.sumsq + other.sumsq,
        }
    }

    #[inline]
    pub fn without(&self, other: &ClusterStats) -> ClusterStats {
        debug_assert!(self.n >= other.n);
        if self.n == other.n {
            return ClusterStats::default();
        }
        ClusterStats {
            n: self.n - other.n,
            sum: self.sum - other.sum,
            sumsq: self.sumsq - other.sumsq,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.sum.is_finite() && self.sumsq.is_finite()
    }

    /// Residual sum of squares around the posterior cluster mean,
    /// `sumsq - sum^2 / (n + k0)`.
    #[inline]
    pub fn scatter(&self, k0: f64) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        self.sumsq - self.sum * self.sum / (self.n as f64 + k0)
    }

    /// Unchecked marginal log-likelihood; see [`log_marginal_cluster`].
    #[inline]
    pub fn log_marginal(&self, sigma2: f64, k0: f64) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        let n = self.n as f64;
        -0.5 * n * (LN_2PI + sigma2.ln())
            - 0.5 * ((n + k0) / k0).ln()
            - self.scatter(k0) / (2.0 * sigma2)
    }

    /// Log posterior-predictive density of `y` given the cluster.
    #[inline]
    pub fn log_predictive(&self, y: f64, sigma2: f64, k0: f64) -> f64 {
        let nk = self.n as f64 + k0;
        let mean = self.sum / nk;
        let var = sigma2 * (nk + 1.0) / nk;
        let d = y - mean;
        -0.5 * (LN_2PI + var.ln()) - d * d / (2.0 * var)
    }

    /// Posterior mean of the cluster parameter, `sum / (n + k0)`.
    pub fn posterior_mean(&self, k0: f64) -> f64 {
        self.sum / (self.n as f64 + k0)
    }
}

/// Log marginal likelihood of a cluster with the mean integrated out:
/// `log ∫ prod_i N(y_i; theta, sigma2) N(theta; 0, sigma2/k0) dtheta`.
/// An empty cluster contributes 0.
pub fn log_marginal_cluster(stats: &ClusterStats, sigma2: f64, k0: f64) -> Result<f64> {
    if !stats.is_finite() {
        return Err(Error::NonFiniteStats {
            n: stats.n,
            sum: stats.sum,
            sumsq: stats.sumsq,
        });
    }
    if !(sigma2 > 0.0 && k0 > 0.0) {
        return Err(Error::Hyperparams(format!(
            "sigma2 and k0 must be positive (sigma2={sigma2}, k0={k0})"
        )));
    }
    Ok(stats.log_marginal(sigma2, k0))
}

/// `log Gamma(a + n) - log Gamma(a)`, the log rising factorial.
#[inline]
pub fn ln_rising(a: f64, n: usize) -> f64 {
    if n <= 24 && a < 1e8 {
        (0..n).map(|i| a + i as f64).product::<f64>().ln()
    } else {
        ln_gamma(a + n as f64) - ln_gamma(a)
    }
}

/// `log Gamma(n)` for a positive count, tabulated for the common
/// cluster sizes.
#[inline]
pub fn ln_gamma_count(n: usize) -> f64 {
    static TABLE: LazyLock<Vec<f64>> = LazyLock::new(|| {
        std::iter::once(f64::INFINITY)
            .chain((1..4096).map(|n| ln_gamma(n as f64)))
            .collect()
    });
    match TABLE.get(n) {
        Some(&v) => v,
        None => ln_gamma(n as f64),
    }
}

/// Ewens-Pitman (CRP) log probability of a partition with the given block
/// sizes: `log[alpha^K prod Gamma(n_k) / prod_{i<n}(alpha + i)]`.
/// The empty partition has probability one.
pub fn log_crp_partition(cluster_sizes: &[usize], alpha: f64) -> f64 {
    if cluster_sizes.is_empty() {
        return 0.0;
    }
    debug_assert!(cluster_sizes.iter().all(|&n| n > 0));
    let n: usize = cluster_sizes.iter().sum();
    let k = cluster_sizes.len() as f64;
    let body: f64 = cluster_sizes.iter().map(|&s| ln_gamma_count(s)).sum();
    k * alpha.ln() + body - ln_rising(alpha, n)
}

/// Block sizes entering each Ewens-Pitman term of the franchise prior.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorBlocks {
    /// Group counts per restaurant.
    pub restaurants: Vec<usize>,
    /// Customer counts per table, one list per restaurant.
    pub tables: Vec<Vec<usize>>,
    /// Table counts per dish.
    pub dishes: Vec<usize>,
}

impl PriorBlocks {
    pub fn log_prior(&self, alpha0: f64, alpha1: f64, alpha2: f64) -> f64 {
        log_crp_partition(&self.restaurants, alpha2)
            + self
                .tables
                .iter()
                .map(|t| log_crp_partition(t, alpha1))
                .sum::<f64>()
            + log_crp_partition(&self.dishes, alpha0)
    }

    /// The Ewens-Pitman terms that depend on one concentration parameter.
    pub fn log_term(&self, which: Concentration, alpha: f64) -> f64 {
        match which {
            Concentration::Restaurant => log_crp_partition(&self.restaurants, alpha),
            Concentration::Table => self
                .tables
                .iter()
                .map(|t| log_crp_partition(t, alpha))
                .sum(),
            Concentration::Dish => log_crp_partition(&self.dishes, alpha),
        }
    }
}

/// `log p(r) + sum_s log p(t_s) + log p(k | t)`.
pub fn log_joint_prior(state: &CrfState, hp: &Hyperparams) -> Result<f64> {
    let blocks = state.prior_blocks()?;
    Ok(blocks.log_prior(hp.alpha0, hp.alpha1, hp.alpha2))
}

pub(crate) fn draw_inv_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> f64 {
    let g = Gamma::new(shape, 1.0 / scale).expect("positive inverse-gamma parameters");
    1.0 / g.sample(rng)
}

/// Posterior `Inv-Gamma` parameters for sigma2 given the dish clusters, with
/// the likelihood raised to `weight` (1 for the untempered posterior).
pub(crate) fn sigma2_posterior<'a, I>(
    dish_stats: I,
    prior: &InvGammaPrior,
    k0: f64,
    weight: f64,
) -> (f64, f64)
where
    I: IntoIterator<Item = &'a ClusterStats>,
{
    let mut n = 0usize;
    let mut q = 0.0;
    for s in dish_stats {
        n += s.n;
        q += s.scatter(k0);
    }
    (
        prior.shape + weight * n as f64 / 2.0,
        prior.scale + weight * q.max(0.0) / 2.0,
    )
}

/// Draw sigma2 from its full conditional
/// `Inv-Gamma(beta0 + n/2, beta1 + Q/2)`, `Q = sum_k [sumsq_k - sum_k^2/(n_k + k0)]`.
pub fn gibbs_sigma2_draw<R: Rng + ?Sized>(
    dish_stats: &[ClusterStats],
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<f64> {
    if let Some(bad) = dish_stats.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFiniteStats {
            n: bad.n,
            sum: bad.sum,
            sumsq: bad.sumsq,
        });
    }
    let (shape, scale) = sigma2_posterior(dish_stats, &hp.sigma2_prior, hp.k0, 1.0);
    Ok(draw_inv_gamma(shape, scale, rng))
}

/// Log acceptance ratio for moving a concentration from `current` to
/// `proposed` under a log-scale random walk, including the Jacobian.
pub fn log_alpha_acceptance(
    current: f64,
    proposed: f64,
    prior: &TruncNormal,
    log_crp_term: impl Fn(f64) -> f64,
) -> f64 {
    if proposed == current {
        return 0.0;
    }
    (prior.ln_density(proposed) + log_crp_term(proposed) + proposed.ln())
        - (prior.ln_density(current) + log_crp_term(current) + current.ln())
}

/// One random-walk step on `log alpha` for a single concentration, given the
/// block sizes of the current franchise. Returns the new value and whether
/// the proposal was accepted.
pub(crate) fn alpha_step<R: Rng + ?Sized>(
    which: Concentration,
    current: f64,
    prior: &TruncNormal,
    blocks: &PriorBlocks,
    rng: &mut R,
) -> (f64, bool) {
    let z: f64 = StandardNormal.sample(rng);
    let proposed = current * (ALPHA_STEP * z).exp();
    let log_a = log_alpha_acceptance(current, proposed, prior, |a| blocks.log_term(which, a));
    if log_a >= 0.0 || rng.random::<f64>().ln() < log_a {
        (proposed, true)
    } else {
        (current, false)
    }
}

/// One Metropolis-Hastings update of a concentration parameter.
///
/// Does nothing when `hp.alpha_prior` is absent.
pub fn mh_alpha_update<R: Rng + ?Sized>(
    which: Concentration,
    state: &CrfState,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<Hyperparams> {
    let Some(priors) = hp.alpha_prior else {
        return Ok(hp.clone());
    };
    let blocks = state.prior_blocks()?;
    let (value, _) = alpha_step(which, hp.alpha(which), &priors.get(which), &blocks, rng);
    let mut out = hp.clone();
    out.set_alpha(which, value);
    Ok(out)
}

/// Z-scores together with the transform needed to map back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardized {
    pub values: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
}

impl Standardized {
    pub fn to_original(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

/// Center to mean zero and scale to unit (sample) standard deviation.
pub fn standardize(values: &[f64]) -> Result<Standardized> {
    if values.len() < 2 {
        return Err(Error::Standardize(format!(
            "need at least 2 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Standardize("non-finite value".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    if !(sd > 0.0) || sd < 1e-12 * mean.abs().max(1.0) {
        return Err(Error::Standardize("values are constant (sd = 0)".into()));
    }
    Ok(Standardized {
        values: values.iter().map(|v| (v - mean) / sd).collect(),
        mean,
        sd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_cluster_marginal_is_zero() {
        let s = ClusterStats::default();
        assert_eq!(log_marginal_cluster(&s, 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn marginal_closed_forms() {
        let one = ClusterStats {
            n: 1,
            sum: 0.0,
            sumsq: 0.0,
        };
        assert_relative_eq!(
            log_marginal_cluster(&one, 1.0, 1.0).unwrap(),
            -0.5 * (4.0 * std::f64::consts::PI).ln(),
            epsilon = 1e-12
        );
        let two = ClusterStats {
            n: 2,
            sum: 0.0,
            sumsq: 2.0,
        };
        let expect = -(2.0 * std::f64::consts::PI).ln() - 0.5 * 3f64.ln() - 1.0;
        assert_relative_eq!(
            log_marginal_cluster(&two, 1.0, 1.0).unwrap(),
            expect,
            epsilon = 1e-12
        );
    }

    #[test]
    fn marginal_rejects_non_finite() {
        let s = ClusterStats {
            n: 1,
            sum: f64::NAN,
            sumsq: 1.0,
        };
        assert!(log_marginal_cluster(&s, 1.0, 1.0).is_err());
        assert!(log_marginal_cluster(&ClusterStats::default(), 0.0, 1.0).is_err());
    }

    #[test]
    fn predictive_is_marginal_difference() {
        let s = ClusterStats::from_values([0.3, -1.2, 2.0]);
        let y = 0.7;
        let mut t = s;
        t.push(y);
        assert_relative_eq!(
            s.log_predictive(y, 0.4, 0.1),
            t.log_marginal(0.4, 0.1) - s.log_marginal(0.4, 0.1),
            epsilon = 1e-12
        );
    }

    #[test]
    fn crp_examples() {
        assert_eq!(log_crp_partition(&[], 1.0), 0.0);
        assert_relative_eq!(log_crp_partition(&[1], 3.7), 0.0, epsilon = 1e-14);
        assert_relative_eq!(log_crp_partition(&[2], 1.0), 0.5f64.ln(), epsilon = 1e-14);
        // 1 * (2/3) * (2/4)
        assert_relative_eq!(
            log_crp_partition(&[1, 1, 1], 2.0),
            (1.0f64 / 3.0).ln(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn ln_gamma_table_matches_statrs() {
        for n in 1..20 {
            assert_relative_eq!(ln_gamma_count(n), ln_gamma(n as f64), epsilon = 1e-12);
        }
    }

    #[test]
    fn sigma2_prior_draw_without_data() {
        let hp = Hyperparams::simulation_default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| gibbs_sigma2_draw(&[], &hp, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        // Inv-Gamma(5, 1): mean 1/4, sd 1/(4 sqrt 3)
        let se = 0.25 / 3f64.sqrt() / (n as f64).sqrt();
        assert!((mean - 0.25).abs() < 4.0 * se, "mean {mean}");
    }

    #[test]
    fn sigma2_posterior_large_k0_limit() {
        let prior = InvGammaPrior {
            shape: 3.0,
            scale: 2.0,
        };
        let stats = [ClusterStats::from_values([1.0, -1.0])];
        let (a, b) = sigma2_posterior(&stats, &prior, 1e12, 1.0);
        assert_relative_eq!(a, 4.0);
        assert_relative_eq!(b, 3.0, epsilon = 1e-9);
    }

    #[test]
    fn inv_gamma_moments() {
        let p = InvGammaPrior::from_moments(0.25, 0.1).unwrap();
        assert_relative_eq!(p.shape, 2.625);
        assert_relative_eq!(p.scale, 0.40625);
    }

    #[test]
    fn alpha_acceptance_identity_is_one() {
        let prior = TruncNormal { mean: 2.0, sd: 1.0 };
        assert_eq!(log_alpha_acceptance(1.3, 1.3, &prior, |a| a * 10.0), 0.0);
    }

    #[test]
    fn alpha_update_stays_positive() {
        let mut hp = Hyperparams::real_data_default();
        hp.alpha2 = 1e-3;
        let state = CrfState::all_merged(&[0, 0, 1], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            hp = mh_alpha_update(Concentration::Restaurant, &state, &hp, &mut rng).unwrap();
            assert!(hp.alpha2 > 0.0);
        }
    }

    #[test]
    fn standardize_examples() {
        assert!(standardize(&[1.0, 1.0, 1.0]).is_err());
        let s = standardize(&[0.0, 2.0]).unwrap();
        assert_relative_eq!(s.values[0], -std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_relative_eq!(s.values[1], std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-12);
        assert_relative_eq!(s.mean, 1.0);
        assert_relative_eq!(s.sd, 2f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn standardize_unit_moments_and_inverse() {
        let raw = [3.0, 7.5, 1.25, 9.0, 4.4, 12.0];
        let s = standardize(&raw).unwrap();
        let n = raw.len() as f64;
        let m = s.values.iter().sum::<f64>() / n;
        let v = s.values.iter().map(|z| (z - m).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(m.abs() < 1e-12);
        assert!((v.sqrt() - 1.0).abs() < 1e-12);
        for (z, x) in s.values.iter().zip(raw) {
            assert!((s.to_original(*z) - x).abs() < 1e-9);
        }
    }
}
