//! Split-merge MCMC over franchise states.
//!
//! Three Metropolis–Hastings kernels act on a [`CrfState`]: table moves
//! re-seat customers within a restaurant, dish moves re-assign tables to
//! dishes, and restaurant moves re-partition groups while carrying the
//! customer→dish map along. [`run_chain`] composes them into sweeps with
//! Gibbs updates of σ², optional Metropolis updates of the concentrations
//! and optional parallel tempering.

mod chain;
mod dishes;
mod franchise;
mod restaurants;
mod tables;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::LazyLock;

pub use chain::{
    run_chain, run_chain_from, sample_posterior, tempered_swap, AcceptanceStats, ChainConfig, Draw, MoveCounts,
    PosteriorSamples, Tally, TemperedChain, Tempering,
};

use crate::data::TwoLevelDataset;
use crate::error::Result;
use crate::model::Hyperparams;
use crate::state::CrfState;
use franchise::Franchise;

/// The three split-merge kernels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Table,
    Dish,
    Restaurant,
}

impl Kernel {
    pub const ALL: [Kernel; 3] = [Kernel::Table, Kernel::Dish, Kernel::Restaurant];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProposalKind {
    Split,
    Merge,
}

/// Result of one kernel invocation. `kind` is `None` for degenerate picks,
/// which leave the state untouched and count as rejections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MoveOutcome {
    pub kind: Option<ProposalKind>,
    pub accepted: bool,
    pub log_ratio: f64,
}

impl MoveOutcome {
    fn new(kind: ProposalKind, accepted: bool, log_ratio: f64) -> Self {
        MoveOutcome {
            kind: Some(kind),
            accepted,
            log_ratio,
        }
    }

    fn degenerate() -> Self {
        MoveOutcome {
            kind: None,
            accepted: false,
            log_ratio: f64::NEG_INFINITY,
        }
    }
}

/// Everything needed to re-check one proposal after the fact.
///
/// `log_target_delta` is log π(proposed) − log π(before) under the tempered
/// target; the acceptance log ratio is
/// `log_target_delta + log_q_reverse − log_q_forward`.
#[derive(Debug, Clone)]
pub struct ProposalLog {
    pub kernel: Kernel,
    pub kind: ProposalKind,
    pub anchors: (usize, usize),
    pub before: CrfState,
    pub proposed: CrfState,
    pub log_target_delta: f64,
    pub log_q_forward: f64,
    pub log_q_reverse: f64,
    pub accepted: bool,
}

impl ProposalLog {
    pub fn log_ratio(&self) -> f64 {
        self.log_target_delta + self.log_q_reverse - self.log_q_forward
    }
}

/// Per-move constants.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Ctx {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub sigma2: f64,
    pub k0: f64,
    /// Power on the likelihood: 1 for the posterior, 0 for the prior,
    /// inverse temperature on a tempering rung.
    pub lik_weight: f64,
    pub launch_scans: usize,
    pub merge_prob: f64,
    /// Seed for the launch-state generator; drawn from the chain when `None`.
    pub launch_seed: Option<u64>,
}

pub(crate) const LAUNCH_SCANS: usize = 5;
pub(crate) const MERGE_PROB: f64 = 0.5;

impl Ctx {
    pub fn new(hp: &Hyperparams, lik_weight: f64) -> Self {
        Ctx {
            alpha0: hp.alpha0,
            alpha1: hp.alpha1,
            alpha2: hp.alpha2,
            sigma2: hp.sigma2,
            k0: hp.k0,
            lik_weight,
            launch_scans: LAUNCH_SCANS,
            merge_prob: MERGE_PROB,
            launch_seed: None,
        }
    }
}

/// Generator for the random part of a launch state. The main stream is
/// always advanced by one draw so pinning the seed does not shift it.
fn launch_rng<R: Rng + ?Sized>(ctx: &Ctx, rng: &mut R) -> ChaCha8Rng {
    let seed: u64 = rng.random();
    ChaCha8Rng::seed_from_u64(ctx.launch_seed.unwrap_or(seed))
}

/// Sum of log probabilities, held as a product while it stays in range.
pub(crate) struct LogProb {
    prod: f64,
    log: f64,
}

impl LogProb {
    pub(crate) fn new() -> Self {
        LogProb { prod: 1.0, log: 0.0 }
    }

    pub(crate) fn value(&self) -> f64 {
        self.log + self.prod.ln()
    }
}

/// Two-way Gibbs choice with log odds `d` of side 1, forced to `target` when
/// given; the log probability of the outcome is added to `acc`.
#[inline]
fn draw_side<R: Rng + ?Sized>(d: f64, target: Option<u8>, rng: &mut R, acc: &mut LogProb) -> u8 {
    let a = d.abs();
    let e = (-a).exp();
    let big = 1.0 / (1.0 + e);
    let p0 = if d >= 0.0 { e * big } else { big };
    let side = target.unwrap_or_else(|| {
        let u: f64 = rng.random();
        u8::from(u >= p0)
    });
    if (side == 1) == (d >= 0.0) {
        acc.prod *= big;
        if acc.prod < 1e-250 {
            acc.log += acc.prod.ln();
            acc.prod = 1.0;
        }
    } else {
        acc.log += -a - e.ln_1p();
    }
    side
}

/// Logistic quantiles at the midpoints of 1024 equal bins. Launch scans draw
/// their thresholds from here; they need not be exact, only reproducible.
static LAUNCH_THRESHOLDS: LazyLock<[f64; 1024]> = LazyLock::new(|| {
    std::array::from_fn(|i| {
        let u = (i as f64 + 0.5) / 1024.0;
        ((1.0 - u) / u).ln()
    })
});

/// Ten-bit draws from one `u64`, six at a time.
struct LaunchBits {
    table: &'static [f64; 1024],
    bits: u64,
    left: u32,
}

impl LaunchBits {
    fn new() -> Self {
        LaunchBits {
            table: &LAUNCH_THRESHOLDS,
            bits: 0,
            left: 0,
        }
    }

    #[inline]
    fn threshold<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        if self.left == 0 {
            self.bits = rng.random();
            self.left = 6;
        }
        let t = self.table[(self.bits & 1023) as usize];
        self.bits >>= 10;
        self.left -= 1;
        t
    }
}

fn accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() {
        return false;
    }
    log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio
}

#[allow(clippy::too_many_arguments)]
fn record<'d, F: Fn(&mut Franchise<'d>)>(
    log: Option<&mut Vec<ProposalLog>>,
    fr: &Franchise<'d>,
    kernel: Kernel,
    kind: ProposalKind,
    anchors: (usize, usize),
    log_target_delta: f64,
    log_q_forward: f64,
    log_q_reverse: f64,
    accepted: bool,
    apply: &F,
) {
    if let Some(log) = log {
        let mut copy = fr.clone();
        apply(&mut copy);
        log.push(ProposalLog {
            kernel,
            kind,
            anchors,
            before: fr.to_state(),
            proposed: copy.to_state(),
            log_target_delta,
            log_q_forward,
            log_q_reverse,
            accepted,
        });
    }
}

fn step<R: Rng + ?Sized>(
    kernel: Kernel,
    fr: &mut Franchise<'_>,
    ctx: &Ctx,
    rng: &mut R,
    log: Option<&mut Vec<ProposalLog>>,
) -> MoveOutcome {
    match kernel {
        Kernel::Table => tables::table_move(fr, ctx, rng, log),
        Kernel::Dish => dishes::dish_move(fr, ctx, rng, log),
        Kernel::Restaurant => restaurants::restaurant_move(fr, ctx, rng, log),
    }
}

/// Apply one move of `kernel` to `state` under the full posterior
/// (`lik_weight = 1`) or a tempered / prior-only target.
///
/// When `log` is given, the proposal is appended whether or not it was
/// accepted; degenerate picks are not logged.
pub fn kernel_move<R: Rng + ?Sized>(
    kernel: Kernel,
    state: &CrfState,
    data: &TwoLevelDataset,
    hp: &Hyperparams,
    lik_weight: f64,
    rng: &mut R,
    log: Option<&mut Vec<ProposalLog>>,
) -> Result<(CrfState, MoveOutcome)> {
    hp.validate()?;
    let mut fr = Franchise::from_state(data, state)?;
    let out = step(kernel, &mut fr, &Ctx::new(hp, lik_weight), rng, log);
    let next = if out.accepted {
        fr.to_state()
    } else {
        state.clone()
    };
    Ok((next, out))
}

/// One table split-merge move targeting the posterior.
pub fn sm_tables_move<R: Rng + ?Sized>(
    state: &CrfState,
    data: &TwoLevelDataset,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<(CrfState, bool)> {
    kernel_move(Kernel::Table, state, data, hp, 1.0, rng, None).map(|(s, o)| (s, o.accepted))
}

/// One dish split-merge move targeting the posterior.
pub fn sm_dishes_move<R: Rng + ?Sized>(
    state: &CrfState,
    data: &TwoLevelDataset,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<(CrfState, bool)> {
    kernel_move(Kernel::Dish, state, data, hp, 1.0, rng, None).map(|(s, o)| (s, o.accepted))
}

/// One restaurant split-merge move targeting the posterior.
pub fn sm_restaurants_move<R: Rng + ?Sized>(
    state: &CrfState,
    data: &TwoLevelDataset,
    hp: &Hyperparams,
    rng: &mut R,
) -> Result<(CrfState, bool)> {
    kernel_move(Kernel::Restaurant, state, data, hp, 1.0, rng, None).map(|(s, o)| (s, o.accepted))
}

/// Unnormalized log target of a state: joint partition prior plus
/// `lik_weight` times the collapsed log likelihood.
pub fn log_target(
    state: &CrfState,
    data: &TwoLevelDataset,
    hp: &Hyperparams,
    lik_weight: f64,
) -> Result<f64> {
    let fr = Franchise::from_state(data, state)?;
    let mut lp = fr.log_prior(hp);
    if lik_weight > 0.0 {
        lp += lik_weight * fr.log_likelihood(hp.sigma2, hp.k0);
    }
    Ok(lp)
}
