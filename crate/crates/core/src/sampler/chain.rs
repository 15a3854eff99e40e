//! Sweep scheduling, parallel tempering and draw collection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::franchise::Franchise;
use super::{step, Ctx, Kernel};
use crate::data::TwoLevelDataset;
use crate::error::{Error, Result};
use crate::model::{alpha_step, draw_inv_gamma, sigma2_posterior, Concentration, Hyperparams};
use crate::state::{canonical_labels, CrfState, PartitionPair};

/// Kernel invocations per sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveCounts {
    pub restaurant: usize,
    pub table: usize,
    pub dish: usize,
}

impl MoveCounts {
    /// One restaurant move per group, one table move per two customers and
    /// ten dish moves.
    pub fn for_data(data: &TwoLevelDataset) -> Self {
        MoveCounts {
            restaurant: data.n_groups(),
            table: data.n_customers().div_ceil(2),
            dish: 10,
        }
    }

    fn get(&self, k: Kernel) -> usize {
        match k {
            Kernel::Restaurant => self.restaurant,
            Kernel::Table => self.table,
            Kernel::Dish => self.dish,
        }
    }
}

/// Geometric temperature ladder; the likelihood on rung `i` is raised to
/// `1 / T_i`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tempering {
    pub n_rungs: usize,
    pub max_temp: f64,
}

impl Default for Tempering {
    fn default() -> Self {
        Tempering {
            n_rungs: 4,
            max_temp: 4.0,
        }
    }
}

impl Tempering {
    /// Temperatures from hottest to coldest, ending at 1.
    pub fn temperatures(&self) -> Vec<f64> {
        if self.n_rungs <= 1 {
            return vec![1.0];
        }
        let last = (self.n_rungs - 1) as f64;
        (0..self.n_rungs)
            .map(|i| self.max_temp.powf((last - i as f64) / last))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub n_chains: usize,
    pub tempering: Option<Tempering>,
    pub seed: u64,
    /// `None` uses [`MoveCounts::for_data`].
    pub moves: Option<MoveCounts>,
    /// Drop the likelihood entirely and sample the prior.
    pub prior_only: bool,
    /// Keep sigma2 at its initial value.
    pub fix_sigma2: bool,
}

impl Default for ChainConfig {
    fn default() -> Self {
        ChainConfig {
            n_iter: 2000,
            burn_in: 500,
            thin: 1,
            n_chains: 1,
            tempering: None,
            seed: 0,
            moves: None,
            prior_only: false,
            fix_sigma2: false,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::ChainConfig(m));
        if self.burn_in >= self.n_iter {
            return fail(format!(
                "burn_in ({}) must be below n_iter ({})",
                self.burn_in, self.n_iter
            ));
        }
        if self.thin == 0 {
            return fail("thin must be at least 1".into());
        }
        if self.n_chains == 0 {
            return fail("n_chains must be at least 1".into());
        }
        if let Some(t) = &self.tempering {
            if t.n_rungs == 0 {
                return fail("tempering needs at least one rung".into());
            }
            if t.n_rungs > 1 && !(t.max_temp.is_finite() && t.max_temp > 1.0) {
                return fail(format!("max_temp must exceed 1, got {}", t.max_temp));
            }
        }
        Ok(())
    }

    pub fn draws_per_chain(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }

    fn temperatures(&self) -> Vec<f64> {
        self.tempering.map_or_else(|| vec![1.0], |t| t.temperatures())
    }
}

/// Proposal and acceptance counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub proposed: u64,
    pub accepted: u64,
}

impl Tally {
    fn add(&mut self, accepted: bool) {
        self.proposed += 1;
        self.accepted += u64::from(accepted);
    }

    fn absorb(&mut self, other: &Tally) {
        self.proposed += other.proposed;
        self.accepted += other.accepted;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

/// Acceptance counts of the cold chain(s).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AcceptanceStats {
    pub table: Tally,
    pub dish: Tally,
    pub restaurant: Tally,
    pub alpha: Tally,
    pub swap: Tally,
}

impl AcceptanceStats {
    pub fn kernel(&self, k: Kernel) -> &Tally {
        match k {
            Kernel::Table => &self.table,
            Kernel::Dish => &self.dish,
            Kernel::Restaurant => &self.restaurant,
        }
    }

    fn kernel_mut(&mut self, k: Kernel) -> &mut Tally {
        match k {
            Kernel::Table => &mut self.table,
            Kernel::Dish => &mut self.dish,
            Kernel::Restaurant => &mut self.restaurant,
        }
    }

    fn absorb(&mut self, o: &AcceptanceStats) {
        self.table.absorb(&o.table);
        self.dish.absorb(&o.dish);
        self.restaurant.absorb(&o.restaurant);
        self.alpha.absorb(&o.alpha);
        self.swap.absorb(&o.swap);
    }
}

/// One retained draw of the cold chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub chain: usize,
    /// 1-based sweep number.
    pub iteration: usize,
    pub pair: PartitionPair,
    pub sigma2: f64,
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub log_posterior: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSamples {
    /// Retained draws, chain by chain in sweep order.
    pub draws: Vec<Draw>,
    pub acceptance: AcceptanceStats,
    /// Cold-chain log posterior after every sweep, one vector per chain.
    pub trace: Vec<Vec<f64>>,
    pub moves: MoveCounts,
    pub temperatures: Vec<f64>,
    pub n_chains: usize,
}

impl PosteriorSamples {
    /// Samples carrying only partitions, as one chain; the other draw
    /// fields are zero.
    pub fn from_pairs(pairs: impl IntoIterator<Item = PartitionPair>) -> Self {
        let draws = pairs
            .into_iter()
            .enumerate()
            .map(|(i, pair)| Draw {
                chain: 0,
                iteration: i + 1,
                pair,
                sigma2: 0.0,
                alpha0: 0.0,
                alpha1: 0.0,
                alpha2: 0.0,
                log_posterior: 0.0,
            })
            .collect();
        PosteriorSamples {
            draws,
            acceptance: AcceptanceStats::default(),
            trace: Vec::new(),
            moves: MoveCounts {
                restaurant: 0,
                table: 0,
                dish: 0,
            },
            temperatures: vec![1.0],
            n_chains: 1,
        }
    }

    pub fn partitions(&self) -> impl Iterator<Item = &PartitionPair> {
        self.draws.iter().map(|d| &d.pair)
    }
}

/// A state at a given temperature, as exchanged by [`tempered_swap`].
#[derive(Debug, Clone, PartialEq)]
pub struct TemperedChain {
    pub state: CrfState,
    pub hp: Hyperparams,
    pub temperature: f64,
    /// Untempered collapsed log likelihood of `state`.
    pub log_likelihood: f64,
}

/// Pick a random adjacent pair and the outcome of a swap between them.
fn propose_swap<R: Rng + ?Sized>(temps: &[f64], log_lik: &[f64], rng: &mut R) -> Option<(usize, bool)> {
    if temps.len() < 2 {
        return None;
    }
    let i = rng.random_range(0..temps.len() - 1);
    let log_a = (1.0 / temps[i] - 1.0 / temps[i + 1]) * (log_lik[i + 1] - log_lik[i]);
    let accepted = log_a >= 0.0 || rng.random::<f64>().ln() < log_a;
    Some((i, accepted))
}

/// One swap attempt between a random adjacent pair of rungs. States,
/// hyperparameters and log likelihoods move; temperatures stay in place.
/// Returns the lower index of the pair and whether the swap happened.
pub fn tempered_swap<R: Rng + ?Sized>(
    chains: &mut [TemperedChain],
    rng: &mut R,
) -> Option<(usize, bool)> {
    let temps: Vec<f64> = chains.iter().map(|c| c.temperature).collect();
    let ll: Vec<f64> = chains.iter().map(|c| c.log_likelihood).collect();
    let (i, acc) = propose_swap(&temps, &ll, rng)?;
    if acc {
        let (a, b) = chains.split_at_mut(i + 1);
        std::mem::swap(&mut a[i].state, &mut b[0].state);
        std::mem::swap(&mut a[i].hp, &mut b[0].hp);
        std::mem::swap(&mut a[i].log_likelihood, &mut b[0].log_likelihood);
    }
    Some((i, acc))
}

struct Rung<'d> {
    fr: Franchise<'d>,
    hp: Hyperparams,
    lik_weight: f64,
}

fn log_posterior(fr: &Franchise<'_>, hp: &Hyperparams, prior_only: bool) -> f64 {
    let blocks = fr.prior_blocks();
    let mut lp = blocks.log_prior(hp.alpha0, hp.alpha1, hp.alpha2) + hp.sigma2_prior.ln_pdf(hp.sigma2);
    if !prior_only {
        lp += fr.log_likelihood(hp.sigma2, hp.k0);
    }
    if let Some(p) = &hp.alpha_prior {
        for w in Concentration::ALL {
            lp += p.get(w).ln_density(hp.alpha(w));
        }
    }
    lp
}

fn sweep<R: Rng + ?Sized>(
    rung: &mut Rung<'_>,
    moves: &MoveCounts,
    cfg: &ChainConfig,
    tally: &mut AcceptanceStats,
    rng: &mut R,
) -> Result<()> {
    let ctx = Ctx::new(&rung.hp, rung.lik_weight);
    for kernel in [Kernel::Restaurant, Kernel::Table, Kernel::Dish] {
        for _ in 0..moves.get(kernel) {
            let out = step(kernel, &mut rung.fr, &ctx, rng, None);
            tally.kernel_mut(kernel).add(out.accepted);
        }
    }
    rung.fr.refresh_stats();
    if !cfg.fix_sigma2 {
        let stats = rung.fr.dish_stats();
        if let Some(bad) = stats.iter().find(|s| !s.is_finite()) {
            return Err(Error::NonFiniteStats {
                n: bad.n,
                sum: bad.sum,
                sumsq: bad.sumsq,
            });
        }
        let (shape, scale) = sigma2_posterior(&stats, &rung.hp.sigma2_prior, rung.hp.k0, rung.lik_weight);
        rung.hp.sigma2 = draw_inv_gamma(shape, scale, rng);
    }
    if let Some(priors) = rung.hp.alpha_prior {
        let blocks = rung.fr.prior_blocks();
        for which in Concentration::ALL {
            let (v, acc) = alpha_step(which, rung.hp.alpha(which), &priors.get(which), &blocks, rng);
            rung.hp.set_alpha(which, v);
            tally.alpha.add(acc);
        }
    }
    Ok(())
}

fn partition_pair(fr: &Franchise<'_>) -> PartitionPair {
    let dishes: Vec<usize> = fr.cust_table.iter().map(|&t| fr.tables[t].dish).collect();
    PartitionPair {
        gamma_l: canonical_labels(&fr.group_rest),
        gamma_h: canonical_labels(&dishes),
    }
}

struct ChainOutput {
    draws: Vec<Draw>,
    trace: Vec<f64>,
    tally: AcceptanceStats,
}

fn single_chain(
    data: &TwoLevelDataset,
    hp: &Hyperparams,
    cfg: &ChainConfig,
    moves: &MoveCounts,
    init: &CrfState,
    chain: usize,
    seed: u64,
) -> Result<ChainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let temps = cfg.temperatures();
    let mut rungs: Vec<Rung<'_>> = temps
        .iter()
        .map(|&t| {
            Ok(Rung {
                fr: Franchise::from_state(data, init)?,
                hp: hp.clone(),
                lik_weight: if cfg.prior_only { 0.0 } else { 1.0 / t },
            })
        })
        .collect::<Result<_>>()?;
    let cold = rungs.len() - 1;
    let mut tally = AcceptanceStats::default();
    let mut scratch = AcceptanceStats::default();
    let mut draws = Vec::with_capacity(cfg.draws_per_chain());
    let mut trace = Vec::with_capacity(cfg.n_iter);
    for it in 0..cfg.n_iter {
        for (r, rung) in rungs.iter_mut().enumerate() {
            let t = if r == cold { &mut tally } else { &mut scratch };
            sweep(rung, moves, cfg, t, &mut rng)?;
        }
        if rungs.len() > 1 && !cfg.prior_only {
            let ll: Vec<f64> = rungs
                .iter()
                .map(|r| r.fr.log_likelihood(r.hp.sigma2, r.hp.k0))
                .collect();
            if let Some((i, acc)) = propose_swap(&temps, &ll, &mut rng) {
                tally.swap.add(acc);
                if acc {
                    let (a, b) = rungs.split_at_mut(i + 1);
                    std::mem::swap(&mut a[i].fr, &mut b[0].fr);
                    std::mem::swap(&mut a[i].hp, &mut b[0].hp);
                }
            }
        }
        let c = &rungs[cold];
        let lp = log_posterior(&c.fr, &c.hp, cfg.prior_only);
        trace.push(lp);
        if it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == cfg.thin - 1 {
            draws.push(Draw {
                chain,
                iteration: it + 1,
                pair: partition_pair(&c.fr),
                sigma2: c.hp.sigma2,
                alpha0: c.hp.alpha0,
                alpha1: c.hp.alpha1,
                alpha2: c.hp.alpha2,
                log_posterior: lp,
            });
        }
        if (it + 1) % 1000 == 0 {
            log::debug!(
                "chain {chain}: sweep {}/{} log posterior {lp:.3}, {} restaurants, {} dishes",
                it + 1,
                cfg.n_iter,
                c.fr.rest_ids.len(),
                c.fr.n_dishes()
            );
        }
    }
    Ok(ChainOutput { draws, trace, tally })
}

/// Run `cfg.n_chains` chains from the all-merged state.
///
/// Each chain gets its own generator seeded from `rng`, so the result is a
/// deterministic function of the incoming generator state even though
/// chains run in parallel.
pub fn run_chain<R: Rng + ?Sized>(
    data: &TwoLevelDataset,
    hp: &Hyperparams,
    cfg: &ChainConfig,
    rng: &mut R,
) -> Result<PosteriorSamples> {
    run_chain_from(data, hp, cfg, &CrfState::for_dataset_merged(data), rng)
}

/// [`run_chain`] with a generator seeded from `cfg.seed`.
pub fn sample_posterior(data: &TwoLevelDataset, hp: &Hyperparams, cfg: &ChainConfig) -> Result<PosteriorSamples> {
    run_chain(data, hp, cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

/// As [`run_chain`], starting every chain from `init`.
pub fn run_chain_from<R: Rng + ?Sized>(
    data: &TwoLevelDataset,
    hp: &Hyperparams,
    cfg: &ChainConfig,
    init: &CrfState,
    rng: &mut R,
) -> Result<PosteriorSamples> {
    cfg.validate()?;
    hp.validate()?;
    if let Err(v) = crate::state::validate(init, data) {
        return Err(Error::InvalidState(v.iter().map(|x| x.to_string()).collect()));
    }
    let moves = cfg.moves.unwrap_or_else(|| MoveCounts::for_data(data));
    let seeds: Vec<u64> = (0..cfg.n_chains).map(|_| rng.random()).collect();
    let outputs: Vec<ChainOutput> = seeds
        .par_iter()
        .enumerate()
        .map(|(c, &seed)| single_chain(data, hp, cfg, &moves, init, c, seed))
        .collect::<Result<_>>()?;
    let mut acceptance = AcceptanceStats::default();
    let mut draws = Vec::new();
    let mut trace = Vec::new();
    for out in outputs {
        acceptance.absorb(&out.tally);
        draws.extend(out.draws);
        trace.push(out.trace);
    }
    Ok(PosteriorSamples {
        draws,
        acceptance,
        trace,
        moves,
        temperatures: cfg.temperatures(),
        n_chains: cfg.n_chains,
    })
}
