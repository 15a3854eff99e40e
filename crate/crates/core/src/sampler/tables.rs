//! Split-merge over the seating of customers at tables within a restaurant.
//!
//! A split also draws the dish of the new table uniformly among the existing
//! dishes and one new dish, so it can move customers between dishes.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::franchise::{merge_ascending, Franchise, PredCache};
use super::{Ctx, Kernel, MoveOutcome, ProposalKind, ProposalLog};
use crate::model::{ln_gamma_count, ClusterStats};

/// Restricted Gibbs bookkeeping for two candidate tables.
struct TwoTables<'a> {
    values: &'a [f64],
    ctx: &'a Ctx,
    pred: &'a PredCache,
    same_dish: bool,
    base: [ClusterStats; 2],
    size: [usize; 2],
    /// Count and sum of each candidate dish, `base + side`.
    dish_n: [usize; 2],
    dish_sum: [f64; 2],
}

impl<'a> TwoTables<'a> {
    fn new(
        values: &'a [f64],
        ctx: &'a Ctx,
        pred: &'a PredCache,
        same_dish: bool,
        base: [ClusterStats; 2],
        anchors: [usize; 2],
    ) -> Self {
        let mut tt = TwoTables {
            values,
            ctx,
            pred,
            same_dish,
            base,
            size: [0; 2],
            dish_n: [base[0].n, base[1].n],
            dish_sum: [base[0].sum, base[1].sum],
        };
        tt.add(anchors[0], 0);
        tt.add(anchors[1], 1);
        tt
    }

    #[inline]
    fn add(&mut self, c: usize, k: usize) {
        let y = self.values[c];
        self.size[k] += 1;
        self.dish_n[k] += 1;
        self.dish_sum[k] += y;
    }

    #[inline]
    fn remove(&mut self, c: usize, k: usize) {
        let y = self.values[c];
        self.size[k] -= 1;
        self.dish_n[k] -= 1;
        self.dish_sum[k] -= y;
    }

    /// Log odds of side 1 against side 0 for a customer with value `y`
    /// currently on neither side.
    #[inline]
    fn log_odds(&self, y: f64) -> f64 {
        let rows = &self.pred.rows;
        let mut d = rows[self.size[1]].ln_n - rows[self.size[0]].ln_n;
        if !self.same_dish && self.ctx.lik_weight > 0.0 {
            let (r0, r1) = (rows[self.dish_n[0]], rows[self.dish_n[1]]);
            let e0 = y - self.dish_sum[0] * r0.inv_nk;
            let e1 = y - self.dish_sum[1] * r1.inv_nk;
            let ll = r0.half_ln_var - r1.half_ln_var + e0 * e0 * r0.inv_two_var - e1 * e1 * r1.inv_two_var;
            d += self.ctx.lik_weight * ll;
        }
        d
    }

    /// One Gibbs update of customer `c`, forced to `target` when given.
    #[inline]
    fn update<R: Rng + ?Sized>(
        &mut self,
        c: usize,
        side: &mut u8,
        target: Option<u8>,
        rng: &mut R,
        lq: &mut super::LogProb,
    ) {
        self.remove(c, *side as usize);
        let d = self.log_odds(self.values[c]);
        *side = super::draw_side(d, target, rng, lq);
        self.add(c, *side as usize);
    }
}

#[derive(Clone, Copy)]
struct LaunchRow {
    c: f64,
    q: f64,
    inv_nk: f64,
}

/// Launch scans over `ys`, tracking side 1 as scalars and deriving side 0
/// from the totals. Customers go in pairs: the second one's log odds are
/// computed for both outcomes of the first, which takes one odds evaluation
/// off the serial path per pair without changing any decision.
fn launch_scans<R: Rng + ?Sized>(tt: &mut TwoTables<'_>, ys: &[f64], sides: &mut [u8], launch: &mut R) {
    let rows = &tt.pred.rows[..];
    let w = if tt.same_dish { 0.0 } else { tt.ctx.lik_weight };
    let n_tot = tt.size[0] + tt.size[1];
    let sum_tot = tt.dish_sum[0] + tt.dish_sum[1];
    let b0 = tt.dish_n[0] - tt.size[0];
    let b1 = tt.dish_n[1] - tt.size[1];
    // per side and count, the seating weight net of the variance term, the
    // weighted precision and the shrinkage of the mean
    let side = |b: usize| -> Vec<LaunchRow> {
        (0..n_tot)
            .map(|s| {
                let r = rows[b + s];
                LaunchRow {
                    c: rows[s].ln_n - w * r.half_ln_var,
                    q: w * r.inv_two_var,
                    inv_nk: r.inv_nk,
                }
            })
            .collect()
    };
    let (side0, side1) = (side(b0), side(b1));
    // log odds of side 1 for value `y` when side 1 holds `s1r` customers
    // summing to `sum1r`, not counting this one
    let odds = |s1r: usize, sum1r: f64, y: f64| {
        let (r0, r1) = (side0[n_tot - 1 - s1r], side1[s1r]);
        let e0 = y - (sum_tot - y - sum1r) * r0.inv_nk;
        let e1 = y - sum1r * r1.inv_nk;
        (r1.c - r0.c) + (e0 * e0 * r0.q - e1 * e1 * r1.q)
    };
    let (mut s1, mut sum1) = (tt.size[1], tt.dish_sum[1]);
    let mut bits = super::LaunchBits::new();
    let pairs = ys.len() / 2;
    for _ in 0..tt.ctx.launch_scans {
        for i in 0..pairs {
            let (j, k) = (2 * i, 2 * i + 1);
            let (ya, yb) = (ys[j], ys[k]);
            let (old_a, old_b) = (sides[j] == 1, sides[k] == 1);
            let s1r = s1 - usize::from(old_a);
            let sum1r = if old_a { sum1 - ya } else { sum1 };
            // second customer's remainder if the first lands on side 0
            let s1r_b = s1r - usize::from(old_b);
            let sum1r_b = if old_b { sum1r - yb } else { sum1r };
            let d_a = odds(s1r, sum1r, ya);
            let d_b0 = odds(s1r_b, sum1r_b, yb);
            let d_b1 = odds(s1r_b + 1, sum1r_b + ya, yb);
            let ca = d_a >= bits.threshold(launch);
            let cb = (if ca { d_b1 } else { d_b0 }) >= bits.threshold(launch);
            sides[j] = u8::from(ca);
            sides[k] = u8::from(cb);
            s1 = s1r_b + usize::from(ca) + usize::from(cb);
            sum1 = sum1r_b + if ca { ya } else { 0.0 } + if cb { yb } else { 0.0 };
        }
        if ys.len() % 2 == 1 {
            let j = ys.len() - 1;
            let y = ys[j];
            let old = sides[j] == 1;
            let s1r = s1 - usize::from(old);
            let sum1r = if old { sum1 - y } else { sum1 };
            let c = odds(s1r, sum1r, y) >= bits.threshold(launch);
            sides[j] = u8::from(c);
            s1 = s1r + usize::from(c);
            sum1 = if c { sum1r + y } else { sum1r };
        }
    }
    tt.size = [n_tot - s1, s1];
    tt.dish_n = [b0 + n_tot - s1, b1 + s1];
    tt.dish_sum = [sum_tot - sum1, sum1];
}

/// Launch state plus a final scan. With `targets` the final scan is forced
/// to those sides and its probability returned.
fn restricted_gibbs<R: Rng + ?Sized>(
    tt: &mut TwoTables<'_>,
    others: &[usize],
    sides: &mut [u8],
    targets: Option<&[u8]>,
    launch: &mut ChaCha8Rng,
    rng: &mut R,
) -> f64 {
    let ys: Vec<f64> = others.iter().map(|&c| tt.values[c]).collect();
    for (side, &c) in sides.iter_mut().zip(others) {
        *side = u8::from(launch.random::<bool>());
        tt.add(c, *side as usize);
    }
    launch_scans(tt, &ys, sides, launch);
    let mut lq = super::LogProb::new();
    for (i, &c) in others.iter().enumerate() {
        tt.update(c, &mut sides[i], targets.map(|t| t[i]), rng, &mut lq);
    }
    lq.value()
}

fn side_stats(values: &[f64], anchors: [usize; 2], others: &[usize], sides: &[u8]) -> [ClusterStats; 2] {
    let mut st = [
        ClusterStats::from_values([values[anchors[0]]]),
        ClusterStats::from_values([values[anchors[1]]]),
    ];
    for (&c, &k) in others.iter().zip(sides) {
        st[k as usize].push(values[c]);
    }
    st
}

/// Log target change from the merged configuration (one table of `n1 + n2`
/// customers) to the split one.
#[allow(clippy::too_many_arguments)]
fn split_delta(
    ctx: &Ctx,
    n: [usize; 2],
    side_stats: [ClusterStats; 2],
    base: [ClusterStats; 2],
    same_dish: bool,
    second_dish_tables_merged: usize,
    total_tables_merged: usize,
) -> f64 {
    let mut d = ctx.alpha1.ln() + ln_gamma_count(n[0]) + ln_gamma_count(n[1])
        - ln_gamma_count(n[0] + n[1]);
    d += if second_dish_tables_merged == 0 {
        ctx.alpha0.ln()
    } else {
        (second_dish_tables_merged as f64).ln()
    };
    d -= (ctx.alpha0 + total_tables_merged as f64).ln();
    if !same_dish && ctx.lik_weight > 0.0 {
        let (s2, k0) = (ctx.sigma2, ctx.k0);
        let d1_split = base[0].merged(&side_stats[0]);
        let d2_split = base[1].merged(&side_stats[1]);
        let d1_merged = d1_split.merged(&side_stats[1]);
        d += ctx.lik_weight
            * (d1_split.log_marginal(s2, k0) + d2_split.log_marginal(s2, k0)
                - d1_merged.log_marginal(s2, k0)
                - base[1].log_marginal(s2, k0));
    }
    d
}

pub(crate) fn table_move<R: Rng + ?Sized>(
    fr: &mut Franchise<'_>,
    ctx: &Ctx,
    rng: &mut R,
    log: Option<&mut Vec<ProposalLog>>,
) -> MoveOutcome {
    let n = fr.data.n_customers();
    let i1 = rng.random_range(0..n);
    let s = fr.rest_of_customer(i1);
    let n_s = fr.rests[s].n_customers;
    if n_s < 2 {
        return MoveOutcome::degenerate();
    }
    let mut u = rng.random_range(0..n_s - 1);
    let mut i2 = usize::MAX;
    for c in fr.customers_of_rest(s) {
        if c == i1 {
            continue;
        }
        if u == 0 {
            i2 = c;
            break;
        }
        u -= 1;
    }
    let mut launch = super::launch_rng(ctx, rng);
    fr.ensure_pred(ctx.sigma2, ctx.k0);
    let values = fr.data.values();
    let (t1, t2) = (fr.cust_table[i1], fr.cust_table[i2]);
    let n_dishes = fr.n_dishes();
    let n_tables = fr.n_tables();

    if t1 == t2 {
        let d1 = fr.tables[t1].dish;
        let pick = rng.random_range(0..=n_dishes);
        let d2 = (pick < n_dishes).then(|| fr.dish_ids.items[pick]);
        let same = d2 == Some(d1);
        let base1 = fr.dishes[d1].stats.without(&fr.tables[t1].stats);
        let base2 = match d2 {
            None => ClusterStats::default(),
            Some(d) if d == d1 => base1,
            Some(d) => fr.dishes[d].stats,
        };
        let others: Vec<usize> = fr.tables[t1]
            .members
            .iter()
            .copied()
            .filter(|&c| c != i1 && c != i2)
            .collect();
        let mut tt = TwoTables::new(values, ctx, &fr.pred, same, [base1, base2], [i1, i2]);
        let mut sides = vec![0u8; others.len()];
        let lq = restricted_gibbs(&mut tt, &others, &mut sides, None, &mut launch, rng);
        let log_q_fwd = lq - ((n_dishes + 1) as f64).ln();
        let m2 = d2.map_or(0, |d| fr.dishes[d].tables.len());
        let side_stats = side_stats(values, [i1, i2], &others, &sides);
        let delta = split_delta(
            ctx,
            tt.size,
            side_stats,
            tt.base,
            same,
            m2,
            n_tables,
        );
        let log_ratio = delta - log_q_fwd;
        let accepted = super::accept(log_ratio, rng);
        let moved: Vec<usize> = others.iter().zip(&sides).filter(|(_, &s)| s == 1).map(|(&c, _)| c).collect();
        let movers = merge_ascending(&[i2], &moved);
        let apply = |fr: &mut Franchise<'_>| {
            let dish = match d2 {
                Some(d) => d,
                None => fr.new_dish(),
            };
            fr.split_table(t1, &movers, dish);
        };
        super::record(log, fr, Kernel::Table, ProposalKind::Split, (i1, i2), delta, log_q_fwd, 0.0, accepted, &apply);
        if accepted {
            apply(fr);
        }
        MoveOutcome::new(ProposalKind::Split, accepted, log_ratio)
    } else {
        let (d1, d2) = (fr.tables[t1].dish, fr.tables[t2].dish);
        let same = d1 == d2;
        let d2_vanishes = !same && fr.dishes[d2].tables.len() == 1;
        let dishes_merged = n_dishes - usize::from(d2_vanishes);
        let (st1, st2) = (fr.tables[t1].stats, fr.tables[t2].stats);
        let (base1, base2) = if same {
            let b = fr.dishes[d1].stats.without(&st1).without(&st2);
            (b, b)
        } else {
            (
                fr.dishes[d1].stats.without(&st1),
                fr.dishes[d2].stats.without(&st2),
            )
        };
        // both member lists ascending: merge them, remembering the side
        let (m1, m2) = (&fr.tables[t1].members, &fr.tables[t2].members);
        let mut order = Vec::with_capacity(m1.len() + m2.len());
        let mut targets = Vec::with_capacity(m1.len() + m2.len());
        let (mut a, mut b) = (0, 0);
        while a < m1.len() || b < m2.len() {
            let (c, side) = if b == m2.len() || (a < m1.len() && m1[a] < m2[b]) {
                a += 1;
                (m1[a - 1], 0u8)
            } else {
                b += 1;
                (m2[b - 1], 1u8)
            };
            if c != i1 && c != i2 {
                order.push(c);
                targets.push(side);
            }
        }
        let mut tt = TwoTables::new(values, ctx, &fr.pred, same, [base1, base2], [i1, i2]);
        let mut sides = vec![0u8; order.len()];
        let lq = restricted_gibbs(&mut tt, &order, &mut sides, Some(&targets), &mut launch, rng);
        let log_q_rev = lq - ((dishes_merged + 1) as f64).ln();
        let m2_merged = if d2_vanishes {
            0
        } else {
            fr.dishes[d2].tables.len() - 1
        };
        let delta_split = split_delta(
            ctx,
            [st1.n, st2.n],
            [st1, st2],
            [base1, base2],
            same,
            m2_merged,
            n_tables - 1,
        );
        let log_ratio = -delta_split + log_q_rev;
        let accepted = super::accept(log_ratio, rng);
        let apply = |fr: &mut Franchise<'_>| fr.fuse_tables(t1, t2);
        super::record(log, fr, Kernel::Table, ProposalKind::Merge, (i1, i2), -delta_split, 0.0, log_q_rev, accepted, &apply);
        if accepted {
            apply(fr);
        }
        MoveOutcome::new(ProposalKind::Merge, accepted, log_ratio)
    }
}
