//! Split-merge over the partition of groups into restaurants.
//!
//! A split sends the groups of one restaurant to two sides and cuts every
//! table with customers on both sides into two tables serving the same dish.
//! A merge joins two restaurants and fuses a random matching of same-dish
//! tables. Neither changes which dish a customer eats, so the likelihood
//! cancels and only the partition prior enters the ratio.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::franchise::Franchise;
use super::{Ctx, Kernel, MoveOutcome, ProposalKind, ProposalLog};
use crate::model::ln_gamma_count;

/// Two-sided view of one (possibly hypothetical) restaurant.
///
/// Local tables are indexed `0..n_local`; `groups[i]` lists the
/// `(local table, customers)` counts of group `group_ids[i]`.
struct SplitWorkspace {
    ln_alpha1: f64,
    ln_alpha2: f64,
    group_ids: Vec<usize>,
    groups: Vec<Vec<(usize, usize)>>,
    table_dish: Vec<usize>,
    /// Tables of each local dish across the whole franchise when merged.
    dish_base: Vec<usize>,
    /// lnRise(α1, n) for n = 0..=customers.
    rise1: Vec<f64>,
    /// lnRise(α0, T + m) for m = 0..=n_local, T = total tables when merged.
    rise0: Vec<f64>,
    cnt: [Vec<usize>; 2],
    n_tables: [usize; 2],
    sum_lg: [f64; 2],
    n_cust: [usize; 2],
    n_groups: [usize; 2],
    dish_cut: Vec<usize>,
    sum_dish_lg: f64,
    n_cut: usize,
}

impl SplitWorkspace {
    fn new(
        ctx: &Ctx,
        group_ids: Vec<usize>,
        groups: Vec<Vec<(usize, usize)>>,
        table_dish: Vec<usize>,
        dish_base: Vec<usize>,
        total_tables: usize,
    ) -> Self {
        let n_local = table_dish.len();
        let n_customers: usize = groups.iter().flatten().map(|&(_, c)| c).sum();
        let mut rise1 = Vec::with_capacity(n_customers + 1);
        let mut acc = 0.0;
        for n in 0..=n_customers {
            rise1.push(acc);
            acc += (ctx.alpha1 + n as f64).ln();
        }
        let mut rise0 = Vec::with_capacity(n_local + 1);
        let mut acc = crate::model::ln_rising(ctx.alpha0, total_tables);
        for m in 0..=n_local {
            rise0.push(acc);
            acc += (ctx.alpha0 + (total_tables + m) as f64).ln();
        }
        let sum_dish_lg = dish_base.iter().map(|&b| ln_gamma_count(b)).sum();
        SplitWorkspace {
            ln_alpha1: ctx.alpha1.ln(),
            ln_alpha2: ctx.alpha2.ln(),
            group_ids,
            groups,
            dish_cut: vec![0; dish_base.len()],
            table_dish,
            dish_base,
            rise1,
            rise0,
            cnt: [vec![0; n_local], vec![0; n_local]],
            n_tables: [0; 2],
            sum_lg: [0.0; 2],
            n_cust: [0; 2],
            n_groups: [0; 2],
            sum_dish_lg,
            n_cut: 0,
        }
    }

    fn set_cut(&mut self, h: usize, delta: isize) {
        let d = self.table_dish[h];
        let before = self.dish_base[d] + self.dish_cut[d];
        self.dish_cut[d] = (self.dish_cut[d] as isize + delta) as usize;
        let after = self.dish_base[d] + self.dish_cut[d];
        self.sum_dish_lg += ln_gamma_count(after) - ln_gamma_count(before);
        self.n_cut = (self.n_cut as isize + delta) as usize;
    }

    fn add(&mut self, i: usize, k: usize) {
        let o = 1 - k;
        for idx in 0..self.groups[i].len() {
            let (h, c) = self.groups[i][idx];
            let old = self.cnt[k][h];
            let new = old + c;
            if old == 0 {
                self.n_tables[k] += 1;
                if self.cnt[o][h] > 0 {
                    self.set_cut(h, 1);
                }
            } else {
                self.sum_lg[k] -= ln_gamma_count(old);
            }
            self.sum_lg[k] += ln_gamma_count(new);
            self.cnt[k][h] = new;
            self.n_cust[k] += c;
        }
        self.n_groups[k] += 1;
    }

    fn remove(&mut self, i: usize, k: usize) {
        let o = 1 - k;
        for idx in 0..self.groups[i].len() {
            let (h, c) = self.groups[i][idx];
            let old = self.cnt[k][h];
            let new = old - c;
            self.sum_lg[k] -= ln_gamma_count(old);
            if new == 0 {
                self.n_tables[k] -= 1;
                if self.cnt[o][h] > 0 {
                    self.set_cut(h, -1);
                }
            } else {
                self.sum_lg[k] += ln_gamma_count(new);
            }
            self.cnt[k][h] = new;
            self.n_cust[k] -= c;
        }
        self.n_groups[k] -= 1;
    }

    /// Log prior of the split configuration, up to terms shared with the
    /// merged configuration and the rest of the franchise.
    fn score(&self) -> f64 {
        let mut s = self.ln_alpha2 + ln_gamma_count(self.n_groups[0]) + ln_gamma_count(self.n_groups[1]);
        for k in 0..2 {
            s += self.n_tables[k] as f64 * self.ln_alpha1 + self.sum_lg[k] - self.rise1[self.n_cust[k]];
        }
        s + self.sum_dish_lg - self.rise0[self.n_cut]
    }

    /// The same quantity for the single merged restaurant.
    fn merged_score(&self) -> f64 {
        let n_local = self.table_dish.len();
        let mut s = ln_gamma_count(self.groups.len()) + n_local as f64 * self.ln_alpha1;
        for h in 0..n_local {
            s += ln_gamma_count(self.cnt[0][h] + self.cnt[1][h]);
        }
        s -= self.rise1[self.rise1.len() - 1];
        s += self.dish_base.iter().map(|&b| ln_gamma_count(b)).sum::<f64>();
        s - self.rise0[0]
    }

    fn gibbs_update<R: Rng + ?Sized>(
        &mut self,
        i: usize,
        side: &mut u8,
        target: Option<u8>,
        rng: &mut R,
    ) -> f64 {
        self.remove(i, *side as usize);
        let mut w = [0.0; 2];
        for (k, wk) in w.iter_mut().enumerate() {
            self.add(i, k);
            *wk = self.score();
            self.remove(i, k);
        }
        let p0 = 1.0 / (1.0 + (w[1] - w[0]).exp());
        let chosen = match target {
            Some(t) => t,
            None => u8::from(rng.random::<f64>() >= p0),
        };
        *side = chosen;
        self.add(i, chosen as usize);
        if chosen == 0 {
            p0.ln()
        } else {
            (1.0 - p0).ln()
        }
    }

    /// Place the anchors, launch and run the final scan over the other
    /// groups (forced to `targets` when given). Returns the final-scan log
    /// probability and each group's side.
    fn restricted_gibbs<R: Rng + ?Sized>(
        &mut self,
        anchors: (usize, usize),
        launch_scans: usize,
        targets: Option<&[u8]>,
        launch: &mut ChaCha8Rng,
        rng: &mut R,
    ) -> (f64, Vec<u8>) {
        let n = self.groups.len();
        let mut sides = vec![0u8; n];
        let others: Vec<usize> = (0..n).filter(|&i| i != anchors.0 && i != anchors.1).collect();
        self.add(anchors.0, 0);
        sides[anchors.1] = 1;
        self.add(anchors.1, 1);
        for &i in &others {
            let s = u8::from(launch.random::<bool>());
            sides[i] = s;
            self.add(i, s as usize);
        }
        for _ in 0..launch_scans {
            for &i in &others {
                self.gibbs_update(i, &mut sides[i], None, launch);
            }
        }
        let mut lq = 0.0;
        for &i in &others {
            lq += self.gibbs_update(i, &mut sides[i], targets.map(|t| t[i]), rng);
        }
        (lq, sides)
    }

    /// Log probability that a merge of the two sides fuses exactly the cut
    /// tables, summed over the matchings that produce it.
    fn log_q_merge(&self, merge_prob: f64) -> f64 {
        let n_dishes = self.dish_base.len();
        let mut side_count = vec![[0usize; 2]; n_dishes];
        for (h, &d) in self.table_dish.iter().enumerate() {
            for k in 0..2 {
                if self.cnt[k][h] > 0 {
                    side_count[d][k] += 1;
                }
            }
        }
        side_count
            .iter()
            .zip(&self.dish_cut)
            .map(|(c, &m)| log_q_matching(c[0], c[1], m, merge_prob))
            .sum()
    }
}

/// Probability that a uniform matching of `a` and `b` same-dish tables
/// with independent merge flags fuses one particular set of `m` pairs.
fn log_q_matching(a: usize, b: usize, m: usize, p: f64) -> f64 {
    let (small, big) = (a.min(b), a.max(b));
    if small == 0 {
        return 0.0;
    }
    ln_gamma_count(big - m + 1) - ln_gamma_count(big + 1)
        + m as f64 * p.ln()
        + (small - m) as f64 * (1.0 - p).ln()
}

/// Collect per-group local-table counts. `local_of[t]` maps a global table
/// id to its local index.
fn group_counts(fr: &Franchise<'_>, groups: &[usize], local_of: &[usize]) -> Vec<Vec<(usize, usize)>> {
    groups
        .iter()
        .map(|&g| {
            let mut counts: Vec<(usize, usize)> = Vec::new();
            for &c in fr.data.customers_of(g) {
                let h = local_of[fr.cust_table[c]];
                match counts.iter_mut().find(|(x, _)| *x == h) {
                    Some(e) => e.1 += 1,
                    None => counts.push((h, 1)),
                }
            }
            counts
        })
        .collect()
}

fn local_dishes(fr: &Franchise<'_>, tables: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut ids: Vec<usize> = Vec::new();
    let table_dish = tables
        .iter()
        .map(|&t| {
            let d = fr.tables[t].dish;
            match ids.iter().position(|&x| x == d) {
                Some(i) => i,
                None => {
                    ids.push(d);
                    ids.len() - 1
                }
            }
        })
        .collect();
    (table_dish, ids)
}

pub(crate) fn restaurant_move<R: Rng + ?Sized>(
    fr: &mut Franchise<'_>,
    ctx: &Ctx,
    rng: &mut R,
    log: Option<&mut Vec<ProposalLog>>,
) -> MoveOutcome {
    let n_groups = fr.data.n_groups();
    if n_groups < 2 {
        return MoveOutcome::degenerate();
    }
    let j1 = rng.random_range(0..n_groups);
    let mut j2 = rng.random_range(0..n_groups - 1);
    if j2 >= j1 {
        j2 += 1;
    }
    let (s1, s2) = (fr.group_rest[j1], fr.group_rest[j2]);
    if s1 == s2 {
        split(fr, ctx, rng, log, j1, j2, s1)
    } else {
        merge(fr, ctx, rng, log, j1, j2, s1, s2)
    }
}

fn split<R: Rng + ?Sized>(
    fr: &mut Franchise<'_>,
    ctx: &Ctx,
    rng: &mut R,
    log: Option<&mut Vec<ProposalLog>>,
    j1: usize,
    j2: usize,
    s: usize,
) -> MoveOutcome {
    let mut groups = fr.rests[s].groups.clone();
    groups.sort_unstable();
    let mut tables = fr.rests[s].tables.clone();
    tables.sort_unstable();
    let mut local_of = vec![usize::MAX; fr.tables.len()];
    for (h, &t) in tables.iter().enumerate() {
        local_of[t] = h;
    }
    let (table_dish, dish_ids) = local_dishes(fr, &tables);
    let dish_base = dish_ids.iter().map(|&d| fr.dishes[d].tables.len()).collect();
    let counts = group_counts(fr, &groups, &local_of);
    let mut ws = SplitWorkspace::new(ctx, groups, counts, table_dish, dish_base, fr.n_tables());
    let a0 = ws.group_ids.iter().position(|&g| g == j1).expect("anchor in restaurant");
    let a1 = ws.group_ids.iter().position(|&g| g == j2).expect("anchor in restaurant");
    let (lq_split, sides) = ws.restricted_gibbs((a0, a1), ctx.launch_scans, None, &mut super::launch_rng(ctx, rng), rng);
    let delta = ws.score() - ws.merged_score();
    let lq_merge = ws.log_q_merge(ctx.merge_prob);
    let log_ratio = delta + lq_merge - lq_split;
    let accepted = super::accept(log_ratio, rng);
    let second: Vec<usize> = ws
        .group_ids
        .iter()
        .zip(&sides)
        .filter(|(_, &k)| k == 1)
        .map(|(&g, _)| g)
        .collect();
    let apply = |fr: &mut Franchise<'_>| {
        fr.split_restaurant(s, &second);
    };
    super::record(log, fr, Kernel::Restaurant, ProposalKind::Split, (j1, j2), delta, lq_split, lq_merge, accepted, &apply);
    if accepted {
        apply(fr);
    }
    MoveOutcome::new(ProposalKind::Split, accepted, log_ratio)
}

#[allow(clippy::too_many_arguments)]
fn merge<R: Rng + ?Sized>(
    fr: &mut Franchise<'_>,
    ctx: &Ctx,
    rng: &mut R,
    log: Option<&mut Vec<ProposalLog>>,
    j1: usize,
    j2: usize,
    s1: usize,
    s2: usize,
) -> MoveOutcome {
    let mut t1 = fr.rests[s1].tables.clone();
    let mut t2 = fr.rests[s2].tables.clone();
    t1.sort_unstable();
    t2.sort_unstable();
    let mut by_dish: BTreeMap<usize, [Vec<usize>; 2]> = BTreeMap::new();
    for &t in &t1 {
        by_dish.entry(fr.tables[t].dish).or_default()[0].push(t);
    }
    for &t in &t2 {
        by_dish.entry(fr.tables[t].dish).or_default()[1].push(t);
    }
    let p = ctx.merge_prob;
    let mut fused: Vec<(usize, usize)> = Vec::new();
    let mut lq_merge = 0.0;
    for [a, b] in by_dish.values_mut() {
        if a.is_empty() || b.is_empty() {
            continue;
        }
        let small = a.len().min(b.len());
        let first_larger = a.len() >= b.len();
        if first_larger {
            a.shuffle(rng);
        } else {
            b.shuffle(rng);
        }
        let mut m = 0;
        for i in 0..small {
            if rng.random::<f64>() < p {
                fused.push((a[i], b[i]));
                m += 1;
            }
        }
        lq_merge += log_q_matching(a.len(), b.len(), m, p);
    }

    // hypothetical merged restaurant: fused pairs share a local index
    let mut tables = t1.clone();
    let mut local_of = vec![usize::MAX; fr.tables.len()];
    for (h, &t) in t1.iter().enumerate() {
        local_of[t] = h;
    }
    for &(a, b) in &fused {
        local_of[b] = local_of[a];
    }
    for &t in &t2 {
        if local_of[t] == usize::MAX {
            local_of[t] = tables.len();
            tables.push(t);
        }
    }
    let (table_dish, dish_ids) = local_dishes(fr, &tables);
    let dish_base: Vec<usize> = dish_ids
        .iter()
        .map(|&d| {
            let m = fused.iter().filter(|&&(a, _)| fr.tables[a].dish == d).count();
            fr.dishes[d].tables.len() - m
        })
        .collect();
    let mut groups: Vec<usize> = fr.rests[s1]
        .groups
        .iter()
        .chain(&fr.rests[s2].groups)
        .copied()
        .collect();
    groups.sort_unstable();
    let targets: Vec<u8> = groups.iter().map(|&g| u8::from(fr.group_rest[g] == s2)).collect();
    let counts = group_counts(fr, &groups, &local_of);
    let total_tables = fr.n_tables() - fused.len();
    let mut ws = SplitWorkspace::new(ctx, groups, counts, table_dish, dish_base, total_tables);
    let a0 = ws.group_ids.iter().position(|&g| g == j1).expect("anchor present");
    let a1 = ws.group_ids.iter().position(|&g| g == j2).expect("anchor present");
    let (lq_split, _) = ws.restricted_gibbs((a0, a1), ctx.launch_scans, Some(&targets), &mut super::launch_rng(ctx, rng), rng);
    let delta_split = ws.score() - ws.merged_score();
    let log_ratio = -delta_split + lq_split - lq_merge;
    let accepted = super::accept(log_ratio, rng);
    let apply = |fr: &mut Franchise<'_>| fr.merge_restaurants(s1, s2, &fused);
    super::record(log, fr, Kernel::Restaurant, ProposalKind::Merge, (j1, j2), -delta_split, lq_merge, lq_split, accepted, &apply);
    if accepted {
        apply(fr);
    }
    MoveOutcome::new(ProposalKind::Merge, accepted, log_ratio)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Enumerate matchings explicitly and sum the probability of those
    /// fusing pairs {(0,0), .., (m-1,m-1)}.
    fn brute_q(a: usize, b: usize, m: usize, p: f64) -> f64 {
        fn perms(n: usize, k: usize) -> Vec<Vec<usize>> {
            if k == 0 {
                return vec![vec![]];
            }
            let mut out = Vec::new();
            for p in perms(n, k - 1) {
                for x in 0..n {
                    if !p.contains(&x) {
                        let mut q = p.clone();
                        q.push(x);
                        out.push(q);
                    }
                }
            }
            out
        }
        let (small, big) = (a.min(b), a.max(b));
        let all = perms(big, small);
        let mut total = 0.0;
        for inj in &all {
            // flag pattern must fuse exactly pairs (i, i) for i < m
            let pairs_ok = (0..m).all(|i| inj[i] == i);
            if pairs_ok {
                total += p.powi(m as i32) * (1.0 - p).powi((small - m) as i32);
            }
        }
        total / all.len() as f64
    }

    #[test]
    fn matching_probability_matches_brute_force() {
        for a in 0..4 {
            for b in 0..4 {
                for m in 0..=a.min(b) {
                    let want = if a.min(b) == 0 { 1.0 } else { brute_q(a, b, m, 0.3) };
                    let got = log_q_matching(a, b, m, 0.3).exp();
                    assert!((want - got).abs() < 1e-12, "{a} {b} {m}: {want} vs {got}");
                }
            }
        }
    }
}
