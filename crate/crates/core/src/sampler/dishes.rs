//! Split-merge over the assignment of tables to dishes.

use rand::Rng;

use super::franchise::Franchise;
use super::{Ctx, Kernel, MoveOutcome, ProposalKind, ProposalLog};
use crate::model::{ln_gamma_count, ClusterStats};

struct TwoDishes<'a> {
    ctx: &'a Ctx,
    stats: [ClusterStats; 2],
    size: [usize; 2],
}

impl TwoDishes<'_> {
    fn lml(&self, s: &ClusterStats) -> f64 {
        s.log_marginal(self.ctx.sigma2, self.ctx.k0)
    }

    fn update<R: Rng + ?Sized>(
        &mut self,
        table: &ClusterStats,
        side: &mut u8,
        target: Option<u8>,
        rng: &mut R,
    ) -> f64 {
        let k = *side as usize;
        self.size[k] -= 1;
        self.stats[k] = self.stats[k].without(table);
        let mut w = [(self.size[0] as f64).ln(), (self.size[1] as f64).ln()];
        if self.ctx.lik_weight > 0.0 {
            for (k, wk) in w.iter_mut().enumerate() {
                let gain = self.lml(&self.stats[k].merged(table)) - self.lml(&self.stats[k]);
                *wk += self.ctx.lik_weight * gain;
            }
        }
        let p0 = 1.0 / (1.0 + (w[1] - w[0]).exp());
        let chosen = match target {
            Some(t) => t,
            None => u8::from(rng.random::<f64>() >= p0),
        };
        *side = chosen;
        let k = chosen as usize;
        self.size[k] += 1;
        self.stats[k] = self.stats[k].merged(table);
        if chosen == 0 {
            p0.ln()
        } else {
            (1.0 - p0).ln()
        }
    }

    /// log π(split) − log π(merged) for the current two-dish configuration.
    fn split_delta(&self) -> f64 {
        let mut d = self.ctx.alpha0.ln() + ln_gamma_count(self.size[0]) + ln_gamma_count(self.size[1])
            - ln_gamma_count(self.size[0] + self.size[1]);
        if self.ctx.lik_weight > 0.0 {
            let merged = self.stats[0].merged(&self.stats[1]);
            d += self.ctx.lik_weight
                * (self.lml(&self.stats[0]) + self.lml(&self.stats[1]) - self.lml(&merged));
        }
        d
    }
}

pub(crate) fn dish_move<R: Rng + ?Sized>(
    fr: &mut Franchise<'_>,
    ctx: &Ctx,
    rng: &mut R,
    log: Option<&mut Vec<ProposalLog>>,
) -> MoveOutcome {
    let n_tables = fr.n_tables();
    if n_tables < 2 {
        return MoveOutcome::degenerate();
    }
    let ia = rng.random_range(0..n_tables);
    let mut ib = rng.random_range(0..n_tables - 1);
    if ib >= ia {
        ib += 1;
    }
    let (a, b) = (fr.table_ids.items[ia], fr.table_ids.items[ib]);
    let (da, db) = (fr.tables[a].dish, fr.tables[b].dish);
    let mut others: Vec<(usize, u8)> = fr.dishes[da]
        .tables
        .iter()
        .map(|&t| (t, 0u8))
        .chain(
            (da != db)
                .then(|| fr.dishes[db].tables.iter().map(|&t| (t, 1u8)))
                .into_iter()
                .flatten(),
        )
        .filter(|&(t, _)| t != a && t != b)
        .collect();
    others.sort_unstable();
    let table_stats: Vec<ClusterStats> = others.iter().map(|&(t, _)| fr.tables[t].stats).collect();
    let mut tw = TwoDishes {
        ctx,
        stats: [fr.tables[a].stats, fr.tables[b].stats],
        size: [1, 1],
    };
    let mut launch = super::launch_rng(ctx, rng);
    let mut sides = vec![0u8; others.len()];
    for (i, st) in table_stats.iter().enumerate() {
        let s = u8::from(launch.random::<bool>());
        sides[i] = s;
        tw.size[s as usize] += 1;
        tw.stats[s as usize] = tw.stats[s as usize].merged(st);
    }
    for _ in 0..ctx.launch_scans {
        for (i, st) in table_stats.iter().enumerate() {
            tw.update(st, &mut sides[i], None, &mut launch);
        }
    }
    let forced = da != db;
    let mut lq = 0.0;
    for (i, st) in table_stats.iter().enumerate() {
        let target = forced.then_some(others[i].1);
        lq += tw.update(st, &mut sides[i], target, rng);
    }
    let delta = tw.split_delta();

    if !forced {
        let log_ratio = delta - lq;
        let accepted = super::accept(log_ratio, rng);
        let movers: Vec<usize> = std::iter::once(b)
            .chain(others.iter().zip(&sides).filter(|(_, &s)| s == 1).map(|(&(t, _), _)| t))
            .collect();
        let apply = |fr: &mut Franchise<'_>| {
            let nd = fr.new_dish();
            for &t in &movers {
                fr.move_table_to_dish(t, nd);
            }
        };
        super::record(log, fr, Kernel::Dish, ProposalKind::Split, (a, b), delta, lq, 0.0, accepted, &apply);
        if accepted {
            apply(fr);
        }
        MoveOutcome::new(ProposalKind::Split, accepted, log_ratio)
    } else {
        let log_ratio = -delta + lq;
        let accepted = super::accept(log_ratio, rng);
        let apply = |fr: &mut Franchise<'_>| {
            let moving = fr.dishes[db].tables.clone();
            for t in moving {
                fr.move_table_to_dish(t, da);
            }
        };
        super::record(log, fr, Kernel::Dish, ProposalKind::Merge, (a, b), -delta, 0.0, lq, accepted, &apply);
        if accepted {
            apply(fr);
        }
        MoveOutcome::new(ProposalKind::Merge, accepted, log_ratio)
    }
}
