//! Mutable, indexed view of a franchise used inside the sampler.
//!
//! Ids of restaurants, tables and dishes are slab slots that may be reused
//! after removal; [`Franchise::to_state`] produces the canonical value form.

use crate::data::TwoLevelDataset;
use crate::error::Result;
use crate::model::{ClusterStats, Hyperparams, PriorBlocks};
use crate::state::CrfState;

/// Live ids with O(1) insert, remove and uniform pick.
#[derive(Debug, Clone, Default)]
pub(crate) struct IdList {
    pub items: Vec<usize>,
    pos: Vec<usize>,
}

impl IdList {
    fn insert(&mut self, id: usize) {
        if self.pos.len() <= id {
            self.pos.resize(id + 1, usize::MAX);
        }
        debug_assert_eq!(self.pos[id], usize::MAX);
        self.pos[id] = self.items.len();
        self.items.push(id);
    }

    fn remove(&mut self, id: usize) {
        let i = self.pos[id];
        debug_assert_ne!(i, usize::MAX);
        let last = *self.items.last().expect("non-empty");
        self.items.swap_remove(i);
        if last != id {
            self.pos[last] = i;
        }
        self.pos[id] = usize::MAX;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Table {
    pub rest: usize,
    pub dish: usize,
    /// Ascending, so scan orders need no sorting.
    pub members: Vec<usize>,
    pub stats: ClusterStats,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Rest {
    pub groups: Vec<usize>,
    pub n_customers: usize,
    pub tables: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Dish {
    pub tables: Vec<usize>,
    pub stats: ClusterStats,
}

/// Per-count constants of the posterior predictive for one `(sigma2, k0)`.
#[derive(Debug, Clone, Default)]
pub(crate) struct PredCache {
    sigma2: f64,
    k0: f64,
    /// Indexed by cluster size.
    pub rows: Vec<PredRow>,
}

/// Predictive constants for a cluster of `n`.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PredRow {
    /// `ln n`, with `ln 0 = -inf`.
    pub ln_n: f64,
    /// Half the log predictive variance.
    pub half_ln_var: f64,
    /// `1 / (2 var)`.
    pub inv_two_var: f64,
    /// `1 / (n + k0)`.
    pub inv_nk: f64,
}

impl PredCache {
    fn build(sigma2: f64, k0: f64, max_n: usize) -> Self {
        let rows = (0..=max_n)
            .map(|n| {
                let nk = n as f64 + k0;
                let var = sigma2 * (nk + 1.0) / nk;
                PredRow {
                    ln_n: (n as f64).ln(),
                    half_ln_var: 0.5 * var.ln(),
                    inv_two_var: 0.5 / var,
                    inv_nk: 1.0 / nk,
                }
            })
            .collect();
        PredCache { sigma2, k0, rows }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Franchise<'d> {
    pub data: &'d TwoLevelDataset,
    pub group_rest: Vec<usize>,
    pub cust_table: Vec<usize>,
    pub tables: Vec<Table>,
    pub rests: Vec<Rest>,
    pub dishes: Vec<Dish>,
    pub table_ids: IdList,
    pub rest_ids: IdList,
    pub dish_ids: IdList,
    free_tables: Vec<usize>,
    free_rests: Vec<usize>,
    free_dishes: Vec<usize>,
    pub pred: PredCache,
}

fn remove_item(v: &mut Vec<usize>, x: usize) {
    let i = v.iter().position(|&y| y == x).expect("member present");
    v.remove(i);
}

impl<'d> Franchise<'d> {
    pub fn from_state(data: &'d TwoLevelDataset, state: &CrfState) -> Result<Self> {
        if let Err(v) = crate::state::validate(state, data) {
            return Err(crate::error::Error::InvalidState(
                v.iter().map(|x| x.to_string()).collect(),
            ));
        }
        let n_rest = state.n_restaurants();
        let n_tables = state.n_tables();
        let n_dishes = state.n_dishes();
        let mut fr = Franchise {
            data,
            group_rest: state.restaurant.clone(),
            cust_table: state.table.clone(),
            tables: vec![Table::default(); n_tables],
            rests: vec![Rest::default(); n_rest],
            dishes: vec![Dish::default(); n_dishes],
            table_ids: IdList::default(),
            rest_ids: IdList::default(),
            dish_ids: IdList::default(),
            free_tables: Vec::new(),
            free_rests: Vec::new(),
            free_dishes: Vec::new(),
            pred: PredCache::default(),
        };
        for (g, &r) in state.restaurant.iter().enumerate() {
            fr.rests[r].groups.push(g);
            fr.rests[r].n_customers += data.customers_of(g).len();
        }
        let values = data.values();
        for (c, &t) in state.table.iter().enumerate() {
            let tab = &mut fr.tables[t];
            if tab.members.is_empty() {
                tab.rest = state.restaurant[state.group_of[c]];
            }
            tab.members.push(c);
            tab.stats.push(values[c]);
        }
        for (t, &d) in state.dish.iter().enumerate() {
            fr.tables[t].dish = d;
            let r = fr.tables[t].rest;
            fr.rests[r].tables.push(t);
            fr.dishes[d].tables.push(t);
            let s = fr.tables[t].stats;
            fr.dishes[d].stats = fr.dishes[d].stats.merged(&s);
        }
        (0..n_rest).for_each(|r| fr.rest_ids.insert(r));
        (0..n_tables).for_each(|t| fr.table_ids.insert(t));
        (0..n_dishes).for_each(|d| fr.dish_ids.insert(d));
        Ok(fr)
    }

    pub fn to_state(&self) -> CrfState {
        let group_of = self.data.group_of().to_vec();
        let raw_dish: Vec<usize> = (0..self.tables.len()).map(|t| self.tables[t].dish).collect();
        let s = CrfState {
            group_of,
            restaurant: self.group_rest.clone(),
            table: self.cust_table.clone(),
            dish: raw_dish,
        };
        s.canonical()
    }

    /// Make `pred` match `(sigma2, k0)`.
    pub fn ensure_pred(&mut self, sigma2: f64, k0: f64) {
        let p = &self.pred;
        if p.rows.is_empty() || p.sigma2 != sigma2 || p.k0 != k0 {
            self.pred = PredCache::build(sigma2, k0, self.data.n_customers() + 1);
        }
    }

    pub fn rest_of_customer(&self, c: usize) -> usize {
        self.group_rest[self.data.group_of()[c]]
    }

    pub fn n_tables(&self) -> usize {
        self.table_ids.len()
    }

    pub fn n_dishes(&self) -> usize {
        self.dish_ids.len()
    }

    pub fn log_likelihood(&self, sigma2: f64, k0: f64) -> f64 {
        self.dish_ids
            .items
            .iter()
            .map(|&d| self.dishes[d].stats.log_marginal(sigma2, k0))
            .sum()
    }

    pub fn dish_stats(&self) -> Vec<ClusterStats> {
        self.dish_ids.items.iter().map(|&d| self.dishes[d].stats).collect()
    }

    pub fn prior_blocks(&self) -> PriorBlocks {
        PriorBlocks {
            restaurants: self
                .rest_ids
                .items
                .iter()
                .map(|&r| self.rests[r].groups.len())
                .collect(),
            tables: self
                .rest_ids
                .items
                .iter()
                .map(|&r| {
                    self.rests[r]
                        .tables
                        .iter()
                        .map(|&t| self.tables[t].members.len())
                        .collect()
                })
                .collect(),
            dishes: self
                .dish_ids
                .items
                .iter()
                .map(|&d| self.dishes[d].tables.len())
                .collect(),
        }
    }

    pub fn log_prior(&self, hp: &Hyperparams) -> f64 {
        self.prior_blocks().log_prior(hp.alpha0, hp.alpha1, hp.alpha2)
    }

    /// Recompute every sufficient statistic from the raw values.
    pub fn refresh_stats(&mut self) {
        let values = self.data.values();
        for &t in &self.table_ids.items {
            let tab = &mut self.tables[t];
            tab.stats = ClusterStats::from_values(tab.members.iter().map(|&c| values[c]));
        }
        for &d in &self.dish_ids.items {
            let mut s = ClusterStats::default();
            for &t in &self.dishes[d].tables {
                s = s.merged(&self.tables[t].stats);
            }
            self.dishes[d].stats = s;
        }
    }

    fn alloc_table(&mut self) -> usize {
        let id = match self.free_tables.pop() {
            Some(id) => id,
            None => {
                self.tables.push(Table::default());
                self.tables.len() - 1
            }
        };
        self.table_ids.insert(id);
        id
    }

    pub fn new_dish(&mut self) -> usize {
        let id = match self.free_dishes.pop() {
            Some(id) => id,
            None => {
                self.dishes.push(Dish::default());
                self.dishes.len() - 1
            }
        };
        self.dish_ids.insert(id);
        id
    }

    fn free_dish(&mut self, d: usize) {
        debug_assert!(self.dishes[d].tables.is_empty());
        self.dishes[d] = Dish::default();
        self.dish_ids.remove(d);
        self.free_dishes.push(d);
    }

    fn new_rest(&mut self) -> usize {
        let id = match self.free_rests.pop() {
            Some(id) => id,
            None => {
                self.rests.push(Rest::default());
                self.rests.len() - 1
            }
        };
        self.rest_ids.insert(id);
        id
    }

    /// Move `movers` (customers of `from`) to a new table in the same
    /// restaurant serving `dish`. Returns the new table id.
    pub fn split_table(&mut self, from: usize, movers: &[usize], dish: usize) -> usize {
        debug_assert!(movers.windows(2).all(|w| w[0] < w[1]));
        let values = self.data.values();
        let rest = self.tables[from].rest;
        let id = self.alloc_table();
        let mut moved = ClusterStats::default();
        for &c in movers {
            self.cust_table[c] = id;
            moved.push(values[c]);
        }
        let mut members = std::mem::take(&mut self.tables[from].members);
        members.retain(|&c| self.cust_table[c] == from);
        let from_tab = &mut self.tables[from];
        from_tab.stats = ClusterStats::from_values(members.iter().map(|&c| values[c]));
        from_tab.members = members;
        let old_dish = from_tab.dish;
        self.tables[id] = Table {
            rest,
            dish,
            members: movers.to_vec(),
            stats: moved,
        };
        self.rests[rest].tables.push(id);
        self.dishes[old_dish].stats = self.dishes[old_dish].stats.without(&moved);
        self.dishes[dish].tables.push(id);
        self.dishes[dish].stats = self.dishes[dish].stats.merged(&moved);
        id
    }

    /// Move every customer of `absorb` to `keep` (same restaurant) and drop
    /// `absorb`, plus its dish if that dish becomes empty.
    pub fn fuse_tables(&mut self, keep: usize, absorb: usize) {
        debug_assert_ne!(keep, absorb);
        let gone = std::mem::take(&mut self.tables[absorb]);
        debug_assert_eq!(gone.rest, self.tables[keep].rest);
        for &c in &gone.members {
            self.cust_table[c] = keep;
        }
        let keep_dish = self.tables[keep].dish;
        {
            let k = &mut self.tables[keep];
            k.members = merge_ascending(&k.members, &gone.members);
            k.stats = k.stats.merged(&gone.stats);
        }
        remove_item(&mut self.rests[gone.rest].tables, absorb);
        let d = gone.dish;
        remove_item(&mut self.dishes[d].tables, absorb);
        if d != keep_dish {
            self.dishes[d].stats = self.dishes[d].stats.without(&gone.stats);
            self.dishes[keep_dish].stats = self.dishes[keep_dish].stats.merged(&gone.stats);
        }
        if self.dishes[d].tables.is_empty() {
            self.free_dish(d);
        }
        self.table_ids.remove(absorb);
        self.free_tables.push(absorb);
    }

    /// Serve dish `to` at table `t`, dropping its old dish if it empties.
    pub fn move_table_to_dish(&mut self, t: usize, to: usize) {
        let from = self.tables[t].dish;
        if from == to {
            return;
        }
        let s = self.tables[t].stats;
        remove_item(&mut self.dishes[from].tables, t);
        self.dishes[from].stats = self.dishes[from].stats.without(&s);
        self.dishes[to].tables.push(t);
        self.dishes[to].stats = self.dishes[to].stats.merged(&s);
        self.tables[t].dish = to;
        if self.dishes[from].tables.is_empty() {
            self.free_dish(from);
        }
    }

    /// Move `second` (groups of `s`) to a new restaurant; tables with
    /// customers on both sides are cut, keeping their dish.
    pub fn split_restaurant(&mut self, s: usize, second: &[usize]) -> usize {
        let s2 = self.new_rest();
        let group_of = self.data.group_of();
        for &g in second {
            self.group_rest[g] = s2;
        }
        let moved_customers: usize = second.iter().map(|&g| self.data.customers_of(g).len()).sum();
        self.rests[s].groups.retain(|&g| !second.contains(&g));
        self.rests[s].n_customers -= moved_customers;
        self.rests[s2].groups = second.to_vec();
        self.rests[s2].n_customers = moved_customers;
        let tables = std::mem::take(&mut self.rests[s].tables);
        let mut keep = Vec::with_capacity(tables.len());
        for t in tables {
            let (mut first_side, mut second_side) = (false, false);
            for &c in &self.tables[t].members {
                if self.group_rest[group_of[c]] == s2 {
                    second_side = true;
                } else {
                    first_side = true;
                }
            }
            match (first_side, second_side) {
                (true, false) => keep.push(t),
                (false, true) => {
                    self.tables[t].rest = s2;
                    self.rests[s2].tables.push(t);
                }
                (true, true) => {
                    keep.push(t);
                    let movers: Vec<usize> = self.tables[t]
                        .members
                        .iter()
                        .copied()
                        .filter(|&c| self.group_rest[group_of[c]] == s2)
                        .collect();
                    let dish = self.tables[t].dish;
                    // split_table registers the new table under tables[t].rest
                    self.tables[t].rest = s2;
                    let nt = self.split_table(t, &movers, dish);
                    self.tables[t].rest = s;
                    debug_assert_eq!(self.tables[nt].rest, s2);
                }
                (false, false) => unreachable!("empty table"),
            }
        }
        self.rests[s].tables = keep;
        s2
    }

    /// Merge restaurant `s2` into `s1`, fusing each `(a in s1, b in s2)` pair.
    pub fn merge_restaurants(&mut self, s1: usize, s2: usize, fused: &[(usize, usize)]) {
        let gone = std::mem::take(&mut self.rests[s2]);
        for &g in &gone.groups {
            self.group_rest[g] = s1;
        }
        for &t in &gone.tables {
            self.tables[t].rest = s1;
        }
        let r1 = &mut self.rests[s1];
        r1.groups.extend_from_slice(&gone.groups);
        r1.n_customers += gone.n_customers;
        r1.tables.extend_from_slice(&gone.tables);
        self.rest_ids.remove(s2);
        self.free_rests.push(s2);
        for &(a, b) in fused {
            self.fuse_tables(a, b);
        }
    }

    /// Customers of restaurant `s`, in group order.
    pub fn customers_of_rest(&self, s: usize) -> impl Iterator<Item = usize> + '_ {
        self.rests[s]
            .groups
            .iter()
            .flat_map(move |&g| self.data.customers_of(g).iter().copied())
    }

    #[cfg(test)]
    pub fn assert_consistent(&self) {
        let state = self.to_state();
        crate::state::validate(&state, self.data).expect("valid franchise");
        for &t in &self.table_ids.items {
            let tab = &self.tables[t];
            assert!(!tab.members.is_empty());
            assert!(tab.members.windows(2).all(|w| w[0] < w[1]), "members out of order");
            for &c in &tab.members {
                assert_eq!(self.cust_table[c], t);
                assert_eq!(self.rest_of_customer(c), tab.rest);
            }
            assert!(self.rests[tab.rest].tables.contains(&t));
            assert!(self.dishes[tab.dish].tables.contains(&t));
        }
        for &d in &self.dish_ids.items {
            let mut s = ClusterStats::default();
            for &t in &self.dishes[d].tables {
                s = s.merged(&self.tables[t].stats);
            }
            assert_eq!(s.n, self.dishes[d].stats.n);
            assert!((s.sum - self.dishes[d].stats.sum).abs() < 1e-8);
        }
        for &r in &self.rest_ids.items {
            let n: usize = self.rests[r]
                .groups
                .iter()
                .map(|&g| self.data.customers_of(g).len())
                .sum();
            assert_eq!(n, self.rests[r].n_customers);
        }
    }
}

/// Union of two disjoint ascending lists, ascending.
pub(crate) fn merge_ascending(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        if a[i] < b[j] {
            out.push(a[i]);
            i += 1;
        } else {
            out.push(b[j]);
            j += 1;
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}
