//! Chinese-restaurant-franchise latent state.
//!
//! Groups (low-resolution units) sit in restaurants, customers
//! (high-resolution units) sit at tables inside their group's restaurant, and
//! tables are served dishes shared across restaurants. Restaurants induce the
//! low-resolution partition, dishes the high-resolution one.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::TwoLevelDataset;
use crate::error::{Error, Result};
use crate::model::PriorBlocks;

/// Latent franchise configuration as a plain value.
///
/// Table labels are global; a table belongs to the restaurant of its
/// customers' groups.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CrfState {
    /// Fixed customer -> group map.
    pub group_of: Vec<usize>,
    /// Group -> restaurant.
    pub restaurant: Vec<usize>,
    /// Customer -> table.
    pub table: Vec<usize>,
    /// Table -> dish.
    pub dish: Vec<usize>,
}

/// The two induced flat partitions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PartitionPair {
    /// Group -> low-resolution cluster.
    pub gamma_l: Vec<usize>,
    /// Customer -> high-resolution cluster.
    pub gamma_h: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    CustomerCount { state: usize, data: usize },
    GroupCount { state: usize, data: usize },
    GroupMismatch { customer: usize },
    GroupOutOfRange { customer: usize, group: usize },
    TableOutOfRange { customer: usize, table: usize },
    EmptyRestaurant { restaurant: usize },
    EmptyTable { table: usize },
    EmptyDish { dish: usize },
    TableSpansRestaurants { table: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::CustomerCount { state, data } => {
                write!(f, "state has {state} customers, data has {data}")
            }
            Violation::GroupCount { state, data } => {
                write!(f, "state has {state} groups, data has {data}")
            }
            Violation::GroupMismatch { customer } => {
                write!(f, "customer {customer} has a different group than in the data")
            }
            Violation::GroupOutOfRange { customer, group } => {
                write!(f, "customer {customer} points to missing group {group}")
            }
            Violation::TableOutOfRange { customer, table } => {
                write!(f, "customer {customer} sits at table {table} which has no dish")
            }
            Violation::EmptyRestaurant { restaurant } => {
                write!(f, "empty restaurant {restaurant}")
            }
            Violation::EmptyTable { table } => write!(f, "empty table {table}"),
            Violation::EmptyDish { dish } => write!(f, "empty dish {dish}"),
            Violation::TableSpansRestaurants { table } => {
                write!(f, "table {table} spans restaurants")
            }
        }
    }
}

/// Side of a restaurant split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    First,
    Second,
}

/// Result of [`apply_restaurant_split`].
#[derive(Debug, Clone, PartialEq)]
pub struct RestaurantSplit {
    pub state: CrfState,
    /// Label of the restaurant created for [`Side::Second`], if any group moved.
    pub created: Option<usize>,
    /// `(table kept in the first side, sub-table created in the second side)`
    /// for every table that had customers on both sides.
    pub split_tables: Vec<(usize, usize)>,
}

/// Relabel by order of first appearance.
pub fn canonical_labels(labels: &[usize]) -> Vec<usize> {
    let mut map: BTreeMap<usize, usize> = BTreeMap::new();
    labels
        .iter()
        .map(|&l| {
            let next = map.len();
            *map.entry(l).or_insert(next)
        })
        .collect()
}

impl CrfState {
    /// Every group in one restaurant, every customer at one table with one dish.
    pub fn all_merged(group_of: &[usize], n_groups: usize) -> Self {
        CrfState {
            group_of: group_of.to_vec(),
            restaurant: vec![0; n_groups],
            table: vec![0; group_of.len()],
            dish: vec![0],
        }
    }

    /// Every group its own restaurant, every customer its own table and dish.
    pub fn all_separate(group_of: &[usize], n_groups: usize) -> Self {
        let n = group_of.len();
        CrfState {
            group_of: group_of.to_vec(),
            restaurant: (0..n_groups).collect(),
            table: (0..n).collect(),
            dish: (0..n).collect(),
        }
    }

    pub fn for_dataset_merged(data: &TwoLevelDataset) -> Self {
        Self::all_merged(data.group_of(), data.n_groups())
    }

    pub fn n_customers(&self) -> usize {
        self.group_of.len()
    }

    pub fn n_groups(&self) -> usize {
        self.restaurant.len()
    }

    pub fn n_tables(&self) -> usize {
        self.dish.len()
    }

    pub fn n_restaurants(&self) -> usize {
        self.restaurant.iter().max().map_or(0, |m| m + 1)
    }

    pub fn n_dishes(&self) -> usize {
        self.dish.iter().max().map_or(0, |m| m + 1)
    }

    /// Restaurant of a customer through its group.
    pub fn restaurant_of_customer(&self, c: usize) -> usize {
        self.restaurant[self.group_of[c]]
    }

    /// Dish eaten by each customer, `k ∘ t`.
    pub fn customer_dishes(&self) -> Vec<usize> {
        self.table.iter().map(|&t| self.dish[t]).collect()
    }

    /// Restaurant of each table (from its first customer).
    fn table_restaurants(&self) -> Vec<Option<usize>> {
        let mut out = vec![None; self.dish.len()];
        for (c, &t) in self.table.iter().enumerate() {
            if t < out.len() && out[t].is_none() {
                out[t] = Some(self.restaurant_of_customer(c));
            }
        }
        out
    }

    /// Structural checks that do not need the dataset.
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        let n_groups = self.restaurant.len();
        for (c, &g) in self.group_of.iter().enumerate() {
            if g >= n_groups {
                v.push(Violation::GroupOutOfRange { customer: c, group: g });
            }
        }
        if !v.is_empty() {
            return v;
        }
        let mut rest_used = vec![false; self.n_restaurants()];
        for &r in &self.restaurant {
            rest_used[r] = true;
        }
        for (r, used) in rest_used.iter().enumerate() {
            if !used {
                v.push(Violation::EmptyRestaurant { restaurant: r });
            }
        }
        let n_tables = self.dish.len();
        let mut table_rest: Vec<Option<usize>> = vec![None; n_tables];
        let mut spans = vec![false; n_tables];
        for (c, &t) in self.table.iter().enumerate() {
            if t >= n_tables {
                v.push(Violation::TableOutOfRange { customer: c, table: t });
                continue;
            }
            let r = self.restaurant_of_customer(c);
            match table_rest[t] {
                None => table_rest[t] = Some(r),
                Some(r0) if r0 != r => spans[t] = true,
                _ => {}
            }
        }
        for t in 0..n_tables {
            if table_rest[t].is_none() {
                v.push(Violation::EmptyTable { table: t });
            }
            if spans[t] {
                v.push(Violation::TableSpansRestaurants { table: t });
            }
        }
        let mut dish_used = vec![false; self.n_dishes()];
        for (t, &d) in self.dish.iter().enumerate() {
            if table_rest[t].is_some() {
                dish_used[d] = true;
            }
        }
        for (d, used) in dish_used.iter().enumerate() {
            if !used {
                v.push(Violation::EmptyDish { dish: d });
            }
        }
        v
    }

    pub(crate) fn check(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidState(v.iter().map(|x| x.to_string()).collect()))
        }
    }

    /// Same state with labels in order of first appearance: restaurants by
    /// group order, tables and dishes by customer order.
    pub fn canonical(&self) -> CrfState {
        let restaurant = canonical_labels(&self.restaurant);
        let table = canonical_labels(&self.table);
        let n_tables = table.iter().max().map_or(0, |m| m + 1);
        let mut first_old = vec![usize::MAX; n_tables];
        for (c, &t) in table.iter().enumerate() {
            if first_old[t] == usize::MAX {
                first_old[t] = self.table[c];
            }
        }
        let old_dishes: Vec<usize> = first_old.iter().map(|&t| self.dish[t]).collect();
        CrfState {
            group_of: self.group_of.clone(),
            restaurant,
            table,
            dish: canonical_labels(&old_dishes),
        }
    }

    /// Block sizes of the three Ewens-Pitman terms.
    pub fn prior_blocks(&self) -> Result<PriorBlocks> {
        self.check()?;
        let n_rest = self.n_restaurants();
        let mut restaurants = vec![0usize; n_rest];
        for &r in &self.restaurant {
            restaurants[r] += 1;
        }
        let mut table_sizes = vec![0usize; self.dish.len()];
        for &t in &self.table {
            table_sizes[t] += 1;
        }
        let mut tables = vec![Vec::new(); n_rest];
        for (t, r) in self.table_restaurants().into_iter().enumerate() {
            tables[r.expect("validated")].push(table_sizes[t]);
        }
        let mut dishes = vec![0usize; self.n_dishes()];
        for &d in &self.dish {
            dishes[d] += 1;
        }
        Ok(PriorBlocks {
            restaurants,
            tables,
            dishes,
        })
    }

    /// Drop unused labels while preserving relative order.
    fn compacted(mut self) -> CrfState {
        fn squeeze(used: &[bool]) -> Vec<usize> {
            let mut next = 0;
            used.iter()
                .map(|&u| {
                    let l = next;
                    if u {
                        next += 1;
                    }
                    l
                })
                .collect()
        }
        let mut rest_used = vec![false; self.n_restaurants()];
        for &r in &self.restaurant {
            rest_used[r] = true;
        }
        let rmap = squeeze(&rest_used);
        for r in &mut self.restaurant {
            *r = rmap[*r];
        }
        let mut table_used = vec![false; self.dish.len()];
        for &t in &self.table {
            table_used[t] = true;
        }
        let tmap = squeeze(&table_used);
        for t in &mut self.table {
            *t = tmap[*t];
        }
        let dish: Vec<usize> = self
            .dish
            .iter()
            .zip(&table_used)
            .filter(|(_, &u)| u)
            .map(|(&d, _)| d)
            .collect();
        let mut dish_used = vec![false; dish.iter().max().map_or(0, |m| m + 1)];
        for &d in &dish {
            dish_used[d] = true;
        }
        let dmap = squeeze(&dish_used);
        self.dish = dish.into_iter().map(|d| dmap[d]).collect();
        self
    }
}

/// Induced low/high-resolution partitions, canonically labelled.
pub fn induced_partitions(state: &CrfState) -> Result<PartitionPair> {
    state.check()?;
    Ok(PartitionPair {
        gamma_l: canonical_labels(&state.restaurant),
        gamma_h: canonical_labels(&state.customer_dishes()),
    })
}

/// Check every franchise invariant against the dataset.
pub fn validate(
    state: &CrfState,
    data: &TwoLevelDataset,
) -> std::result::Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    if state.n_customers() != data.n_customers() {
        v.push(Violation::CustomerCount {
            state: state.n_customers(),
            data: data.n_customers(),
        });
    }
    if state.n_groups() != data.n_groups() {
        v.push(Violation::GroupCount {
            state: state.n_groups(),
            data: data.n_groups(),
        });
    }
    if v.is_empty() {
        for (c, (&a, &b)) in state.group_of.iter().zip(data.group_of()).enumerate() {
            if a != b {
                v.push(Violation::GroupMismatch { customer: c });
            }
        }
        v.extend(state.violations());
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

/// Split restaurant `s` by moving the groups marked [`Side::Second`] to a new
/// restaurant. Tables whose customers end up on both sides are cut into two
/// sub-tables serving the same dish, so every customer keeps its dish.
///
/// `assignment` must cover exactly the groups of `s`. If every group lands on
/// one side the state is returned unchanged.
pub fn apply_restaurant_split(
    state: &CrfState,
    s: usize,
    assignment: &BTreeMap<usize, Side>,
) -> Result<RestaurantSplit> {
    state.check()?;
    let members: Vec<usize> = (0..state.n_groups())
        .filter(|&g| state.restaurant[g] == s)
        .collect();
    if members.is_empty() {
        return Err(Error::Proposal(format!("restaurant {s} does not exist")));
    }
    if assignment.len() != members.len() || members.iter().any(|g| !assignment.contains_key(g))
    {
        return Err(Error::Proposal(format!(
            "assignment must cover exactly the groups of restaurant {s}"
        )));
    }
    let n_second = assignment.values().filter(|&&x| x == Side::Second).count();
    if n_second == 0 || n_second == members.len() {
        return Ok(RestaurantSplit {
            state: state.clone(),
            created: None,
            split_tables: Vec::new(),
        });
    }
    let mut out = state.clone();
    let created = state.n_restaurants();
    for (&g, &side) in assignment {
        if side == Side::Second {
            out.restaurant[g] = created;
        }
    }
    // tables of s with customers on each side
    let n_tables = state.n_tables();
    let mut on_first = vec![false; n_tables];
    let mut on_second = vec![false; n_tables];
    for c in 0..state.n_customers() {
        let g = state.group_of[c];
        if state.restaurant[g] != s {
            continue;
        }
        match assignment[&g] {
            Side::First => on_first[state.table[c]] = true,
            Side::Second => on_second[state.table[c]] = true,
        }
    }
    let mut sub_table = vec![usize::MAX; n_tables];
    let mut split_tables = Vec::new();
    for t in 0..n_tables {
        if on_first[t] && on_second[t] {
            let new_t = out.dish.len();
            out.dish.push(state.dish[t]);
            sub_table[t] = new_t;
            split_tables.push((t, new_t));
        }
    }
    for c in 0..state.n_customers() {
        let t = state.table[c];
        if sub_table[t] != usize::MAX && out.restaurant[state.group_of[c]] == created {
            out.table[c] = sub_table[t];
        }
    }
    Ok(RestaurantSplit {
        state: out,
        created: Some(created),
        split_tables,
    })
}

/// Merge restaurants `s1` and `s2`. Each `(a, b)` pair in `matching` links a
/// table of `s1` with a table of `s2` serving the same dish; pairs whose flag
/// is set are fused into one table. Customer dishes never change.
pub fn apply_restaurant_merge(
    state: &CrfState,
    s1: usize,
    s2: usize,
    matching: &[(usize, usize)],
    merge_flags: &[bool],
) -> Result<CrfState> {
    state.check()?;
    let n_rest = state.n_restaurants();
    if s1 == s2 || s1 >= n_rest || s2 >= n_rest {
        return Err(Error::Proposal(format!(
            "cannot merge restaurants {s1} and {s2}"
        )));
    }
    if matching.len() != merge_flags.len() {
        return Err(Error::Proposal(
            "matching and merge flags differ in length".into(),
        ));
    }
    let table_rest = state.table_restaurants();
    let mut seen = vec![false; state.n_tables()];
    for &(a, b) in matching {
        if a >= state.n_tables() || b >= state.n_tables() {
            return Err(Error::Proposal(format!("pair ({a}, {b}) names a missing table")));
        }
        if table_rest[a] != Some(s1) || table_rest[b] != Some(s2) {
            return Err(Error::Proposal(format!(
                "pair ({a}, {b}) does not link restaurant {s1} to {s2}"
            )));
        }
        if state.dish[a] != state.dish[b] {
            return Err(Error::Proposal(format!(
                "pair ({a}, {b}) crosses dishes {} and {}",
                state.dish[a], state.dish[b]
            )));
        }
        if seen[a] || seen[b] {
            return Err(Error::Proposal(format!("table in pair ({a}, {b}) matched twice")));
        }
        seen[a] = true;
        seen[b] = true;
    }
    let mut out = state.clone();
    for r in &mut out.restaurant {
        if *r == s2 {
            *r = s1;
        }
    }
    let mut fuse = vec![usize::MAX; state.n_tables()];
    for (&(a, b), &flag) in matching.iter().zip(merge_flags) {
        if flag {
            fuse[b] = a;
        }
    }
    for t in &mut out.table {
        if fuse[*t] != usize::MAX {
            *t = fuse[*t];
        }
    }
    Ok(out.compacted())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_groups() -> CrfState {
        // groups: 0 -> customers 0,1 ; 1 -> customers 2,3
        CrfState {
            group_of: vec![0, 0, 1, 1],
            restaurant: vec![0, 0],
            table: vec![0, 1, 0, 1],
            dish: vec![0, 1],
        }
    }

    #[test]
    fn induced_extremes() {
        let sep = CrfState::all_separate(&[0, 0, 1], 2);
        let p = induced_partitions(&sep).unwrap();
        assert_eq!(p.gamma_l, vec![0, 1]);
        assert_eq!(p.gamma_h, vec![0, 1, 2]);
        let merged = CrfState::all_merged(&[0, 0, 1], 2);
        let p = induced_partitions(&merged).unwrap();
        assert_eq!(p.gamma_l, vec![0, 0]);
        assert_eq!(p.gamma_h, vec![0, 0, 0]);
    }

    #[test]
    fn shared_dish_across_restaurants_is_not_nested() {
        let s = CrfState {
            group_of: vec![0, 1],
            restaurant: vec![0, 1],
            table: vec![0, 1],
            dish: vec![0, 0],
        };
        let p = induced_partitions(&s).unwrap();
        assert_ne!(p.gamma_l[0], p.gamma_l[1]);
        assert_eq!(p.gamma_h[0], p.gamma_h[1]);
    }

    #[test]
    fn violations_are_reported() {
        let data = crate::data::TwoLevelDataset::from_groups(&[vec![0.0], vec![1.0]]).unwrap();
        let ok = CrfState::for_dataset_merged(&data);
        assert!(validate(&ok, &data).is_ok());

        let spans = CrfState {
            group_of: vec![0, 1],
            restaurant: vec![0, 1],
            table: vec![0, 0],
            dish: vec![0],
        };
        let v = validate(&spans, &data).unwrap_err();
        assert!(v.iter().any(|x| x.to_string() == "table 0 spans restaurants"));

        let dangling = CrfState {
            group_of: vec![0, 1],
            restaurant: vec![0, 0],
            table: vec![0, 0],
            dish: vec![1],
        };
        let v = validate(&dangling, &data).unwrap_err();
        assert!(v.contains(&Violation::EmptyDish { dish: 0 }));
    }

    #[test]
    fn canonical_is_relabel_invariant() {
        let a = two_groups();
        let b = CrfState {
            group_of: a.group_of.clone(),
            restaurant: vec![5, 5],
            table: vec![1, 0, 1, 0],
            dish: vec![3, 7],
        };
        let b = CrfState {
            dish: vec![7, 3],
            ..b
        };
        assert_eq!(a.canonical(), b.canonical());
    }

    #[test]
    fn split_identity_when_one_sided() {
        let s = two_groups();
        let asg = BTreeMap::from([(0, Side::First), (1, Side::First)]);
        let out = apply_restaurant_split(&s, 0, &asg).unwrap();
        assert_eq!(out.state, s);
        assert!(out.created.is_none());
    }

    #[test]
    fn split_cuts_shared_tables() {
        let s = two_groups();
        let asg = BTreeMap::from([(0, Side::First), (1, Side::Second)]);
        let out = apply_restaurant_split(&s, 0, &asg).unwrap();
        assert!(out.state.violations().is_empty());
        assert_eq!(out.split_tables.len(), 2);
        for &(a, b) in &out.split_tables {
            assert_eq!(out.state.dish[a], out.state.dish[b]);
        }
        assert_eq!(out.state.customer_dishes(), s.customer_dishes());
        let flags = vec![true; out.split_tables.len()];
        let back = apply_restaurant_merge(&out.state, 0, 1, &out.split_tables, &flags).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn split_requires_exact_cover() {
        let s = two_groups();
        let asg = BTreeMap::from([(0, Side::First)]);
        assert!(apply_restaurant_split(&s, 0, &asg).is_err());
    }

    #[test]
    fn merge_rules() {
        let s = CrfState {
            group_of: vec![0, 0, 1, 1],
            restaurant: vec![0, 1],
            table: vec![0, 1, 2, 3],
            dish: vec![0, 1, 0, 2],
        };
        let union = apply_restaurant_merge(&s, 0, 1, &[], &[]).unwrap();
        assert_eq!(union.n_tables(), 4);
        assert_eq!(union.n_restaurants(), 1);
        let fused = apply_restaurant_merge(&s, 0, 1, &[(0, 2)], &[true]).unwrap();
        assert_eq!(fused.n_tables(), 3);
        assert_eq!(fused.customer_dishes().len(), 4);
        assert!(fused.violations().is_empty());
        assert!(apply_restaurant_merge(&s, 0, 1, &[(1, 3)], &[true]).is_err());
    }
}
