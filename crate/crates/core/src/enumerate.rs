//! Exhaustive enumeration of franchise states for tiny datasets.

use crate::data::TwoLevelDataset;
use crate::error::{Error, Result};
use crate::state::{canonical_labels, CrfState};

/// Largest dataset `enumerate_states` accepts.
pub const MAX_ENUM_CUSTOMERS: usize = 8;

/// All set partitions of `n` items as restricted growth strings.
pub fn set_partitions(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; n];
    fn rec(i: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if i == cur.len() {
            out.push(cur.clone());
            return;
        }
        for l in 0..=max {
            cur[i] = l;
            rec(i + 1, if l == max { max + 1 } else { max }, cur, out);
        }
    }
    if n == 0 {
        out.push(Vec::new());
    } else {
        rec(1, 1, &mut cur, &mut out);
    }
    out
}

/// Every canonical `(r, t, k)` configuration of the dataset, each once.
pub fn enumerate_states(data: &TwoLevelDataset) -> Result<std::vec::IntoIter<CrfState>> {
    let n = data.n_customers();
    if n > MAX_ENUM_CUSTOMERS {
        return Err(Error::EnumerationLimit {
            customers: n,
            max: MAX_ENUM_CUSTOMERS,
        });
    }
    let group_of = data.group_of();
    let mut partition_cache: Vec<Vec<Vec<usize>>> = (0..=n).map(set_partitions).collect();
    let mut states = Vec::new();
    for r in set_partitions(data.n_groups()) {
        let n_rest = r.iter().max().map_or(0, |m| m + 1);
        let customers: Vec<Vec<usize>> = (0..n_rest)
            .map(|s| (0..n).filter(|&c| r[group_of[c]] == s).collect())
            .collect();
        // odometer over one table partition per restaurant
        let mut idx = vec![0usize; n_rest];
        loop {
            let mut scoped = vec![(0usize, 0usize); n];
            for (s, cs) in customers.iter().enumerate() {
                let part = &partition_cache[cs.len()][idx[s]];
                for (pos, &c) in cs.iter().enumerate() {
                    scoped[c] = (s, part[pos]);
                }
            }
            let keys: Vec<usize> = scoped.iter().map(|&(s, t)| s * (n + 1) + t).collect();
            let table = canonical_labels(&keys);
            let n_tables = table.iter().max().map_or(0, |m| m + 1);
            if partition_cache.len() <= n_tables {
                partition_cache.resize_with(n_tables + 1, Vec::new);
            }
            if partition_cache[n_tables].is_empty() {
                partition_cache[n_tables] = set_partitions(n_tables);
            }
            for dish in &partition_cache[n_tables] {
                states.push(CrfState {
                    group_of: group_of.to_vec(),
                    restaurant: r.clone(),
                    table: table.clone(),
                    dish: dish.clone(),
                });
            }
            // advance
            let mut s = 0;
            loop {
                if s == n_rest {
                    break;
                }
                idx[s] += 1;
                if idx[s] < partition_cache[customers[s].len()].len() {
                    break;
                }
                idx[s] = 0;
                s += 1;
            }
            if s == n_rest {
                break;
            }
        }
    }
    Ok(states.into_iter())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn stirling2(n: usize, k: usize) -> u64 {
        let mut s = vec![vec![0u64; n + 1]; n + 1];
        s[0][0] = 1;
        for i in 1..=n {
            for j in 1..=i {
                s[i][j] = j as u64 * s[i - 1][j] + s[i - 1][j - 1];
            }
        }
        s[n][k]
    }

    fn bell(n: usize) -> u64 {
        (0..=n).map(|k| stirling2(n, k)).sum()
    }

    /// Count states combinatorially: restaurant partitions, per-restaurant
    /// table counts weighted by Stirling numbers, then Bell(#tables) dish
    /// partitions.
    fn count_states(group_sizes: &[usize]) -> u64 {
        let mut total = 0;
        for r in set_partitions(group_sizes.len()) {
            let n_rest = r.iter().max().map_or(0, |m| m + 1);
            let sizes: Vec<usize> = (0..n_rest)
                .map(|s| {
                    r.iter()
                        .zip(group_sizes)
                        .filter(|(&x, _)| x == s)
                        .map(|(_, &n)| n)
                        .sum()
                })
                .collect();
            // distribution of total tables
            let mut ways = vec![0u64; 1];
            ways[0] = 1;
            for &n in &sizes {
                let mut next = vec![0u64; ways.len() + n];
                for (t, &w) in ways.iter().enumerate() {
                    for m in 1..=n {
                        next[t + m] += w * stirling2(n, m);
                    }
                }
                ways = next;
            }
            total += ways
                .iter()
                .enumerate()
                .map(|(t, &w)| w * bell(t))
                .sum::<u64>();
        }
        total
    }

    fn data(sizes: &[usize]) -> TwoLevelDataset {
        let groups: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
        TwoLevelDataset::from_groups(&groups).unwrap()
    }

    #[test]
    fn set_partition_counts_are_bell_numbers() {
        for n in 0..7 {
            assert_eq!(set_partitions(n).len() as u64, bell(n));
        }
    }

    #[test]
    fn small_counts() {
        assert_eq!(enumerate_states(&data(&[1])).unwrap().count(), 1);
        assert_eq!(enumerate_states(&data(&[2])).unwrap().count(), 3);
        assert_eq!(enumerate_states(&data(&[1, 1])).unwrap().count(), 5);
    }

    #[test]
    fn counts_match_combinatorial_formula() {
        for sizes in [&[3][..], &[2, 1], &[2, 2], &[1, 1, 1], &[2, 1, 2], &[3, 3]] {
            let n = enumerate_states(&data(sizes)).unwrap().count() as u64;
            assert_eq!(n, count_states(sizes), "sizes {sizes:?}");
        }
    }

    #[test]
    fn states_are_valid_canonical_and_distinct() {
        let d = data(&[2, 1, 2]);
        let states: Vec<CrfState> = enumerate_states(&d).unwrap().collect();
        let mut seen = HashSet::new();
        for s in &states {
            assert!(crate::state::validate(s, &d).is_ok());
            assert_eq!(&s.canonical(), s);
            assert!(seen.insert(s.clone()));
        }
    }

    #[test]
    fn guard_rejects_large_inputs() {
        assert!(enumerate_states(&data(&[5, 4])).is_err());
    }

    #[test]
    fn some_state_crosses_group_clusters() {
        let d = data(&[1, 1]);
        let crossing = enumerate_states(&d).unwrap().any(|s| {
            let p = crate::state::induced_partitions(&s).unwrap();
            p.gamma_l[0] != p.gamma_l[1] && p.gamma_h[0] == p.gamma_h[1]
        });
        assert!(crossing);
    }
}
