//! Two-stage k-means comparator: cluster the customers' values, then cluster
//! the groups by their proportions of each high-resolution cluster.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TwoLevelDataset;
use crate::error::{Error, Result};
use crate::state::{canonical_labels, PartitionPair};

pub const DEFAULT_RESTARTS: usize = 10;
const MAX_LLOYD_ITERS: usize = 300;

/// Points of equal dimension, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    coords: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || coords.len() % dim != 0 {
            return Err(Error::Clustering(format!(
                "{} coordinates do not split into rows of {dim}",
                coords.len()
            )));
        }
        Ok(Points { dim, coords })
    }

    pub fn scalars(values: &[f64]) -> Self {
        Points {
            dim: 1,
            coords: values.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    fn n_distinct(&self) -> usize {
        let mut rows: Vec<&[f64]> = (0..self.len()).map(|i| self.row(i)).collect();
        rows.sort_by(|a, b| {
            a.iter()
                .zip(*b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        rows.dedup();
        rows.len()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Mean silhouette width with Euclidean distances. Points alone in their
/// cluster, and points with `a = b = 0`, score 0.
pub fn silhouette(points: &Points, labels: &[usize]) -> Result<f64> {
    let n = points.len();
    if labels.len() != n {
        return Err(Error::LengthMismatch(labels.len(), n));
    }
    let k = labels.iter().max().map_or(0, |&m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if sizes.iter().filter(|&&s| s > 0).count() < 2 {
        return Err(Error::Clustering("silhouette needs at least two clusters".into()));
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[labels[j]] += sq_dist(points.row(i), points.row(j)).sqrt();
            }
        }
        let own = labels[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && sizes[c] > 0)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansFit {
    pub labels: Vec<usize>,
    /// Row-major, `k × dim`.
    pub centers: Vec<f64>,
    pub inertia: f64,
}

fn nearest(p: &[f64], centers: &[f64], dim: usize) -> (usize, f64) {
    centers
        .chunks(dim)
        .enumerate()
        .map(|(c, ctr)| (c, sq_dist(p, ctr)))
        .fold((0, f64::INFINITY), |best, x| if x.1 < best.1 { x } else { best })
}

fn plus_plus_seeds<R: Rng + ?Sized>(points: &Points, k: usize, rng: &mut R) -> Vec<f64> {
    let n = points.len();
    let mut centers = points.row(rng.random_range(0..n)).to_vec();
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(points.row(i), &centers)).collect();
    while centers.len() < k * points.dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let c = points.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), &c));
        }
        centers.extend(c);
    }
    centers
}

/// Lloyd's algorithm from k-means++ seeds. An emptied cluster is reseeded
/// at the point farthest from its center.
pub fn kmeans<R: Rng + ?Sized>(points: &Points, k: usize, rng: &mut R) -> Result<KmeansFit> {
    let (n, dim) = (points.len(), points.dim);
    if k == 0 || k > n {
        return Err(Error::Clustering(format!("cannot form {k} clusters from {n} points")));
    }
    let mut centers = plus_plus_seeds(points, k, rng);
    let mut labels = vec![usize::MAX; n];
    for _ in 0..MAX_LLOYD_ITERS {
        let mut changed = false;
        for (i, l) in labels.iter_mut().enumerate() {
            let (c, _) = nearest(points.row(i), &centers, dim);
            changed |= *l != c;
            *l = c;
        }
        if !changed {
            break;
        }
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            for (s, x) in sums[l * dim..(l + 1) * dim].iter_mut().zip(points.row(i)) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .map(|i| (i, nearest(points.row(i), &centers, dim).1))
                    .fold((0, -1.0), |best, x| if x.1 > best.1 { x } else { best })
                    .0;
                centers[c * dim..(c + 1) * dim].copy_from_slice(points.row(far));
                labels[far] = c;
            } else {
                for (ctr, s) in centers[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..]) {
                    *ctr = s / counts[c] as f64;
                }
            }
        }
    }
    let inertia = (0..n).map(|i| sq_dist(points.row(i), &centers[labels[i] * dim..(labels[i] + 1) * dim])).sum();
    Ok(KmeansFit {
        labels,
        centers,
        inertia,
    })
}

/// One stage of the comparator: the best of several restarts for every K,
/// and the K with the largest silhouette.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansResult {
    pub labels: Vec<usize>,
    pub centers: Vec<f64>,
    pub chosen_k: usize,
    /// `(K, silhouette)` for every K scanned.
    pub silhouette_by_k: Vec<(usize, f64)>,
}

/// Scan K over `2..=k_max` (capped by the number of distinct points), keep
/// the lowest-inertia fit of `restarts` runs per K, and choose K by the
/// silhouette; ties go to the smaller K.
pub fn select_kmeans(points: &Points, k_max: usize, restarts: usize, seed: u64) -> Result<KmeansResult> {
    if k_max < 2 {
        return Err(Error::Clustering(format!("k_max must be at least 2, got {k_max}")));
    }
    let distinct = points.n_distinct();
    if distinct < 2 {
        return Err(Error::Clustering(format!(
            "need at least 2 distinct points, got {distinct}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, KmeansFit)> = None;
    let mut curve = Vec::new();
    for k in 2..=k_max.min(distinct) {
        let mut fit: Option<KmeansFit> = None;
        for _ in 0..restarts.max(1) {
            let f = kmeans(points, k, &mut rng)?;
            if fit.as_ref().is_none_or(|b| f.inertia < b.inertia) {
                fit = Some(f);
            }
        }
        let fit = fit.expect("at least one restart");
        let s = silhouette(points, &fit.labels)?;
        curve.push((k, s));
        if best.as_ref().is_none_or(|(bs, _)| s > *bs) {
            best = Some((s, fit));
        }
    }
    let (_, fit) = best.expect("at least one K");
    let chosen_k = fit.centers.len() / points.dim;
    Ok(KmeansResult {
        labels: fit.labels,
        centers: fit.centers,
        chosen_k,
        silhouette_by_k: curve,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultilevelKmeans {
    pub pair: PartitionPair,
    pub high: KmeansResult,
    /// `None` when there are fewer than three groups or fewer than two
    /// distinct proportion vectors. Then groups with equal vectors share a
    /// cluster and two different groups are kept apart.
    pub low: Option<KmeansResult>,
    /// Per group, the share of its customers in each high-resolution cluster.
    pub proportions: Vec<Vec<f64>>,
}

pub fn default_k_max(n: usize) -> usize {
    20.min(n.saturating_sub(1))
}

/// K-means with silhouette selection on the customers' values, then on the
/// groups' vectors of high-resolution cluster proportions. `k_max` defaults
/// to `min(20, n − 1)` at each stage.
pub fn multilevel_kmeans(data: &TwoLevelDataset, k_max: Option<usize>, seed: u64) -> Result<MultilevelKmeans> {
    let values = data.values();
    let high = select_kmeans(
        &Points::scalars(values),
        k_max.unwrap_or_else(|| default_k_max(values.len())),
        DEFAULT_RESTARTS,
        seed,
    )?;
    let kh = high.chosen_k;
    let proportions: Vec<Vec<f64>> = (0..data.n_groups())
        .map(|g| {
            let cs = data.customers_of(g);
            let mut p = vec![0.0; kh];
            for &c in cs {
                p[high.labels[c]] += 1.0 / cs.len() as f64;
            }
            p
        })
        .collect();
    let points = Points::new(kh, proportions.concat())?;
    let n_groups = data.n_groups();
    let low = if points.n_distinct() >= 2 && n_groups >= 3 {
        Some(select_kmeans(
            &points,
            k_max.unwrap_or_else(|| default_k_max(n_groups)),
            DEFAULT_RESTARTS,
            seed.wrapping_add(1),
        )?)
    } else {
        None
    };
    let gamma_l = match &low {
        Some(r) => canonical_labels(&r.labels),
        None if points.n_distinct() >= 2 => (0..n_groups).collect(),
        None => vec![0; n_groups],
    };
    Ok(MultilevelKmeans {
        pair: PartitionPair {
            gamma_l,
            gamma_h: canonical_labels(&high.labels),
        },
        high,
        low,
        proportions,
    })
}
