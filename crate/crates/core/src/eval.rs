//! Partition distances, posterior similarity and point estimates.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TwoLevelDataset;
use crate::error::{Error, Result};
use crate::sampler::PosteriorSamples;
use crate::state::{canonical_labels, PartitionPair};
use crate::synth::SynthTruth;

/// Which induced partition to look at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    /// Groups (γ^L).
    Low,
    /// Customers (γ^H).
    High,
}

impl Level {
    pub fn labels(self, pair: &PartitionPair) -> &[usize] {
        match self {
            Level::Low => &pair.gamma_l,
            Level::High => &pair.gamma_h,
        }
    }
}

fn check_lengths(a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(())
}

fn x_ln_x(c: f64) -> f64 {
    if c > 0.0 {
        c * c.ln()
    } else {
        0.0
    }
}

/// Variation of information in nats.
pub fn vi_distance(p1: &[usize], p2: &[usize]) -> Result<f64> {
    check_lengths(p1, p2)?;
    let n = p1.len();
    if n == 0 {
        return Ok(0.0);
    }
    let (a, b) = (Dense::new(p1), Dense::new(p2));
    let mut pairs: Vec<(u32, u32)> = a.labels.iter().copied().zip(b.labels.iter().copied()).collect();
    pairs.sort_unstable();
    let (sa, sb) = (a.s, b.s);
    let sj: f64 = pairs
        .chunk_by(|x, y| x == y)
        .map(|run| x_ln_x(run.len() as f64))
        .sum();
    // VI = 2H(joint) - H(a) - H(b), each H = ln n - (1/n) Σ c ln c
    Ok(((sa + sb - 2.0 * sj) / n as f64).max(0.0))
}

/// Partition with dense labels `0..k`, ready for repeated VI evaluation.
#[derive(Debug, Clone)]
struct Dense {
    labels: Vec<u32>,
    k: usize,
    /// Σ c ln c over cluster sizes.
    s: f64,
}

impl Dense {
    fn new(labels: &[usize]) -> Self {
        let canon = canonical_labels(labels);
        let k = canon.iter().max().map_or(0, |&m| m + 1);
        let mut sizes = vec![0usize; k];
        for &l in &canon {
            sizes[l] += 1;
        }
        Dense {
            labels: canon.iter().map(|&l| l as u32).collect(),
            k,
            s: sizes.iter().map(|&c| x_ln_x(c as f64)).sum(),
        }
    }

    fn vi(&self, other: &Dense, scratch: &mut Vec<u32>) -> f64 {
        let n = self.labels.len();
        if n == 0 {
            return 0.0;
        }
        scratch.clear();
        scratch.resize(self.k * other.k, 0);
        for (&a, &b) in self.labels.iter().zip(&other.labels) {
            scratch[a as usize * other.k + b as usize] += 1;
        }
        let sj: f64 = scratch.iter().map(|&c| x_ln_x(c as f64)).sum();
        ((self.s + other.s - 2.0 * sj) / n as f64).max(0.0)
    }
}

/// Posterior similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Psm {
    n: usize,
    values: Vec<f64>,
}

impl Psm {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Row-major `n × n` entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn from_partitions<'a>(partitions: impl IntoIterator<Item = &'a [usize]>) -> Result<Psm> {
        Psm::from_weighted(partitions.into_iter().map(|p| (p, 1)))
    }

    /// PSM of partitions repeated `weight` times each.
    fn from_weighted<'a>(partitions: impl IntoIterator<Item = (&'a [usize], usize)>) -> Result<Psm> {
        let mut counts: Vec<u32> = Vec::new();
        let mut n = None;
        let mut draws = 0usize;
        let mut members: Vec<Vec<usize>> = Vec::new();
        for (labels, weight) in partitions {
            let len = *n.get_or_insert(labels.len());
            if labels.len() != len {
                return Err(Error::LengthMismatch(len, labels.len()));
            }
            if counts.is_empty() {
                counts = vec![0; len * len];
            }
            let canon = canonical_labels(labels);
            members.iter_mut().for_each(Vec::clear);
            for (i, &l) in canon.iter().enumerate() {
                if l >= members.len() {
                    members.resize_with(l + 1, Vec::new);
                }
                members[l].push(i);
            }
            let w = weight as u32;
            for m in &members {
                for &i in m {
                    let row = &mut counts[i * len..(i + 1) * len];
                    for &j in m {
                        row[j] += w;
                    }
                }
            }
            draws += weight;
        }
        if draws == 0 {
            return Err(Error::Eval("no draws to summarize".into()));
        }
        Ok(Psm {
            n: n.unwrap_or(0),
            values: counts.iter().map(|&c| c as f64 / draws as f64).collect(),
        })
    }
}

pub fn compute_psm(samples: &PosteriorSamples, level: Level) -> Result<Psm> {
    Psm::from_partitions(samples.draws.iter().map(|d| level.labels(&d.pair)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    #[default]
    Average,
    Complete,
}

/// One agglomeration step: clusters holding points `a` and `b` join at `height`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub height: f64,
}

/// Agglomerative clustering of a full symmetric distance matrix by the
/// nearest-neighbour chain. Returns the `n − 1` merges sorted by height.
pub fn agglomerate(dist: &[f64], n: usize, linkage: Linkage) -> Result<Vec<Merge>> {
    if dist.len() != n * n {
        return Err(Error::LengthMismatch(dist.len(), n * n));
    }
    let mut d = dist.to_vec();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    let mut chain: Vec<usize> = Vec::new();
    let mut remaining = n;
    while remaining > 1 {
        if chain.is_empty() {
            chain.push(active.iter().position(|&a| a).expect("an active cluster"));
        }
        let top = *chain.last().expect("non-empty chain");
        let prev = chain.len().checked_sub(2).map(|i| chain[i]);
        // prefer the previous chain element on ties so the chain terminates
        let mut best = prev.unwrap_or(usize::MAX);
        let mut best_d = prev.map_or(f64::INFINITY, |p| d[top * n + p]);
        for j in 0..n {
            if active[j] && j != top && d[top * n + j] < best_d {
                best = j;
                best_d = d[top * n + j];
            }
        }
        if Some(best) != prev {
            chain.push(best);
            continue;
        }
        chain.pop();
        chain.pop();
        let (a, b) = (top.min(best), top.max(best));
        merges.push(Merge { a, b, height: best_d });
        let (na, nb) = (size[a] as f64, size[b] as f64);
        for x in 0..n {
            if !active[x] || x == a || x == b {
                continue;
            }
            let nd = match linkage {
                Linkage::Average => (na * d[a * n + x] + nb * d[b * n + x]) / (na + nb),
                Linkage::Complete => d[a * n + x].max(d[b * n + x]),
            };
            d[a * n + x] = nd;
            d[x * n + a] = nd;
        }
        active[b] = false;
        size[a] += size[b];
        remaining -= 1;
    }
    merges.sort_by(|x, y| x.height.total_cmp(&y.height));
    Ok(merges)
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Labels after applying the first `n − k` merges.
pub fn cut(merges: &[Merge], n: usize, k: usize) -> Vec<usize> {
    let mut parent: Vec<usize> = (0..n).collect();
    for m in merges.iter().take(n.saturating_sub(k.max(1))) {
        let (ra, rb) = (find(&mut parent, m.a), find(&mut parent, m.b));
        parent[ra.max(rb)] = ra.min(rb);
    }
    let roots: Vec<usize> = (0..n).map(|i| find(&mut parent, i)).collect();
    canonical_labels(&roots)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinViConfig {
    pub linkage: Linkage,
    /// Largest number of distinct sampled partitions tried as candidates.
    /// Above it an evenly spaced subset (in order of first appearance) is
    /// used; the objective still averages over every retained draw.
    pub max_draw_candidates: usize,
}

impl Default for MinViConfig {
    fn default() -> Self {
        MinViConfig {
            linkage: Linkage::Average,
            max_draw_candidates: 1000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Candidate {
    /// Distinct sampled partition, by index of its first retained draw.
    Draw { index: usize },
    /// Cut of the PSM dendrogram into `k` clusters.
    Cut { k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEstimate {
    pub labels: Vec<usize>,
    pub mean_vi: f64,
    pub n_clusters: usize,
    pub source: Candidate,
}

/// Candidate minimizing the mean VI to all retained draws. Candidates are
/// the distinct sampled partitions and the cuts of the average (or
/// complete) linkage dendrogram of `1 − PSM` into 1 up to the largest
/// sampled number of clusters. Ties go to fewer clusters, then to the
/// earlier candidate.
pub fn minvi_point_estimate(
    samples: &PosteriorSamples,
    level: Level,
    cfg: &MinViConfig,
) -> Result<PointEstimate> {
    let partitions: Vec<&[usize]> = samples.draws.iter().map(|d| level.labels(&d.pair)).collect();
    minvi_from_partitions(&partitions, cfg)
}

pub fn minvi_from_partitions(partitions: &[&[usize]], cfg: &MinViConfig) -> Result<PointEstimate> {
    let Some(first) = partitions.first() else {
        return Err(Error::Eval("no draws to summarize".into()));
    };
    let n = first.len();
    for p in partitions {
        check_lengths(first, p)?;
    }
    // distinct draws with multiplicities, in order of first appearance
    let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut canon_unique: Vec<Vec<usize>> = Vec::new();
    let mut unique: Vec<(Dense, usize, usize)> = Vec::new();
    for (i, p) in partitions.iter().enumerate() {
        let canon = canonical_labels(p);
        match seen.get(&canon) {
            Some(&u) => unique[u].1 += 1,
            None => {
                seen.insert(canon.clone(), unique.len());
                unique.push((Dense::new(&canon), 1, i));
                canon_unique.push(canon);
            }
        }
    }
    let max_k = unique.iter().map(|(d, _, _)| d.k).max().unwrap_or(1);

    let mut candidates: Vec<(Candidate, Dense)> = Vec::new();
    let n_unique = unique.len();
    let take = cfg.max_draw_candidates.min(n_unique);
    for j in 0..take {
        let u = j * n_unique / take;
        candidates.push((Candidate::Draw { index: unique[u].2 }, unique[u].0.clone()));
    }
    let psm = Psm::from_weighted(canon_unique.iter().zip(&unique).map(|(c, u)| (c.as_slice(), u.1)))?;
    let dist: Vec<f64> = psm.values.iter().map(|p| 1.0 - p).collect();
    let merges = agglomerate(&dist, n, cfg.linkage)?;
    for k in 1..=max_k.min(n.max(1)) {
        candidates.push((Candidate::Cut { k }, Dense::new(&cut(&merges, n, k))));
    }

    let total = partitions.len() as f64;
    let scores: Vec<f64> = candidates
        .par_iter()
        .map_init(Vec::new, |scratch, (_, c)| {
            unique.iter().map(|(u, w, _)| *w as f64 * c.vi(u, scratch)).sum::<f64>() / total
        })
        .collect();
    let best = (0..candidates.len())
        .min_by(|&i, &j| {
            scores[i]
                .total_cmp(&scores[j])
                .then(candidates[i].1.k.cmp(&candidates[j].1.k))
                .then(i.cmp(&j))
        })
        .expect("at least one candidate");
    let (source, dense) = &candidates[best];
    Ok(PointEstimate {
        labels: dense.labels.iter().map(|&l| l as usize).collect(),
        mean_vi: scores[best],
        n_clusters: dense.k,
        source: *source,
    })
}

/// Posterior mean of each customer's cluster mean, `sum / (n + k0)` of its
/// dish averaged over draws.
pub fn theta_hat(samples: &PosteriorSamples, data: &TwoLevelDataset, k0: f64) -> Result<Vec<f64>> {
    let values = data.values();
    let mut acc = vec![0.0; values.len()];
    for d in &samples.draws {
        let labels = &d.pair.gamma_h;
        if labels.len() != values.len() {
            return Err(Error::LengthMismatch(labels.len(), values.len()));
        }
        let k = labels.iter().max().map_or(0, |&m| m + 1);
        let mut sum = vec![0.0; k];
        let mut cnt = vec![0usize; k];
        for (&l, &y) in labels.iter().zip(values) {
            sum[l] += y;
            cnt[l] += 1;
        }
        for (a, &l) in acc.iter_mut().zip(labels) {
            *a += sum[l] / (cnt[l] as f64 + k0);
        }
    }
    if samples.draws.is_empty() {
        return Err(Error::Eval("no draws to summarize".into()));
    }
    let m = samples.draws.len() as f64;
    Ok(acc.into_iter().map(|a| a / m).collect())
}

/// Per group, the mean of the group-level averages over the groups sharing
/// its low-resolution cluster, averaged over draws.
pub fn phi_hat(samples: &PosteriorSamples, data: &TwoLevelDataset) -> Result<Vec<f64>> {
    let gm = data.group_means();
    let mut acc = vec![0.0; gm.len()];
    for d in &samples.draws {
        let labels = &d.pair.gamma_l;
        if labels.len() != gm.len() {
            return Err(Error::LengthMismatch(labels.len(), gm.len()));
        }
        let k = labels.iter().max().map_or(0, |&m| m + 1);
        let mut sum = vec![0.0; k];
        let mut cnt = vec![0usize; k];
        for (&l, &y) in labels.iter().zip(&gm) {
            sum[l] += y;
            cnt[l] += 1;
        }
        for (a, &l) in acc.iter_mut().zip(labels) {
            *a += sum[l] / cnt[l] as f64;
        }
    }
    if samples.draws.is_empty() {
        return Err(Error::Eval("no draws to summarize".into()));
    }
    let m = samples.draws.len() as f64;
    Ok(acc.into_iter().map(|a| a / m).collect())
}

pub fn rmse(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(Error::LengthMismatch(estimate.len(), truth.len()));
    }
    if estimate.is_empty() {
        return Ok(0.0);
    }
    let ss: f64 = estimate.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((ss / estimate.len() as f64).sqrt())
}

pub fn rmse_theta(samples: &PosteriorSamples, truth: &SynthTruth, k0: f64) -> Result<f64> {
    rmse(&theta_hat(samples, &truth.dataset, k0)?, &truth.true_theta)
}

pub fn rmse_phi(samples: &PosteriorSamples, truth: &SynthTruth) -> Result<f64> {
    rmse(&phi_hat(samples, &truth.dataset)?, &truth.true_phi)
}

/// Recovery summary for one fitted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub vi_low: Option<f64>,
    pub vi_high: Option<f64>,
    pub rmse_theta: Option<f64>,
    pub rmse_phi: Option<f64>,
    pub n_clusters_low: usize,
    pub n_clusters_high: usize,
    pub true_clusters_low: Option<usize>,
    pub true_clusters_high: Option<usize>,
    pub mean_vi_low: f64,
    pub mean_vi_high: f64,
    pub n_draws: usize,
}

/// Point estimates at both levels plus, when a truth is given, their
/// recovery metrics.
pub fn evaluate(
    samples: &PosteriorSamples,
    truth: Option<&SynthTruth>,
    k0: f64,
    cfg: &MinViConfig,
) -> Result<(PartitionPair, Metrics)> {
    let low = minvi_point_estimate(samples, Level::Low, cfg)?;
    let high = minvi_point_estimate(samples, Level::High, cfg)?;
    let n_clusters = |l: &[usize]| l.iter().max().map_or(0, |&m| m + 1);
    let metrics = Metrics {
        vi_low: truth.map(|t| vi_distance(&low.labels, &t.true_pair.gamma_l)).transpose()?,
        vi_high: truth.map(|t| vi_distance(&high.labels, &t.true_pair.gamma_h)).transpose()?,
        rmse_theta: truth.map(|t| rmse_theta(samples, t, k0)).transpose()?,
        rmse_phi: truth.map(|t| rmse_phi(samples, t)).transpose()?,
        n_clusters_low: low.n_clusters,
        n_clusters_high: high.n_clusters,
        true_clusters_low: truth.map(|t| n_clusters(&t.true_pair.gamma_l)),
        true_clusters_high: truth.map(|t| n_clusters(&t.true_pair.gamma_h)),
        mean_vi_low: low.mean_vi,
        mean_vi_high: high.mean_vi,
        n_draws: samples.draws.len(),
    };
    let pair = PartitionPair {
        gamma_l: low.labels,
        gamma_h: high.labels,
    };
    Ok((pair, metrics))
}

#[cfg(test)]
mod tests;
