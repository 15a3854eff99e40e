//! Output files and their readers.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::TwoLevelDataset;
use crate::error::{Error, Result};
use crate::eval::Level;
use crate::sampler::{AcceptanceStats, Draw, MoveCounts, PosteriorSamples};
use crate::state::PartitionPair;

pub const DRAWS_FILE: &str = "draws.csv";
pub const LABELS_LOW_FILE: &str = "labels_low.csv";
pub const LABELS_HIGH_FILE: &str = "labels_high.csv";
pub const CHAIN_STATS_FILE: &str = "chain_stats.json";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::input(path, e.to_string()))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::input(path, e.to_string()))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::Reader::from_path(path).map_err(|e| Error::input(path, e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
struct DrawRow {
    chain: usize,
    iteration: usize,
    sigma2: f64,
    alpha0: f64,
    alpha1: f64,
    alpha2: f64,
    log_posterior: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ChainStats {
    n_chains: usize,
    moves: MoveCounts,
    temperatures: Vec<f64>,
    acceptance: AcceptanceStats,
    trace: Vec<Vec<f64>>,
}

fn write_labels(path: &Path, ids: &[String], draws: &[Draw], level: Level) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["chain".to_string(), "iteration".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header)?;
    for d in draws {
        let mut row = vec![d.chain.to_string(), d.iteration.to_string()];
        row.extend(level.labels(&d.pair).iter().map(usize::to_string));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Rows of `(chain, iteration, labels)`.
fn read_labels(path: &Path) -> Result<(Vec<String>, Vec<(usize, usize, Vec<usize>)>)> {
    let mut r = csv_reader(path)?;
    let headers = r.headers()?.clone();
    if headers.len() < 2 || &headers[0] != "chain" || &headers[1] != "iteration" {
        return Err(Error::input(path, "expected chain,iteration,<unit ids>"));
    }
    let ids = headers.iter().skip(2).map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let nums: Vec<usize> = rec
            .iter()
            .map(|s| s.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::input(path, e.to_string()))?;
        rows.push((nums[0], nums[1], nums[2..].to_vec()));
    }
    Ok((ids, rows))
}

/// Write retained draws: the scalar draws, one label matrix per level and the
/// chain statistics.
pub fn write_samples(dir: &Path, samples: &PosteriorSamples, data: &TwoLevelDataset) -> Result<()> {
    let path = dir.join(DRAWS_FILE);
    let mut w = csv_writer(&path)?;
    for d in &samples.draws {
        w.serialize(DrawRow {
            chain: d.chain,
            iteration: d.iteration,
            sigma2: d.sigma2,
            alpha0: d.alpha0,
            alpha1: d.alpha1,
            alpha2: d.alpha2,
            log_posterior: d.log_posterior,
        })?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    write_labels(&dir.join(LABELS_LOW_FILE), data.group_ids(), &samples.draws, Level::Low)?;
    write_labels(&dir.join(LABELS_HIGH_FILE), data.unit_ids(), &samples.draws, Level::High)?;
    write_json(
        &dir.join(CHAIN_STATS_FILE),
        &ChainStats {
            n_chains: samples.n_chains,
            moves: samples.moves,
            temperatures: samples.temperatures.clone(),
            acceptance: samples.acceptance,
            trace: samples.trace.clone(),
        },
    )
}

pub fn read_samples(dir: &Path) -> Result<PosteriorSamples> {
    let path = dir.join(DRAWS_FILE);
    let rows: Vec<DrawRow> = csv_reader(&path)?
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::input(&path, e.to_string()))?;
    let (_, low) = read_labels(&dir.join(LABELS_LOW_FILE))?;
    let (_, high) = read_labels(&dir.join(LABELS_HIGH_FILE))?;
    if low.len() != rows.len() || high.len() != rows.len() {
        return Err(Error::input(dir, "draws and label files have different row counts"));
    }
    let mut draws = Vec::with_capacity(rows.len());
    for ((r, (lc, li, gl)), (hc, hi, gh)) in rows.into_iter().zip(low).zip(high) {
        if (lc, li) != (r.chain, r.iteration) || (hc, hi) != (r.chain, r.iteration) {
            return Err(Error::input(dir, format!("label rows out of step at chain {} iteration {}", r.chain, r.iteration)));
        }
        draws.push(Draw {
            chain: r.chain,
            iteration: r.iteration,
            pair: PartitionPair {
                gamma_l: gl,
                gamma_h: gh,
            },
            sigma2: r.sigma2,
            alpha0: r.alpha0,
            alpha1: r.alpha1,
            alpha2: r.alpha2,
            log_posterior: r.log_posterior,
        });
    }
    let stats: ChainStats = read_json(&dir.join(CHAIN_STATS_FILE))?;
    Ok(PosteriorSamples {
        draws,
        acceptance: stats.acceptance,
        trace: stats.trace,
        moves: stats.moves,
        temperatures: stats.temperatures,
        n_chains: stats.n_chains,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct PartitionRow {
    level: Level,
    unit_id: String,
    cluster: usize,
}

/// One row per group (`low`) and per customer (`high`).
pub fn write_partition_pair(path: &Path, pair: &PartitionPair, data: &TwoLevelDataset) -> Result<()> {
    if pair.gamma_l.len() != data.n_groups() || pair.gamma_h.len() != data.n_customers() {
        return Err(Error::Eval("partition does not match the dataset".into()));
    }
    let mut w = csv_writer(path)?;
    for (id, &c) in data.group_ids().iter().zip(&pair.gamma_l) {
        w.serialize(PartitionRow {
            level: Level::Low,
            unit_id: id.clone(),
            cluster: c,
        })?;
    }
    for (id, &c) in data.unit_ids().iter().zip(&pair.gamma_h) {
        w.serialize(PartitionRow {
            level: Level::High,
            unit_id: id.clone(),
            cluster: c,
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_partition_pair(path: &Path, data: &TwoLevelDataset) -> Result<PartitionPair> {
    let index = |ids: &[String]| -> HashMap<String, usize> {
        ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
    };
    let (groups, units) = (index(data.group_ids()), index(data.unit_ids()));
    let mut gl = vec![None; data.n_groups()];
    let mut gh = vec![None; data.n_customers()];
    for row in csv_reader(path)?.deserialize() {
        let row: PartitionRow = row.map_err(|e| Error::input(path, e.to_string()))?;
        let (map, slots) = match row.level {
            Level::Low => (&groups, &mut gl),
            Level::High => (&units, &mut gh),
        };
        let i = *map
            .get(&row.unit_id)
            .ok_or_else(|| Error::input(path, format!("unknown unit {}", row.unit_id)))?;
        slots[i] = Some(row.cluster);
    }
    let complete = |v: Vec<Option<usize>>| v.into_iter().collect::<Option<Vec<_>>>();
    match (complete(gl), complete(gh)) {
        (Some(gamma_l), Some(gamma_h)) => Ok(PartitionPair { gamma_l, gamma_h }),
        _ => Err(Error::input(path, "partition does not cover every unit")),
    }
}

/// Per-unit cluster and cluster mean on the original scale, for maps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub level: Level,
    pub unit_id: String,
    pub cluster: usize,
    pub cluster_mean: f64,
}

/// High level: mean original value over the cluster's customers. Low level:
/// mean over the cluster's groups of each group's mean original value.
pub fn cluster_rows(pair: &PartitionPair, data: &TwoLevelDataset) -> Vec<ClusterRow> {
    let orig = data.original_values();
    let group_means: Vec<f64> = (0..data.n_groups())
        .map(|g| {
            let cs = data.customers_of(g);
            cs.iter().map(|&c| orig[c]).sum::<f64>() / cs.len() as f64
        })
        .collect();
    let means = |labels: &[usize], values: &[f64]| {
        let k = labels.iter().max().map_or(0, |&m| m + 1);
        let mut sum = vec![0.0; k];
        let mut cnt = vec![0usize; k];
        for (&l, &v) in labels.iter().zip(values) {
            sum[l] += v;
            cnt[l] += 1;
        }
        sum.iter().zip(&cnt).map(|(s, &c)| s / c as f64).collect::<Vec<f64>>()
    };
    let low = means(&pair.gamma_l, &group_means);
    let high = means(&pair.gamma_h, &orig);
    let mut rows: Vec<ClusterRow> = data
        .group_ids()
        .iter()
        .zip(&pair.gamma_l)
        .map(|(id, &c)| ClusterRow {
            level: Level::Low,
            unit_id: id.clone(),
            cluster: c,
            cluster_mean: low[c],
        })
        .collect();
    rows.extend(data.unit_ids().iter().zip(&pair.gamma_h).map(|(id, &c)| ClusterRow {
        level: Level::High,
        unit_id: id.clone(),
        cluster: c,
        cluster_mean: high[c],
    }));
    rows
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    csv_reader(path)?
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::input(path, e.to_string()))
}
