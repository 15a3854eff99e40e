//! Areal workflow on the bundled synthetic city: aggregate point events into
//! block groups, standardize densities, fit with the real-data defaults and
//! report block-group clusters on the original density scale.
//!
//! The data in `examples/data` are simulated; they only share the shape of a
//! city with 202 block groups in 56 tracts.

use std::path::Path;

use nhdp::eval::{evaluate, MinViConfig};
use nhdp::io::geo::aggregate_points;
use nhdp::io::ingest::dataset_from_records;
use nhdp::io::output::cluster_rows;
use nhdp::sampler::{sample_posterior, ChainConfig};
use nhdp::Hyperparams;

fn main() -> nhdp::Result<()> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data");
    let agg = aggregate_points(&dir.join("city_events.csv"), &dir.join("city_units.geojson"))?;
    println!(
        "{} units, counts averaged over {} years, {} events outside every unit",
        agg.records.len(),
        agg.n_years,
        agg.unassigned
    );
    let data = dataset_from_records(&agg.records)?.standardized()?;
    println!("{} block groups in {} tracts", data.n_customers(), data.n_groups());

    let hp = Hyperparams::real_data_default();
    let cfg = ChainConfig {
        n_iter: 3000,
        burn_in: 1000,
        thin: 5,
        n_chains: 2,
        seed: 2018,
        ..ChainConfig::default()
    };
    let samples = sample_posterior(&data, &hp, &cfg)?;
    let (pair, m) = evaluate(&samples, None, hp.k0, &MinViConfig::default())?;
    println!("{} tract clusters, {} block-group clusters", m.n_clusters_low, m.n_clusters_high);

    let rows = cluster_rows(&pair, &data);
    let mut means: Vec<(String, usize, f64)> = Vec::new();
    for r in rows.iter().filter(|r| r.level == nhdp::eval::Level::High) {
        if !means.iter().any(|(_, c, _)| *c == r.cluster) {
            let size = rows.iter().filter(|o| o.level == r.level && o.cluster == r.cluster).count();
            means.push((format!("{size} units"), r.cluster, r.cluster_mean));
        }
    }
    means.sort_by(|a, b| a.2.total_cmp(&b.2));
    for (size, c, mean) in means {
        println!("cluster {c:>2}: {size:>10}, mean density {mean:.2} per km2 per year");
    }
    Ok(())
}
