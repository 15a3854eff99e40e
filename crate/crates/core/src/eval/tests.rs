use approx::assert_abs_diff_eq;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random_partition(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..k)).collect()
}

/// Entropies from probability tables, without the Σ c ln c shortcut.
fn vi_oracle(a: &[usize], b: &[usize]) -> f64 {
    let n = a.len() as f64;
    let ka = a.iter().max().unwrap() + 1;
    let kb = b.iter().max().unwrap() + 1;
    let mut pj = vec![vec![0.0; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        pj[x][y] += 1.0 / n;
    }
    let pa: Vec<f64> = pj.iter().map(|r| r.iter().sum()).collect();
    let pb: Vec<f64> = (0..kb).map(|j| pj.iter().map(|r| r[j]).sum()).collect();
    let h = |p: &[f64]| -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>();
    let mut mi = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            if pj[i][j] > 0.0 {
                mi += pj[i][j] * (pj[i][j] / (pa[i] * pb[j])).ln();
            }
        }
    }
    h(&pa) + h(&pb) - 2.0 * mi
}

#[test]
fn vi_two_pairs_against_singletons_is_ln2() {
    let v = vi_distance(&[0, 0, 1, 1], &[0, 1, 2, 3]).unwrap();
    assert_abs_diff_eq!(v, std::f64::consts::LN_2, epsilon = 1e-12);
}

#[test]
fn vi_metric_properties() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.random_range(1..=20);
        let ps: Vec<Vec<usize>> = (0..3)
            .map(|_| {
                let k = rng.random_range(1..=n);
                random_partition(n, k, &mut rng)
            })
            .collect();
        let d = |i: usize, j: usize| vi_distance(&ps[i], &ps[j]).unwrap();
        assert_eq!(d(0, 0), 0.0);
        assert_abs_diff_eq!(d(0, 1), d(1, 0), epsilon = 1e-12);
        assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-12);
        assert_abs_diff_eq!(d(0, 1), vi_oracle(&ps[0], &ps[1]), epsilon = 1e-12);
    }
}

#[test]
fn vi_ignores_label_names() {
    let a = [0, 0, 1, 2, 2, 1];
    let b = [5, 5, 9, 9, 1, 1];
    let a2 = [7, 7, 3, 0, 0, 3];
    assert_eq!(vi_distance(&a, &a2).unwrap(), 0.0);
    assert_abs_diff_eq!(vi_distance(&a, &b).unwrap(), vi_distance(&a2, &b).unwrap(), epsilon = 1e-15);
}

#[test]
fn vi_length_mismatch_is_an_error() {
    assert!(matches!(vi_distance(&[0, 1], &[0]), Err(Error::LengthMismatch(2, 1))));
}

#[test]
fn dense_vi_matches_direct() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut scratch = Vec::new();
    for _ in 0..200 {
        let a = random_partition(30, 5, &mut rng);
        let b = random_partition(30, 8, &mut rng);
        let fast = Dense::new(&a).vi(&Dense::new(&b), &mut scratch);
        assert_abs_diff_eq!(fast, vi_distance(&a, &b).unwrap(), epsilon = 1e-12);
    }
}

#[test]
fn psm_of_one_draw_is_its_coclustering() {
    let p = [0, 1, 0, 2];
    let psm = Psm::from_partitions([&p[..]]).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            assert_eq!(psm.get(i, j), f64::from(u8::from(p[i] == p[j])));
        }
    }
}

#[test]
fn psm_of_alternating_draws_is_half() {
    let together = PartitionPair {
        gamma_l: vec![0, 0],
        gamma_h: vec![0, 0, 0],
    };
    let apart = PartitionPair {
        gamma_l: vec![0, 1],
        gamma_h: vec![0, 1, 1],
    };
    let samples = PosteriorSamples::from_pairs([together.clone(), apart.clone(), together, apart]);
    let psm = compute_psm(&samples, Level::Low).unwrap();
    assert_eq!(psm.get(0, 1), 0.5);
    assert_eq!(psm.get(1, 0), 0.5);
    assert_eq!(psm.get(0, 0), 1.0);
    let high = compute_psm(&samples, Level::High).unwrap();
    assert_eq!(high.get(0, 2), 0.5);
    assert_eq!(high.get(1, 2), 1.0);
}

#[test]
fn psm_needs_a_draw() {
    assert!(Psm::from_partitions(std::iter::empty()).is_err());
}

/// Textbook agglomeration: merge the closest pair by recomputing linkage
/// from the original points each step.
fn naive_cuts(dist: &[f64], n: usize, linkage: Linkage) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let labels = |cs: &[Vec<usize>]| {
        let mut l = vec![0; n];
        for (k, c) in cs.iter().enumerate() {
            for &i in c {
                l[i] = k;
            }
        }
        canonical_labels(&l)
    };
    let mut cuts = vec![labels(&clusters)];
    while clusters.len() > 1 {
        let link = |a: &[usize], b: &[usize]| {
            let ds = a.iter().flat_map(|&i| b.iter().map(move |&j| dist[i * n + j]));
            match linkage {
                Linkage::Average => ds.sum::<f64>() / (a.len() * b.len()) as f64,
                Linkage::Complete => ds.fold(f64::NEG_INFINITY, f64::max),
            }
        };
        let mut best = (0, 1, f64::INFINITY);
        for i in 0..clusters.len() {
            for j in i + 1..clusters.len() {
                let d = link(&clusters[i], &clusters[j]);
                if d < best.2 {
                    best = (i, j, d);
                }
            }
        }
        let b = clusters.remove(best.1);
        clusters[best.0].extend(b);
        cuts.push(labels(&clusters));
    }
    cuts.reverse();
    cuts
}

#[test]
fn agglomeration_matches_naive_clustering() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for linkage in [Linkage::Average, Linkage::Complete] {
        for _ in 0..30 {
            let n = rng.random_range(2..12);
            let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.random(), rng.random())).collect();
            let dist: Vec<f64> = (0..n * n)
                .map(|ij| {
                    let (a, b) = (pts[ij / n], pts[ij % n]);
                    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
                })
                .collect();
            let merges = agglomerate(&dist, n, linkage).unwrap();
            assert_eq!(merges.len(), n - 1);
            let expected = naive_cuts(&dist, n, linkage);
            for k in 1..=n {
                assert_eq!(cut(&merges, n, k), expected[k - 1], "{linkage:?} n={n} k={k}");
            }
        }
    }
}

#[test]
fn identical_draws_give_that_partition() {
    let p = vec![0, 0, 1, 1, 2];
    let est = minvi_from_partitions(&[&p, &p, &p], &MinViConfig::default()).unwrap();
    assert_eq!(est.labels, p);
    assert_eq!(est.mean_vi, 0.0);
}

#[test]
fn majority_draw_wins() {
    let p = vec![0, 0, 0, 1, 1, 1];
    let q = vec![0, 1, 0, 1, 0, 1];
    let v = vi_distance(&p, &q).unwrap();
    let est = minvi_from_partitions(&[&p, &q, &p], &MinViConfig::default()).unwrap();
    assert_eq!(est.labels, p);
    assert_abs_diff_eq!(est.mean_vi, v / 3.0, epsilon = 1e-12);
}

#[test]
fn estimate_is_no_worse_than_any_draw() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for linkage in [Linkage::Average, Linkage::Complete] {
        for _ in 0..50 {
            let n = rng.random_range(2..10);
            let draws: Vec<Vec<usize>> = (0..rng.random_range(2..15))
                .map(|_| random_partition(n, 3, &mut rng))
                .collect();
            let refs: Vec<&[usize]> = draws.iter().map(Vec::as_slice).collect();
            let cfg = MinViConfig {
                linkage,
                ..MinViConfig::default()
            };
            let est = minvi_from_partitions(&refs, &cfg).unwrap();
            let mean_vi = |c: &[usize]| {
                draws.iter().map(|d| vi_distance(c, d).unwrap()).sum::<f64>() / draws.len() as f64
            };
            assert_abs_diff_eq!(est.mean_vi, mean_vi(&est.labels), epsilon = 1e-12);
            for d in &draws {
                assert!(est.mean_vi <= mean_vi(d) + 1e-12);
            }
        }
    }
}

#[test]
fn ties_prefer_fewer_clusters() {
    // on two elements both partitions sit at mean VI ln2 / 2
    let split = vec![0, 1];
    let joined = vec![0, 0];
    let est = minvi_from_partitions(&[&split, &joined], &MinViConfig::default()).unwrap();
    assert_eq!(est.labels, joined);
    assert_abs_diff_eq!(est.mean_vi, std::f64::consts::LN_2 / 2.0, epsilon = 1e-15);
}

#[test]
fn capped_candidates_still_score_every_draw() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let draws: Vec<Vec<usize>> = (0..40).map(|_| random_partition(8, 3, &mut rng)).collect();
    let refs: Vec<&[usize]> = draws.iter().map(Vec::as_slice).collect();
    let cfg = MinViConfig {
        max_draw_candidates: 3,
        ..MinViConfig::default()
    };
    let est = minvi_from_partitions(&refs, &cfg).unwrap();
    let direct = draws.iter().map(|d| vi_distance(&est.labels, d).unwrap()).sum::<f64>() / 40.0;
    assert_abs_diff_eq!(est.mean_vi, direct, epsilon = 1e-12);
}

fn pair(l: Vec<usize>, h: Vec<usize>) -> PartitionPair {
    PartitionPair {
        gamma_l: l,
        gamma_h: h,
    }
}

#[test]
fn theta_hat_of_one_cluster_is_grand_mean() {
    let data = TwoLevelDataset::from_groups(&[vec![1.0, 2.0], vec![6.0]]).unwrap();
    let samples = PosteriorSamples::from_pairs([pair(vec![0, 0], vec![0, 0, 0])]);
    let th = theta_hat(&samples, &data, 1e-12).unwrap();
    for t in th {
        assert_abs_diff_eq!(t, 3.0, epsilon = 1e-9);
    }
}

#[test]
fn phi_hat_of_one_cluster_is_mean_of_group_means() {
    let data = TwoLevelDataset::from_groups(&[vec![1.0, 2.0], vec![6.0]]).unwrap();
    let samples = PosteriorSamples::from_pairs([pair(vec![0, 0], vec![0, 1, 1])]);
    for p in phi_hat(&samples, &data).unwrap() {
        assert_abs_diff_eq!(p, (1.5 + 6.0) / 2.0, epsilon = 1e-15);
    }
}

#[test]
fn estimates_match_replay() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let groups: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let data = TwoLevelDataset::from_groups(&groups).unwrap();
    let pairs: Vec<PartitionPair> = (0..25)
        .map(|_| pair(random_partition(4, 2, &mut rng), random_partition(12, 3, &mut rng)))
        .collect();
    let samples = PosteriorSamples::from_pairs(pairs.clone());
    let k0 = 0.01;
    let y = data.values();
    let gm = data.group_means();
    let th = theta_hat(&samples, &data, k0).unwrap();
    let ph = phi_hat(&samples, &data).unwrap();
    for c in 0..12 {
        let mut acc = 0.0;
        for p in &pairs {
            let same: Vec<usize> = (0..12).filter(|&j| p.gamma_h[j] == p.gamma_h[c]).collect();
            acc += same.iter().map(|&j| y[j]).sum::<f64>() / (same.len() as f64 + k0);
        }
        assert_abs_diff_eq!(th[c], acc / 25.0, epsilon = 1e-10);
    }
    for g in 0..4 {
        let mut acc = 0.0;
        for p in &pairs {
            let same: Vec<usize> = (0..4).filter(|&j| p.gamma_l[j] == p.gamma_l[g]).collect();
            acc += same.iter().map(|&j| gm[j]).sum::<f64>() / same.len() as f64;
        }
        assert_abs_diff_eq!(ph[g], acc / 25.0, epsilon = 1e-10);
    }
}

#[test]
fn rmse_of_truth_is_zero() {
    assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
    assert_abs_diff_eq!(rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap(), 12.5f64.sqrt(), epsilon = 1e-15);
    assert!(rmse(&[1.0], &[]).is_err());
}

#[test]
fn evaluate_reports_recovery_of_the_truth() {
    let truth = crate::synth::gen_framework1(4, 5, 3).unwrap();
    let samples = PosteriorSamples::from_pairs(vec![truth.true_pair.clone(); 3]);
    let (pair, m) = evaluate(&samples, Some(&truth), 0.01, &MinViConfig::default()).unwrap();
    assert_eq!(pair, truth.true_pair);
    assert_eq!(m.vi_low, Some(0.0));
    assert_eq!(m.vi_high, Some(0.0));
    assert_eq!(m.n_draws, 3);
    assert!(m.rmse_theta.unwrap() < 0.5);
}
