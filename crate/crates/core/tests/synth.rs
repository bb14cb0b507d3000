mod common;

use hoc::knn::{find_2nn, DistanceMetric};
use hoc::knn::feasible_tuple_ratio;
use hoc::synth::{
    apply_instance_noise, apply_noise, apply_soft_clusterability, apply_symmetric_noise, average_instance_rows,
    empirical_transition, generate_clusters, generate_features, ClusterSpec, NoiseKind, NoiseSpec,
};
use hoc::{l11_error, LabeledDataset, PriorVector, TransitionMatrix};

fn base(k: usize, n: usize, seed: u64) -> LabeledDataset {
    generate_features(&ClusterSpec::new(k, n), seed).unwrap()
}

#[test]
fn class_frequencies_follow_the_prior() {
    let mut spec = ClusterSpec::new(5, 30000);
    spec.prior = PriorVector::new(vec![0.1, 0.15, 0.2, 0.25, 0.3]).unwrap();
    let ds = generate_features(&spec, 11).unwrap();
    let clean = ds.clean_labels().unwrap();
    assert_eq!(clean, ds.noisy_labels());
    for c in 0..5 {
        let freq = clean.iter().filter(|&&y| y == c).count() as f64 / 30000.0;
        assert!((freq - spec.prior[c]).abs() < 0.02, "class {c}: {freq}");
    }
}

#[test]
fn generated_centers_respect_the_margin() {
    let mut spec = ClusterSpec::new(4, 500);
    spec.clusters_per_class = 3;
    let out = generate_clusters(&spec, 3).unwrap();
    assert_eq!(out.centers.len(), 12);
    for (a, ca) in out.centers.iter().enumerate() {
        let norm: f64 = ca.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        for cb in &out.centers[a + 1..] {
            let cos: f64 = ca.iter().zip(cb).map(|(x, y)| x * y).sum();
            assert!(1.0 - cos >= spec.separation);
        }
    }
    let clean = out.dataset.clean_labels().unwrap();
    for (cluster, y) in out.cluster_ids.iter().zip(clean) {
        assert_eq!(cluster / 3, *y);
    }
}

#[test]
fn default_generator_is_two_nn_clusterable() {
    let ds = base(5, 10000, 4);
    let centers: Vec<usize> = (0..ds.n()).collect();
    let tuples = find_2nn(&ds, &centers, DistanceMetric::NegativeCosine).unwrap();
    assert!(feasible_tuple_ratio(&ds, &tuples).unwrap() >= 0.999);
}

#[test]
fn symmetric_noise_rate_and_matrix() {
    let ds = base(5, 30000, 5);
    let (noisy, t) = apply_symmetric_noise(&ds, 0.2, 6).unwrap();
    assert!((noisy.noise_fraction().unwrap() - 0.2).abs() < 0.01);
    assert_eq!(t, TransitionMatrix::symmetric(5, 0.2).unwrap());
    assert_eq!(noisy.features(), ds.features());
    let (_, t10) = apply_symmetric_noise(&base(10, 50, 1), 0.4, 1).unwrap();
    assert!((t10.get(3, 3) - 0.6).abs() < 1e-15);
    assert!((t10.get(3, 4) - 0.4 / 9.0).abs() < 1e-15);
}

#[test]
fn symmetric_confusion_converges_to_truth() {
    // row-wise deviation should shrink roughly like N^(-1/2)
    let mut errors = Vec::new();
    for n in [1000, 16000] {
        let ds = base(3, n, 7);
        let per_seed: Vec<f64> = (0..11)
            .map(|s| {
                let (noisy, t) = apply_symmetric_noise(&ds, 0.3, s).unwrap();
                l11_error(&empirical_transition(&noisy).unwrap(), &t).unwrap()
            })
            .collect();
        errors.push(common::median(per_seed));
    }
    assert!(errors[0] / errors[1] > 2.0, "{errors:?}");
}

#[test]
fn symmetric_truth_does_not_depend_on_the_seed() {
    let ds = base(3, 300, 8);
    let (a_ds, a) = apply_symmetric_noise(&ds, 0.25, 1).unwrap();
    let (b_ds, b) = apply_symmetric_noise(&ds, 0.25, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a_ds.noisy_labels(), b_ds.noisy_labels());
    let (c_ds, _) = apply_symmetric_noise(&ds, 0.25, 1).unwrap();
    assert_eq!(a_ds, c_ds);
}

#[test]
fn instance_rows_are_stochastic_and_keep_one_minus_q() {
    let ds = base(4, 3000, 9);
    for eta in [0.0, 0.2, 0.6] {
        let (noisy, rows) = apply_instance_noise(&ds, eta, 10).unwrap();
        let clean = ds.clean_labels().unwrap();
        assert_eq!(rows.len(), 3000 * 4);
        for (row, &y) in rows.chunks(4).zip(clean) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| (0.0..=1.0).contains(v)));
            if eta > 0.5 {
                for (j, v) in row.iter().enumerate() {
                    if j != y {
                        assert!(*v <= 0.9 * row[y] + 1e-12);
                    }
                }
            }
        }
        let frac = noisy.noise_fraction().unwrap();
        if eta == 0.0 {
            assert!(frac < 0.08, "{frac}");
        } else if eta < 0.5 {
            assert!((frac - eta).abs() < 0.03, "{frac}");
        }
    }
}

#[test]
fn instance_rows_keep_the_flip_rate_on_the_diagonal() {
    // without the cap, 1 - row[y] is exactly the sampled flip rate, whose
    // mean is eta for a truncation far from the bounds
    let ds = base(3, 20000, 12);
    let (_, rows) = apply_instance_noise(&ds, 0.3, 13).unwrap();
    let clean = ds.clean_labels().unwrap();
    let mean_q: f64 = rows.chunks(3).zip(clean).map(|(r, &y)| 1.0 - r[y]).sum::<f64>() / 20000.0;
    assert!((mean_q - 0.3).abs() < 0.005, "{mean_q}");
}

#[test]
fn identical_features_share_a_flip_direction() {
    let d = 6;
    let mut feats = Vec::new();
    for i in 0..40 {
        let mut x = vec![0.3f32; d];
        x[i % d] = 1.0 + (i / d) as f32;
        feats.extend(x);
    }
    // duplicate the first row at the end with the same clean class
    let first = feats[..d].to_vec();
    feats.extend(first);
    let mut labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
    labels.push(0);
    let ds = LabeledDataset::new(3, d, feats, labels.clone(), Some(labels)).unwrap();
    let (_, rows) = apply_instance_noise(&ds, 0.3, 14).unwrap();
    let a = &rows[..3];
    let b = &rows[40 * 3..];
    // off-diagonal shares normalized by the flip rate
    let dir = |r: &[f64]| [r[1] / (r[1] + r[2]), r[2] / (r[1] + r[2])];
    let (da, db) = (dir(a), dir(b));
    assert!((da[0] - db[0]).abs() < 1e-12 && (da[1] - db[1]).abs() < 1e-12);
}

#[test]
fn instance_truth_is_the_class_average() {
    let ds = base(3, 2000, 15);
    let spec = NoiseSpec {
        kind: NoiseKind::InstanceDependent,
        eta: 0.3,
        matrix: None,
        seed: 16,
    };
    let out = apply_noise(&ds, &spec).unwrap();
    let rows = out.instance_rows.as_ref().unwrap();
    let clean = ds.clean_labels().unwrap();
    for i in 0..3 {
        let members: Vec<&[f64]> = rows.chunks(3).zip(clean).filter(|(_, y)| **y == i).map(|(r, _)| r).collect();
        for j in 0..3 {
            let mean = members.iter().map(|r| r[j]).sum::<f64>() / members.len() as f64;
            assert!((out.truth.get(i, j) - mean).abs() < 1e-12);
        }
    }
    assert_eq!(out.truth, average_instance_rows(clean, rows, 3).unwrap());
}

#[test]
fn explicit_matrix_noise_matches_its_matrix() {
    let ds = base(3, 30000, 17);
    let t = TransitionMatrix::from_rows(&[vec![0.7, 0.2, 0.1], vec![0.1, 0.8, 0.1], vec![0.05, 0.25, 0.7]]).unwrap();
    let spec = NoiseSpec {
        kind: NoiseKind::ExplicitMatrix,
        eta: 0.0,
        matrix: Some(t.clone()),
        seed: 18,
    };
    let out = apply_noise(&ds, &spec).unwrap();
    assert_eq!(out.truth, t);
    assert!(empirical_transition(&out.dataset).unwrap().max_abs_diff(&t) < 0.02);
}

#[test]
fn soft_clusterability_swap_rate() {
    let ds = base(2, 30000, 19);
    assert_eq!(apply_soft_clusterability(&ds, 0.0, 1).unwrap(), ds);
    let soft = apply_soft_clusterability(&ds, 0.05, 20).unwrap();
    let swapped = soft
        .clean_labels()
        .unwrap()
        .iter()
        .zip(ds.clean_labels().unwrap())
        .filter(|(a, b)| a != b)
        .count() as f64
        / 30000.0;
    assert!((swapped - 0.05).abs() < 0.01, "{swapped}");
}

#[test]
fn soft_clusterability_near_limit_is_independent() {
    let ds = base(2, 30000, 21);
    let soft = apply_soft_clusterability(&ds, 0.5 - 1e-6, 22).unwrap();
    let mut joint = [[0.0f64; 2]; 2];
    for (a, b) in ds.clean_labels().unwrap().iter().zip(soft.clean_labels().unwrap()) {
        joint[*a][*b] += 1.0 / 30000.0;
    }
    let pa = [joint[0][0] + joint[0][1], joint[1][0] + joint[1][1]];
    let pb = [joint[0][0] + joint[1][0], joint[0][1] + joint[1][1]];
    let mut mi = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            if joint[a][b] > 0.0 {
                mi += joint[a][b] * (joint[a][b] / (pa[a] * pb[b])).ln();
            }
        }
    }
    assert!(mi < 0.01, "{mi}");
    assert!(apply_soft_clusterability(&ds, 0.5, 22).is_err());
}

#[test]
fn generators_are_deterministic() {
    let spec = ClusterSpec::new(3, 400);
    assert_eq!(generate_features(&spec, 5).unwrap(), generate_features(&spec, 5).unwrap());
    let ds = generate_features(&spec, 5).unwrap();
    let a = apply_instance_noise(&ds, 0.4, 1).unwrap();
    let b = apply_instance_noise(&ds, 0.4, 1).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
}
