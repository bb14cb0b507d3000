//! Synthetic laboratory: clusterable features with known clean labels, and
//! label-noise injection whose ground-truth transition matrices are returned
//! alongside the noisy data.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::dataset::LabeledDataset;
use crate::error::{HocError, Result};
use crate::matrix::{PriorVector, TransitionMatrix};
use crate::seed::rng_for;

/// Attempts per cluster center before giving up on the separation margin.
const CENTER_RETRY_BUDGET: usize = 10_000;

/// Standard deviation of the per-instance flip rate distribution.
const FLIP_RATE_STD: f64 = 0.1;

/// Off-diagonal cap, relative to the diagonal, used for instance noise when
/// the mean flip rate exceeds one half.
const INFORMATIVE_CAP: f64 = 0.9;

/// Shape of a synthetic mixture: `clusters_per_class` directional clusters
/// per class on the unit sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterSpec {
    pub k: usize,
    pub clusters_per_class: usize,
    pub dim: usize,
    /// Minimum `1 - cos` between any two cluster centers.
    pub separation: f64,
    pub points: usize,
    pub prior: PriorVector,
    /// Angular standard deviation of points around their center.
    pub spread: f64,
}

impl ClusterSpec {
    pub fn new(k: usize, points: usize) -> Self {
        ClusterSpec {
            k,
            clusters_per_class: 2,
            dim: 16,
            separation: 0.5,
            points,
            prior: PriorVector::uniform(k),
            spread: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.points == 0 || self.dim < 2 {
            return Err(HocError::arg("cluster spec needs k >= 1, points >= 1, dim >= 2"));
        }
        if self.clusters_per_class == 0 {
            return Err(HocError::arg("clusters_per_class must be at least 1"));
        }
        if self.prior.k() != self.k {
            return Err(HocError::arg(format!(
                "prior has {} entries for k = {}",
                self.prior.k(),
                self.k
            )));
        }
        if !(self.spread >= 0.0) || !(self.separation > 3.0 * self.spread) {
            return Err(HocError::arg(format!(
                "separation {} must exceed 3 x spread {}",
                self.separation, self.spread
            )));
        }
        if self.separation > 2.0 {
            return Err(HocError::arg("separation is a cosine margin and cannot exceed 2"));
        }
        Ok(())
    }
}

/// Generated mixture with its latent structure.
#[derive(Clone, Debug)]
pub struct SyntheticClusters {
    /// Noisy labels equal the clean labels.
    pub dataset: LabeledDataset,
    /// Cluster of each point; cluster `c` belongs to class
    /// `c / clusters_per_class`.
    pub cluster_ids: Vec<usize>,
    pub centers: Vec<Vec<f64>>,
}

fn unit_gaussian(rng: &mut impl rand::Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn sample_categorical(rng: &mut impl rand::Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // rounding left u above the cumulative sum: take the last class with mass
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

pub fn generate_clusters(spec: &ClusterSpec, seed: u64) -> Result<SyntheticClusters> {
    spec.validate()?;
    let n_clusters = spec.k * spec.clusters_per_class;
    let mut rng = rng_for(seed, "centers", 0);
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(n_clusters);
    while centers.len() < n_clusters {
        let mut accepted = None;
        for _ in 0..CENTER_RETRY_BUDGET {
            let c = unit_gaussian(&mut rng, spec.dim);
            let far = centers.iter().all(|o| {
                let cos: f64 = o.iter().zip(&c).map(|(a, b)| a * b).sum();
                1.0 - cos >= spec.separation
            });
            if far {
                accepted = Some(c);
                break;
            }
        }
        match accepted {
            Some(c) => centers.push(c),
            None => {
                return Err(HocError::Generation(format!(
                    "could not place {n_clusters} centers with separation {} in {} dimensions \
                     (placed {}); lower the separation or raise the dimension",
                    spec.separation,
                    spec.dim,
                    centers.len()
                )))
            }
        }
    }

    let mut rng = rng_for(seed, "points", 0);
    let noise_scale = spec.spread / (spec.dim as f64).sqrt();
    let mut features = Vec::with_capacity(spec.points * spec.dim);
    let mut labels = Vec::with_capacity(spec.points);
    let mut cluster_ids = Vec::with_capacity(spec.points);
    for _ in 0..spec.points {
        let class = sample_categorical(&mut rng, spec.prior.as_slice());
        let cluster = class * spec.clusters_per_class + rng.random_range(0..spec.clusters_per_class);
        let mut x: Vec<f64> = centers[cluster]
            .iter()
            .map(|c| {
                let z: f64 = StandardNormal.sample(&mut rng);
                c + noise_scale * z
            })
            .collect();
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        x.iter_mut().for_each(|v| *v /= norm);
        features.extend(x.iter().map(|&v| v as f32));
        labels.push(class);
        cluster_ids.push(cluster);
    }
    let dataset = LabeledDataset::new(spec.k, spec.dim, features, labels.clone(), Some(labels))?;
    Ok(SyntheticClusters {
        dataset,
        cluster_ids,
        centers,
    })
}

/// Clusterable features; noisy labels start equal to the clean labels.
pub fn generate_features(spec: &ClusterSpec, seed: u64) -> Result<LabeledDataset> {
    Ok(generate_clusters(spec, seed)?.dataset)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    Symmetric,
    InstanceDependent,
    ExplicitMatrix,
}

impl FromStr for NoiseKind {
    type Err = HocError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "symmetric" => Ok(NoiseKind::Symmetric),
            "instance" | "instance_dependent" => Ok(NoiseKind::InstanceDependent),
            "explicit" | "explicit_matrix" => Ok(NoiseKind::ExplicitMatrix),
            other => Err(HocError::arg(format!(
                "unknown noise kind `{other}` (expected symmetric, instance or explicit)"
            ))),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::InstanceDependent => "instance",
            NoiseKind::ExplicitMatrix => "explicit",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub eta: f64,
    pub matrix: Option<TransitionMatrix>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self, k: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.eta) {
            return Err(HocError::arg(format!("eta = {} must lie in [0, 1)", self.eta)));
        }
        match (&self.kind, &self.matrix) {
            (NoiseKind::ExplicitMatrix, None) => Err(HocError::arg("explicit noise needs a matrix")),
            (NoiseKind::ExplicitMatrix, Some(m)) if m.k() != k => Err(HocError::arg(format!(
                "noise matrix is {}x{}, dataset has {k} classes",
                m.k(),
                m.k()
            ))),
            _ => Ok(()),
        }
    }
}

/// Noisy dataset plus the ground truth that produced it.
#[derive(Clone, Debug)]
pub struct NoisyData {
    pub dataset: LabeledDataset,
    /// Global transition matrix. For instance noise this is the per-class
    /// average of the instance rows.
    pub truth: TransitionMatrix,
    /// Row-major `N x K` per-instance transition rows (instance noise only).
    pub instance_rows: Option<Vec<f64>>,
}

pub fn apply_noise(dataset: &LabeledDataset, spec: &NoiseSpec) -> Result<NoisyData> {
    spec.validate(dataset.k())?;
    match spec.kind {
        NoiseKind::Symmetric => {
            let (dataset, truth) = apply_symmetric_noise(dataset, spec.eta, spec.seed)?;
            Ok(NoisyData {
                dataset,
                truth,
                instance_rows: None,
            })
        }
        NoiseKind::ExplicitMatrix => {
            let truth = spec.matrix.clone().expect("validated");
            let dataset = apply_matrix_noise(dataset, &truth, spec.seed)?;
            Ok(NoisyData {
                dataset,
                truth,
                instance_rows: None,
            })
        }
        NoiseKind::InstanceDependent => {
            let (noisy, rows) = apply_instance_noise(dataset, spec.eta, spec.seed)?;
            let truth = average_instance_rows(dataset.require_clean_labels()?, &rows, dataset.k())?;
            Ok(NoisyData {
                dataset: noisy,
                truth,
                instance_rows: Some(rows),
            })
        }
    }
}

/// Flips each clean label with probability `eta` to a uniformly chosen
/// other class. Returns the implied `T` (diagonal `1 - eta`, off-diagonal
/// `eta / (K - 1)`).
pub fn apply_symmetric_noise(
    dataset: &LabeledDataset,
    eta: f64,
    seed: u64,
) -> Result<(LabeledDataset, TransitionMatrix)> {
    let truth = TransitionMatrix::symmetric(dataset.k(), eta)?;
    let clean = dataset.require_clean_labels()?;
    let k = dataset.k();
    let mut rng = rng_for(seed, "symmetric-noise", 0);
    let noisy = clean
        .iter()
        .map(|&y| {
            if k > 1 && rng.random::<f64>() < eta {
                let other = rng.random_range(0..k - 1);
                if other >= y {
                    other + 1
                } else {
                    other
                }
            } else {
                y
            }
        })
        .collect();
    Ok((dataset.with_noisy_labels(noisy)?, truth))
}

/// Draws each noisy label from row `clean` of `t`.
pub fn apply_matrix_noise(dataset: &LabeledDataset, t: &TransitionMatrix, seed: u64) -> Result<LabeledDataset> {
    apply_regional_noise(dataset, &vec![0; dataset.n()], std::slice::from_ref(t), seed)
}

/// Locally homogeneous noise: point `n` draws its noisy label from
/// `matrices[regions[n]]`.
pub fn apply_regional_noise(
    dataset: &LabeledDataset,
    regions: &[usize],
    matrices: &[TransitionMatrix],
    seed: u64,
) -> Result<LabeledDataset> {
    let clean = dataset.require_clean_labels()?;
    if regions.len() != dataset.n() {
        return Err(HocError::arg("one region id per point required"));
    }
    if let Some(m) = matrices.iter().find(|m| m.k() != dataset.k()) {
        return Err(HocError::arg(format!("noise matrix has K = {}", m.k())));
    }
    if let Some(&r) = regions.iter().find(|&&r| r >= matrices.len()) {
        return Err(HocError::arg(format!("region {r} has no matrix")));
    }
    let mut rng = rng_for(seed, "matrix-noise", 0);
    let noisy = clean
        .iter()
        .zip(regions)
        .map(|(&y, &region)| sample_categorical(&mut rng, matrices[region].row(y)))
        .collect();
    dataset.with_noisy_labels(noisy)
}

/// Draws from `N(mean, std^2)` truncated to `[lo, hi]` by rejection.
fn truncated_normal(rng: &mut impl rand::Rng, mean: f64, std: f64, lo: f64, hi: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let x = mean + std * z;
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
}

/// Caps every off-diagonal entry at `ratio * row[y]`, moving the excess to
/// the uncapped off-diagonal entries in proportion to their mass, and onto
/// the diagonal once every off-diagonal entry sits at the cap.
fn cap_off_diagonal(row: &mut [f64], y: usize, ratio: f64) {
    let k = row.len();
    for _ in 0..4 * k {
        let cap = ratio * row[y];
        let mut excess = 0.0;
        for j in (0..k).filter(|&j| j != y) {
            if row[j] > cap {
                excess += row[j] - cap;
                row[j] = cap;
            }
        }
        if excess <= 1e-15 {
            return;
        }
        let free: Vec<usize> = (0..k).filter(|&j| j != y && row[j] < cap).collect();
        let room: f64 = free.iter().map(|&j| cap - row[j]).sum();
        if free.is_empty() || room <= excess {
            for &j in &free {
                excess -= cap - row[j];
                row[j] = cap;
            }
            row[y] += excess.max(0.0);
            continue;
        }
        let mass: f64 = free.iter().map(|&j| row[j]).sum();
        for &j in &free {
            let share = if mass > 0.0 { row[j] / mass } else { 1.0 / free.len() as f64 };
            row[j] += excess * share;
        }
    }
}

/// Instance-dependent noise: each instance gets a flip rate `q_n` from a
/// truncated normal around `eta`, and spreads it over the other classes by
/// a softmax of a random linear projection of its features. Identical
/// features therefore get identical flip directions. Returns the noisy
/// dataset and the row-major `N x K` per-instance rows actually used.
pub fn apply_instance_noise(
    dataset: &LabeledDataset,
    eta: f64,
    seed: u64,
) -> Result<(LabeledDataset, Vec<f64>)> {
    if !(0.0..1.0).contains(&eta) {
        return Err(HocError::arg(format!("eta = {eta} must lie in [0, 1)")));
    }
    let clean = dataset.require_clean_labels()?;
    let (k, d) = (dataset.k(), dataset.d());
    let mut w_rng = rng_for(seed, "instance-noise-w", 0);
    // W is d x K, row-major
    let w: Vec<f64> = (0..d * k).map(|_| StandardNormal.sample(&mut w_rng)).collect();

    let mut rows = Vec::with_capacity(dataset.n() * k);
    let mut noisy = Vec::with_capacity(dataset.n());
    for (n, &y) in clean.iter().enumerate() {
        let mut rng = rng_for(seed, "instance-noise", n as u64);
        let q = truncated_normal(&mut rng, eta, FLIP_RATE_STD, 0.0, 1.0);
        let x = dataset.feature(n);
        let mut logits = vec![0.0f64; k];
        for (i, xi) in x.iter().enumerate() {
            let xi = f64::from(*xi);
            for (c, l) in logits.iter_mut().enumerate() {
                *l += xi * w[i * k + c];
            }
        }
        let mut row = vec![0.0; k];
        if k > 1 {
            logits[y] = f64::NEG_INFINITY;
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            for c in 0..k {
                row[c] = q * exps[c] / sum;
            }
            row[y] = 1.0 - q;
            if eta > 0.5 {
                cap_off_diagonal(&mut row, y, INFORMATIVE_CAP);
            }
        } else {
            row[0] = 1.0;
        }
        noisy.push(sample_categorical(&mut rng, &row));
        rows.extend_from_slice(&row);
    }
    Ok((dataset.with_noisy_labels(noisy)?, rows))
}

/// Averages per-instance rows over the instances of each clean class.
pub fn average_instance_rows(clean: &[usize], rows: &[f64], k: usize) -> Result<TransitionMatrix> {
    if rows.len() != clean.len() * k {
        return Err(HocError::arg("instance rows do not match the label count"));
    }
    let mut sums = vec![0.0; k * k];
    let mut counts = vec![0usize; k];
    for (row, &y) in rows.chunks(k).zip(clean) {
        counts[y] += 1;
        sums[y * k..(y + 1) * k]
            .iter_mut()
            .zip(row)
            .for_each(|(s, v)| *s += v);
    }
    for (i, &c) in counts.iter().enumerate() {
        if c == 0 {
            // no instances of class i: the row is unconstrained, use identity
            sums[i * k + i] = 1.0;
        }
    }
    TransitionMatrix::from_nonnegative_rows(k, sums)
}

/// Row-normalized clean-vs-noisy confusion counts.
pub fn empirical_transition(dataset: &LabeledDataset) -> Result<TransitionMatrix> {
    let clean = dataset.require_clean_labels()?;
    let k = dataset.k();
    let mut counts = vec![0.0; k * k];
    for (&y, &z) in clean.iter().zip(dataset.noisy_labels()) {
        counts[y * k + z] += 1.0;
    }
    for i in 0..k {
        if counts[i * k..(i + 1) * k].iter().all(|c| *c == 0.0) {
            counts[i * k + i] = 1.0;
        }
    }
    TransitionMatrix::from_nonnegative_rows(k, counts)
}

/// Soft 2-NN clusterability: re-draws each point's effective clean class
/// through `T_soft` (off-diagonal `e`, diagonal `1 - (K - 1) e`). Both label
/// columns are set to the effective class, so noise should be injected
/// afterwards.
pub fn apply_soft_clusterability(dataset: &LabeledDataset, e: f64, seed: u64) -> Result<LabeledDataset> {
    let k = dataset.k();
    if !(e >= 0.0 && e < 1.0 / k as f64) {
        return Err(HocError::arg(format!("soft perturbation e = {e} must lie in [0, 1/K)")));
    }
    let clean = dataset.require_clean_labels()?;
    let swap = (k as f64 - 1.0) * e;
    let mut rng = rng_for(seed, "soft-clusterability", 0);
    let effective: Vec<usize> = clean
        .iter()
        .map(|&y| {
            if k > 1 && rng.random::<f64>() < swap {
                let other = rng.random_range(0..k - 1);
                if other >= y {
                    other + 1
                } else {
                    other
                }
            } else {
                y
            }
        })
        .collect();
    LabeledDataset::new(
        k,
        dataset.d(),
        dataset.features().to_vec(),
        effective.clone(),
        Some(effective),
    )
}
