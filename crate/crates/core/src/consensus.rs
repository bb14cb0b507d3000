//! Consensus statistics: empirical counts over sampled tuples, averaging
//! across rounds, and the exact forward model mapping `(T, p)` to the
//! consensus probabilities.

use crate::dataset::{LabeledDataset, TupleSet};
use crate::error::{HocError, Result};
use crate::matrix::{PriorVector, TransitionMatrix};
use crate::stats::ConsensusStats;

/// Raw agreement-pattern counts. Kept as integers until the final division
/// so sharded counting merges exactly.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConsensusCounts {
    k: usize,
    total: u64,
    c1: Vec<u64>,
    c2: Vec<u64>,
    c3: Vec<u64>,
}

impl ConsensusCounts {
    pub fn new(k: usize) -> Self {
        ConsensusCounts {
            k,
            total: 0,
            c1: vec![0; k],
            c2: vec![0; k * k],
            c3: vec![0; k * k * k],
        }
    }

    /// Records one tuple of noisy labels `(y, y1, y2)`.
    #[inline]
    pub fn add(&mut self, y: usize, y1: usize, y2: usize) {
        let k = self.k;
        let r = (y1 + k - y) % k;
        let s = (y2 + k - y) % k;
        self.total += 1;
        self.c1[y] += 1;
        self.c2[r * k + y] += 1;
        self.c3[(r * k + s) * k + y] += 1;
    }

    pub fn merge(&mut self, other: &ConsensusCounts) {
        assert_eq!(self.k, other.k, "merging counts with different K");
        self.total += other.total;
        for (a, b) in [
            (&mut self.c1, &other.c1),
            (&mut self.c2, &other.c2),
            (&mut self.c3, &other.c3),
        ] {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn to_stats(&self) -> Result<ConsensusStats> {
        if self.total == 0 {
            return Err(HocError::arg("cannot normalize an empty tuple set"));
        }
        let n = self.total as f64;
        let norm = |v: &[u64]| v.iter().map(|&c| c as f64 / n).collect::<Vec<_>>();
        Ok(ConsensusStats::new_unchecked(
            self.k,
            norm(&self.c1),
            norm(&self.c2),
            norm(&self.c3),
        ))
    }
}

pub fn count_tuples(dataset: &LabeledDataset, tuples: &TupleSet) -> Result<ConsensusCounts> {
    if tuples.is_empty() {
        return Err(HocError::arg("empty tuple set"));
    }
    let labels = dataset.noisy_labels();
    if let Some(t) = tuples.iter().find(|t| t.indices().iter().any(|&i| i >= labels.len())) {
        return Err(HocError::arg(format!("tuple {:?} indexes past N = {}", t.indices(), labels.len())));
    }
    let mut counts = ConsensusCounts::new(dataset.k());
    for t in tuples {
        counts.add(labels[t.center], labels[t.nn1], labels[t.nn2]);
    }
    Ok(counts)
}

/// Empirical consensus frequencies of the noisy labels over `tuples`.
pub fn count_consensus(dataset: &LabeledDataset, tuples: &TupleSet) -> Result<ConsensusStats> {
    count_tuples(dataset, tuples)?.to_stats()
}

/// Equal-weight mean of per-round statistics.
pub fn average_rounds(stats: &[ConsensusStats]) -> Result<ConsensusStats> {
    let weights = vec![1.0; stats.len()];
    weighted_average(stats, &weights)
}

/// Mean of per-round statistics weighted by each round's tuple count.
pub fn average_rounds_weighted(stats: &[ConsensusStats], counts: &[usize]) -> Result<ConsensusStats> {
    if counts.len() != stats.len() {
        return Err(HocError::arg("one tuple count per round required"));
    }
    let weights: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    weighted_average(stats, &weights)
}

fn weighted_average(stats: &[ConsensusStats], weights: &[f64]) -> Result<ConsensusStats> {
    let first = stats
        .first()
        .ok_or_else(|| HocError::arg("no rounds to average"))?;
    let k = first.k();
    if let Some(bad) = stats.iter().find(|s| s.k() != k) {
        return Err(HocError::arg(format!("mixed class counts: {k} and {}", bad.k())));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(HocError::arg("round weights sum to zero"));
    }
    let mean = |pick: fn(&ConsensusStats) -> &[f64]| {
        let mut acc = vec![0.0; pick(first).len()];
        for (s, w) in stats.iter().zip(weights) {
            acc.iter_mut().zip(pick(s)).for_each(|(a, v)| *a += w * v);
        }
        acc.iter_mut().for_each(|a| *a /= total);
        acc
    };
    Ok(ConsensusStats::new_unchecked(
        k,
        mean(ConsensusStats::c1),
        mean(ConsensusStats::c2),
        mean(ConsensusStats::c3),
    ))
}

/// Exact consensus probabilities implied by `(T, p)`:
/// `c1 = T^T p`, `c2_r = (T o T_r)^T p`, `c3_rs = (T o T_r o T_s)^T p`.
pub fn forward_model(t: &TransitionMatrix, p: &PriorVector) -> ConsensusStats {
    assert_eq!(t.k(), p.k(), "T and p disagree on K");
    let (c1, c2, c3) = consensus_from_raw(t.k(), t.as_slice(), p.as_slice());
    ConsensusStats::new_unchecked(t.k(), c1, c2, c3)
}

/// Forward model over raw row-major `T` and `p`, shared with the solver.
pub(crate) fn consensus_from_raw(k: usize, t: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut c1 = vec![0.0; k];
    let mut c2 = vec![0.0; k * k];
    let mut c3 = vec![0.0; k * k * k];
    for (a, &pa) in p.iter().enumerate() {
        let row = &t[a * k..(a + 1) * k];
        for j in 0..k {
            let base = pa * row[j];
            c1[j] += base;
            for r in 0..k {
                let pair = base * row[(j + r) % k];
                c2[r * k + j] += pair;
                let c3r = &mut c3[r * k * k..(r + 1) * k * k];
                for s in 0..k {
                    c3r[s * k + j] += pair * row[(j + s) % k];
                }
            }
        }
    }
    (c1, c2, c3)
}

/// Forward model when a point's neighbors may belong to another clean class
/// with probabilities given by `t_soft`: the neighbor factors become
/// `U_r = T_soft * T * S_r`.
pub fn forward_model_soft(
    t: &TransitionMatrix,
    p: &PriorVector,
    t_soft: &TransitionMatrix,
) -> Result<ConsensusStats> {
    let k = t.k();
    if p.k() != k || t_soft.k() != k {
        return Err(HocError::arg(format!(
            "dimension mismatch: T is {k}, p is {}, T_soft is {}",
            p.k(),
            t_soft.k()
        )));
    }
    // U[i][m] = (T_soft T)[i][m]; U_r[i][j] = U[i][(j + r) mod K]
    let u = t_soft.matmul(t)?;
    let mut c1 = vec![0.0; k];
    let mut c2 = vec![0.0; k * k];
    let mut c3 = vec![0.0; k * k * k];
    for i in 0..k {
        let pi = p[i];
        for j in 0..k {
            let base = pi * t.get(i, j);
            c1[j] += base;
            for r in 0..k {
                let pair = base * u.get(i, (j + r) % k);
                c2[r * k + j] += pair;
                for s in 0..k {
                    c3[(r * k + s) * k + j] += pair * u.get(i, (j + s) % k);
                }
            }
        }
    }
    Ok(ConsensusStats::new_unchecked(k, c1, c2, c3))
}
