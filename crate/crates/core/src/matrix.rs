//! Transition matrices and class-prior vectors.
//!
//! Both types are validated on construction and immutable afterwards. Class
//! indices are 0-based; a cyclic shift by `r` maps column `j` to
//! `(j + r) mod K`.

use std::fmt;

use nalgebra::DMatrix;

use crate::error::{HocError, Result};

/// Tolerance on row sums (and on prior sums) accepted at construction.
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Default threshold on the smallest singular value used by [`validate`].
pub const DEFAULT_SINGULAR_THRESHOLD: f64 = 1e-6;

/// A `K x K` row-stochastic matrix with `T[i][j] = P(noisy = j | clean = i)`.
#[derive(Clone, PartialEq)]
pub struct TransitionMatrix {
    k: usize,
    entries: Vec<f64>,
}

impl TransitionMatrix {
    /// Builds a matrix from row-major entries, rejecting anything that is not
    /// row-stochastic within [`STOCHASTIC_TOL`].
    pub fn new(k: usize, entries: Vec<f64>) -> Result<Self> {
        if k == 0 {
            return Err(HocError::arg("transition matrix needs at least one class"));
        }
        if entries.len() != k * k {
            return Err(HocError::arg(format!(
                "expected {} entries for a {k}x{k} matrix, got {}",
                k * k,
                entries.len()
            )));
        }
        let report = validate_entries(k, &entries, DEFAULT_SINGULAR_THRESHOLD);
        if let Some((i, j)) = report.out_of_range.first() {
            return Err(HocError::arg(format!(
                "entry ({i},{j}) = {} outside [0,1]",
                entries[i * k + j]
            )));
        }
        if let Some((i, sum)) = report.row_sum_violations.first() {
            return Err(HocError::arg(format!("row {i} sums to {sum}, expected 1")));
        }
        Ok(TransitionMatrix { k, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(HocError::arg("transition matrix rows must all have length K"));
        }
        Self::new(k, rows.concat())
    }

    pub fn identity(k: usize) -> Self {
        let mut entries = vec![0.0; k * k];
        for i in 0..k {
            entries[i * k + i] = 1.0;
        }
        TransitionMatrix { k, entries }
    }

    /// Diagonal `1 - eta`, off-diagonal `eta / (K - 1)`.
    pub fn symmetric(k: usize, eta: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&eta) {
            return Err(HocError::arg(format!("noise rate {eta} outside [0,1)")));
        }
        if k < 2 {
            return Ok(Self::identity(k));
        }
        let off = eta / (k as f64 - 1.0);
        let mut entries = vec![off; k * k];
        for i in 0..k {
            entries[i * k + i] = 1.0 - eta;
        }
        Ok(TransitionMatrix { k, entries })
    }

    /// Normalizes each row of a nonnegative matrix. Used for empirical
    /// confusion counts and for blended rows.
    pub fn from_nonnegative_rows(k: usize, mut entries: Vec<f64>) -> Result<Self> {
        if entries.len() != k * k {
            return Err(HocError::arg("wrong number of entries"));
        }
        for i in 0..k {
            let row = &mut entries[i * k..(i + 1) * k];
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(HocError::arg(format!("row {i} has a negative or non-finite entry")));
            }
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(HocError::arg(format!("row {i} has zero mass")));
            }
            row.iter_mut().for_each(|v| *v /= sum);
        }
        Self::new(k, entries)
    }

    pub(crate) fn from_softmax_unchecked(k: usize, entries: Vec<f64>) -> Self {
        debug_assert_eq!(entries.len(), k * k);
        TransitionMatrix { k, entries }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.k + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.k..(i + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entries.chunks(self.k)
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.k).map(|i| self.get(i, i)).collect()
    }

    pub fn max_abs_diff(&self, other: &TransitionMatrix) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Relabels classes: `out[perm[i]][perm[j]] = self[i][j]`.
    pub fn permute_classes(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.k)?;
        let k = self.k;
        let mut entries = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                entries[perm[i] * k + perm[j]] = self.get(i, j);
            }
        }
        Ok(TransitionMatrix { k, entries })
    }

    /// `self * other` as matrices; the product of two row-stochastic matrices
    /// is row-stochastic.
    pub fn matmul(&self, other: &TransitionMatrix) -> Result<Self> {
        if self.k != other.k {
            return Err(HocError::arg(format!(
                "cannot multiply {}x{} by {}x{}",
                self.k, self.k, other.k, other.k
            )));
        }
        let k = self.k;
        let mut entries = vec![0.0; k * k];
        for i in 0..k {
            for m in 0..k {
                let a = self.get(i, m);
                if a == 0.0 {
                    continue;
                }
                for j in 0..k {
                    entries[i * k + j] += a * other.get(m, j);
                }
            }
        }
        Ok(TransitionMatrix { k, entries })
    }

    pub fn validate(&self) -> ValidationReport {
        validate_entries(self.k, &self.entries, DEFAULT_SINGULAR_THRESHOLD)
    }
}

impl fmt::Debug for TransitionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut list = f.debug_list();
        for row in self.rows() {
            list.entry(&row);
        }
        list.finish()
    }
}

/// A length-`K` probability vector of clean class priors.
#[derive(Clone, PartialEq)]
pub struct PriorVector {
    entries: Vec<f64>,
}

impl PriorVector {
    pub fn new(entries: Vec<f64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(HocError::arg("prior vector needs at least one class"));
        }
        if let Some((i, v)) = entries
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(HocError::arg(format!("prior entry {i} = {v} outside [0,1]")));
        }
        let sum: f64 = entries.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(HocError::arg(format!("prior sums to {sum}, expected 1")));
        }
        Ok(PriorVector { entries })
    }

    pub fn uniform(k: usize) -> Self {
        PriorVector {
            entries: vec![1.0 / k as f64; k],
        }
    }

    pub(crate) fn from_softmax_unchecked(entries: Vec<f64>) -> Self {
        PriorVector { entries }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.entries.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.entries
    }

    pub fn max_abs_diff(&self, other: &PriorVector) -> f64 {
        self.entries
            .iter()
            .zip(&other.entries)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// `out[perm[i]] = self[i]`.
    pub fn permute_classes(&self, perm: &[usize]) -> Result<Self> {
        check_permutation(perm, self.k())?;
        let mut entries = vec![0.0; self.k()];
        for (i, &v) in self.entries.iter().enumerate() {
            entries[perm[i]] = v;
        }
        Ok(PriorVector { entries })
    }
}

impl std::ops::Index<usize> for PriorVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.entries[i]
    }
}

impl fmt::Debug for PriorVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.entries.fmt(f)
    }
}

fn check_permutation(perm: &[usize], k: usize) -> Result<()> {
    let mut seen = vec![false; k];
    if perm.len() != k {
        return Err(HocError::arg(format!("permutation has length {}, expected {k}", perm.len())));
    }
    for &p in perm {
        if p >= k || seen[p] {
            return Err(HocError::arg("not a permutation of 0..K"));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Rotates every column of `t` left by `r`: `out[i][j] = t[i][(j + r) mod K]`.
/// Equivalent to right-multiplying by the cyclic permutation `S_r`.
pub fn cyclic_shift_matrix(t: &TransitionMatrix, r: usize) -> Result<TransitionMatrix> {
    let k = t.k();
    if r >= k {
        return Err(HocError::arg(format!("shift {r} out of range for K = {k}")));
    }
    let mut entries = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            entries.push(t.get(i, (j + r) % k));
        }
    }
    Ok(TransitionMatrix { k, entries })
}

/// Normalized entrywise L1 distance: `sum |a - b| / K`.
pub fn l11_error(estimate: &TransitionMatrix, truth: &TransitionMatrix) -> Result<f64> {
    if estimate.k() != truth.k() {
        return Err(HocError::arg(format!(
            "dimension mismatch: {} vs {}",
            estimate.k(),
            truth.k()
        )));
    }
    let total: f64 = estimate
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(total / estimate.k() as f64)
}

/// Findings of [`validate_entries`]. An empty report means the matrix is
/// row-stochastic, diagonally dominant and numerically nonsingular.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub out_of_range: Vec<(usize, usize)>,
    /// `(row, sum)` for rows whose sum is off by more than [`STOCHASTIC_TOL`].
    pub row_sum_violations: Vec<(usize, f64)>,
    /// Rows where the diagonal does not strictly dominate every other entry.
    pub non_informative_rows: Vec<usize>,
    pub min_singular_value: f64,
    pub near_singular: bool,
}

impl ValidationReport {
    pub fn is_stochastic(&self) -> bool {
        self.out_of_range.is_empty() && self.row_sum_violations.is_empty()
    }

    pub fn is_informative(&self) -> bool {
        self.non_informative_rows.is_empty()
    }

    pub fn is_ok(&self) -> bool {
        self.is_stochastic() && self.is_informative() && !self.near_singular
    }
}

pub fn validate(t: &TransitionMatrix, singular_threshold: f64) -> ValidationReport {
    validate_entries(t.k(), t.as_slice(), singular_threshold)
}

/// Reports every violation of the estimator's assumptions on a raw
/// row-major `K x K` matrix. Never fails.
pub fn validate_entries(k: usize, entries: &[f64], singular_threshold: f64) -> ValidationReport {
    assert_eq!(entries.len(), k * k, "entries must be K*K");
    let mut out_of_range = Vec::new();
    let mut row_sum_violations = Vec::new();
    let mut non_informative_rows = Vec::new();
    for i in 0..k {
        let row = &entries[i * k..(i + 1) * k];
        for (j, v) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                out_of_range.push((i, j));
            }
        }
        let sum: f64 = row.iter().sum();
        if !((sum - 1.0).abs() <= STOCHASTIC_TOL) {
            row_sum_violations.push((i, sum));
        }
        if (0..k).any(|j| j != i && row[i] <= row[j]) {
            non_informative_rows.push(i);
        }
    }
    let min_singular_value = if entries.iter().all(|v| v.is_finite()) {
        DMatrix::from_row_slice(k, k, entries).singular_values().min()
    } else {
        f64::NAN
    };
    ValidationReport {
        out_of_range,
        row_sum_violations,
        non_informative_rows,
        min_singular_value,
        near_singular: !(min_singular_value >= singular_threshold),
    }
}
