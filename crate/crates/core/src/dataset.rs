use std::collections::HashSet;

use crate::error::{HocError, Result};

/// Feature vectors with noisy labels and, for synthetic data, the hidden
/// clean labels used for scoring.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    k: usize,
    d: usize,
    features: Vec<f32>,
    noisy_labels: Vec<usize>,
    clean_labels: Option<Vec<usize>>,
}

impl LabeledDataset {
    pub fn new(
        k: usize,
        d: usize,
        features: Vec<f32>,
        noisy_labels: Vec<usize>,
        clean_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if k == 0 || d == 0 {
            return Err(HocError::arg("class count and feature dimension must be positive"));
        }
        let n = noisy_labels.len();
        if features.len() != n * d {
            return Err(HocError::data(format!(
                "feature buffer holds {} values, expected {n} x {d}",
                features.len()
            )));
        }
        if let Some(row) = features.chunks(d).position(|r| r.iter().any(|v| !v.is_finite())) {
            return Err(HocError::data(format!("feature row {row} has a non-finite value")));
        }
        check_labels(&noisy_labels, k, "noisy")?;
        if let Some(clean) = &clean_labels {
            if clean.len() != n {
                return Err(HocError::data(format!(
                    "{} clean labels for {n} noisy labels",
                    clean.len()
                )));
            }
            check_labels(clean, k, "clean")?;
        }
        Ok(LabeledDataset {
            k,
            d,
            features,
            noisy_labels,
            clean_labels,
        })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.noisy_labels.len()
    }

    #[inline]
    pub fn d(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn feature(&self, i: usize) -> &[f32] {
        &self.features[i * self.d..(i + 1) * self.d]
    }

    pub fn features(&self) -> &[f32] {
        &self.features
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    pub fn clean_labels(&self) -> Option<&[usize]> {
        self.clean_labels.as_deref()
    }

    pub fn require_clean_labels(&self) -> Result<&[usize]> {
        self.clean_labels
            .as_deref()
            .ok_or_else(|| HocError::Precondition("dataset has no clean labels".into()))
    }

    pub fn with_noisy_labels(&self, noisy_labels: Vec<usize>) -> Result<Self> {
        Self::new(
            self.k,
            self.d,
            self.features.clone(),
            noisy_labels,
            self.clean_labels.clone(),
        )
    }

    pub fn with_clean_labels(&self, clean_labels: Option<Vec<usize>>) -> Result<Self> {
        Self::new(
            self.k,
            self.d,
            self.features.clone(),
            self.noisy_labels.clone(),
            clean_labels,
        )
    }

    /// Copies the rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(HocError::arg(format!("row index {bad} out of range (N = {})", self.n())));
        }
        let mut features = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            features.extend_from_slice(self.feature(i));
        }
        Ok(LabeledDataset {
            k: self.k,
            d: self.d,
            features,
            noisy_labels: indices.iter().map(|&i| self.noisy_labels[i]).collect(),
            clean_labels: self
                .clean_labels
                .as_ref()
                .map(|c| indices.iter().map(|&i| c[i]).collect()),
        })
    }

    /// Splits off the last `tail` rows, returning `(head, tail)`.
    pub fn split_tail(&self, tail: usize) -> Result<(Self, Self)> {
        if tail > self.n() {
            return Err(HocError::arg(format!("cannot split {tail} rows off {}", self.n())));
        }
        let cut = self.n() - tail;
        let head: Vec<usize> = (0..cut).collect();
        let rest: Vec<usize> = (cut..self.n()).collect();
        Ok((self.subset(&head)?, self.subset(&rest)?))
    }

    /// Fraction of rows whose noisy label differs from the clean label.
    pub fn noise_fraction(&self) -> Result<f64> {
        let clean = self.require_clean_labels()?;
        let flips = clean
            .iter()
            .zip(&self.noisy_labels)
            .filter(|(a, b)| a != b)
            .count();
        Ok(flips as f64 / self.n().max(1) as f64)
    }
}

fn check_labels(labels: &[usize], k: usize, what: &str) -> Result<()> {
    match labels.iter().position(|&y| y >= k) {
        Some(row) => Err(HocError::data(format!(
            "{what} label {} at row {row} is not in [0, {k})",
            labels[row]
        ))),
        None => Ok(()),
    }
}

/// A sampled instance together with its two nearest neighbors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tuple {
    pub center: usize,
    pub nn1: usize,
    pub nn2: usize,
}

impl Tuple {
    pub fn indices(&self) -> [usize; 3] {
        [self.center, self.nn1, self.nn2]
    }
}

/// A list of 3-tuples; every tuple has three distinct indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TupleSet {
    tuples: Vec<Tuple>,
}

impl TupleSet {
    pub fn new(tuples: Vec<Tuple>) -> Result<Self> {
        if let Some(t) = tuples
            .iter()
            .find(|t| t.center == t.nn1 || t.center == t.nn2 || t.nn1 == t.nn2)
        {
            return Err(HocError::arg(format!("tuple {:?} repeats an index", t.indices())));
        }
        Ok(TupleSet { tuples })
    }

    pub fn from_triples(triples: &[[usize; 3]]) -> Result<Self> {
        Self::new(
            triples
                .iter()
                .map(|&[center, nn1, nn2]| Tuple { center, nn1, nn2 })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Tuple> {
        self.tuples.iter()
    }

    pub fn as_slice(&self) -> &[Tuple] {
        &self.tuples
    }

    /// True when no index appears in more than one tuple.
    pub fn is_disjoint(&self) -> bool {
        let mut seen = HashSet::with_capacity(self.tuples.len() * 3);
        self.tuples
            .iter()
            .flat_map(|t| t.indices())
            .all(|i| seen.insert(i))
    }
}

impl<'a> IntoIterator for &'a TupleSet {
    type Item = &'a Tuple;
    type IntoIter = std::slice::Iter<'a, Tuple>;

    fn into_iter(self) -> Self::IntoIter {
        self.tuples.iter()
    }
}
