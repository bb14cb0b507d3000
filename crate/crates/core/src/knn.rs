//! Exact nearest-neighbor search under negative cosine similarity and the
//! construction of per-round 3-tuples (each sampled center with its 2-NN).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rayon::prelude::*;

use crate::config::{EstimatorConfig, TupleMode};
use crate::dataset::{LabeledDataset, Tuple, TupleSet};
use crate::error::{HocError, Result};
use crate::seed::Rng;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum DistanceMetric {
    /// `Dist(a, b) = -cos(a, b)`.
    #[default]
    NegativeCosine,
}

impl DistanceMetric {
    pub fn distance(&self, a: &[f32], b: &[f32]) -> f64 {
        match self {
            DistanceMetric::NegativeCosine => {
                let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
                for (x, y) in a.iter().zip(b) {
                    let (x, y) = (f64::from(*x), f64::from(*y));
                    ab += x * y;
                    aa += x * x;
                    bb += y * y;
                }
                -ab / (aa.sqrt() * bb.sqrt())
            }
        }
    }
}

/// Unit-normalized copy of a dataset's features, the working form for
/// cosine scans.
#[derive(Clone, Debug)]
pub struct UnitFeatures {
    d: usize,
    data: Vec<f32>,
}

impl UnitFeatures {
    pub fn new(dataset: &LabeledDataset) -> Result<Self> {
        let d = dataset.d();
        let mut data = Vec::with_capacity(dataset.features().len());
        for (row, x) in dataset.features().chunks(d).enumerate() {
            let norm = x.iter().map(|v| f64::from(*v).powi(2)).sum::<f64>().sqrt();
            if !(norm > 0.0) {
                return Err(HocError::data(format!("feature row {row} has zero norm")));
            }
            data.extend(x.iter().map(|v| (f64::from(*v) / norm) as f32));
        }
        Ok(UnitFeatures { d, data })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    /// The two most cosine-similar rows to `center`, excluding itself.
    /// Equal similarities go to the lower index.
    pub fn two_nn(&self, center: usize) -> [usize; 2] {
        let q = self.row(center);
        let (mut best, mut second) = ((f32::NEG_INFINITY, usize::MAX), (f32::NEG_INFINITY, usize::MAX));
        for (j, x) in self.data.chunks_exact(self.d).enumerate() {
            if j == center {
                continue;
            }
            let s = dot(q, x);
            // strict comparisons keep the earlier (lower) index on ties
            if s > best.0 {
                second = best;
                best = (s, j);
            } else if s > second.0 {
                second = (s, j);
            }
        }
        [best.1, second.1]
    }

    /// The `count` most similar rows to `center`, the center itself first.
    pub fn nearest(&self, center: usize, count: usize) -> Vec<usize> {
        let q = self.row(center);
        let mut scored: Vec<(f32, usize)> = self
            .data
            .chunks_exact(self.d)
            .enumerate()
            .filter(|(j, _)| *j != center)
            .map(|(j, x)| (dot(q, x), j))
            .collect();
        let take = count.saturating_sub(1).min(scored.len());
        let by_rank = |a: &(f32, usize), b: &(f32, usize)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
        if take < scored.len() && take > 0 {
            scored.select_nth_unstable_by(take - 1, by_rank);
        }
        scored.truncate(take);
        scored.sort_by(by_rank);
        std::iter::once(center)
            .chain(scored.into_iter().map(|(_, j)| j))
            .take(count)
            .collect()
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = 0.0f32;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    acc.iter().sum::<f32>() + tail
}

/// 2-NN tuple for every center, in the order given.
pub fn find_2nn(
    dataset: &LabeledDataset,
    centers: &[usize],
    metric: DistanceMetric,
) -> Result<TupleSet> {
    let DistanceMetric::NegativeCosine = metric;
    if dataset.n() < 3 {
        return Err(HocError::arg("2-NN search needs at least 3 points"));
    }
    if let Some(&bad) = centers.iter().find(|&&c| c >= dataset.n()) {
        return Err(HocError::arg(format!("center {bad} out of range (N = {})", dataset.n())));
    }
    let unit = UnitFeatures::new(dataset)?;
    let neighbors: Vec<[usize; 2]> = centers.par_iter().map(|&c| unit.two_nn(c)).collect();
    TupleSet::new(
        centers
            .iter()
            .zip(neighbors)
            .map(|(&center, [nn1, nn2])| Tuple { center, nn1, nn2 })
            .collect(),
    )
}

/// Centers for one round: `sample_size` distinct indices in random order.
pub(crate) fn draw_centers(n: usize, sample_size: usize, round_seed: u64) -> Vec<usize> {
    let mut rng = Rng::seed_from_u64(round_seed);
    let mut all: Vec<usize> = (0..n).collect();
    let (picked, _) = all.partial_shuffle(&mut rng, sample_size);
    picked.to_vec()
}

/// 2-NN lookup computed once for a set of centers.
pub(crate) struct NeighborTable {
    neighbors: Vec<Option<[usize; 2]>>,
}

impl NeighborTable {
    pub(crate) fn build(unit: &UnitFeatures, needed: &[bool]) -> Self {
        let neighbors = needed
            .par_iter()
            .enumerate()
            .map(|(i, &need)| need.then(|| unit.two_nn(i)))
            .collect();
        NeighborTable { neighbors }
    }

    fn get(&self, center: usize) -> [usize; 2] {
        self.neighbors[center].expect("neighbor table built for this center")
    }

    pub(crate) fn tuples(&self, centers: &[usize], mode: TupleMode) -> TupleSet {
        let n = self.neighbors.len();
        let tuples = match mode {
            TupleMode::Overlapping => centers
                .iter()
                .map(|&center| {
                    let [nn1, nn2] = self.get(center);
                    Tuple { center, nn1, nn2 }
                })
                .collect(),
            TupleMode::Disjoint => {
                let mut used = vec![false; n];
                let mut out = Vec::new();
                for &center in centers {
                    let [nn1, nn2] = self.get(center);
                    if used[center] || used[nn1] || used[nn2] {
                        continue;
                    }
                    used[center] = true;
                    used[nn1] = true;
                    used[nn2] = true;
                    out.push(Tuple { center, nn1, nn2 });
                }
                out
            }
        };
        TupleSet::new(tuples).expect("2-NN tuples have distinct indices")
    }
}

/// One sampling round: draws `config.sample_size` centers without
/// replacement (seeded by `round_seed`) and returns their 2-NN tuples,
/// filtered to pairwise-disjoint tuples in [`TupleMode::Disjoint`].
pub fn sample_tuples(
    dataset: &LabeledDataset,
    config: &EstimatorConfig,
    round_seed: u64,
) -> Result<TupleSet> {
    config.validate(Some(dataset.n()))?;
    if dataset.n() < 3 {
        return Err(HocError::arg("tuple sampling needs at least 3 points"));
    }
    let unit = UnitFeatures::new(dataset)?;
    let centers = draw_centers(dataset.n(), config.sample_size, round_seed);
    let mut needed = vec![false; dataset.n()];
    centers.iter().for_each(|&c| needed[c] = true);
    Ok(NeighborTable::build(&unit, &needed).tuples(&centers, config.tuple_mode))
}

/// Fraction of tuples whose three clean labels agree.
pub fn feasible_tuple_ratio(dataset: &LabeledDataset, tuples: &TupleSet) -> Result<f64> {
    let clean = dataset.require_clean_labels()?;
    if tuples.is_empty() {
        return Err(HocError::arg("empty tuple set"));
    }
    let feasible = tuples
        .iter()
        .filter(|t| clean[t.center] == clean[t.nn1] && clean[t.center] == clean[t.nn2])
        .count();
    Ok(feasible as f64 / tuples.len() as f64)
}
