//! Instance-dependent estimation on neighborhoods.
//!
//! Local datasets are built by repeatedly picking a not-yet-covered center
//! and taking its `L` nearest points. Each local dataset is estimated on its
//! own, and rows whose local clean prior is small are completed from the
//! global estimate:
//!
//! `row_i <- (1 - zeta + p_i) * local_i + (zeta - p_i) * global_i`
//!
//! with both weights clamped to `[0, 1]` and the row renormalized.

use std::collections::BTreeSet;

use rand::Rng as _;
use rayon::prelude::*;

use crate::config::EstimatorConfig;
use crate::dataset::LabeledDataset;
use crate::error::{HocError, Result};
use crate::estimator::estimate_hoc;
use crate::knn::UnitFeatures;
use crate::matrix::{PriorVector, TransitionMatrix};
use crate::seed::rng_for;
use crate::solver::SolverResult;

/// Local datasets smaller than this are skipped.
pub const MIN_LOCAL_SIZE: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LocalDataset {
    pub center: usize,
    /// The center followed by its nearest neighbors.
    pub member_indices: Vec<usize>,
}

impl LocalDataset {
    pub fn new(center: usize, member_indices: Vec<usize>) -> Result<Self> {
        if !member_indices.contains(&center) {
            return Err(HocError::arg(format!("local dataset does not contain its center {center}")));
        }
        let distinct: BTreeSet<_> = member_indices.iter().collect();
        if distinct.len() != member_indices.len() {
            return Err(HocError::arg("local dataset repeats a member"));
        }
        Ok(LocalDataset {
            center,
            member_indices,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoveragePlan {
    pub locals: Vec<LocalDataset>,
    /// Union of all member sets.
    pub covered: BTreeSet<usize>,
}

impl CoveragePlan {
    pub fn from_locals(locals: Vec<LocalDataset>) -> Self {
        let covered = locals
            .iter()
            .flat_map(|l| l.member_indices.iter().copied())
            .collect();
        CoveragePlan { locals, covered }
    }

    /// One local dataset per group, centered on the group's first member.
    pub fn from_groups(groups: &[Vec<usize>]) -> Result<Self> {
        let locals = groups
            .iter()
            .filter(|g| !g.is_empty())
            .map(|g| LocalDataset::new(g[0], g.clone()))
            .collect::<Result<_>>()?;
        Ok(Self::from_locals(locals))
    }
}

/// Builds up to `max_rounds` local datasets of `local_size` points. Centers
/// are drawn uniformly from the points not yet covered, or from all points
/// once everything is covered.
pub fn build_local_datasets(
    dataset: &LabeledDataset,
    local_size: usize,
    max_rounds: usize,
    seed: u64,
) -> Result<CoveragePlan> {
    let n = dataset.n();
    if local_size == 0 || local_size > n {
        return Err(HocError::arg(format!("local size {local_size} must lie in [1, {n}]")));
    }
    let unit = UnitFeatures::new(dataset)?;
    let mut rng = rng_for(seed, "local-centers", 0);
    let mut selected = vec![false; n];
    let mut unselected: Vec<usize> = (0..n).collect();
    let mut locals = Vec::with_capacity(max_rounds);
    for _ in 0..max_rounds {
        let center = if unselected.is_empty() {
            rng.random_range(0..n)
        } else {
            unselected[rng.random_range(0..unselected.len())]
        };
        let members = unit.nearest(center, local_size);
        for &m in &members {
            selected[m] = true;
        }
        unselected.retain(|&i| !selected[i]);
        locals.push(LocalDataset::new(center, members)?);
    }
    Ok(CoveragePlan::from_locals(locals))
}

/// A completed local transition matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalEstimate {
    pub center: usize,
    pub t: TransitionMatrix,
    /// The raw local solve before row completion.
    pub local: SolverResult,
    /// Sum of the clamped blend weights per row, before renormalization.
    pub pre_norm_row_sums: Vec<f64>,
}

/// Blends local rows with global rows by the local clean prior.
pub fn complete_rows(
    local: &TransitionMatrix,
    local_prior: &PriorVector,
    global: &TransitionMatrix,
    zeta: f64,
) -> Result<(TransitionMatrix, Vec<f64>)> {
    let k = local.k();
    if global.k() != k || local_prior.k() != k {
        return Err(HocError::arg("local and global estimates disagree on K"));
    }
    if !(0.0..=1.0).contains(&zeta) {
        return Err(HocError::arg(format!("zeta = {zeta} must lie in [0, 1]")));
    }
    let mut entries = Vec::with_capacity(k * k);
    let mut sums = Vec::with_capacity(k);
    for i in 0..k {
        let p = local_prior[i];
        let a = (1.0 - zeta + p).clamp(0.0, 1.0);
        let b = (zeta - p).clamp(0.0, 1.0);
        let row: Vec<f64> = local
            .row(i)
            .iter()
            .zip(global.row(i))
            .map(|(l, g)| a * l + b * g)
            .collect();
        sums.push(row.iter().sum());
        entries.extend(row);
    }
    Ok((TransitionMatrix::from_nonnegative_rows(k, entries)?, sums))
}

/// Default blend parameter: 1 for up to ten classes, 0.5 above.
pub fn default_zeta(k: usize) -> f64 {
    if k <= 10 {
        1.0
    } else {
        0.5
    }
}

/// Runs the estimator on every local dataset of `plan` (tuples drawn within
/// it) and completes each result against `global`. Local datasets are
/// solved in parallel; the output keeps the plan's order.
pub fn estimate_local(
    dataset: &LabeledDataset,
    plan: &CoveragePlan,
    global: &SolverResult,
    config: &EstimatorConfig,
    zeta: f64,
) -> Result<Vec<LocalEstimate>> {
    if global.t_hat.k() != dataset.k() {
        return Err(HocError::arg("global estimate has the wrong class count"));
    }
    if config.sparse_reg_weight == 0.0 {
        log::warn!("local estimation without the sparse prior regularizer");
    }
    let results: Vec<Option<LocalEstimate>> = plan
        .locals
        .par_iter()
        .enumerate()
        .map(|(idx, local)| {
            let size = local.member_indices.len();
            if size < MIN_LOCAL_SIZE {
                log::warn!("skipping local dataset at center {} with {size} points", local.center);
                return Ok(None);
            }
            let sub = dataset.subset(&local.member_indices)?;
            let local_config = EstimatorConfig {
                sample_size: config.sample_size.min(size),
                seed: crate::seed::derive_seed(config.seed, "local", idx as u64),
                ..config.clone()
            };
            let result = estimate_hoc(&sub, &local_config)?;
            let (t, pre_norm_row_sums) = complete_rows(&result.t_hat, &result.p_hat, &global.t_hat, zeta)?;
            Ok(Some(LocalEstimate {
                center: local.center,
                t,
                local: result,
                pre_norm_row_sums,
            }))
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().flatten().collect())
}

/// Matrix index for every point: the first local estimate whose dataset
/// covers it, or `None` for points that fall back to the global matrix.
pub fn assign_instances(n: usize, plan: &CoveragePlan, estimates: &[LocalEstimate]) -> Vec<Option<usize>> {
    let mut owner = vec![None; n];
    for (e_idx, est) in estimates.iter().enumerate() {
        if let Some(local) = plan.locals.iter().find(|l| l.center == est.center) {
            for &m in &local.member_indices {
                if m < n && owner[m].is_none() {
                    owner[m] = Some(e_idx);
                }
            }
        }
    }
    owner
}
