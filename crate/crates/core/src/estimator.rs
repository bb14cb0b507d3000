//! The end-to-end estimator: `G` rounds of tuple sampling and consensus
//! counting, averaged, then solved for `(T, p)`.

use crate::config::EstimatorConfig;
use crate::consensus::{average_rounds, count_consensus};
use crate::dataset::LabeledDataset;
use crate::error::{HocError, Result};
use crate::knn::{draw_centers, NeighborTable, UnitFeatures};
use crate::seed::derive_seed;
use crate::solver::{solve, SolverResult};
use crate::stats::ConsensusStats;

/// Seed of sampling round `round`; [`crate::knn::sample_tuples`] called with
/// it reproduces that round exactly.
pub fn round_seed(config: &EstimatorConfig, round: usize) -> u64 {
    derive_seed(config.seed, "tuples", round as u64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusEstimate {
    /// Round-averaged consensus frequencies.
    pub stats: ConsensusStats,
    /// Tuples contributing to each round.
    pub tuple_counts: Vec<usize>,
}

/// Steps 1 and 2: sample tuples for every round and average their
/// consensus frequencies with equal weight per round.
pub fn estimate_consensus(dataset: &LabeledDataset, config: &EstimatorConfig) -> Result<ConsensusEstimate> {
    config.validate(Some(dataset.n()))?;
    if dataset.n() < 3 {
        return Err(HocError::arg("the estimator needs at least 3 points"));
    }
    let unit = UnitFeatures::new(dataset)?;
    let rounds: Vec<Vec<usize>> = (0..config.rounds)
        .map(|g| draw_centers(dataset.n(), config.sample_size, round_seed(config, g)))
        .collect();
    // Neighbors are a deterministic function of the center, so each center's
    // 2-NN is computed once and shared by every round that draws it.
    let mut needed = vec![false; dataset.n()];
    rounds.iter().flatten().for_each(|&c| needed[c] = true);
    let table = NeighborTable::build(&unit, &needed);

    let mut per_round = Vec::with_capacity(rounds.len());
    let mut tuple_counts = Vec::with_capacity(rounds.len());
    for centers in &rounds {
        let tuples = table.tuples(centers, config.tuple_mode);
        tuple_counts.push(tuples.len());
        per_round.push(count_consensus(dataset, &tuples)?);
    }
    Ok(ConsensusEstimate {
        stats: average_rounds(&per_round)?,
        tuple_counts,
    })
}

/// Estimates the transition matrix and clean prior of a noisy dataset.
/// Deterministic given `config.seed`.
pub fn estimate_hoc(dataset: &LabeledDataset, config: &EstimatorConfig) -> Result<SolverResult> {
    let consensus = estimate_consensus(dataset, config)?;
    log::debug!(
        "consensus from {} rounds, {} tuples in total",
        consensus.tuple_counts.len(),
        consensus.tuple_counts.iter().sum::<usize>()
    );
    solve(&consensus.stats, config)
}
