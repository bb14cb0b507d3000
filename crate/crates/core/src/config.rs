use std::fmt;
use std::str::FromStr;

use crate::error::{HocError, Result};

/// How the per-round 3-tuples are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum TupleMode {
    /// Every sampled center contributes its 2-NN tuple; tuples may share
    /// points.
    #[default]
    Overlapping,
    /// Greedily keep only tuples whose three points are all unused.
    Disjoint,
}

impl FromStr for TupleMode {
    type Err = HocError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overlapping" => Ok(TupleMode::Overlapping),
            "disjoint" => Ok(TupleMode::Disjoint),
            other => Err(HocError::arg(format!(
                "unknown tuple mode `{other}` (expected overlapping or disjoint)"
            ))),
        }
    }
}

impl fmt::Display for TupleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TupleMode::Overlapping => "overlapping",
            TupleMode::Disjoint => "disjoint",
        })
    }
}

/// Parameters of the estimator: sampling rounds, tuple sample size, and the
/// optimizer that solves for `(T, p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    /// Number of sampling rounds `G`.
    pub rounds: usize,
    /// Centers sampled per round, `|E|`.
    pub sample_size: usize,
    pub max_iters: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub tuple_mode: TupleMode,
    /// Weight of the `sum ln(p_i + eps)` sparsity term; 0 disables it.
    pub sparse_reg_weight: f64,
    pub sparse_reg_epsilon: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            rounds: 50,
            sample_size: 15_000,
            max_iters: 1500,
            learning_rate: 0.1,
            seed: 0,
            tuple_mode: TupleMode::Overlapping,
            sparse_reg_weight: 0.0,
            sparse_reg_epsilon: 1e-8,
        }
    }
}

/// Sparse prior weight used by [`EstimatorConfig::local_default`]. Larger
/// weights outweigh the consensus fit and empty out classes that are present.
pub const LOCAL_SPARSE_REG_WEIGHT: f64 = 0.01;

impl EstimatorConfig {
    /// Defaults for local sub-dataset estimation: sparse prior regularizer on.
    pub fn local_default() -> Self {
        EstimatorConfig {
            sparse_reg_weight: LOCAL_SPARSE_REG_WEIGHT,
            ..Self::default()
        }
    }

    /// Checks the field invariants; `n` is the dataset size when known.
    pub fn validate(&self, n: Option<usize>) -> Result<()> {
        if self.rounds == 0 {
            return Err(HocError::arg("rounds must be positive"));
        }
        if self.sample_size == 0 {
            return Err(HocError::arg("sample_size must be positive"));
        }
        if let Some(n) = n {
            if self.sample_size > n {
                return Err(HocError::arg(format!(
                    "sample_size {} exceeds dataset size {n}",
                    self.sample_size
                )));
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(HocError::arg("learning_rate must be positive"));
        }
        if !(self.sparse_reg_weight >= 0.0 && self.sparse_reg_weight.is_finite()) {
            return Err(HocError::arg("sparse_reg_weight must be nonnegative"));
        }
        if !(self.sparse_reg_epsilon > 0.0) {
            return Err(HocError::arg("sparse_reg_epsilon must be positive"));
        }
        Ok(())
    }
}
