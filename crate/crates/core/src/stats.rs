use crate::error::{HocError, Result};

/// Tolerance on the per-order total probability.
pub const STATS_SUM_TOL: f64 = 1e-9;

/// First-, second- and third-order consensus probabilities.
///
/// * `c1[i]      = P(y = i)`
/// * `c2[r][i]   = P(y = i, y1 = i + r)`
/// * `c3[r][s][i] = P(y = i, y1 = i + r, y2 = i + s)`
///
/// with all class arithmetic mod `K`. Each order is stored flattened in the
/// stacking order `r`, then `s`, then `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsensusStats {
    k: usize,
    c1: Vec<f64>,
    c2: Vec<f64>,
    c3: Vec<f64>,
}

impl ConsensusStats {
    pub fn new(k: usize, c1: Vec<f64>, c2: Vec<f64>, c3: Vec<f64>) -> Result<Self> {
        if k == 0 || c1.len() != k || c2.len() != k * k || c3.len() != k * k * k {
            return Err(HocError::arg(format!(
                "consensus orders have lengths {}/{}/{}, expected {k}/{}/{}",
                c1.len(),
                c2.len(),
                c3.len(),
                k * k,
                k * k * k
            )));
        }
        for (order, values) in [(1, &c1), (2, &c2), (3, &c3)] {
            if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(HocError::arg(format!("order-{order} entry {v} outside [0,1]")));
            }
            let sum: f64 = values.iter().sum();
            if (sum - 1.0).abs() > STATS_SUM_TOL {
                return Err(HocError::arg(format!("order-{order} entries sum to {sum}")));
            }
        }
        Ok(ConsensusStats { k, c1, c2, c3 })
    }

    pub(crate) fn new_unchecked(k: usize, c1: Vec<f64>, c2: Vec<f64>, c3: Vec<f64>) -> Self {
        ConsensusStats { k, c1, c2, c3 }
    }

    #[inline]
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn c1(&self) -> &[f64] {
        &self.c1
    }

    pub fn c2(&self) -> &[f64] {
        &self.c2
    }

    pub fn c3(&self) -> &[f64] {
        &self.c3
    }

    /// The three orders as flat vectors, index 0 holding `c1`.
    pub fn orders(&self) -> [&[f64]; 3] {
        [&self.c1, &self.c2, &self.c3]
    }

    #[inline]
    pub fn c2_at(&self, r: usize, i: usize) -> f64 {
        self.c2[r * self.k + i]
    }

    #[inline]
    pub fn c3_at(&self, r: usize, s: usize, i: usize) -> f64 {
        self.c3[(r * self.k + s) * self.k + i]
    }

    pub fn max_abs_diff(&self, other: &ConsensusStats) -> f64 {
        self.orders()
            .iter()
            .zip(other.orders())
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max)
    }
}
