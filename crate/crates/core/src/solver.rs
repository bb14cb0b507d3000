//! Solving the consensus equations for `(T, p)`.
//!
//! `T` and `p` are reparameterized by row-wise softmax over unconstrained
//! logits `T_bar` and `p_bar`, and the sum over orders of the L2 distance
//! between target and model consensus is minimized with Adam. Gradients are
//! analytical: the forward model is a cubic polynomial in the softmax
//! outputs.

use crate::adam::Adam;
use crate::config::EstimatorConfig;
use nalgebra::{DMatrix, DVector};

use crate::consensus::consensus_from_raw;
use crate::error::{HocError, Result};
use crate::matrix::{PriorVector, TransitionMatrix};
use crate::stats::ConsensusStats;

/// Gradient-norm stopping threshold.
pub const GRADIENT_TOL: f64 = 1e-7;

/// Iterations without a new best objective before the step size is halved.
pub const PLATEAU_PATIENCE: usize = 50;

/// Per-order residual norms below this contribute a zero subgradient.
pub const RESIDUAL_FLOOR: f64 = 1e-12;

/// Damped Gauss-Newton steps tried after Adam.
pub const POLISH_STEPS: usize = 200;

/// The Gauss-Newton polish builds a dense `K^3 x (K^2 + K)` Jacobian and is
/// skipped above this class count.
pub const POLISH_MAX_K: usize = 12;

/// Unconstrained optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverState {
    k: usize,
    /// Row-major `K x K` logits of `T`.
    pub t_bar: Vec<f64>,
    /// Logits of `p`.
    pub p_bar: Vec<f64>,
    pub iteration: usize,
    pub objective: f64,
    pub gradient_norm: f64,
}

impl SolverState {
    /// `T_bar = K I - 1 1^T`, `p_bar = 1 / K`: a diagonally dominant start.
    pub fn initial(k: usize) -> Self {
        let kf = k as f64;
        let mut t_bar = vec![-1.0; k * k];
        for i in 0..k {
            t_bar[i * k + i] = kf - 1.0;
        }
        SolverState {
            k,
            t_bar,
            p_bar: vec![1.0 / kf; k],
            iteration: 0,
            objective: f64::NAN,
            gradient_norm: f64::NAN,
        }
    }

    pub fn from_logits(k: usize, t_bar: Vec<f64>, p_bar: Vec<f64>) -> Result<Self> {
        if t_bar.len() != k * k || p_bar.len() != k {
            return Err(HocError::arg("logit shapes do not match K"));
        }
        Ok(SolverState {
            k,
            t_bar,
            p_bar,
            iteration: 0,
            objective: f64::NAN,
            gradient_norm: f64::NAN,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn transition(&self) -> TransitionMatrix {
        TransitionMatrix::from_softmax_unchecked(self.k, softmax_rows(&self.t_bar, self.k))
    }

    pub fn prior(&self) -> PriorVector {
        PriorVector::from_softmax_unchecked(softmax_rows(&self.p_bar, self.k))
    }

    fn params(&self) -> Vec<f64> {
        let mut v = self.t_bar.clone();
        v.extend_from_slice(&self.p_bar);
        v
    }

    fn set_params(&mut self, params: &[f64]) {
        let kk = self.k * self.k;
        self.t_bar.copy_from_slice(&params[..kk]);
        self.p_bar.copy_from_slice(&params[kk..]);
    }
}

/// Gradient of the objective with respect to `(T_bar, p_bar)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub t_bar: Vec<f64>,
    pub p_bar: Vec<f64>,
}

impl Gradient {
    pub fn norm(&self) -> f64 {
        self.t_bar
            .iter()
            .chain(&self.p_bar)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverResult {
    pub t_hat: TransitionMatrix,
    pub p_hat: PriorVector,
    pub final_objective: f64,
    pub iterations_used: usize,
    pub converged: bool,
}

/// Softmax applied independently to each length-`k` chunk.
pub(crate) fn softmax_rows(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = out.len();
        out.extend(row.iter().map(|v| (v - max).exp()));
        let sum: f64 = out[start..].iter().sum();
        out[start..].iter_mut().for_each(|v| *v /= sum);
    }
    out
}

fn check_k(state: &SolverState, target: &ConsensusStats) {
    assert_eq!(state.k, target.k(), "solver state and target disagree on K");
}

fn residual_direction(model: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let diff: Vec<f64> = model.iter().zip(target).map(|(m, t)| m - t).collect();
    let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    if norm < RESIDUAL_FLOOR {
        (norm, vec![0.0; diff.len()])
    } else {
        (norm, diff.into_iter().map(|d| d / norm).collect())
    }
}

fn regularizer(p: &[f64], config: &EstimatorConfig) -> f64 {
    if config.sparse_reg_weight > 0.0 {
        config.sparse_reg_weight
            * p.iter()
                .map(|pi| (pi + config.sparse_reg_epsilon).ln())
                .sum::<f64>()
    } else {
        0.0
    }
}

/// `sum_v ||c_hat[v] - c[v](softmax(T_bar), softmax(p_bar))||_2`, plus
/// `weight * sum_i ln(p_i + eps)` when the sparse regularizer is on.
pub fn objective(state: &SolverState, target: &ConsensusStats, config: &EstimatorConfig) -> f64 {
    check_k(state, target);
    let k = state.k;
    let t = softmax_rows(&state.t_bar, k);
    let p = softmax_rows(&state.p_bar, k);
    let (c1, c2, c3) = consensus_from_raw(k, &t, &p);
    let fit: f64 = [c1, c2, c3]
        .iter()
        .zip(target.orders())
        .map(|(model, tgt)| residual_direction(model, tgt).0)
        .sum();
    fit + regularizer(&p, config)
}

/// Analytical gradient of [`objective`].
pub fn gradient(state: &SolverState, target: &ConsensusStats, config: &EstimatorConfig) -> Gradient {
    objective_and_gradient(state, target, config).1
}

pub fn objective_and_gradient(
    state: &SolverState,
    target: &ConsensusStats,
    config: &EstimatorConfig,
) -> (f64, Gradient) {
    check_k(state, target);
    let k = state.k;
    let t = softmax_rows(&state.t_bar, k);
    let p = softmax_rows(&state.p_bar, k);
    let (c1, c2, c3) = consensus_from_raw(k, &t, &p);
    let [t1, t2, t3] = target.orders();
    let (n1, w1) = residual_direction(&c1, t1);
    let (n2, w2) = residual_direction(&c2, t2);
    let (n3, w3) = residual_direction(&c3, t3);
    let value = n1 + n2 + n3 + regularizer(&p, config);

    // d objective / d T and d objective / d p
    let mut gt = vec![0.0; k * k];
    let mut gp = vec![0.0; k];
    for a in 0..k {
        let pa = p[a];
        let row = &t[a * k..(a + 1) * k];
        let grow = &mut gt[a * k..(a + 1) * k];
        let mut gpa = 0.0;
        for j in 0..k {
            let tj = row[j];
            gpa += w1[j] * tj;
            grow[j] += w1[j] * pa;
            for r in 0..k {
                let jr = (j + r) % k;
                let tr = row[jr];
                let w = w2[r * k + j];
                if w != 0.0 {
                    gpa += w * tj * tr;
                    grow[j] += w * pa * tr;
                    grow[jr] += w * pa * tj;
                }
                let w3r = &w3[r * k * k..(r + 1) * k * k];
                for s in 0..k {
                    let w = w3r[s * k + j];
                    if w == 0.0 {
                        continue;
                    }
                    let js = (j + s) % k;
                    let ts = row[js];
                    gpa += w * tj * tr * ts;
                    grow[j] += w * pa * tr * ts;
                    grow[jr] += w * pa * tj * ts;
                    grow[js] += w * pa * tj * tr;
                }
            }
        }
        gp[a] = gpa;
    }
    if config.sparse_reg_weight > 0.0 {
        for (g, pi) in gp.iter_mut().zip(&p) {
            *g += config.sparse_reg_weight / (pi + config.sparse_reg_epsilon);
        }
    }

    // back through the softmax: dL/dz_b = y_b (g_b - sum_m y_m g_m)
    let softmax_back = |y: &[f64], g: &[f64]| -> Vec<f64> {
        let mut out = Vec::with_capacity(y.len());
        for (yr, gr) in y.chunks(k).zip(g.chunks(k)) {
            let inner: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
            out.extend(yr.iter().zip(gr).map(|(a, b)| a * (b - inner)));
        }
        out
    };
    let grad = Gradient {
        t_bar: softmax_back(&t, &gt),
        p_bar: softmax_back(&p, &gp),
    };
    (value, grad)
}

/// Jacobian of `(c1, c2, c3)`, stacked in that order, with respect to the
/// logits `(T_bar, p_bar)`.
fn consensus_jacobian(t: &[f64], p: &[f64], k: usize) -> DMatrix<f64> {
    let kk = k * k;
    let (o2, o3) = (k, k + kk);
    let mut jt = DMatrix::<f64>::zeros(k + kk + kk * k, kk + k);
    for a in 0..k {
        let pa = p[a];
        let row = &t[a * k..(a + 1) * k];
        let col = |m: usize| a * k + m;
        for i in 0..k {
            jt[(i, col(i))] += pa;
            jt[(i, kk + a)] += row[i];
            for r in 0..k {
                let ir = (i + r) % k;
                let e = o2 + r * k + i;
                jt[(e, col(i))] += pa * row[ir];
                jt[(e, col(ir))] += pa * row[i];
                jt[(e, kk + a)] += row[i] * row[ir];
                for s in 0..k {
                    let is = (i + s) % k;
                    let e = o3 + (r * k + s) * k + i;
                    jt[(e, col(i))] += pa * row[ir] * row[is];
                    jt[(e, col(ir))] += pa * row[i] * row[is];
                    jt[(e, col(is))] += pa * row[i] * row[ir];
                    jt[(e, kk + a)] += row[i] * row[ir] * row[is];
                }
            }
        }
    }
    // chain through the row softmaxes: d/dz_l = y_l (d/dy_l - sum_m y_m d/dy_m)
    let mut out = DMatrix::<f64>::zeros(jt.nrows(), kk + k);
    let blocks = (0..k).map(|a| (a * k, &t[a * k..(a + 1) * k])).chain(std::iter::once((kk, p)));
    for (start, y) in blocks {
        for e in 0..jt.nrows() {
            let inner: f64 = (0..k).map(|m| y[m] * jt[(e, start + m)]).sum();
            for l in 0..k {
                out[(e, start + l)] = y[l] * (jt[(e, start + l)] - inner);
            }
        }
    }
    out
}

/// Refines an Adam iterate with Levenberg-Marquardt damped Gauss-Newton
/// steps on the same objective. Each sum-of-norms term is weighted by the
/// inverse of its residual norm, and only steps that lower the objective
/// are kept. Returns the objective, the parameters and whether the final
/// gradient norm fell below [`GRADIENT_TOL`].
fn polish(
    state: &mut SolverState,
    mut params: Vec<f64>,
    mut value: f64,
    target: &ConsensusStats,
    config: &EstimatorConfig,
) -> (f64, Vec<f64>, bool) {
    let k = state.k;
    let n = params.len();
    let mut lambda = f64::NAN;
    let mut stationary = false;
    for _ in 0..POLISH_STEPS {
        state.set_params(&params);
        let (_, grad) = objective_and_gradient(state, target, config);
        if grad.norm() < GRADIENT_TOL {
            stationary = true;
            break;
        }
        let t = softmax_rows(&state.t_bar, k);
        let p = softmax_rows(&state.p_bar, k);
        let (c1, c2, c3) = consensus_from_raw(k, &t, &p);
        let mut jac = consensus_jacobian(&t, &p, k);
        let mut offset = 0;
        for (model, tgt) in [c1, c2, c3].iter().zip(target.orders()) {
            let norm = residual_direction(model, tgt).0.max(RESIDUAL_FLOOR);
            let scale = norm.sqrt().recip();
            jac.rows_mut(offset, model.len()).scale_mut(scale);
            offset += model.len();
        }
        let hessian = jac.transpose() * &jac;
        if lambda.is_nan() {
            lambda = 1e-6 * hessian.diagonal().max().max(f64::MIN_POSITIVE);
        }
        let g = DVector::from_iterator(n, grad.t_bar.iter().chain(&grad.p_bar).map(|v| -v));
        let mut improved = false;
        while lambda.is_finite() && lambda < 1e12 {
            let damped = &hessian + DMatrix::<f64>::identity(n, n) * lambda;
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = chol.solve(&g);
            let candidate: Vec<f64> = params.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            state.set_params(&candidate);
            let v = objective(state, target, config);
            if v.is_finite() && v < value {
                params = candidate;
                value = v;
                lambda = (lambda * 0.1).max(1e-15);
                improved = true;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    (value, params, stationary)
}

/// Reorders the clean classes of `(T, p)` to maximize the prior-weighted
/// trace `sum_i p_i T_ii`. Permuting the rows of `T` together with `p`
/// leaves every consensus probability unchanged, so the solver cannot tell
/// these candidates apart; diagonal dominance selects one of them. Rows
/// of classes with no prior mass are unconstrained and get no say. The
/// identity order is kept unless another order scores strictly higher.
pub fn informative_relabeling(t: &TransitionMatrix, p: &PriorVector) -> (TransitionMatrix, PriorVector) {
    let k = t.k();
    // integer weights for the assignment solver; 1e-12 resolution
    let scale = 1e12;
    let weights: Vec<i64> = (0..k * k)
        .map(|idx| (p[idx / k] * t.as_slice()[idx] * scale).round() as i64)
        .collect();
    let matrix = pathfinding::matrix::Matrix::from_vec(k, k, weights.clone()).expect("k x k weights");
    let (best, assignment) = pathfinding::kuhn_munkres::kuhn_munkres(&matrix);
    let identity: i64 = (0..k).map(|i| weights[i * k + i]).sum();
    if best <= identity {
        return (t.clone(), p.clone());
    }
    // row a of T becomes row assignment[a]
    let mut entries = vec![0.0; k * k];
    let mut prior = vec![0.0; k];
    for (a, &i) in assignment.iter().enumerate() {
        entries[i * k..(i + 1) * k].copy_from_slice(t.row(a));
        prior[i] = p[a];
    }
    (
        TransitionMatrix::from_softmax_unchecked(k, entries),
        PriorVector::from_softmax_unchecked(prior),
    )
}

/// Minimizes the consensus objective from the standard initialization and
/// returns the softmax-mapped estimates of the best iterate, with classes
/// ordered by [`informative_relabeling`].
pub fn solve(target: &ConsensusStats, config: &EstimatorConfig) -> Result<SolverResult> {
    solve_from(SolverState::initial(target.k()), target, config)
}

pub fn solve_from(
    mut state: SolverState,
    target: &ConsensusStats,
    config: &EstimatorConfig,
) -> Result<SolverResult> {
    config.validate(None)?;
    check_k(&state, target);
    let mut params = state.params();
    let mut opt = Adam::new(params.len(), config.learning_rate);
    let mut best = (f64::INFINITY, params.clone());
    let mut converged = false;
    let mut iterations = 0;
    let mut since_best = 0;
    for iteration in 0..=config.max_iters {
        state.set_params(&params);
        let (value, grad) = objective_and_gradient(&state, target, config);
        if !value.is_finite() {
            return Err(HocError::Numerical {
                iteration,
                message: format!("objective became {value}"),
            });
        }
        if value < best.0 {
            best = (value, params.clone());
            since_best = 0;
        } else {
            since_best += 1;
            // The L2 objective has a kink at its minimum, so a fixed step
            // keeps Adam circling it; halve on plateaus.
            if since_best >= PLATEAU_PATIENCE {
                opt.lr *= 0.5;
                since_best = 0;
            }
        }
        let gnorm = grad.norm();
        if iteration % 100 == 0 {
            log::trace!("iter {iteration}: objective {value:.3e}, |grad| {gnorm:.2e}, lr {:.2e}", opt.lr);
        }
        iterations = iteration;
        if gnorm < GRADIENT_TOL {
            converged = true;
            break;
        }
        if iteration == config.max_iters {
            break;
        }
        let flat: Vec<f64> = grad.t_bar.iter().chain(&grad.p_bar).copied().collect();
        opt.step(&mut params, &flat);
    }
    // With the sparse prior term the objective keeps decreasing toward a
    // vertex of the simplex; only the unregularized fit is polished.
    if config.max_iters > 0 && config.sparse_reg_weight == 0.0 && state.k <= POLISH_MAX_K {
        let (value, params, stationary) = polish(&mut state, best.1, best.0, target, config);
        best = (value, params);
        converged |= stationary;
    }
    state.set_params(&best.1);
    state.iteration = iterations;
    state.objective = best.0;
    let (t_hat, p_hat) = informative_relabeling(&state.transition(), &state.prior());
    Ok(SolverResult {
        t_hat,
        p_hat,
        final_objective: best.0,
        iterations_used: iterations,
        converged,
    })
}
