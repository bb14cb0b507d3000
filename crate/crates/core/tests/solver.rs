mod common;

use common::{joint_consensus, objective_oracle, random_informative, random_prior, rng};
use hoc::consensus::forward_model;
use hoc::solver::{gradient, informative_relabeling, objective, objective_and_gradient, solve, Gradient, GRADIENT_TOL};
use hoc::{ConsensusStats, EstimatorConfig, HocError, PriorVector, SolverState, TransitionMatrix};
use rand::Rng;

fn target_of(t: &TransitionMatrix, p: &PriorVector) -> ConsensusStats {
    forward_model(t, p)
}

fn random_state(r: &mut rand_chacha::ChaCha8Rng, k: usize) -> SolverState {
    let t_bar = (0..k * k).map(|_| r.random_range(-2.0..2.0)).collect();
    let p_bar = (0..k).map(|_| r.random_range(-1.0..1.0)).collect();
    SolverState::from_logits(k, t_bar, p_bar).unwrap()
}

fn finite_difference(state: &SolverState, target: &ConsensusStats, config: &EstimatorConfig) -> Gradient {
    let h = 1e-5;
    let eval = |s: &SolverState| objective(s, target, config);
    let mut g = Gradient {
        t_bar: vec![0.0; state.t_bar.len()],
        p_bar: vec![0.0; state.p_bar.len()],
    };
    for i in 0..state.t_bar.len() {
        let (mut a, mut b) = (state.clone(), state.clone());
        a.t_bar[i] += h;
        b.t_bar[i] -= h;
        g.t_bar[i] = (eval(&a) - eval(&b)) / (2.0 * h);
    }
    for i in 0..state.p_bar.len() {
        let (mut a, mut b) = (state.clone(), state.clone());
        a.p_bar[i] += h;
        b.p_bar[i] -= h;
        g.p_bar[i] = (eval(&a) - eval(&b)) / (2.0 * h);
    }
    g
}

/// Entries below `floor` in magnitude are compared absolutely against
/// `1e-5 * floor`, since central differences carry ~1e-10 absolute noise.
fn max_relative_error(a: &Gradient, b: &Gradient) -> f64 {
    let floor = 1e-4;
    a.t_bar
        .iter()
        .chain(&a.p_bar)
        .zip(b.t_bar.iter().chain(&b.p_bar))
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

#[test]
fn objective_is_zero_at_a_perfect_fit() {
    let mut r = rng(1);
    for k in [2, 3, 4] {
        let state = random_state(&mut r, k);
        let target = target_of(&state.transition(), &state.prior());
        let config = EstimatorConfig::default();
        assert!(objective(&state, &target, &config) < 1e-12);
        let g = gradient(&state, &target, &config);
        assert_eq!(g.norm(), 0.0);
    }
}

#[test]
fn objective_is_the_single_residual() {
    let state = SolverState::initial(3);
    let exact = target_of(&state.transition(), &state.prior());
    let config = EstimatorConfig::default();
    let with_c1 = |c1: Vec<f64>| ConsensusStats::new(3, c1, exact.c2().to_vec(), exact.c3().to_vec()).unwrap();

    // one entry off by delta (small enough to stay within the sum tolerance)
    let delta = 5e-10;
    let mut c1 = exact.c1().to_vec();
    c1[1] += delta;
    let got = objective(&state, &with_c1(c1), &config);
    assert!((got - delta).abs() < 1e-15, "{got}");

    // mass moved between two entries
    let delta = 0.01;
    let mut c1 = exact.c1().to_vec();
    c1[0] += delta;
    c1[2] -= delta;
    let got = objective(&state, &with_c1(c1), &config);
    assert!((got - delta * 2f64.sqrt()).abs() < 1e-12, "{got}");
}

#[test]
fn objective_matches_straight_line_oracle_at_initialization() {
    let t = TransitionMatrix::from_rows(&[vec![0.8, 0.2], vec![0.3, 0.7]]).unwrap();
    let p = PriorVector::new(vec![0.4, 0.6]).unwrap();
    let target = target_of(&t, &p);
    let state = SolverState::initial(2);
    assert_eq!(state.t_bar, vec![1.0, -1.0, -1.0, 1.0]);
    assert_eq!(state.p_bar, vec![0.5, 0.5]);
    let got = objective(&state, &target, &EstimatorConfig::default());
    let want = objective_oracle(&state.t_bar, &state.p_bar, 2, target.orders());
    assert!((got - want).abs() < 1e-14, "{got} vs {want}");

    // Initial model: T0 = softmax rows of [1, -1] -> [e^2/(1+e^2), 1/(1+e^2)],
    // p0 uniform. Evaluate each order by hand.
    let a = 1.0 / (1.0 + (-2f64).exp());
    let b = 1.0 - a;
    let c1_model = [0.5 * (a + b), 0.5 * (a + b)];
    let c1_true = [0.4 * 0.8 + 0.6 * 0.3, 0.4 * 0.2 + 0.6 * 0.7];
    let n1 = ((c1_model[0] - c1_true[0]).powi(2) + (c1_model[1] - c1_true[1]).powi(2)).sqrt();
    // second order, r = 0: P(y = y1 = i); r = 1: P(y = i, y1 = 1 - i)
    let agree_model = 0.5 * (a * a + b * b);
    let cross_model = 0.5 * (a * b + b * a);
    let c2_true = [
        0.4 * 0.64 + 0.6 * 0.09,
        0.4 * 0.04 + 0.6 * 0.49,
        0.4 * 0.16 + 0.6 * 0.21,
        0.4 * 0.16 + 0.6 * 0.21,
    ];
    let c2_model = [agree_model, agree_model, cross_model, cross_model];
    let n2 = c2_model
        .iter()
        .zip(c2_true)
        .map(|(m, c)| (m - c).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut n3 = 0.0;
    for r in 0..2 {
        for s in 0..2 {
            for i in 0..2 {
                let (j, l) = ((i + r) % 2, (i + s) % 2);
                let tm = |x: usize, y: usize| if x == y { a } else { b };
                let tt = |x: usize, y: usize| t.get(x, y);
                let model: f64 = (0..2).map(|c| 0.5 * tm(c, i) * tm(c, j) * tm(c, l)).sum();
                let truth: f64 = (0..2).map(|c| p[c] * tt(c, i) * tt(c, j) * tt(c, l)).sum();
                n3 += (model - truth).powi(2);
            }
        }
    }
    let hand = n1 + n2 + n3.sqrt();
    assert!((got - hand).abs() < 1e-14, "{got} vs {hand}");
}

#[test]
fn gradient_matches_finite_differences() {
    let mut r = rng(2);
    let config = EstimatorConfig::default();
    for k in [2, 3, 5] {
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let state = random_state(&mut r, k);
            let truth = random_informative(&mut r, k, 0.5, 0.9);
            let target = target_of(&truth, &random_prior(&mut r, k, 0.2));
            let analytic = gradient(&state, &target, &config);
            let numeric = finite_difference(&state, &target, &config);
            worst = worst.max(max_relative_error(&analytic, &numeric));
        }
        assert!(worst < 1e-5, "K={k}: worst relative error {worst:e}");
    }
}

#[test]
fn gradient_with_regularizer_matches_finite_differences() {
    let mut r = rng(3);
    let config = EstimatorConfig::local_default();
    for k in [2, 4] {
        for _ in 0..5 {
            let state = random_state(&mut r, k);
            let target = target_of(&random_informative(&mut r, k, 0.6, 0.9), &random_prior(&mut r, k, 0.2));
            let err = max_relative_error(
                &gradient(&state, &target, &config),
                &finite_difference(&state, &target, &config),
            );
            assert!(err < 1e-5, "K={k}: {err:e}");
        }
    }
}

#[test]
fn gradient_respects_a_class_transposition() {
    // classes 0 and 1 of a K=3 problem are exchangeable in both state and target
    let t = TransitionMatrix::from_rows(&[
        vec![0.7, 0.1, 0.2],
        vec![0.1, 0.7, 0.2],
        vec![0.15, 0.15, 0.7],
    ])
    .unwrap();
    let p = PriorVector::new(vec![0.3, 0.3, 0.4]).unwrap();
    let target = target_of(&t, &p);
    let t_bar = vec![0.4, -0.3, 0.1, -0.3, 0.4, 0.1, -0.5, -0.5, 0.9];
    let state = SolverState::from_logits(3, t_bar, vec![0.2, 0.2, -0.1]).unwrap();
    let g = gradient(&state, &target, &EstimatorConfig::default());
    let swap = [1, 0, 2];
    for i in 0..3 {
        assert!((g.p_bar[i] - g.p_bar[swap[i]]).abs() < 1e-14);
        for j in 0..3 {
            let a = g.t_bar[i * 3 + j];
            let b = g.t_bar[swap[i] * 3 + swap[j]];
            assert!((a - b).abs() < 1e-14, "({i},{j}): {a} vs {b}");
        }
    }
    assert!(g.norm() > 1e-3);
}

#[test]
fn objective_and_gradient_agree_with_separate_calls() {
    let mut r = rng(4);
    let state = random_state(&mut r, 3);
    let target = target_of(&random_informative(&mut r, 3, 0.6, 0.9), &PriorVector::uniform(3));
    let config = EstimatorConfig::default();
    let (v, g) = objective_and_gradient(&state, &target, &config);
    assert_eq!(v, objective(&state, &target, &config));
    assert_eq!(g, gradient(&state, &target, &config));
}

#[test]
fn joint_oracle_agrees_with_forward_model() {
    let mut r = rng(5);
    for k in 1..=5 {
        let t = random_informative(&mut r, k, 0.3, 0.9);
        let p = random_prior(&mut r, k, 0.05);
        let (c1, c2, c3) = joint_consensus(t.as_slice(), p.as_slice(), k);
        let model = forward_model(&t, &p);
        for (a, b) in [(&c1[..], model.c1()), (&c2[..], model.c2()), (&c3[..], model.c3())] {
            for (x, y) in a.iter().zip(b) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn recovers_identity() {
    let target = target_of(&TransitionMatrix::identity(3), &PriorVector::uniform(3));
    let res = solve(&target, &EstimatorConfig::default()).unwrap();
    assert!(res.t_hat.max_abs_diff(&TransitionMatrix::identity(3)) < 1e-3);
    assert!(res.p_hat.max_abs_diff(&PriorVector::uniform(3)) < 1e-3);
}

#[test]
fn recovers_binary_example() {
    let t = TransitionMatrix::from_rows(&[vec![0.8, 0.2], vec![0.3, 0.7]]).unwrap();
    let p = PriorVector::new(vec![0.4, 0.6]).unwrap();
    let res = solve(&target_of(&t, &p), &EstimatorConfig::default()).unwrap();
    assert!(res.t_hat.max_abs_diff(&t) < 1e-3, "{:?}", res.t_hat);
    assert!(res.p_hat.max_abs_diff(&p) < 1e-3);
    assert!(res.final_objective < 1e-6);
}

#[test]
fn non_informative_generator_resolves_to_its_informative_relabeling() {
    // Swapping the clean classes of the generator (rows of T together with
    // p) leaves every consensus unchanged.
    let cases = [
        ([[0.4, 0.6], [0.6, 0.4]], [0.3, 0.7]),
        ([[0.4, 0.6], [0.8, 0.2]], [0.3, 0.7]),
    ];
    for (rows, prior) in cases {
        let t = TransitionMatrix::from_rows(&rows.map(|r| r.to_vec())).unwrap();
        let p = PriorVector::new(prior.to_vec()).unwrap();
        assert!(!t.validate().is_informative());
        let swapped = TransitionMatrix::from_rows(&[rows[1].to_vec(), rows[0].to_vec()]).unwrap();
        let swapped_p = PriorVector::new(vec![prior[1], prior[0]]).unwrap();
        assert!(target_of(&t, &p).max_abs_diff(&target_of(&swapped, &swapped_p)) < 1e-15);

        let res = solve(&target_of(&t, &p), &EstimatorConfig::default()).unwrap();
        assert!(res.t_hat.max_abs_diff(&swapped) < 1e-6, "{:?}", res.t_hat);
        assert!(res.p_hat.max_abs_diff(&swapped_p) < 1e-6);
        assert!(res.t_hat.max_abs_diff(&t) > 0.1);
    }
}

#[test]
fn recovers_random_informative_matrices() {
    let mut r = rng(6);
    for case in 0..12 {
        let k = 2 + case % 3;
        let t = random_informative(&mut r, k, 0.6, 0.95);
        let p = random_prior(&mut r, k, 0.2);
        let target = target_of(&t, &p);
        let initial = objective(&SolverState::initial(k), &target, &EstimatorConfig::default());
        let res = solve(&target, &EstimatorConfig::default()).unwrap();
        assert!(res.t_hat.max_abs_diff(&t) < 1e-6, "case {case}");
        assert!(res.final_objective < initial);
        assert!(res.t_hat.validate().is_stochastic());
    }
}

#[test]
fn zero_iterations_returns_the_initialization() {
    let config = EstimatorConfig {
        max_iters: 0,
        ..EstimatorConfig::default()
    };
    let target = target_of(&TransitionMatrix::identity(2), &PriorVector::uniform(2));
    let res = solve(&target, &config).unwrap();
    assert_eq!(res.t_hat, SolverState::initial(2).transition());
    assert_eq!(res.iterations_used, 0);
}

#[test]
fn converged_flag_follows_gradient_tolerance() {
    let state = SolverState::initial(2);
    let target = target_of(&state.transition(), &state.prior());
    let res = solve(&target, &EstimatorConfig::default()).unwrap();
    assert!(res.converged);
    assert_eq!(res.iterations_used, 0);
    assert!(gradient(&state, &target, &EstimatorConfig::default()).norm() < GRADIENT_TOL);
}

#[test]
fn huge_learning_rate_is_reported_or_survived() {
    let config = EstimatorConfig {
        learning_rate: 1e300,
        ..EstimatorConfig::default()
    };
    let target = target_of(&TransitionMatrix::symmetric(3, 0.2).unwrap(), &PriorVector::uniform(3));
    match solve(&target, &config) {
        Ok(res) => assert!(res.t_hat.validate().is_stochastic()),
        Err(HocError::Numerical { iteration, .. }) => assert!(iteration > 0),
        Err(other) => panic!("{other:?}"),
    }
}

#[test]
fn relabeling_restores_diagonal_dominance() {
    let t = TransitionMatrix::from_rows(&[vec![0.1, 0.2, 0.7], vec![0.8, 0.1, 0.1], vec![0.2, 0.6, 0.2]]).unwrap();
    let p = PriorVector::new(vec![0.2, 0.3, 0.5]).unwrap();
    let (t2, p2) = informative_relabeling(&t, &p);
    assert_eq!(t2.diagonal(), vec![0.8, 0.6, 0.7]);
    assert_eq!(p2.as_slice(), &[0.3, 0.5, 0.2]);
    assert!(target_of(&t, &p).max_abs_diff(&target_of(&t2, &p2)) < 1e-15);

    // already informative: untouched
    let (t3, p3) = informative_relabeling(&t2, &p2);
    assert_eq!((t3, p3), (t2, p2));

    // an empty class's row carries no weight
    let t = TransitionMatrix::from_rows(&[vec![0.1, 0.9], vec![0.45, 0.55]]).unwrap();
    let p = PriorVector::new(vec![0.0, 1.0]).unwrap();
    let (t4, _) = informative_relabeling(&t, &p);
    assert_eq!(t4, t);
}
