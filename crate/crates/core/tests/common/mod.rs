//! Test-side oracles, written independently of the library internals.
#![allow(dead_code)]

use hoc::{PriorVector, TransitionMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random row-stochastic matrix with each diagonal entry in `[lo, hi)`.
pub fn random_informative(rng: &mut ChaCha8Rng, k: usize, lo: f64, hi: f64) -> TransitionMatrix {
    let mut rows = Vec::with_capacity(k);
    for i in 0..k {
        let diag = if k == 1 { 1.0 } else { rng.random_range(lo..hi) };
        let mut off: Vec<f64> = (0..k - 1).map(|_| rng.random::<f64>() + 0.01).collect();
        let s: f64 = off.iter().sum();
        off.iter_mut().for_each(|v| *v *= (1.0 - diag) / s);
        off.insert(i, diag);
        rows.push(off);
    }
    TransitionMatrix::from_rows(&rows).unwrap()
}

pub fn random_prior(rng: &mut ChaCha8Rng, k: usize, floor: f64) -> PriorVector {
    let mut p: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + floor).collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    PriorVector::new(p).unwrap()
}

/// Consensus probabilities from the joint law of three noisy labels drawn
/// independently given a shared clean class. Returns `(c1, c2, c3)` with
/// `c2[r * K + i] = P(y = i, y1 = i + r)` and
/// `c3[(r * K + s) * K + i] = P(y = i, y1 = i + r, y2 = i + s)`.
pub fn joint_consensus(t: &[f64], p: &[f64], k: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut c1 = vec![0.0; k];
    let mut c2 = vec![0.0; k * k];
    let mut c3 = vec![0.0; k * k * k];
    for a in 0..k {
        for y0 in 0..k {
            let w0 = p[a] * t[a * k + y0];
            c1[y0] += w0;
            for y1 in 0..k {
                let w1 = w0 * t[a * k + y1];
                let r = (y1 + k - y0) % k;
                c2[r * k + y0] += w1;
                for y2 in 0..k {
                    let s = (y2 + k - y0) % k;
                    c3[(r * k + s) * k + y0] += w1 * t[a * k + y2];
                }
            }
        }
    }
    (c1, c2, c3)
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Straight-line objective: sum of per-order Euclidean distances.
pub fn objective_oracle(t_bar: &[f64], p_bar: &[f64], k: usize, target: [&[f64]; 3]) -> f64 {
    let t: Vec<f64> = t_bar.chunks(k).flat_map(softmax).collect();
    let p = softmax(p_bar);
    let (c1, c2, c3) = joint_consensus(&t, &p, k);
    [c1, c2, c3]
        .iter()
        .zip(target)
        .map(|(m, c)| m.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
        .sum()
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
