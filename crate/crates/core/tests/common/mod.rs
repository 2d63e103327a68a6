#![allow(dead_code)]

use dta_core::cost::{CostSpec, QuadraticCost};
use dta_core::network::{Edge, NetworkModel};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha20Rng;

/// Random scalar spec with curvatures in `[a_lo, a_hi]`.
pub fn random_spec(rng: &mut ChaCha20Rng, n: usize, a_lo: f64, a_hi: f64) -> CostSpec {
    let costs = (0..n)
        .map(|_| {
            QuadraticCost::new(
                rng.random_range(a_lo..=a_hi),
                rng.random_range(-1.0..1.0),
                0.0,
            )
            .unwrap()
        })
        .collect();
    let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
    CostSpec::scalar(costs, &d).unwrap()
}

/// Random model on `n` agents: a random spanning tree plus extra edges, random activation
/// probabilities and proposals small enough to keep every agent's load below one.
pub fn random_model(rng: &mut ChaCha20Rng, n: usize) -> NetworkModel {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut pairs = Vec::new();
    for k in 1..n {
        let parent = order[rng.random_range(0..k)];
        pairs.push((order[k].min(parent), order[k].max(parent)));
    }
    for i in 0..n {
        for j in i + 1..n {
            if !pairs.contains(&(i, j)) && rng.random::<f64>() < 0.3 {
                pairs.push((i, j));
            }
        }
    }
    let cap = 0.95 / (n - 1).max(1) as f64;
    let edges = pairs
        .into_iter()
        .map(|(i, j)| Edge {
            i,
            j,
            theta: rng.random_range(0.05..=1.0),
            w_ij: rng.random_range(0.01..cap),
            w_ji: rng.random_range(0.01..cap),
        })
        .collect();
    NetworkModel::new(n, edges).unwrap()
}

/// Random `v` with `1ᵀv = 0` and unit norm.
pub fn random_zero_mean(rng: &mut ChaCha20Rng, n: usize) -> DMatrix<f64> {
    let mut v = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
    let m = v.mean();
    v.add_scalar_mut(-m);
    let norm = v.norm();
    v / norm
}

/// `I − 11ᵀ/n`.
pub fn centering(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64)
}
