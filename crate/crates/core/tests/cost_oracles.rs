use dta_core::cost::{global_cost, gradient, kkt_solve, AgentCost, CostSpec, QuadraticCost};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn random_spec(rng: &mut ChaCha20Rng, n: usize, u: usize) -> CostSpec {
    let costs = (0..n)
        .map(|_| {
            QuadraticCost::new(
                rng.random_range(0.2..3.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.0..1.0),
            )
            .unwrap()
        })
        .collect();
    let d = DMatrix::from_fn(n, u, |_, _| rng.random_range(-5.0..15.0));
    CostSpec::new(costs, d).unwrap()
}

/// Projected gradient on the affine set `1ᵀx = 1ᵀd`, one column at a time.
fn projected_gradient(spec: &CostSpec) -> DMatrix<f64> {
    let (n, u) = (spec.n(), spec.u());
    let step = 1.0 / spec.phi_hi();
    let mut x = DMatrix::zeros(n, u);
    for c in 0..u {
        let total: f64 = spec.demands().column(c).sum();
        for i in 0..n {
            x[(i, c)] = total / n as f64;
        }
        for _ in 0..200_000 {
            let g: Vec<f64> = (0..n)
                .map(|i| gradient(spec, i, &[x[(i, c)]]).unwrap()[0])
                .collect();
            let mean = g.iter().sum::<f64>() / n as f64;
            let dev = g.iter().map(|v| (v - mean).abs()).fold(0.0, f64::max);
            if dev < 1e-13 {
                break;
            }
            for i in 0..n {
                x[(i, c)] -= step * (g[i] - mean);
            }
        }
    }
    x
}

#[test]
fn kkt_matches_projected_gradient_on_random_specs() {
    let mut rng = ChaCha20Rng::seed_from_u64(101);
    for case in 0..100 {
        let n = rng.random_range(1..=12);
        let u = rng.random_range(1..=3);
        let spec = random_spec(&mut rng, n, u);
        let closed = kkt_solve(&spec).x_star;
        let brute = projected_gradient(&spec);
        let err = (&closed - &brute).abs().max();
        assert!(err <= 1e-8, "case {case}: error {err:e}");
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let h = 1e-6;
    for _ in 0..200 {
        let c = QuadraticCost::new(
            rng.random_range(0.01..5.0),
            rng.random_range(-3.0..3.0),
            rng.random_range(-3.0..3.0),
        )
        .unwrap();
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-10.0..10.0)).collect();
        let mut g = vec![0.0; 3];
        c.gradient_into(&x, &mut g);
        for k in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let fd = (c.value(&xp) - c.value(&xm)) / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + g[k].abs()));
        }
    }
}

#[test]
fn optimum_beats_feasible_perturbations() {
    let mut rng = ChaCha20Rng::seed_from_u64(17);
    for _ in 0..50 {
        let spec = random_spec(&mut rng, 6, 2);
        let xs = kkt_solve(&spec).x_star;
        let best = global_cost(&spec, &xs).unwrap();
        for _ in 0..20 {
            let mut p = DMatrix::from_fn(6, 2, |_, _| rng.random_range(-1.0..1.0));
            for c in 0..2 {
                let m = p.column(c).mean();
                p.column_mut(c).add_scalar_mut(-m);
            }
            assert!(global_cost(&spec, &(&xs + p)).unwrap() >= best - 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn kkt_invariants(seed in any::<u64>(), n in 1usize..15, u in 1usize..=3) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let spec = random_spec(&mut rng, n, u);
        let sol = kkt_solve(&spec);
        for c in 0..u {
            let supply: f64 = sol.x_star.column(c).sum();
            let demand: f64 = spec.demands().column(c).sum();
            prop_assert!((supply - demand).abs() <= 1e-9 * (1.0 + demand.abs()));
            for i in 0..n {
                let g = gradient(&spec, i, &[sol.x_star[(i, c)]]).unwrap()[0];
                prop_assert!((g - sol.mu_star[c]).abs() <= 1e-9 * (1.0 + g.abs()));
            }
        }
    }

    #[test]
    fn strong_convexity_and_lipschitz(
        a in 0.01f64..10.0,
        b in -5.0f64..5.0,
        x in proptest::collection::vec(-50.0f64..50.0, 3),
        y in proptest::collection::vec(-50.0f64..50.0, 3),
    ) {
        let c = QuadraticCost::new(a, b, 0.0).unwrap();
        let (mut gx, mut gy) = (vec![0.0; 3], vec![0.0; 3]);
        c.gradient_into(&x, &mut gx);
        c.gradient_into(&y, &mut gy);
        let dx2: f64 = x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum();
        let inner: f64 = (0..3).map(|k| (gx[k] - gy[k]) * (x[k] - y[k])).sum();
        let dg2: f64 = (0..3).map(|k| (gx[k] - gy[k]).powi(2)).sum();
        prop_assert!(inner >= c.eta() * dx2 * (1.0 - 1e-12) - 1e-12);
        prop_assert!(dg2.sqrt() <= c.phi() * dx2.sqrt() * (1.0 + 1e-12) + 1e-12);
    }
}
