mod common;

use common::{random_model, random_spec};
use dta_core::cost::{kkt_solve, CostSpec, QuadraticCost};
use dta_core::engine::agent::{round, AgentSteps};
use dta_core::engine::{
    dta_step, dta_step_disturbed, dta_step_uncoordinated, init, run, wga_step, Algorithm,
    DisturbanceKind, DisturbanceSpec, EngineConfig, IterateState,
};
use dta_core::network::{sample, spectral_report, Edge, NetworkModel, ProposalRule, Topology};
use dta_core::stepsize::Stepsizes;
use dta_core::stepsize::{constants, optimal_stepsizes};
use dta_core::Error;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn two_agents() -> (CostSpec, NetworkModel) {
    let q = QuadraticCost::new(1.0, 0.0, 0.0).unwrap();
    let spec = CostSpec::scalar(vec![q, q], &[0.0, 2.0]).unwrap();
    let edge = Edge {
        i: 0,
        j: 1,
        theta: 1.0,
        w_ij: 0.5,
        w_ji: 0.5,
    };
    (spec, NetworkModel::new(2, vec![edge]).unwrap())
}

fn col(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v)
}

#[test]
fn two_steps_match_hand_computation() {
    let (spec, model) = two_agents();
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let w = sample(&model, &mut rng);
    let s0 = init(&spec, &col(&[0.0, 0.0])).unwrap();
    let s1 = dta_step(&s0, &spec, &w, 0.1, 0.1).unwrap();
    assert!((&s1.x - col(&[0.0, 0.2])).abs().max() < 1e-15);
    assert!((&s1.y - col(&[-1.0, -0.8])).abs().max() < 1e-15);
    let s2 = dta_step(&s1, &spec, &w, 0.1, 0.1).unwrap();
    assert!((&s2.x - col(&[0.12, 0.26])).abs().max() < 1e-15);
    assert!((&s2.y - col(&[-0.78, -0.84])).abs().max() < 1e-15);
    assert_eq!(s2.k, 2);
}

fn random_state(rng: &mut ChaCha20Rng, n: usize, u: usize) -> IterateState {
    IterateState {
        x: DMatrix::from_fn(n, u, |_, _| rng.random_range(-5.0..5.0)),
        y: DMatrix::from_fn(n, u, |_, _| rng.random_range(-5.0..5.0)),
        k: 0,
    }
}

#[test]
fn matrix_and_agent_kernels_agree() {
    let mut rng = ChaCha20Rng::seed_from_u64(10);
    for _ in 0..1000 {
        let n = rng.random_range(2..=8);
        let spec = random_spec(&mut rng, n, 0.1, 2.0);
        let model = random_model(&mut rng, n);
        let w = sample(&model, &mut rng);
        let st = random_state(&mut rng, n, 1);
        let zeta = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-1.0..1.0));
        let (alpha, beta) = (rng.random_range(0.0..0.5), rng.random_range(0.0..0.5));
        let alphas: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
        let betas: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
        let shared_a = vec![alpha; n];
        let shared_b = vec![beta; n];
        let m = dta_step_disturbed(&st, &spec, &w, alpha, beta, Some(&zeta)).unwrap();
        let a = round(
            &st,
            &spec,
            &model,
            &w.active_edges,
            AgentSteps {
                alphas: &shared_a,
                betas: &shared_b,
                track: true,
            },
            Some(&zeta),
        );
        assert!((&m.x - &a.x).abs().max() <= 1e-12);
        assert!((&m.y - &a.y).abs().max() <= 1e-12);

        let m = dta_step_uncoordinated(&st, &spec, &w, &alphas, &betas).unwrap();
        let a = round(
            &st,
            &spec,
            &model,
            &w.active_edges,
            AgentSteps {
                alphas: &alphas,
                betas: &betas,
                track: true,
            },
            None,
        );
        assert!((&m.x - &a.x).abs().max() <= 1e-12);
        assert!((&m.y - &a.y).abs().max() <= 1e-12);

        let m = wga_step(&st, &spec, &w, beta, Some(&zeta)).unwrap();
        let a = round(
            &st,
            &spec,
            &model,
            &w.active_edges,
            AgentSteps {
                alphas: &shared_a,
                betas: &shared_b,
                track: false,
            },
            Some(&zeta),
        );
        assert!((&m.x - &a.x).abs().max() <= 1e-12);
    }
}

#[test]
fn optimum_with_zero_tracker_is_a_fixed_point() {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    for _ in 0..50 {
        let n = rng.random_range(2..=8);
        let spec = random_spec(&mut rng, n, 0.1, 2.0);
        let model = random_model(&mut rng, n);
        let mut st = IterateState {
            x: kkt_solve(&spec).x_star,
            y: DMatrix::zeros(n, 1),
            k: 0,
        };
        let start = st.x.clone();
        for _ in 0..200 {
            let w = sample(&model, &mut rng);
            st = dta_step(&st, &spec, &w, 0.3, 0.3).unwrap();
        }
        assert!((&st.x - &start).abs().max() < 1e-9);
        assert!(st.y.abs().max() < 1e-9);
    }
}

#[test]
fn tracker_sum_and_mean_recursion_hold_along_runs() {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    for _ in 0..20 {
        let n = rng.random_range(2..=8);
        let spec = random_spec(&mut rng, n, 0.1, 2.0);
        let model = random_model(&mut rng, n);
        let alpha = rng.random_range(0.01..0.5);
        let d_sum = spec.demands().sum();
        let mut st = init(&spec, &DMatrix::zeros(n, 1)).unwrap();
        for _ in 0..2000 {
            let w = sample(&model, &mut rng);
            let next = dta_step(&st, &spec, &w, alpha, 0.2).unwrap();
            let predicted_mean = (1.0 - alpha) * st.y.mean();
            assert!((next.y.mean() - predicted_mean).abs() < 1e-9);
            assert!((next.y.sum() - (next.x.sum() - d_sum)).abs() < 1e-9);
            st = next;
        }
    }
}

#[test]
fn baseline_feasibility_drift_equals_disturbance_sum() {
    let mut rng = ChaCha20Rng::seed_from_u64(8);
    let n = 6;
    let spec = random_spec(&mut rng, n, 0.1, 2.0);
    let model = random_model(&mut rng, n);
    let shift = spec.demands().sum() / n as f64;
    let cfg = EngineConfig {
        algorithm: Algorithm::Wga,
        stepsizes: Stepsizes::Shared {
            alpha: 0.2,
            beta: 0.0,
        },
        iterations: 3000,
        x0: DMatrix::from_element(n, 1, shift),
        seed: 3,
        replicas: 4,
        disturbance: DisturbanceSpec {
            kind: DisturbanceKind::Gaussian,
            m_zeta: 5.0,
            q_zeta: 0.995,
            cutoff: None,
        },
    };
    for r in run(&cfg, &spec, &model).unwrap() {
        let gap = r.trace.records.last().unwrap().feasibility_gap;
        assert!((gap - r.disturbance_sum[0].abs()).abs() < 1e-9);
        assert!(gap > 1e-3);
    }
}

#[test]
fn disturbance_envelopes() {
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let (n, u, m, q) = (5, 2, 3.0, 0.99);
    for kind in [
        DisturbanceKind::Gaussian,
        DisturbanceKind::Laplace,
        DisturbanceKind::Impulse,
    ] {
        let spec = DisturbanceSpec {
            kind,
            m_zeta: m,
            q_zeta: q,
            cutoff: Some(150),
        };
        for k in [0, 50, 149] {
            let target = (m * q.powi(k as i32)).powi(2);
            let samples = 20_000;
            let draws: Vec<f64> = (0..samples)
                .map(|_| spec.draw(n, u, k, &mut rng).unwrap().norm_squared())
                .collect();
            let mean = draws.iter().sum::<f64>() / samples as f64;
            let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / samples as f64;
            if kind == DisturbanceKind::Impulse {
                assert!(draws.iter().all(|d| (d - target).abs() < 1e-9 * target));
            } else {
                assert!(
                    (mean - target).abs() < 5.0 * (var / samples as f64).sqrt(),
                    "{kind:?} k={k}"
                );
            }
        }
        assert!(spec.draw(n, u, 150, &mut rng).is_none());
    }
}

#[test]
fn replica_streams_are_deterministic_and_independent_of_replica_count() {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let n = 5;
    let spec = random_spec(&mut rng, n, 0.1, 2.0);
    let model = random_model(&mut rng, n);
    let mut cfg = EngineConfig {
        algorithm: Algorithm::DtaDisturbed,
        stepsizes: Stepsizes::Shared {
            alpha: 0.1,
            beta: 0.2,
        },
        iterations: 300,
        x0: DMatrix::zeros(n, 1),
        seed: 99,
        replicas: 3,
        disturbance: DisturbanceSpec {
            kind: DisturbanceKind::Laplace,
            m_zeta: 1.0,
            q_zeta: 0.99,
            cutoff: None,
        },
    };
    let a = run(&cfg, &spec, &model).unwrap();
    let b = run(&cfg, &spec, &model).unwrap();
    assert_eq!(a, b);
    cfg.replicas = 5;
    let c = run(&cfg, &spec, &model).unwrap();
    assert_eq!(a[..], c[..3]);
    assert_ne!(c[0].trace, c[1].trace);
    cfg.seed = 100;
    assert_ne!(run(&cfg, &spec, &model).unwrap()[0].trace, a[0].trace);
}

#[test]
fn blow_up_is_reported_with_replica_and_iteration() {
    let (spec, model) = two_agents();
    let cfg = EngineConfig {
        algorithm: Algorithm::Dta,
        stepsizes: Stepsizes::Shared {
            alpha: 3.0,
            beta: 0.1,
        },
        iterations: 10_000,
        x0: DMatrix::zeros(2, 1),
        seed: 0,
        replicas: 2,
        disturbance: DisturbanceSpec::default(),
    };
    match run(&cfg, &spec, &model) {
        Err(Error::Divergence { replica, k }) => {
            assert_eq!(replica, 0);
            assert!(k > 0 && k < 10_000);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn deviation_tracking_reaches_the_optimum_at_optimal_stepsizes() {
    let mut rng = ChaCha20Rng::seed_from_u64(30);
    for _ in 0..10 {
        let n = rng.random_range(2..=8);
        let spec = random_spec(&mut rng, n, 0.5, 1.0);
        let theta = rng.random_range(0.3..=1.0);
        let model =
            NetworkModel::build(n, &Topology::Complete, theta, &ProposalRule::Metropolis).unwrap();
        let net = spectral_report(&model);
        let op = optimal_stepsizes(&constants(&spec, &net).unwrap(), &net);
        let cfg = EngineConfig {
            algorithm: Algorithm::Dta,
            stepsizes: Stepsizes::Shared {
                alpha: op.alpha,
                beta: op.beta,
            },
            iterations: 5_000,
            x0: DMatrix::zeros(n, 1),
            seed: 1,
            replicas: 1,
            disturbance: DisturbanceSpec::default(),
        };
        let rec = run(&cfg, &spec, &model).unwrap()[0].trace.records.clone();
        let (first, last) = (rec[0], *rec.last().unwrap());
        assert!(
            last.optimality_distance < 1e-6 * first.optimality_distance,
            "n={n} theta={theta}"
        );
        assert!(last.feasibility_gap < 1e-6 * first.feasibility_gap);
        assert!(last.gradient_dispersion < 1e-6 * first.gradient_dispersion.max(1.0));
    }
}
