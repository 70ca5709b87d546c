use mamba_mpc::mamba::{MambaMpcParams, MambaPredictor, ModelConfig, Normalization};
use mamba_mpc::mpc::{
    mpc_cost, run_closed_loop, solve, AffinePredictor, ClosedLoopConfig, MpcProblem, ReferenceSchedule, RolloutPredictor,
    SequencePredictor, SolveStatus, StageData, WeightSpec,
};
use mamba_mpc::plants::{PlantModel, VanDerPol};
use mamba_mpc::tensor::RealMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn weights(q: f64, r: f64, p: f64, ny: usize, nu: usize) -> (RealMatrix, RealMatrix, RealMatrix) {
    (
        WeightSpec::Scalar(q).to_matrix(ny).unwrap(),
        WeightSpec::Scalar(r).to_matrix(nu).unwrap(),
        WeightSpec::Scalar(p).to_matrix(ny).unwrap(),
    )
}

fn random_affine(n: usize, nu: usize, ny: usize, nx: usize, seed: u64) -> AffinePredictor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = RealMatrix::zeros(n * ny, n * nu);
    // Lower block-triangular gains like a causal system.
    for i in 0..n {
        for j in 0..=i {
            for a in 0..ny {
                for b in 0..nu {
                    g.set(i * ny + a, j * nu + b, rng.random_range(-1.0..1.0));
                }
            }
        }
    }
    let f = RealMatrix::new(n * ny, nx, (0..n * ny * nx).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let c = (0..n * ny).map(|_| rng.random_range(-0.5..0.5)).collect();
    AffinePredictor::new(n, nu, ny, g, f, c).unwrap()
}

/// Dense Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

#[test]
fn affine_problem_matches_least_squares() {
    let (n, nu, ny, nx) = (5, 2, 2, 3);
    let pred = random_affine(n, nu, ny, nx, 4);
    let (q, r, p) = weights(3.0, 0.7, 9.0, ny, nu);
    let prob = MpcProblem::new(n, q, r, Some(p), vec![-1e3; nu], vec![1e3; nu]).unwrap();
    let x0 = [0.3, -0.2, 0.9];
    let u_prev = [0.4, -0.1];
    let y0 = [0.0, 0.1];
    let reference: Vec<f64> = (0..(n + 1) * ny).map(|i| (i as f64 * 0.7).sin()).collect();
    let sol = solve(&prob, &pred, StageData { x0: &x0, y0: &y0, u_prev: &u_prev, reference: &reference }, None).unwrap();

    // Normal equations (GᵀWG + DᵀΨD) u = GᵀW(r - Fx0 - c) + DᵀΨ d0 from the
    // stacked Ω and Ψ.
    let (m, k) = (n * ny, n * nu);
    let omega = prob.omega();
    let psi = prob.psi();
    let w = |i: usize, j: usize| omega.get(ny + i, ny + j);
    let mut fx = pred.state_gain.mul_vec(&x0).unwrap();
    fx.iter_mut().zip(&pred.offset).for_each(|(a, b)| *a += b);
    let target: Vec<f64> = (0..m).map(|i| reference[ny + i] - fx[i]).collect();
    let d = |i: usize, j: usize| -> f64 {
        if i == j {
            1.0
        } else if i == j + nu {
            -1.0
        } else {
            0.0
        }
    };
    let mut lhs = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for a in 0..k {
        for b in 0..k {
            let mut s = 0.0;
            for i in 0..m {
                for j in 0..m {
                    s += pred.gain.get(i, a) * w(i, j) * pred.gain.get(j, b);
                }
            }
            for i in 0..k {
                for j in 0..k {
                    s += d(i, a) * psi.get(i, j) * d(j, b);
                }
            }
            lhs[a][b] = s;
        }
        let mut s = 0.0;
        for i in 0..m {
            for j in 0..m {
                s += pred.gain.get(i, a) * w(i, j) * target[j];
            }
        }
        for i in 0..k {
            for j in 0..nu {
                s += d(i, a) * psi.get(i, j) * u_prev[j];
            }
        }
        rhs[a] = s;
    }
    let want = solve_dense(lhs, rhs);
    for (a, b) in sol.u.iter().zip(&want) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
    assert!(sol.iterations <= 2);
    let c = mpc_cost(&sol.u, &sol.y_pred, &y0, &u_prev, &reference, &prob.q, &prob.r, &prob.p).unwrap();
    assert_eq!(c, sol.cost);
}

#[test]
fn degenerate_box_pins_the_input() {
    let pred = RolloutPredictor::new(VanDerPol::default(), 10);
    let (q, r, p) = weights(50.0, 0.5, 100.0, 1, 1);
    let prob = MpcProblem::new(10, q, r, Some(p), vec![2.5], vec![2.5]).unwrap();
    let reference = vec![-3.0; 11];
    let sol = solve(&prob, &pred, StageData { x0: &[1.0, 0.5], y0: &[1.0], u_prev: &[0.0], reference: &reference }, None)
        .unwrap();
    assert!(sol.u.iter().all(|&v| v == 2.5));
}

#[test]
fn warm_start_at_optimum_is_a_fixed_point() {
    let pred = RolloutPredictor::new(VanDerPol::default(), 10);
    let (q, r, p) = weights(50.0, 0.5, 100.0, 1, 1);
    let prob = MpcProblem::new(10, q, r, Some(p), vec![-15.0], vec![15.0]).unwrap();
    let reference = vec![0.0; 11];
    let stage = StageData { x0: &[1.5, -0.5], y0: &[1.5], u_prev: &[0.0], reference: &reference };
    let cold = solve(&prob, &pred, stage, None).unwrap();
    assert!(!cold.status.is_failure());
    let warm = solve(&prob, &pred, stage, Some(&cold.u)).unwrap();
    assert!(warm.iterations <= 2, "{} iterations", warm.iterations);
    assert!(warm.cost <= cold.cost + 1e-9);
}

#[test]
fn zero_problem_on_zero_preserving_model_returns_zero() {
    let cfg = ModelConfig { d_model: 4, expand: 2, d_state: 4, d_conv: 4, dt_rank: 1, n_layers: 2, ..ModelConfig::new(6, 1, 2, 1) };
    let mut params = MambaMpcParams::init(cfg.clone(), 8).unwrap();
    params.entry_mut("embed.bias").unwrap().fill(0.0);
    let pred = MambaPredictor::new(params, Normalization::identity(&cfg)).unwrap();
    assert!(pred.predict(&[0.0; 6], &[0.0; 2], None).unwrap().iter().all(|&v| v == 0.0));
    let (q, r, p) = weights(10.0, 1.0, 20.0, 1, 1);
    let prob = MpcProblem::new(6, q, r, Some(p), vec![-1.0], vec![2.0]).unwrap();
    let reference = vec![0.0; 7];
    let sol = solve(&prob, &pred, StageData { x0: &[0.0; 2], y0: &[0.0], u_prev: &[0.0], reference: &reference }, None)
        .unwrap();
    assert!(sol.u.iter().all(|&v| v == 0.0));
    assert_eq!(sol.status, SolveStatus::Converged);
}

#[test]
fn output_box_is_enforced_approximately() {
    let pred = RolloutPredictor::new(VanDerPol::default(), 10);
    let (q, r, p) = weights(50.0, 0.5, 100.0, 1, 1);
    let prob = MpcProblem::new(10, q, r, Some(p), vec![-15.0], vec![15.0])
        .unwrap()
        .with_output_box(vec![-0.5], vec![0.5])
        .unwrap();
    let free = MpcProblem { y_bounds: None, ..prob.clone() };
    let reference = vec![1.0; 11];
    let stage = StageData { x0: &[0.0, 0.0], y0: &[0.0], u_prev: &[0.0], reference: &reference };
    let boxed = solve(&prob, &pred, stage, None).unwrap();
    let open = solve(&free, &pred, stage, None).unwrap();
    let peak = |y: &[f64]| y.iter().fold(f64::MIN, |m, &v| m.max(v));
    assert!(peak(&open.y_pred) > 0.8);
    assert!(peak(&boxed.y_pred) < 0.55, "{}", peak(&boxed.y_pred));
}

#[test]
fn closed_loop_with_no_steps_is_empty() {
    let plant = VanDerPol::default();
    let pred = RolloutPredictor::new(plant, 10);
    let (q, r, p) = weights(50.0, 0.5, 100.0, 1, 1);
    let prob = MpcProblem::new(10, q, r, Some(p), vec![-15.0], vec![15.0]).unwrap();
    let cfg = ClosedLoopConfig { steps: 0, u_init: vec![0.0], noise: None, compare_cold: false };
    let log = run_closed_loop(&plant, &pred, &prob, &ReferenceSchedule::constant(vec![0.0]), &[1.0, 0.0], &cfg).unwrap();
    assert!(log.is_empty());
}

#[test]
fn matched_model_tracks_a_constant_reference() {
    let plant = VanDerPol::default();
    let pred = RolloutPredictor::new(plant, 10);
    let (q, r, p) = weights(100.0, 0.5, 100.0, 1, 1);
    let prob = MpcProblem::new(10, q, r, Some(p), vec![-15.0], vec![15.0]).unwrap();
    let cfg = ClosedLoopConfig { steps: 150, u_init: vec![0.0], noise: None, compare_cold: false };
    let log = run_closed_loop(&plant, &pred, &prob, &ReferenceSchedule::constant(vec![1.5]), &[-1.0, 0.5], &cfg).unwrap();
    assert_eq!(log.len(), 150);
    assert!(log.steps.iter().enumerate().all(|(i, s)| s.k == i));
    let tail = &log.steps[120..];
    assert!(tail.iter().all(|s| (s.y[0] - 1.5).abs() < 1e-4), "{:?}", tail.last().unwrap().y);
    assert!(log.steps.iter().all(|s| !s.status.is_failure()));
}

#[test]
fn closed_loop_is_deterministic_under_noise() {
    let plant = VanDerPol::default();
    let pred = RolloutPredictor::new(plant, 10);
    let (q, r, p) = weights(50.0, 1.0, 10.0, 1, 1);
    let prob = MpcProblem::new(10, q, r, Some(p), vec![-15.0], vec![15.0]).unwrap();
    let noise = mamba_mpc::mpc::MeasurementNoise { std: vec![0.16, 0.13], seed: 3 };
    let cfg = ClosedLoopConfig { steps: 40, u_init: vec![0.0], noise: Some(noise), compare_cold: false };
    let run = || run_closed_loop(&plant, &pred, &prob, &ReferenceSchedule::constant(vec![0.5]), &[1.0, 0.0], &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    run().write_csv(&a).unwrap();
    run().write_csv(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let text = std::fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("k,t,r0,y0,u0,cost,iters\n"));
    assert_eq!(text.lines().count(), 41);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn solutions_stay_in_the_box_and_descend(
        x1 in -2.5f64..2.5, x2 in -2.0f64..2.0, lo in -6.0f64..0.0, width in 0.0f64..8.0,
        r0 in -2.0f64..2.0, u_prev in -3.0f64..3.0,
    ) {
        let plant = VanDerPol::default();
        let pred = RolloutPredictor::new(plant, 10);
        let (q, r, p) = weights(50.0, 0.5, 100.0, 1, 1);
        let prob = MpcProblem::new(10, q, r, Some(p), vec![lo], vec![lo + width]).unwrap();
        let reference = vec![r0; 11];
        let mut y0 = [0.0];
        plant.output(&[x1, x2], &[0.0], &mut y0);
        let sol = solve(&prob, &pred, StageData { x0: &[x1, x2], y0: &y0, u_prev: &[u_prev], reference: &reference }, None).unwrap();
        for &u in &sol.u {
            prop_assert!(u >= lo - 1e-8 && u <= lo + width + 1e-8);
        }
        prop_assert!(sol.cost_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn affine_solutions_respect_arbitrary_boxes(seed in 0u64..1000, lo in -2.0f64..0.5, width in 0.0f64..2.0) {
        let pred = random_affine(6, 2, 1, 2, seed);
        let (q, r, p) = weights(5.0, 0.1, 5.0, 1, 2);
        let prob = MpcProblem::new(6, q, r, Some(p), vec![lo, lo - 0.5], vec![lo + width, lo + 0.5 * width]).unwrap();
        let reference: Vec<f64> = (0..7).map(|i| (i as f64).cos() * 3.0).collect();
        let sol = solve(&prob, &pred, StageData { x0: &[0.2, -0.4], y0: &[0.0], u_prev: &[0.0, 0.0], reference: &reference }, None).unwrap();
        for (i, &u) in sol.u.iter().enumerate() {
            prop_assert!(u >= prob.u_min[i % 2] - 1e-8 && u <= prob.u_max[i % 2] + 1e-8);
        }
        prop_assert!(sol.cost_trace.windows(2).all(|w| w[1] <= w[0]));
        prop_assert!(!sol.status.is_failure());
    }
}
