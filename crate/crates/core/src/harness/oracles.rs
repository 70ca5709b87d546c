//! Executable oracles: every kernel, model stage, training step, plant and
//! controller piece checked against an independent loop, closed form or hand
//! computation.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;

use super::metrics::compute_metrics;
use crate::mamba::{
    conv1d_depthwise, mamba_block, rmsnorm, selective_discretize, ssm_scan, ssm_scan_parallel, Discretization,
    MambaMpcParams, MambaPredictor, ModelConfig, Normalization, Padding,
};
use crate::mpc::{
    mpc_cost, run_closed_loop, solve, AffinePredictor, ClosedLoopConfig, ClosedLoopLog, MpcProblem, ReferenceSchedule,
    RolloutPredictor, SolveStatus, StageData, StepRecord, WeightSpec,
};
use crate::plants::{
    add_noise_snr, gen_multisine, multisine_bins, FourTank, MultisineSpec, PhaseSchedule, PlantModel, Spacing,
    VanDerPol,
};
use crate::tensor::dense::{linear, linear_grad_weight, sigmoid, silu, softplus};
use crate::tensor::{
    block_diag, einsum_contract, hadamard_broadcast, toeplitz_from_kernel, RealMatrix, SeqTensor, Tensor4,
};
use crate::train::{build_dataset, rse_loss, Adam, Dataset, GradEngine};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type Check = fn() -> Result<String, String>;

const ORACLES: &[(&str, Check)] = &[
    ("broadcast_product_vs_triple_loop", broadcast_loop),
    ("einsum_vs_quadruple_loop", einsum_loop),
    ("toeplitz_placement", toeplitz_placement),
    ("block_diag_placement", block_diag_placement),
    ("silu_and_softplus_scalars", activation_scalars),
    ("conv_vs_sliding_window_and_toeplitz", conv_dual),
    ("discretization_scalar_entry", discretization_scalar),
    ("scan_vs_loop_and_parallel", scan_loop),
    ("block_hand_unroll", block_unroll),
    ("rmsnorm_formula", rmsnorm_formula),
    ("tiny_predict_vs_frozen_reference", tiny_predict),
    ("rse_scalar", rse_scalar),
    ("affine_gradient_closed_form", affine_gradient),
    ("gradient_vs_central_differences", gradient_fd),
    ("adam_first_step", adam_first_step),
    ("ramp_windows_by_index", ramp_windows),
    ("van_der_pol_euler_steps", vdp_steps),
    ("four_tank_substep_and_steady_state", fourtank_checks),
    ("multisine_band_energy", multisine_band),
    ("noise_snr", noise_snr),
    ("mpc_cost_hand_expansion", cost_expansion),
    ("affine_mpc_vs_least_squares", affine_lq),
    ("matched_model_tracking", matched_tracking),
    ("metrics_hand_sums", metric_sums),
    ("stabilization_with_true_model", teacher_stabilization),
];

pub fn oracle_names() -> Vec<&'static str> {
    ORACLES.iter().map(|(n, _)| *n).collect()
}

/// Runs every oracle; a panic counts as a failure.
pub fn run_oracles() -> Vec<OracleOutcome> {
    ORACLES
        .iter()
        .map(|(name, check)| {
            let start = Instant::now();
            let res = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
            let seconds = start.elapsed().as_secs_f64();
            let (passed, detail) = match res {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            OracleOutcome { name: name.to_string(), passed, detail, seconds }
        })
        .collect()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> Result<f64, String> {
    ensure(a.len() == b.len(), || format!("length {} vs {}", a.len(), b.len()))?;
    Ok(a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs())))
}

fn within(label: &str, got: &[f64], want: &[f64], tol: f64) -> Result<f64, String> {
    let e = max_abs_diff(got, want)?;
    ensure(e <= tol, || format!("{label}: max error {e:e} > {tol:e}"))?;
    Ok(e)
}

fn err(e: crate::Error) -> String {
    e.to_string()
}

fn rand_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn broadcast_oracle(a: &SeqTensor, b: &SeqTensor) -> Vec<f64> {
    let (sa, sb) = (a.shape(), b.shape());
    let out: [usize; 3] = std::array::from_fn(|n| sa[n].max(sb[n]));
    let pick = |s: usize, i: usize| if s == 1 { 0 } else { i };
    let mut v = Vec::new();
    for i in 0..out[0] {
        for j in 0..out[1] {
            for k in 0..out[2] {
                v.push(
                    a.get(pick(sa[0], i), pick(sa[1], j), pick(sa[2], k))
                        * b.get(pick(sb[0], i), pick(sb[1], j), pick(sb[2], k)),
                );
            }
        }
    }
    v
}

fn broadcast_loop() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = SeqTensor::new([2, 3, 4], rand_vec(24, &mut rng)).map_err(err)?;
    let b = SeqTensor::new([1, 3, 1], rand_vec(3, &mut rng)).map_err(err)?;
    let got = hadamard_broadcast(&a, &b).map_err(err)?;
    let mut worst = within("2x3x4 by 1x3x1", got.data(), &broadcast_oracle(&a, &b), 1e-12)?;
    // Every compatible pair of shapes with axes in 1..=3.
    let mut pairs = 0;
    for code in 0..27 * 27 {
        let sa = [code % 3 + 1, code / 3 % 3 + 1, code / 9 % 3 + 1];
        let c = code / 27;
        let sb = [c % 3 + 1, c / 3 % 3 + 1, c / 9 % 3 + 1];
        let compatible = (0..3).all(|n| sa[n] == sb[n] || sa[n] == 1 || sb[n] == 1);
        let a = SeqTensor::new(sa, rand_vec(sa.iter().product(), &mut rng)).map_err(err)?;
        let b = SeqTensor::new(sb, rand_vec(sb.iter().product(), &mut rng)).map_err(err)?;
        match hadamard_broadcast(&a, &b) {
            Ok(got) if compatible => {
                worst = worst.max(within(&format!("{sa:?} by {sb:?}"), got.data(), &broadcast_oracle(&a, &b), 1e-12)?);
                pairs += 1;
            }
            Err(_) if !compatible => {}
            _ => return Err(format!("{sa:?} by {sb:?}: compatibility misjudged")),
        }
    }
    Ok(format!("{pairs} shape pairs, max error {worst:e}"))
}

fn einsum_loop() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (p, t, r, e) = (2, 3, 2, 4);
    let h = Tensor4::new([p, t, r, e], rand_vec(p * t * r * e, &mut rng)).map_err(err)?;
    let k = SeqTensor::new([p, t, e], rand_vec(p * t * e, &mut rng)).map_err(err)?;
    let got = einsum_contract(&h, &k).map_err(err)?;
    let mut want = Vec::new();
    for a in 0..p {
        for b in 0..t {
            for c in 0..r {
                let mut s = 0.0;
                for d in 0..e {
                    s += h.get(a, b, c, d) * k.get(a, b, d);
                }
                want.push(s);
            }
        }
    }
    let worst = within("einsum", got.data(), &want, 1e-12)?;
    Ok(format!("max error {worst:e}"))
}

fn toeplitz_placement() -> Result<String, String> {
    let m = toeplitz_from_kernel(&[1.0, 2.0], 3).map_err(err)?;
    let want = [1.0, 2.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 1.0, 2.0];
    ensure((m.rows(), m.cols()) == (3, 4) && m.data() == want, || format!("got {:?}", m.data()))?;
    Ok("exact".into())
}

fn block_diag_placement() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let shapes = [(2, 3), (1, 1), (3, 2)];
    let blocks: Vec<RealMatrix> =
        shapes.iter().map(|&(r, c)| RealMatrix::new(r, c, rand_vec(r * c, &mut rng)).unwrap()).collect();
    let m = block_diag(&blocks).map_err(err)?;
    ensure((m.rows(), m.cols()) == (6, 6), || format!("shape {}x{}", m.rows(), m.cols()))?;
    for i in 0..6 {
        for j in 0..6 {
            let (mut r0, mut c0, mut want) = (0, 0, 0.0);
            for b in &blocks {
                if (r0..r0 + b.rows()).contains(&i) && (c0..c0 + b.cols()).contains(&j) {
                    want = b.get(i - r0, j - c0);
                }
                r0 += b.rows();
                c0 += b.cols();
            }
            ensure(m.get(i, j) == want, || format!("entry ({i},{j})"))?;
        }
    }
    Ok("exact".into())
}

fn activation_scalars() -> Result<String, String> {
    let want = 1.0 / (1.0 + (-1.0f64).exp());
    let e1 = (sigmoid(1.0) - want).abs().max((silu(1.0) - want).abs());
    let e2 = (softplus(0.0) - std::f64::consts::LN_2).abs();
    ensure(e1 <= 1e-15 && e2 <= 1e-15, || format!("errors {e1:e}, {e2:e}"))?;
    Ok(format!("max error {:e}", e1.max(e2)))
}

fn conv_dual() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (l, ch, k) = (6, 3, 4);
    let x = SeqTensor::new([1, l, ch], rand_vec(l * ch, &mut rng)).map_err(err)?;
    let w = RealMatrix::new(ch, k, rand_vec(ch * k, &mut rng)).map_err(err)?;
    let bias = rand_vec(ch, &mut rng);
    let mut worst = 0.0f64;
    for padding in [Padding::Paper, Padding::Causal] {
        let got = conv1d_depthwise(&x, &w, &bias, padding).map_err(err)?;
        let (left, _) = padding.widths(k);
        let padded = |c: usize, i: usize| {
            if i < left || i - left >= l {
                0.0
            } else {
                x.get(0, i - left, c)
            }
        };
        let mut sliding = vec![0.0; l * ch];
        for t in 0..l {
            for c in 0..ch {
                sliding[t * ch + c] = bias[c] + (0..k).map(|j| w.get(c, j) * padded(c, t + j)).sum::<f64>();
            }
        }
        // Channel-major block_diag of per-channel Toeplitz matrices applied to
        // the stacked padded channels.
        let blocks: Vec<RealMatrix> =
            (0..ch).map(|c| toeplitz_from_kernel(&(0..k).map(|j| w.get(c, j)).collect::<Vec<_>>(), l).unwrap()).collect();
        let big = block_diag(&blocks).map_err(err)?;
        let stacked: Vec<f64> = (0..ch).flat_map(|c| (0..l + k - 1).map(move |i| (c, i))).map(|(c, i)| padded(c, i)).collect();
        let prod = big.mul_vec(&stacked).map_err(err)?;
        let mut toeplitz = vec![0.0; l * ch];
        for c in 0..ch {
            for t in 0..l {
                toeplitz[t * ch + c] = prod[c * l + t] + bias[c];
            }
        }
        worst = worst.max(within("sliding window", got.data(), &sliding, 1e-12)?);
        worst = worst.max(within("Toeplitz", got.data(), &toeplitz, 1e-12)?);
    }
    Ok(format!("both paddings, max error {worst:e}"))
}

fn tiny_config(padding: Padding) -> ModelConfig {
    ModelConfig {
        d_model: 2,
        expand: 1,
        d_state: 2,
        d_conv: 2,
        dt_rank: 1,
        n_layers: 1,
        horizon: 3,
        n_u: 1,
        n_x: 1,
        n_y: 1,
        padding,
        eps_rms: 1e-5,
    }
}

fn discretization_scalar() -> Result<String, String> {
    let cfg = ModelConfig { d_model: 3, expand: 2, d_state: 3, dt_rank: 2, horizon: 5, ..tiny_config(Padding::Paper) };
    let p = MambaMpcParams::init(cfg.clone(), 5).map_err(err)?;
    let blk = p.block(0);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (l, ed, s, r) = (5, cfg.d_inner(), cfg.d_state, cfg.dt_rank);
    let us = SeqTensor::new([1, l, ed], rand_vec(l * ed, &mut rng)).map_err(err)?;
    let disc = selective_discretize(&us, &blk, &cfg).map_err(err)?;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (t, d, j) = (rng.random_range(0..l), rng.random_range(0..ed), rng.random_range(0..s));
        let u = |e: usize| us.get(0, t, e);
        let b = (0..ed).map(|e| blk.w_b[j * ed + e] * u(e)).sum::<f64>();
        let low: Vec<f64> = (0..r).map(|q| (0..ed).map(|e| blk.w_delta[q * ed + e] * u(e)).sum()).collect();
        let pre = (0..r).map(|q| blk.w_delta_tau[d * r + q] * low[q]).sum::<f64>() + blk.b_delta_tau[d];
        let dt = (1.0 + pre.exp()).ln();
        let a_bar = (dt * blk.a[d * s + j]).exp();
        let b_bar = dt * b;
        worst = worst.max((disc.a_bar.get(t, d, j) - a_bar).abs()).max((disc.b_bar.get(t, d, j) - b_bar).abs());
    }
    ensure(worst <= 1e-12, || format!("max error {worst:e}"))?;
    Ok(format!("20 random entries, max error {worst:e}"))
}

fn scan_loop() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (l, ed, s) = (5, 2, 3);
    let a: Vec<f64> = (0..l * ed * s).map(|_| rng.random_range(0.0..1.0)).collect();
    let b = rand_vec(l * ed * s, &mut rng);
    let c = rand_vec(l * s, &mut rng);
    let g = rand_vec(ed, &mut rng);
    let u = SeqTensor::new([1, l, ed], rand_vec(l * ed, &mut rng)).map_err(err)?;
    let disc = Discretization {
        a_bar: SeqTensor::new([l, ed, s], a.clone()).map_err(err)?,
        b_bar: SeqTensor::new([l, ed, s], b.clone()).map_err(err)?,
        c: SeqTensor::new([1, l, s], c.clone()).map_err(err)?,
        delta_tau: SeqTensor::zeros([1, l, ed]),
    };
    let mut want = vec![0.0; l * ed];
    for d in 0..ed {
        let mut h = vec![0.0; s];
        for t in 0..l {
            let ut = u.get(0, t, d);
            for j in 0..s {
                h[j] = a[(t * ed + d) * s + j] * h[j] + b[(t * ed + d) * s + j] * ut;
            }
            want[t * ed + d] = (0..s).map(|j| c[t * s + j] * h[j]).sum::<f64>() + g[d] * ut;
        }
    }
    let seq = ssm_scan(&u, &disc, &g).map_err(err)?;
    let par = ssm_scan_parallel(&u, &disc, &g).map_err(err)?;
    let e1 = within("sequential", seq.data(), &want, 1e-12)?;
    let e2 = within("parallel", par.data(), &want, 1e-12)?;
    Ok(format!("max error {:e}", e1.max(e2)))
}

fn block_unroll() -> Result<String, String> {
    let cfg = ModelConfig { d_model: 1, expand: 1, d_state: 1, d_conv: 1, horizon: 1, ..tiny_config(Padding::Paper) };
    let mut p = MambaMpcParams::zeros(cfg.clone()).map_err(err)?;
    let vals = [
        ("w_s", 0.3),
        ("w_r", -0.2),
        ("conv.weight", 0.5),
        ("conv.bias", 0.1),
        ("a", -1.0),
        ("w_b", 0.4),
        ("w_c", -0.6),
        ("w_delta", 0.7),
        ("w_delta_tau", 0.2),
        ("b_delta_tau", -0.3),
        ("feedthrough", 0.9),
        ("w_y", 0.25),
    ];
    for (name, v) in vals {
        p.entry_mut(&format!("layers.0.{name}")).ok_or(name)?[0] = v;
    }
    let x: f64 = 0.8;
    let xs = 0.3 * x;
    let xr = -0.2 * x;
    let xc = 0.5 * xs + 0.1;
    let us = xc / (1.0 + (-xc).exp());
    let (bm, cm, low) = (0.4 * us, -0.6 * us, 0.7 * us);
    let dt = (1.0 + (0.2 * low - 0.3).exp()).ln();
    let h = dt * bm * us;
    let ys = h * cm + 0.9 * us;
    let yr = xr / (1.0 + (-xr).exp());
    let want = 0.25 * ys * yr;
    let got = mamba_block(&SeqTensor::new([1, 1, 1], vec![x]).map_err(err)?, &p.block(0), &cfg).map_err(err)?;
    let e = within("block", got.data(), &[want], 1e-15)?;
    Ok(format!("{:.17e}, error {e:e}", got.data()[0]))
}

fn rmsnorm_formula() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let row = rand_vec(7, &mut rng);
    let w = rand_vec(7, &mut rng);
    let eps = 1e-5;
    let got = rmsnorm(&SeqTensor::new([1, 1, 7], row.clone()).map_err(err)?, &w, eps).map_err(err)?;
    let rms = (row.iter().map(|v| v * v).sum::<f64>() / 7.0 + eps).sqrt();
    let want: Vec<f64> = row.iter().zip(&w).map(|(x, w)| w * x / rms).collect();
    let e = within("rmsnorm", got.data(), &want, 1e-12)?;
    Ok(format!("max error {e:e}"))
}

/// Frozen output of an independent straight-line implementation for the tiny
/// configuration initialized from seed 7, `u = [0.5, -1.2, 0.8]`, `x0 = 0.3`.
const TINY_PAPER: [f64; 3] = [0.012799028448103884, -0.025592275182339398, 0.01693932585609522];
const TINY_CAUSAL: [f64; 3] = [0.012757505964944325, -0.02580040275828406, 0.01750098215954367];

fn tiny_predict() -> Result<String, String> {
    let mut worst = 0.0f64;
    for (padding, want) in [(Padding::Paper, TINY_PAPER), (Padding::Causal, TINY_CAUSAL)] {
        let cfg = tiny_config(padding);
        let p = MambaMpcParams::init(cfg.clone(), 7).map_err(err)?;
        let pred = MambaPredictor::new(p, Normalization::identity(&cfg)).map_err(err)?;
        let y = pred.evaluate(&[0.5, -1.2, 0.8], &[0.3], None).map_err(err)?;
        worst = worst.max(within(&format!("{padding:?}"), &y, &want, 1e-10)?);
    }
    Ok(format!("both paddings, max error {worst:e}"))
}

fn rse_scalar() -> Result<String, String> {
    let one = rse_loss(&[0.0, 0.0], &[1.0, 0.0]).map_err(err)?;
    ensure(one == 1.0, || format!("Y=[1,0], Yhat=0 gives {one}"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.random_range(1..40);
        let y = rand_vec(n, &mut rng);
        let yh = rand_vec(n, &mut rng);
        let want = y.iter().zip(&yh).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.iter().map(|v| v * v).sum::<f64>();
        let got = rse_loss(&yh, &y).map_err(err)?;
        worst = worst.max((got - want).abs() / want.max(1e-300));
    }
    ensure(worst <= 1e-12, || format!("relative error {worst:e}"))?;
    Ok(format!("50 random pairs, relative error {worst:e}"))
}

fn affine_gradient() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let (m, n_in, n_out) = (9, 3, 2);
    let x = rand_vec(m * n_in, &mut rng);
    let w = rand_vec(n_out * n_in, &mut rng);
    let y = rand_vec(m * n_out, &mut rng);
    let mut pred = vec![0.0; m * n_out];
    linear(&x, &w, None, n_in, n_out, &mut pred);
    let den: f64 = y.iter().map(|v| v * v).sum();
    let dout: Vec<f64> = pred.iter().zip(&y).map(|(p, t)| 2.0 * (p - t) / den).collect();
    let mut g = vec![0.0; w.len()];
    linear_grad_weight(&dout, &x, n_in, n_out, &mut g);
    let mut want = vec![0.0; w.len()];
    for o in 0..n_out {
        for i in 0..n_in {
            for r in 0..m {
                let xw: f64 = (0..n_in).map(|k| x[r * n_in + k] * w[o * n_in + k]).sum();
                want[o * n_in + i] += 2.0 * (xw - y[r * n_out + o]) * x[r * n_in + i] / den;
            }
        }
    }
    let e = within("affine gradient", &g, &want, 1e-10)?;
    Ok(format!("max error {e:e}"))
}

fn gradient_fd() -> Result<String, String> {
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (padding, seed) in [(Padding::Paper, 1), (Padding::Causal, 2)] {
        let cfg = tiny_config(padding);
        let mut params = MambaMpcParams::init(cfg.clone(), seed).map_err(err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for v in params.data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
        let mut data = Dataset::empty(cfg.horizon, cfg.n_u, cfg.n_x, cfg.n_y);
        for _ in 0..3 {
            data.x0.extend(rand_vec(cfg.n_x, &mut rng));
            data.uf.extend(rand_vec(cfg.horizon * cfg.n_u, &mut rng));
            data.yf.extend(rand_vec(cfg.horizon * cfg.n_y, &mut rng));
        }
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut eng = GradEngine::new(&params, idx.len());
        let mut grad = vec![0.0; params.len()];
        eng.loss_and_grad(&params, &data, &idx, 1e-3, &mut grad).map_err(err)?;
        let h = 1e-5;
        let mut scratch = vec![0.0; params.len()];
        for i in 0..params.len() {
            let orig = params.data()[i];
            params.data_mut()[i] = orig + h;
            let lp = eng.loss_and_grad(&params, &data, &idx, 1e-3, &mut scratch).map_err(err)?.objective;
            params.data_mut()[i] = orig - h;
            let lm = eng.loss_and_grad(&params, &data, &idx, 1e-3, &mut scratch).map_err(err)?.objective;
            params.data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
            ensure(rel <= 1e-4, || format!("{padding:?} parameter {i}: {} vs {fd} (rel {rel:e})", grad[i]))?;
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok(format!("{checked} parameters, max relative error {worst:e}"))
}

fn adam_first_step() -> Result<String, String> {
    let g = [3.0, -0.5, 1e-3];
    let lr = 1e-3;
    let mut p = vec![0.0; 3];
    let mut opt = Adam::new(3);
    opt.step(&mut p, &g, lr, 0.0);
    let want: Vec<f64> = g.iter().map(|&g: &f64| -lr * g / (g.abs() + 1e-8)).collect();
    let e = within("first step", &p, &want, 1e-18)?;
    // Constant gradient keeps m̂ = g and v̂ = g², so the second step matches.
    opt.step(&mut p, &g, lr, 0.0);
    let twice: Vec<f64> = want.iter().map(|w| 2.0 * w).collect();
    let e2 = within("second step", &p, &twice, 1e-15)?;
    Ok(format!("max error {:e}", e.max(e2)))
}

fn ramp_windows() -> Result<String, String> {
    let (len, n) = (12, 3);
    let k: Vec<f64> = (0..len).map(|v| v as f64).collect();
    let traj = Trajectory::new(
        1,
        2,
        1,
        1.0,
        k.clone(),
        k.iter().flat_map(|v| [100.0 + v, 200.0 + v]).collect(),
        k.iter().map(|v| 1000.0 + v).collect(),
    )
    .map_err(err)?;
    let ds = build_dataset(&traj, n).map_err(err)?;
    ensure(ds.len() == len - n, || format!("{} windows", ds.len()))?;
    for t in 0..ds.len() {
        let tf = t as f64;
        ensure(ds.x0(t) == [100.0 + tf, 200.0 + tf], || format!("x0 of window {t}"))?;
        for i in 0..n {
            let fi = i as f64;
            ensure(ds.u(t)[i] == tf + fi, || format!("u of window {t}, step {i}"))?;
            ensure(ds.y(t)[i] == 1000.0 + tf + fi + 1.0, || format!("y of window {t}, step {i}"))?;
        }
    }
    Ok(format!("{} windows", ds.len()))
}

fn vdp_steps() -> Result<String, String> {
    let mut next = [0.0; 2];
    let classical = VanDerPol::default();
    classical.step(&[0.0, 1.0], &[0.0], &mut next);
    within("(0,1), u=0", &next, &[0.1, 1.1], 1e-15)?;
    let literal = VanDerPol::new(1.0, 0.1, 0.0).map_err(err)?;
    literal.step(&[1.0, 0.0], &[2.0], &mut next);
    within("(1,0), u=2 without restoring term", &next, &[1.0, 0.2], 1e-15)?;
    classical.step(&[1.0, 0.0], &[2.0], &mut next);
    within("(1,0), u=2 with restoring term", &next, &[1.0, 0.1], 1e-15)?;
    Ok("exact to 1e-15".into())
}

fn fourtank_checks() -> Result<String, String> {
    let p = FourTank::default();
    let mut dx = [0.0; 4];
    p.derivative(&[1.0; 4], &[0.0, 0.0], &mut dx);
    let h = p.p.ts / p.p.substeps as f64;
    let r = (2.0 * p.p.g).sqrt();
    let want = 1.0 + h * (-p.p.a[0] * r + p.p.a[2] * r) / p.p.s_c;
    let e = ((1.0 + h * dx[0]) - want).abs();
    ensure(e <= 1e-15, || format!("sub-step error {e:e}"))?;
    let u = [2.0, 2.0];
    let mut x = vec![0.5; 4];
    let mut next = vec![0.0; 4];
    for _ in 0..6000 {
        p.step(&x, &u, &mut next);
        std::mem::swap(&mut x, &mut next);
    }
    p.step(&x, &u, &mut next);
    let residual = max_abs_diff(&next, &x)?;
    ensure(residual < 1e-6, || format!("fixed-point residual {residual:e}"))?;
    let gap = max_abs_diff(&x, &p.steady_state(&u))?;
    ensure(gap < 1e-4, || format!("distance to analytic steady state {gap:e}"))?;
    Ok(format!("sub-step error {e:e}, residual {residual:e}, steady-state gap {gap:e}"))
}

fn multisine_band() -> Result<String, String> {
    let spec = MultisineSpec {
        length: 40_000,
        ts: 0.1,
        f_min: 0.01,
        f_max: 2.0,
        harmonics: 30,
        peak: 15.0,
        spacing: Spacing::Linear,
        phases: PhaseSchedule::Random,
    };
    let u = gen_multisine(&spec, 3).map_err(err)?;
    let peak = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ensure((peak - 15.0).abs() < 1e-9, || format!("peak {peak}"))?;
    let mut buf: Vec<Complex<f64>> = u.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    let to_bin = |f: f64| (f * spec.length as f64 * spec.ts).round() as usize;
    let (lo, hi) = (to_bin(spec.f_min).saturating_sub(1), to_bin(spec.f_max) + 1);
    let half = spec.length / 2;
    let energy: Vec<f64> = buf[..=half].iter().map(|c| c.norm_sqr()).collect();
    let total: f64 = energy.iter().sum();
    let outside: f64 = energy.iter().enumerate().filter(|(b, _)| *b < lo || *b > hi).map(|(_, e)| e).sum();
    let frac = outside / total;
    ensure(frac < 1e-12, || format!("out-of-band energy fraction {frac:e}"))?;
    let bins = multisine_bins(&spec).map_err(err)?;
    let lines = energy.iter().filter(|&&e| e > 1e-9 * total).count();
    ensure(lines == bins.len(), || format!("{lines} spectral lines for {} harmonics", bins.len()))?;
    Ok(format!("out-of-band fraction {frac:e}, {lines} lines"))
}

fn noise_snr() -> Result<String, String> {
    let n = 200_000;
    let sig: Vec<f64> = (0..n).flat_map(|k| [(k as f64 * 0.01).sin() * 3.0, (k as f64 * 0.003).cos() - 0.2]).collect();
    let mut worst = 0.0f64;
    for snr in [10.0, 20.0, 30.0] {
        let noisy = add_noise_snr(&sig, 2, snr, 5).map_err(err)?;
        for c in 0..2 {
            let ps: f64 = sig.iter().skip(c).step_by(2).map(|v| v * v).sum();
            let pn: f64 = noisy.iter().zip(&sig).skip(c).step_by(2).map(|(a, b)| (a - b).powi(2)).sum();
            let measured = 10.0 * (ps / pn).log10();
            worst = worst.max((measured - snr).abs());
        }
    }
    ensure(worst <= 0.5, || format!("SNR off by {worst} dB"))?;
    Ok(format!("max deviation {worst:.4} dB"))
}

fn cost_expansion() -> Result<String, String> {
    let (q, r, p) = (3.0, 0.5, 7.0);
    let w = |v: f64| WeightSpec::Scalar(v).to_matrix(1).unwrap();
    let (y0, r0, y1, r1, u_prev, u0) = (0.4, 1.0, -0.3, 0.2, 0.7, -0.1);
    let got = mpc_cost(&[u0], &[y1], &[y0], &[u_prev], &[r0, r1], &w(q), &w(r), &w(p)).map_err(err)?;
    let (e0, e, d) = (y0 - r0, y1 - r1, u0 - u_prev);
    let want = q * e0 * e0 + p * e * e + r * d * d;
    let zero = mpc_cost(&[u_prev; 3], &[r1; 3], &[r1], &[u_prev], &[r1; 4], &w(q), &w(r), &w(p)).map_err(err)?;
    ensure((got - want).abs() <= 1e-14 && zero == 0.0, || format!("{got} vs {want}, zero case {zero}"))?;
    Ok(format!("{got}"))
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap_or(c);
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

fn affine_lq() -> Result<String, String> {
    let (n, nu, ny, nx) = (5, 2, 2, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut g = RealMatrix::zeros(n * ny, n * nu);
    for i in 0..n {
        for j in 0..=i {
            for a in 0..ny {
                for b in 0..nu {
                    g.set(i * ny + a, j * nu + b, rng.random_range(-1.0..1.0));
                }
            }
        }
    }
    let f = RealMatrix::new(n * ny, nx, rand_vec(n * ny * nx, &mut rng)).map_err(err)?;
    let c = rand_vec(n * ny, &mut rng);
    let pred = AffinePredictor::new(n, nu, ny, g.clone(), f.clone(), c.clone()).map_err(err)?;
    let w = |v: f64, d: usize| WeightSpec::Scalar(v).to_matrix(d).unwrap();
    let prob = MpcProblem::new(n, w(3.0, ny), w(0.7, nu), Some(w(9.0, ny)), vec![-1e3; nu], vec![1e3; nu]).map_err(err)?;
    let x0 = [0.3, -0.2, 0.9];
    let u_prev = [0.4, -0.1];
    let reference: Vec<f64> = (0..(n + 1) * ny).map(|i| (i as f64 * 0.7).sin()).collect();
    let stage = StageData { x0: &x0, y0: &[0.0, 0.1], u_prev: &u_prev, reference: &reference };
    let sol = solve(&prob, &pred, stage, None).map_err(err)?;

    // Diagonal weights: minimize Σ w_i (G u + F x0 + c - r)_i² + Σ r (Δu)².
    let (m, k) = (n * ny, n * nu);
    let wy: Vec<f64> = (0..m).map(|i| if i / ny == n - 1 { 9.0 } else { 3.0 }).collect();
    let fx = f.mul_vec(&x0).map_err(err)?;
    let target: Vec<f64> = (0..m).map(|i| reference[ny + i] - fx[i] - c[i]).collect();
    let mut lhs = vec![vec![0.0; k]; k];
    let mut rhs = vec![0.0; k];
    for a in 0..k {
        for b in 0..k {
            lhs[a][b] = (0..m).map(|i| g.get(i, a) * wy[i] * g.get(i, b)).sum();
        }
        rhs[a] = (0..m).map(|i| g.get(i, a) * wy[i] * target[i]).sum();
    }
    // Δu_i = u_i - u_{i-1}; D has 1 on the diagonal and -1 one block below.
    for i in 0..k {
        lhs[i][i] += 0.7;
        if i + nu < k {
            lhs[i][i] += 0.7;
            lhs[i][i + nu] -= 0.7;
            lhs[i + nu][i] -= 0.7;
        }
        if i < nu {
            rhs[i] += 0.7 * u_prev[i];
        }
    }
    let want = solve_dense(lhs, rhs);
    let e = within("least squares", &sol.u, &want, 1e-6)?;
    Ok(format!("max error {e:e} in {} iterations", sol.iterations))
}

fn vdp_problem(q: f64, r: f64, p: f64) -> MpcProblem {
    let w = |v: f64| WeightSpec::Scalar(v).to_matrix(1).unwrap();
    MpcProblem::new(10, w(q), w(r), Some(w(p)), vec![-15.0], vec![15.0]).expect("valid weights")
}

fn matched_tracking() -> Result<String, String> {
    let plant = VanDerPol::default();
    let pred = RolloutPredictor::new(plant, 10);
    let prob = vdp_problem(100.0, 0.5, 100.0);
    let cfg = ClosedLoopConfig { steps: 150, u_init: vec![0.0], noise: None, compare_cold: false };
    let log = run_closed_loop(&plant, &pred, &prob, &ReferenceSchedule::constant(vec![1.0]), &[0.0, 0.0], &cfg)
        .map_err(err)?;
    let tail = log.steps[100..].iter().fold(0.0f64, |m, s| m.max((s.y[0] - 1.0).abs()));
    ensure(tail < 1e-4, || format!("tail error {tail:e}"))?;
    Ok(format!("max error over the last 50 steps {tail:e}"))
}

fn metric_sums() -> Result<String, String> {
    let (t, e, u) = (11, -0.3, 1.5);
    let steps = (0..t)
        .map(|k| StepRecord {
            k,
            r: vec![2.0],
            y: vec![2.0 + e],
            x: vec![2.0 + e],
            u: vec![u],
            cost: 0.0,
            iterations: 1,
            cold_iterations: None,
            status: SolveStatus::Converged,
            solve_secs: 0.0,
        })
        .collect();
    let m = compute_metrics(&ClosedLoopLog { ts: 1.0, n_u: 1, n_x: 1, n_y: 1, steps });
    let tf = t as f64;
    let got = [m.ise, m.iae, m.mse[0], m.mae[0], m.input_energy];
    let want = [tf * e * e, tf * e.abs(), e * e, e.abs(), tf * u * u];
    let err = within("metrics", &got, &want, 1e-12)?;
    Ok(format!("max error {err:e}"))
}

/// Regulation of the oscillator from 100 random initial states with the true
/// plant as the predictor.
fn teacher_stabilization() -> Result<String, String> {
    let plant = VanDerPol::default();
    let pred = RolloutPredictor::new(plant, 10);
    let prob = vdp_problem(50.0, 0.5, 100.0);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let inits: Vec<[f64; 2]> = (0..100).map(|_| [rng.random_range(-2.5..=2.5), rng.random_range(-2.0..=2.0)]).collect();
    let cfg = ClosedLoopConfig { steps: 200, u_init: vec![0.0], noise: None, compare_cold: false };
    let reference = ReferenceSchedule::constant(vec![0.0]);
    let mut settled = 0;
    let mut latest = 0;
    for x0 in &inits {
        let log = run_closed_loop(&plant, &pred, &prob, &reference, x0, &cfg).map_err(err)?;
        if let Some(k) = super::experiment::settle_step(&log, 0.1).filter(|&k| k <= 150) {
            settled += 1;
            latest = latest.max(k);
        }
    }
    ensure(settled == 100, || format!("{settled}/100 stabilized"))?;
    Ok(format!("100/100 within the band by step {latest}"))
}
