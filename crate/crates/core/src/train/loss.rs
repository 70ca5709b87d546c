use rayon::prelude::*;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::mamba::model::{backward, embed_into, forward, ModelCache, ModelScratch};
use crate::mamba::MambaMpcParams;

/// Samples handled by one worker; fixes the reduction order.
const CHUNK: usize = 8;

/// `‖Y - Ŷ‖² / ‖Y‖²` over all entries.
pub fn rse_loss(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::Shape(format!("{} predictions for {} targets", y_hat.len(), y.len())));
    }
    let den: f64 = y.iter().map(|v| v * v).sum();
    if den < 1e-12 {
        return Err(Error::DegenerateTarget);
    }
    let num: f64 = y_hat.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(num / den)
}

struct Worker {
    cache: ModelCache,
    scratch: ModelScratch,
    grad: Vec<f64>,
    dout: Vec<f64>,
    sq_err: f64,
}

/// Reusable buffers for batched loss and gradient evaluation.
pub struct GradEngine {
    workers: Vec<Worker>,
}

impl GradEngine {
    pub fn new(params: &MambaMpcParams, batch_size: usize) -> Self {
        let n = batch_size.div_ceil(CHUNK).max(1);
        let workers = (0..n)
            .map(|_| Worker {
                cache: ModelCache::new(params),
                scratch: ModelScratch::new(params),
                grad: vec![0.0; params.len()],
                dout: vec![0.0; params.config().horizon * params.config().n_y],
                sq_err: 0.0,
            })
            .collect();
        Self { workers }
    }

    fn ensure(&mut self, params: &MambaMpcParams, samples: usize) {
        let need = samples.div_ceil(CHUNK);
        if self.workers.len() < need {
            *self = Self::new(params, samples);
        }
    }

    /// Sum of squared prediction errors over `idx` (forward passes only).
    pub fn sq_error(&mut self, params: &MambaMpcParams, data: &Dataset, idx: &[usize]) -> f64 {
        let mut total = 0.0;
        // Bounded block size keeps worker memory flat on large splits.
        for block in idx.chunks(CHUNK * 64) {
            self.ensure(params, block.len());
            let jobs: Vec<(&mut Worker, &[usize])> = self.workers.iter_mut().zip(block.chunks(CHUNK)).collect();
            jobs.into_par_iter().for_each(|(w, part)| {
                w.sq_err = 0.0;
                for &t in part {
                    embed_into(data.u(t), data.x0(t), data.n_u, &mut w.cache.emb);
                    forward(params, &mut w.cache);
                    w.sq_err += w.cache.out.iter().zip(data.y(t)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                }
            });
            total += self.workers.iter().take(block.len().div_ceil(CHUNK)).map(|w| w.sq_err).sum::<f64>();
        }
        total
    }

    /// RSE of the samples `idx`.
    pub fn rse(&mut self, params: &MambaMpcParams, data: &Dataset, idx: &[usize]) -> Result<f64> {
        let den = target_energy(data, idx);
        if den < 1e-12 {
            return Err(Error::DegenerateTarget);
        }
        Ok(self.sq_error(params, data, idx) / den)
    }

    /// Objective `RSE(batch) + l2 ‖θ‖²`; its gradient is written to `grad`.
    /// Also returns the batch's squared error and target energy.
    pub fn loss_and_grad(
        &mut self,
        params: &MambaMpcParams,
        data: &Dataset,
        idx: &[usize],
        l2: f64,
        grad: &mut [f64],
    ) -> Result<BatchLoss> {
        let den = target_energy(data, idx);
        if den < 1e-12 {
            return Err(Error::DegenerateTarget);
        }
        self.ensure(params, idx.len());
        let scale = 2.0 / den;
        let jobs: Vec<(&mut Worker, &[usize])> = self.workers.iter_mut().zip(idx.chunks(CHUNK)).collect();
        let used = jobs.len();
        jobs.into_par_iter().for_each(|(w, part)| {
            w.grad.fill(0.0);
            w.sq_err = 0.0;
            for &t in part {
                embed_into(data.u(t), data.x0(t), data.n_u, &mut w.cache.emb);
                forward(params, &mut w.cache);
                for ((d, a), b) in w.dout.iter_mut().zip(&w.cache.out).zip(data.y(t)) {
                    let e = a - b;
                    w.sq_err += e * e;
                    *d = scale * e;
                }
                backward(params, &w.cache, &w.dout, &mut w.scratch, Some(&mut w.grad), None);
            }
        });
        grad.fill(0.0);
        let mut sq_err = 0.0;
        for w in &self.workers[..used] {
            sq_err += w.sq_err;
            for (g, v) in grad.iter_mut().zip(&w.grad) {
                *g += v;
            }
        }
        let mut norm2 = 0.0;
        if l2 != 0.0 {
            for (g, &p) in grad.iter_mut().zip(params.data()) {
                *g += 2.0 * l2 * p;
                norm2 += p * p;
            }
        }
        if grad.iter().any(|g| !g.is_finite()) || !sq_err.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok(BatchLoss { objective: sq_err / den + l2 * norm2, sq_err, sq_target: den })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchLoss {
    pub objective: f64,
    pub sq_err: f64,
    pub sq_target: f64,
}

fn target_energy(data: &Dataset, idx: &[usize]) -> f64 {
    idx.iter().map(|&t| data.y(t).iter().map(|v| v * v).sum::<f64>()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mamba::{ModelConfig, Padding};
    use crate::tensor::dense::{linear, linear_grad_weight};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rse_cases() {
        assert_eq!(rse_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rse_loss(&[0.0, 0.0], &[3.0, -4.0]).unwrap(), 1.0);
        assert!((rse_loss(&[1.0, 1.0], &[2.0, -1.0]).unwrap() - 5.0 / 5.0).abs() < 1e-15);
        assert!(matches!(rse_loss(&[1.0], &[0.0]), Err(Error::DegenerateTarget)));
    }

    #[test]
    fn affine_rse_gradient_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (m, n_in, n_out) = (7, 3, 2);
        let x: Vec<f64> = (0..m * n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..n_out * n_in).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..m * n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut pred = vec![0.0; m * n_out];
        linear(&x, &w, None, n_in, n_out, &mut pred);
        let den: f64 = y.iter().map(|v| v * v).sum();
        let dout: Vec<f64> = pred.iter().zip(&y).map(|(p, t)| 2.0 * (p - t) / den).collect();
        let mut g = vec![0.0; w.len()];
        linear_grad_weight(&dout, &x, n_in, n_out, &mut g);
        // 2 (XW^T - Y)^T X / ‖Y‖², spelled out.
        for o in 0..n_out {
            for i in 0..n_in {
                let mut want = 0.0;
                for r in 0..m {
                    let xw: f64 = (0..n_in).map(|k| x[r * n_in + k] * w[o * n_in + k]).sum();
                    want += 2.0 * (xw - y[r * n_out + o]) * x[r * n_in + i] / den;
                }
                assert!((g[o * n_in + i] - want).abs() < 1e-10);
            }
        }
    }

    fn tiny_data(cfg: &ModelConfig, samples: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut d = Dataset::empty(cfg.horizon, cfg.n_u, cfg.n_x, cfg.n_y);
        for _ in 0..samples {
            d.x0.extend((0..cfg.n_x).map(|_| rng.random_range(-1.0..1.0)));
            d.uf.extend((0..cfg.horizon * cfg.n_u).map(|_| rng.random_range(-1.0..1.0)));
            d.yf.extend((0..cfg.horizon * cfg.n_y).map(|_| rng.random_range(-1.0..1.0)));
        }
        d
    }

    fn check_fd(cfg: ModelConfig, seed: u64) {
        let mut params = MambaMpcParams::init(cfg.clone(), seed).unwrap();
        // Move away from the symmetric init so every weight is exercised.
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        for v in params.data_mut() {
            *v += rng.random_range(-0.2..0.2);
        }
        let data = tiny_data(&cfg, 3, seed + 7);
        let idx: Vec<usize> = (0..data.len()).collect();
        let mut eng = GradEngine::new(&params, idx.len());
        let mut grad = vec![0.0; params.len()];
        eng.loss_and_grad(&params, &data, &idx, 1e-3, &mut grad).unwrap();
        let h = 1e-5;
        let mut scratch = vec![0.0; params.len()];
        for i in 0..params.len() {
            let orig = params.data()[i];
            params.data_mut()[i] = orig + h;
            let lp = eng.loss_and_grad(&params, &data, &idx, 1e-3, &mut scratch).unwrap().objective;
            params.data_mut()[i] = orig - h;
            let lm = eng.loss_and_grad(&params, &data, &idx, 1e-3, &mut scratch).unwrap().objective;
            params.data_mut()[i] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let err = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(1e-6);
            let name = &params.layout().entries.iter().find(|e| e.range.contains(&i)).unwrap().name;
            assert!(err <= 1e-4, "{name}[{i}]: reverse {} vs central {fd} (rel {err:e})", grad[i]);
        }
    }

    #[test]
    fn gradients_match_central_differences_on_tiny_model() {
        let cfg = ModelConfig {
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
            padding: Padding::Paper,
            eps_rms: 1e-5,
        };
        check_fd(cfg.clone(), 1);
        check_fd(ModelConfig { padding: Padding::Causal, ..cfg }, 2);
    }

    #[test]
    fn gradients_match_central_differences_on_stacked_model() {
        let cfg = ModelConfig {
            d_model: 3,
            expand: 2,
            d_state: 3,
            d_conv: 3,
            dt_rank: 2,
            n_layers: 2,
            horizon: 4,
            n_u: 2,
            n_x: 2,
            n_y: 2,
            padding: Padding::Paper,
            eps_rms: 1e-5,
        };
        check_fd(cfg, 3);
    }

    #[test]
    fn exact_fit_has_zero_gradient() {
        let cfg = ModelConfig::new(3, 1, 1, 1);
        let params = MambaMpcParams::init(cfg.clone(), 2).unwrap();
        let mut data = tiny_data(&cfg, 4, 5);
        let mut cache = ModelCache::new(&params);
        for t in 0..4 {
            embed_into(data.u(t), data.x0(t), 1, &mut cache.emb);
            forward(&params, &mut cache);
            data.yf[t * 3..(t + 1) * 3].copy_from_slice(&cache.out);
        }
        let idx: Vec<usize> = (0..4).collect();
        let mut grad = vec![1.0; params.len()];
        let loss = GradEngine::new(&params, 4).loss_and_grad(&params, &data, &idx, 0.0, &mut grad).unwrap();
        assert_eq!(loss.objective, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn reduction_is_independent_of_batch_chunking() {
        let cfg = ModelConfig::new(4, 1, 2, 1);
        let params = MambaMpcParams::init(cfg.clone(), 4).unwrap();
        let data = tiny_data(&cfg, 40, 6);
        let idx: Vec<usize> = (0..40).collect();
        let mut g1 = vec![0.0; params.len()];
        let mut g2 = vec![0.0; params.len()];
        let a = GradEngine::new(&params, 40).loss_and_grad(&params, &data, &idx, 0.0, &mut g1).unwrap();
        let b = GradEngine::new(&params, 1).loss_and_grad(&params, &data, &idx, 0.0, &mut g2).unwrap();
        assert_eq!(a, b);
        assert_eq!(g1, g2);
    }
}
