//! Tensor-level entry points for each stage of the model. These are the
//! reference surface used by tests and oracles; training and control call the
//! fused per-sequence kernels in [`super::block`] and [`super::model`].

use super::block::{block_forward, BlockCache};
use super::config::{ModelConfig, Padding};
use super::kernels::{conv_forward, rms_forward, scan_associative, scan_dense};
use super::model::{embed_into, forward, ModelCache};
use super::params::{MambaBlockParams, MambaMpcParams};
use crate::error::{Error, Result};
use crate::tensor::dense::{self, linear};
use crate::tensor::{RealMatrix, SeqTensor};

pub fn silu(x: &SeqTensor) -> SeqTensor {
    map(x, dense::silu)
}

pub fn softplus(x: &SeqTensor) -> SeqTensor {
    map(x, dense::softplus)
}

fn map(x: &SeqTensor, f: impl Fn(f64) -> f64) -> SeqTensor {
    SeqTensor::new(x.shape(), x.data().iter().map(|&v| f(v)).collect()).expect("same shape")
}

/// Depthwise convolution of every channel of every batch member with its own
/// kernel row (`kernel` is `channels x K`), plus a per-channel bias.
pub fn conv1d_depthwise(u_s: &SeqTensor, kernel: &RealMatrix, bias: &[f64], padding: Padding) -> Result<SeqTensor> {
    let [b, l, ch] = u_s.shape();
    if kernel.rows() != ch || bias.len() != ch {
        return Err(Error::Shape(format!(
            "{ch} channels against a {}x{} kernel and {} biases",
            kernel.rows(),
            kernel.cols(),
            bias.len()
        )));
    }
    let k = kernel.cols();
    let (pad_left, _) = padding.widths(k);
    let mut out = vec![0.0; b * l * ch];
    for i in 0..b {
        conv_forward(u_s.sample(i), l, ch, kernel.data(), bias, k, pad_left, &mut out[i * l * ch..(i + 1) * l * ch]);
    }
    SeqTensor::new([b, l, ch], out)
}

/// Input-dependent discretization of the diagonal SSM for one sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Discretization {
    /// `exp(Δ_τ[l, d] A[d, s])`, shape `(L, ED, S)`.
    pub a_bar: SeqTensor,
    /// `Δ_τ[l, d] B[l, s]`, shape `(L, ED, S)`.
    pub b_bar: SeqTensor,
    /// `(1, L, S)`.
    pub c: SeqTensor,
    /// `(1, L, ED)`.
    pub delta_tau: SeqTensor,
}

pub fn selective_discretize(u_sigma: &SeqTensor, p: &MambaBlockParams<'_>, cfg: &ModelConfig) -> Result<Discretization> {
    let [b, l, ed] = u_sigma.shape();
    let (s, r) = (cfg.d_state, cfg.dt_rank);
    if b != 1 || ed != cfg.d_inner() {
        return Err(Error::Shape(format!(
            "expected (1, L, {}) SSM input, got {:?}",
            cfg.d_inner(),
            u_sigma.shape()
        )));
    }
    let us = u_sigma.data();
    let (mut bm, mut cm, mut dl, mut dpre) = (vec![0.0; l * s], vec![0.0; l * s], vec![0.0; l * r], vec![0.0; l * ed]);
    linear(us, p.w_b, None, ed, s, &mut bm);
    linear(us, p.w_c, None, ed, s, &mut cm);
    linear(us, p.w_delta, None, ed, r, &mut dl);
    linear(&dl, p.w_delta_tau, Some(p.b_delta_tau), r, ed, &mut dpre);
    let dt: Vec<f64> = dpre.iter().map(|&v| dense::softplus(v)).collect();
    let mut a_bar = Vec::with_capacity(l * ed * s);
    let mut b_bar = Vec::with_capacity(l * ed * s);
    for t in 0..l {
        for d in 0..ed {
            for j in 0..s {
                a_bar.push((dt[t * ed + d] * p.a[d * s + j]).exp());
                b_bar.push(dt[t * ed + d] * bm[t * s + j]);
            }
        }
    }
    Ok(Discretization {
        a_bar: SeqTensor::new([l, ed, s], a_bar)?,
        b_bar: SeqTensor::new([l, ed, s], b_bar)?,
        c: SeqTensor::new([1, l, s], cm)?,
        delta_tau: SeqTensor::new([1, l, ed], dt)?,
    })
}

fn check_scan_shapes(u_sigma: &SeqTensor, disc: &Discretization, feedthrough: &[f64]) -> Result<(usize, usize, usize)> {
    let [b, l, ed] = u_sigma.shape();
    let [la, eda, s] = disc.a_bar.shape();
    if b != 1
        || la != l
        || eda != ed
        || disc.b_bar.shape() != [l, ed, s]
        || disc.c.shape() != [1, l, s]
        || feedthrough.len() != ed
    {
        return Err(Error::Shape("inconsistent selective-scan operands".into()));
    }
    Ok((l, ed, s))
}

/// Sequential selective scan from `H_0 = 0`.
pub fn ssm_scan(u_sigma: &SeqTensor, disc: &Discretization, feedthrough: &[f64]) -> Result<SeqTensor> {
    let (l, ed, s) = check_scan_shapes(u_sigma, disc, feedthrough)?;
    let mut y = vec![0.0; l * ed];
    scan_dense(u_sigma.data(), disc.a_bar.data(), disc.b_bar.data(), disc.c.data(), feedthrough, l, ed, s, &mut y);
    SeqTensor::new([1, l, ed], y)
}

/// [`ssm_scan`] evaluated with a log-depth associative prefix scan.
pub fn ssm_scan_parallel(u_sigma: &SeqTensor, disc: &Discretization, feedthrough: &[f64]) -> Result<SeqTensor> {
    let (l, ed, s) = check_scan_shapes(u_sigma, disc, feedthrough)?;
    let mut y = vec![0.0; l * ed];
    scan_associative(u_sigma.data(), disc.a_bar.data(), disc.b_bar.data(), disc.c.data(), feedthrough, l, ed, s, &mut y);
    SeqTensor::new([1, l, ed], y)
}

/// One Mamba block on a `(1, L, D)` sequence; `L` may differ from the
/// configured horizon.
pub fn mamba_block(u: &SeqTensor, p: &MambaBlockParams<'_>, cfg: &ModelConfig) -> Result<SeqTensor> {
    let [b, l, d] = u.shape();
    if b != 1 || d != cfg.d_model {
        return Err(Error::Shape(format!("expected (1, L, {}), got {:?}", cfg.d_model, u.shape())));
    }
    let cfg = ModelConfig { horizon: l, ..cfg.clone() };
    let mut cache = BlockCache::new(&cfg);
    let mut out = vec![0.0; l * d];
    block_forward(p, &cfg, u.data(), &mut cache, &mut out);
    SeqTensor::new([1, l, d], out)
}

/// Feature-axis RMS normalization with learned scale `w`.
pub fn rmsnorm(u: &SeqTensor, w: &[f64], eps: f64) -> Result<SeqTensor> {
    let f = u.features();
    if w.len() != f {
        return Err(Error::Shape(format!("{} scales for {f} features", w.len())));
    }
    let mut out = vec![0.0; u.data().len()];
    for (row, o) in u.data().chunks_exact(f).zip(out.chunks_exact_mut(f)) {
        rms_forward(row, w, eps, o);
    }
    SeqTensor::new(u.shape(), out)
}

/// `(1, N, n_u + n_x)` embedding: every row holds the step's input followed by
/// the replicated initial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedInput(SeqTensor);

impl EmbeddedInput {
    pub fn tensor(&self) -> &SeqTensor {
        &self.0
    }

    pub fn into_tensor(self) -> SeqTensor {
        self.0
    }
}

pub fn embed_ic(u_seq: &RealMatrix, x0: &[f64], cfg: &ModelConfig) -> Result<EmbeddedInput> {
    if u_seq.cols() != cfg.n_u || x0.len() != cfg.n_x {
        return Err(Error::Dim(format!(
            "embedding expects n_u={} and n_x={}, got inputs with {} columns and x0 of length {}",
            cfg.n_u,
            cfg.n_x,
            u_seq.cols(),
            x0.len()
        )));
    }
    let n = u_seq.rows();
    let mut out = vec![0.0; n * cfg.n_in()];
    embed_into(u_seq.data(), x0, cfg.n_u, &mut out);
    Ok(EmbeddedInput(SeqTensor::new([1, n, cfg.n_in()], out)?))
}

/// Batched prediction in model (normalized) units.
///
/// `u_seq` is `(B, N, n_u)`, `x0` holds `B * n_x` values (one initial
/// condition per batch member); the result is `(B, N, n_y)`.
pub fn predict(u_seq: &SeqTensor, x0: &[f64], params: &MambaMpcParams) -> Result<SeqTensor> {
    let cfg = params.config();
    let [b, n, nu] = u_seq.shape();
    if n != cfg.horizon || nu != cfg.n_u || x0.len() != b * cfg.n_x {
        return Err(Error::Dim(format!(
            "predict expects (B, {}, {}) inputs and B*{} initial values, got {:?} and {}",
            cfg.horizon,
            cfg.n_u,
            cfg.n_x,
            u_seq.shape(),
            x0.len()
        )));
    }
    let mut cache = ModelCache::new(params);
    let mut out = Vec::with_capacity(b * n * cfg.n_y);
    for i in 0..b {
        embed_into(u_seq.sample(i), &x0[i * cfg.n_x..(i + 1) * cfg.n_x], cfg.n_u, &mut cache.emb);
        forward(params, &mut cache);
        out.extend_from_slice(&cache.out);
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    SeqTensor::new([b, n, cfg.n_y], out)
}
