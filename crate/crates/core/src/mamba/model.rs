//! The full predictor on one sequence: embedding, pre-norm residual Mamba
//! layers, output RMSNorm and linear head, plus its adjoint.

use super::block::{block_backward, block_forward, BlockCache, BlockScratch};
use super::kernels::{rms_backward, rms_forward};
use super::params::MambaMpcParams;
use crate::tensor::dense::{bias_grad, linear, linear_grad_input, linear_grad_weight};

/// Forward intermediates of the whole model for one sequence.
#[derive(Debug, Clone)]
pub struct ModelCache {
    pub emb: Vec<f64>,
    /// Residual stream entering each layer, plus the one leaving the last.
    pub stream: Vec<Vec<f64>>,
    pub layer_rms: Vec<Vec<f64>>,
    pub blocks: Vec<BlockCache>,
    pub out_rms: Vec<f64>,
    pub y_rms: Vec<f64>,
    pub out: Vec<f64>,
    normed: Vec<f64>,
    block_out: Vec<f64>,
}

impl ModelCache {
    pub fn new(params: &MambaMpcParams) -> Self {
        let cfg = params.config();
        let (n, d) = (cfg.horizon, cfg.d_model);
        Self {
            emb: vec![0.0; n * cfg.n_in()],
            stream: vec![vec![0.0; n * d]; cfg.n_layers + 1],
            layer_rms: vec![vec![0.0; n]; cfg.n_layers],
            blocks: (0..cfg.n_layers).map(|_| BlockCache::new(cfg)).collect(),
            out_rms: vec![0.0; n],
            y_rms: vec![0.0; n * d],
            out: vec![0.0; n * cfg.n_y],
            normed: vec![0.0; n * d],
            block_out: vec![0.0; n * d],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelScratch {
    dx: Vec<f64>,
    dblock_in: Vec<f64>,
    dy_rms: Vec<f64>,
    block: BlockScratch,
}

impl ModelScratch {
    pub fn new(params: &MambaMpcParams) -> Self {
        let cfg = params.config();
        let (n, d) = (cfg.horizon, cfg.d_model);
        Self {
            dx: vec![0.0; n * d],
            dblock_in: vec![0.0; n * d],
            dy_rms: vec![0.0; n * d],
            block: BlockScratch::new(cfg),
        }
    }
}

/// Writes one embedded input row per step: `[u(i)^T, x0^T]`.
pub fn embed_into(u_seq: &[f64], x0: &[f64], n_u: usize, out: &mut [f64]) {
    let n_in = n_u + x0.len();
    for (row, u) in out.chunks_exact_mut(n_in).zip(u_seq.chunks_exact(n_u)) {
        row[..n_u].copy_from_slice(u);
        row[n_u..].copy_from_slice(x0);
    }
}

/// Runs the model on the embedding already stored in `cache.emb`; the
/// prediction lands in `cache.out` (`N x n_y`).
pub fn forward(params: &MambaMpcParams, cache: &mut ModelCache) {
    let cfg = params.config();
    let layout = params.layout();
    let data = params.data();
    let (n, d) = (cfg.horizon, cfg.d_model);

    linear(
        &cache.emb,
        &data[layout.embed_w.clone()],
        Some(&data[layout.embed_b.clone()]),
        cfg.n_in(),
        d,
        &mut cache.stream[0],
    );
    for (i, bl) in layout.blocks.iter().enumerate() {
        let w = &data[bl.norm.clone()];
        let (before, after) = cache.stream.split_at_mut(i + 1);
        let x = &before[i];
        for t in 0..n {
            cache.layer_rms[i][t] =
                rms_forward(&x[t * d..(t + 1) * d], w, cfg.eps_rms, &mut cache.normed[t * d..(t + 1) * d]);
        }
        block_forward(&params.block(i), cfg, &cache.normed, &mut cache.blocks[i], &mut cache.block_out);
        for ((o, &a), &b) in after[0].iter_mut().zip(&cache.block_out).zip(x.iter()) {
            *o = a + b;
        }
    }
    let last = &cache.stream[cfg.n_layers];
    let w = &data[layout.norm_out.clone()];
    for t in 0..n {
        cache.out_rms[t] = rms_forward(&last[t * d..(t + 1) * d], w, cfg.eps_rms, &mut cache.y_rms[t * d..(t + 1) * d]);
    }
    linear(
        &cache.y_rms,
        &data[layout.head_w.clone()],
        Some(&data[layout.head_b.clone()]),
        d,
        cfg.n_y,
        &mut cache.out,
    );
}

/// Reverse pass for output cotangent `dout` (`N x n_y`).
///
/// Accumulates parameter gradients into `grads` when given and writes the
/// gradient w.r.t. the embedded input (`N x (n_u + n_x)`) into `d_emb` when
/// given.
pub fn backward(
    params: &MambaMpcParams,
    cache: &ModelCache,
    dout: &[f64],
    sc: &mut ModelScratch,
    mut grads: Option<&mut [f64]>,
    d_emb: Option<&mut [f64]>,
) {
    let cfg = params.config();
    let layout = params.layout();
    let data = params.data();
    let (n, d) = (cfg.horizon, cfg.d_model);

    if let Some(g) = grads.as_deref_mut() {
        linear_grad_weight(dout, &cache.y_rms, d, cfg.n_y, &mut g[layout.head_w.clone()]);
        bias_grad(dout, cfg.n_y, &mut g[layout.head_b.clone()]);
    }
    sc.dy_rms.fill(0.0);
    linear_grad_input(dout, &data[layout.head_w.clone()], d, cfg.n_y, &mut sc.dy_rms);

    sc.dx.fill(0.0);
    let w_out = &data[layout.norm_out.clone()];
    let last = &cache.stream[cfg.n_layers];
    for t in 0..n {
        let r = t * d..(t + 1) * d;
        rms_backward(
            &sc.dy_rms[r.clone()],
            &last[r.clone()],
            w_out,
            cache.out_rms[t],
            &mut sc.dx[r],
            grads.as_deref_mut().map(|g| &mut g[layout.norm_out.clone()]),
        );
    }

    for (i, bl) in layout.blocks.iter().enumerate().rev() {
        block_backward(
            &params.block(i),
            bl,
            cfg,
            &cache.blocks[i],
            &sc.dx,
            &mut sc.block,
            &mut sc.dblock_in,
            grads.as_deref_mut(),
        );
        let w = &data[bl.norm.clone()];
        let x = &cache.stream[i];
        for t in 0..n {
            let r = t * d..(t + 1) * d;
            rms_backward(
                &sc.dblock_in[r.clone()],
                &x[r.clone()],
                w,
                cache.layer_rms[i][t],
                &mut sc.dx[r],
                grads.as_deref_mut().map(|g| &mut g[bl.norm.clone()]),
            );
        }
    }

    if let Some(g) = grads.as_deref_mut() {
        linear_grad_weight(&sc.dx, &cache.emb, cfg.n_in(), d, &mut g[layout.embed_w.clone()]);
        bias_grad(&sc.dx, d, &mut g[layout.embed_b.clone()]);
    }
    if let Some(de) = d_emb {
        de.fill(0.0);
        linear_grad_input(&sc.dx, &data[layout.embed_w.clone()], cfg.n_in(), d, de);
    }
}
