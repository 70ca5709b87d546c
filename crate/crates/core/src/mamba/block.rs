//! One Mamba block on a single sequence, with the intermediates needed by
//! its adjoint.

use super::config::ModelConfig;
use super::kernels::{conv_backward, conv_forward};
use super::params::{BlockLayout, MambaBlockParams};
use crate::tensor::dense::{linear, linear_grad_input, linear_grad_weight, sigmoid, softplus};

/// Forward intermediates of one block for one sequence.
#[derive(Debug, Clone)]
pub struct BlockCache {
    /// Block input (after the pre-norm), `L x D`.
    pub u: Vec<f64>,
    pub xs: Vec<f64>,
    pub xr: Vec<f64>,
    pub xc: Vec<f64>,
    /// Input to the SSM, `σ(conv)`.
    pub us: Vec<f64>,
    pub bm: Vec<f64>,
    pub cm: Vec<f64>,
    pub dl: Vec<f64>,
    pub dpre: Vec<f64>,
    /// Δ_τ, `L x ED`.
    pub dt: Vec<f64>,
    pub a_bar: Vec<f64>,
    /// Hidden states `H_1..H_L`, `L x ED x S`.
    pub h: Vec<f64>,
    pub ys: Vec<f64>,
    pub yr: Vec<f64>,
    pub gated: Vec<f64>,
    /// Sigmoids of `xr` and `xc`, reused by the adjoint.
    pub sig_r: Vec<f64>,
    pub sig_c: Vec<f64>,
}

impl BlockCache {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (l, d, ed, s, r) = (cfg.horizon, cfg.d_model, cfg.d_inner(), cfg.d_state, cfg.dt_rank);
        Self {
            u: vec![0.0; l * d],
            xs: vec![0.0; l * ed],
            xr: vec![0.0; l * ed],
            xc: vec![0.0; l * ed],
            us: vec![0.0; l * ed],
            bm: vec![0.0; l * s],
            cm: vec![0.0; l * s],
            dl: vec![0.0; l * r],
            dpre: vec![0.0; l * ed],
            dt: vec![0.0; l * ed],
            a_bar: vec![0.0; l * ed * s],
            h: vec![0.0; l * ed * s],
            ys: vec![0.0; l * ed],
            yr: vec![0.0; l * ed],
            gated: vec![0.0; l * ed],
            sig_r: vec![0.0; l * ed],
            sig_c: vec![0.0; l * ed],
        }
    }
}

/// Adjoint work buffers, reusable across blocks of the same config.
#[derive(Debug, Clone)]
pub struct BlockScratch {
    dg: Vec<f64>,
    dys: Vec<f64>,
    dxr: Vec<f64>,
    dus: Vec<f64>,
    dbm: Vec<f64>,
    dcm: Vec<f64>,
    ddl: Vec<f64>,
    ddt: Vec<f64>,
    dxc: Vec<f64>,
    dxs: Vec<f64>,
    dh: Vec<f64>,
    da: Vec<f64>,
    dft: Vec<f64>,
    zeros: Vec<f64>,
}

impl BlockScratch {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (l, ed, s, r) = (cfg.horizon, cfg.d_inner(), cfg.d_state, cfg.dt_rank);
        Self {
            dg: vec![0.0; l * ed],
            dys: vec![0.0; l * ed],
            dxr: vec![0.0; l * ed],
            dus: vec![0.0; l * ed],
            dbm: vec![0.0; l * s],
            dcm: vec![0.0; l * s],
            ddl: vec![0.0; l * r],
            ddt: vec![0.0; l * ed],
            dxc: vec![0.0; l * ed],
            dxs: vec![0.0; l * ed],
            dh: vec![0.0; ed * s],
            da: vec![0.0; ed * s],
            dft: vec![0.0; ed],
            zeros: vec![0.0; s],
        }
    }
}

/// `out = ((SSM ∘ σ ∘ conv)(u W_S^T) ⊙ σ(u W_R^T)) W_Y^T`.
pub fn block_forward(p: &MambaBlockParams<'_>, cfg: &ModelConfig, u: &[f64], c: &mut BlockCache, out: &mut [f64]) {
    let (l, d, ed, s, k, r) = (cfg.horizon, cfg.d_model, cfg.d_inner(), cfg.d_state, cfg.d_conv, cfg.dt_rank);
    let (pad_left, _) = cfg.padding.widths(k);
    c.u.copy_from_slice(u);
    linear(u, p.w_s, None, d, ed, &mut c.xs);
    linear(u, p.w_r, None, d, ed, &mut c.xr);
    conv_forward(&c.xs, l, ed, p.conv_w, p.conv_b, k, pad_left, &mut c.xc);
    for ((o, sg), &x) in c.us.iter_mut().zip(c.sig_c.iter_mut()).zip(&c.xc) {
        *sg = sigmoid(x);
        *o = x * *sg;
    }
    linear(&c.us, p.w_b, None, ed, s, &mut c.bm);
    linear(&c.us, p.w_c, None, ed, s, &mut c.cm);
    linear(&c.us, p.w_delta, None, ed, r, &mut c.dl);
    linear(&c.dl, p.w_delta_tau, Some(p.b_delta_tau), r, ed, &mut c.dpre);
    for (o, &x) in c.dt.iter_mut().zip(&c.dpre) {
        *o = softplus(x);
    }

    let es = ed * s;
    for t in 0..l {
        let bm = &c.bm[t * s..(t + 1) * s];
        let cm = &c.cm[t * s..(t + 1) * s];
        let (done, rest) = c.h.split_at_mut(t * es);
        let prev_all = if t > 0 { &done[(t - 1) * es..] } else { &[][..] };
        let h_t = &mut rest[..es];
        let ab_t = &mut c.a_bar[t * es..(t + 1) * es];
        for ch in 0..ed {
            let dt = c.dt[t * ed + ch];
            let uu = c.us[t * ed + ch];
            let arow = &p.a[ch * s..(ch + 1) * s];
            let hrow = &mut h_t[ch * s..(ch + 1) * s];
            let abrow = &mut ab_t[ch * s..(ch + 1) * s];
            let mut acc = 0.0;
            if t > 0 {
                let prow = &prev_all[ch * s..(ch + 1) * s];
                for j in 0..s {
                    let ab = (dt * arow[j]).exp();
                    let hv = ab * prow[j] + dt * bm[j] * uu;
                    abrow[j] = ab;
                    hrow[j] = hv;
                    acc += hv * cm[j];
                }
            } else {
                for j in 0..s {
                    let hv = dt * bm[j] * uu;
                    abrow[j] = (dt * arow[j]).exp();
                    hrow[j] = hv;
                    acc += hv * cm[j];
                }
            }
            c.ys[t * ed + ch] = acc + p.feedthrough_gain[ch] * uu;
        }
    }

    for i in 0..l * ed {
        let sg = sigmoid(c.xr[i]);
        c.sig_r[i] = sg;
        c.yr[i] = c.xr[i] * sg;
        c.gated[i] = c.ys[i] * c.yr[i];
    }
    linear(&c.gated, p.w_y, None, ed, d, out);
}

/// Adjoint of [`block_forward`].
///
/// Overwrites `du` with the gradient w.r.t. the block input. When `grads` is
/// given (the full flat gradient vector), weight gradients are accumulated at
/// the offsets in `layout`.
#[allow(clippy::too_many_arguments)]
pub fn block_backward(
    p: &MambaBlockParams<'_>,
    layout: &BlockLayout,
    cfg: &ModelConfig,
    c: &BlockCache,
    dout: &[f64],
    sc: &mut BlockScratch,
    du: &mut [f64],
    mut grads: Option<&mut [f64]>,
) {
    let (l, d, ed, s, k, r) = (cfg.horizon, cfg.d_model, cfg.d_inner(), cfg.d_state, cfg.d_conv, cfg.dt_rank);
    let (pad_left, _) = cfg.padding.widths(k);
    let want = grads.is_some();

    if let Some(g) = grads.as_deref_mut() {
        linear_grad_weight(dout, &c.gated, ed, d, &mut g[layout.w_y.clone()]);
    }
    sc.dg.fill(0.0);
    linear_grad_input(dout, p.w_y, ed, d, &mut sc.dg);
    for i in 0..l * ed {
        sc.dys[i] = sc.dg[i] * c.yr[i];
        let sg = c.sig_r[i];
        sc.dxr[i] = sc.dg[i] * c.ys[i] * sg * (1.0 + c.xr[i] * (1.0 - sg));
    }
    if let Some(g) = grads.as_deref_mut() {
        linear_grad_weight(&sc.dxr, &c.u, d, ed, &mut g[layout.w_r.clone()]);
    }
    du.fill(0.0);
    linear_grad_input(&sc.dxr, p.w_r, d, ed, du);

    // Scan adjoint: carry dL/dH backwards through time.
    sc.dus.fill(0.0);
    sc.ddt.fill(0.0);
    sc.dbm.fill(0.0);
    sc.dcm.fill(0.0);
    sc.dh.fill(0.0);
    sc.da.fill(0.0);
    sc.dft.fill(0.0);
    let es = ed * s;
    for t in (0..l).rev() {
        let bm = &c.bm[t * s..(t + 1) * s];
        let cm = &c.cm[t * s..(t + 1) * s];
        let h_t = &c.h[t * es..(t + 1) * es];
        let ab_t = &c.a_bar[t * es..(t + 1) * es];
        let dcm = &mut sc.dcm[t * s..(t + 1) * s];
        let dbm = &mut sc.dbm[t * s..(t + 1) * s];
        for ch in 0..ed {
            let idx = t * ed + ch;
            let gy = sc.dys[idx];
            let uu = c.us[idx];
            let dt = c.dt[idx];
            let arow = &p.a[ch * s..(ch + 1) * s];
            let hrow = &h_t[ch * s..(ch + 1) * s];
            let abrow = &ab_t[ch * s..(ch + 1) * s];
            let prow = if t > 0 { &c.h[(t - 1) * es + ch * s..(t - 1) * es + (ch + 1) * s] } else { &sc.zeros[..s] };
            let mut dus = gy * p.feedthrough_gain[ch];
            let mut ddt = 0.0;
            let dh = &mut sc.dh[ch * s..(ch + 1) * s];
            let da = &mut sc.da[ch * s..(ch + 1) * s];
            for j in 0..s {
                let gh = dh[j] + gy * cm[j];
                dcm[j] += gy * hrow[j];
                let dab = gh * prow[j] * abrow[j];
                ddt += dab * arow[j] + gh * uu * bm[j];
                da[j] += dab * dt;
                dbm[j] += gh * uu * dt;
                dus += gh * dt * bm[j];
                dh[j] = gh * abrow[j];
            }
            if want {
                sc.dft[ch] += gy * uu;
            }
            sc.dus[idx] += dus;
            sc.ddt[idx] = ddt * sigmoid(c.dpre[idx]);
        }
    }
    // sc.ddt now holds the gradient w.r.t. the pre-softplus Δ.

    if let Some(g) = grads.as_deref_mut() {
        for (dst, src) in g[layout.a.clone()].iter_mut().zip(&sc.da) {
            *dst += src;
        }
        for (dst, src) in g[layout.feedthrough.clone()].iter_mut().zip(&sc.dft) {
            *dst += src;
        }
        crate::tensor::dense::bias_grad(&sc.ddt, ed, &mut g[layout.b_delta_tau.clone()]);
        linear_grad_weight(&sc.ddt, &c.dl, r, ed, &mut g[layout.w_delta_tau.clone()]);
    }
    sc.ddl.fill(0.0);
    linear_grad_input(&sc.ddt, p.w_delta_tau, r, ed, &mut sc.ddl);
    if let Some(g) = grads.as_deref_mut() {
        linear_grad_weight(&sc.ddl, &c.us, ed, r, &mut g[layout.w_delta.clone()]);
        linear_grad_weight(&sc.dbm, &c.us, ed, s, &mut g[layout.w_b.clone()]);
        linear_grad_weight(&sc.dcm, &c.us, ed, s, &mut g[layout.w_c.clone()]);
    }
    linear_grad_input(&sc.ddl, p.w_delta, ed, r, &mut sc.dus);
    linear_grad_input(&sc.dbm, p.w_b, ed, s, &mut sc.dus);
    linear_grad_input(&sc.dcm, p.w_c, ed, s, &mut sc.dus);

    for i in 0..l * ed {
        let sg = c.sig_c[i];
        sc.dxc[i] = sc.dus[i] * sg * (1.0 + c.xc[i] * (1.0 - sg));
    }
    match grads.as_deref_mut() {
        Some(g) => {
            let (w_part, b_part) = split_two(g, layout.conv_w.clone(), layout.conv_b.clone());
            conv_backward(&sc.dxc, &c.xs, l, ed, p.conv_w, k, pad_left, &mut sc.dxs, Some(w_part), Some(b_part));
        }
        None => conv_backward(&sc.dxc, &c.xs, l, ed, p.conv_w, k, pad_left, &mut sc.dxs, None, None),
    }
    if let Some(g) = grads.as_deref_mut() {
        linear_grad_weight(&sc.dxs, &c.u, d, ed, &mut g[layout.w_s.clone()]);
    }
    linear_grad_input(&sc.dxs, p.w_s, d, ed, du);
}

/// Two disjoint mutable sub-slices; `first` must end at or before `second`.
fn split_two(
    g: &mut [f64],
    first: std::ops::Range<usize>,
    second: std::ops::Range<usize>,
) -> (&mut [f64], &mut [f64]) {
    debug_assert!(first.end <= second.start);
    let (lo, hi) = g.split_at_mut(second.start);
    (&mut lo[first], &mut hi[..second.len()])
}
