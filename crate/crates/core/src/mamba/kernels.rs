//! Slice-level building blocks shared by the forward and adjoint passes.
//! Activations are `(L x channels)` row-major; SSM tensors are `(L x ED x S)`.

/// Depthwise sliding-window convolution along the sequence axis.
///
/// `out[l, d] = b[d] + sum_k w[d, k] * x[l + k - pad_left, d]`, with zeros
/// outside `0..L`.
pub fn conv_forward(
    x: &[f64],
    seq_len: usize,
    channels: usize,
    w: &[f64],
    b: &[f64],
    k: usize,
    pad_left: usize,
    out: &mut [f64],
) {
    for l in 0..seq_len {
        let row = &mut out[l * channels..(l + 1) * channels];
        row.copy_from_slice(b);
        for j in 0..k {
            let src = l + j;
            if src < pad_left || src - pad_left >= seq_len {
                continue;
            }
            let xr = &x[(src - pad_left) * channels..(src - pad_left + 1) * channels];
            for ((o, &xd), &wd) in row.iter_mut().zip(xr).zip(w[j..].iter().step_by(k)) {
                *o += wd * xd;
            }
        }
    }
}

/// Adjoint of [`conv_forward`]. Overwrites `dx`; accumulates into `dw`/`db`.
#[allow(clippy::too_many_arguments)]
pub fn conv_backward(
    dout: &[f64],
    x: &[f64],
    seq_len: usize,
    channels: usize,
    w: &[f64],
    k: usize,
    pad_left: usize,
    dx: &mut [f64],
    mut dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    dx.fill(0.0);
    for l in 0..seq_len {
        let g = &dout[l * channels..(l + 1) * channels];
        for j in 0..k {
            let src = l + j;
            if src < pad_left || src - pad_left >= seq_len {
                continue;
            }
            let t = src - pad_left;
            let dxr = &mut dx[t * channels..(t + 1) * channels];
            for ((d, &gd), &wd) in dxr.iter_mut().zip(g).zip(w[j..].iter().step_by(k)) {
                *d += gd * wd;
            }
            if let Some(dw) = dw.as_deref_mut() {
                let xr = &x[t * channels..(t + 1) * channels];
                for ((dwd, &gd), &xd) in dw[j..].iter_mut().step_by(k).zip(g).zip(xr) {
                    *dwd += gd * xd;
                }
            }
        }
    }
    if let Some(db) = db {
        crate::tensor::dense::bias_grad(dout, channels, db);
    }
}

/// RMS normalization of one feature row. Returns the root-mean-square
/// denominator for the adjoint.
pub fn rms_forward(x: &[f64], w: &[f64], eps: f64, out: &mut [f64]) -> f64 {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let r = (ms + eps).sqrt();
    for ((o, &xi), &wi) in out.iter_mut().zip(x).zip(w) {
        *o = wi * xi / r;
    }
    r
}

/// Adjoint of [`rms_forward`] for one row; accumulates into `dx` and `dw`.
pub fn rms_backward(dy: &[f64], x: &[f64], w: &[f64], r: f64, dx: &mut [f64], dw: Option<&mut [f64]>) {
    let n = x.len() as f64;
    let mut proj = 0.0;
    for ((&g, &wi), &xi) in dy.iter().zip(w).zip(x) {
        proj += g * wi * xi;
    }
    let k = proj / (n * r * r * r);
    for (((d, &g), &wi), &xi) in dx.iter_mut().zip(dy).zip(w).zip(x) {
        *d += g * wi / r - xi * k;
    }
    if let Some(dw) = dw {
        for ((d, &g), &xi) in dw.iter_mut().zip(dy).zip(x) {
            *d += g * xi / r;
        }
    }
}

/// Sequential selective scan with dense `B̄`.
///
/// `H_l = Ā_l ⊙ H_{l-1} + B̄_l ⊙ u_l` (u broadcast over S), `H_0 = 0`, and
/// `y[l, d] = sum_s H_l[d, s] C[l, s] + g[d] u[l, d]`.
#[allow(clippy::too_many_arguments)]
pub fn scan_dense(
    u: &[f64],
    a_bar: &[f64],
    b_bar: &[f64],
    c: &[f64],
    feedthrough: &[f64],
    seq_len: usize,
    channels: usize,
    d_state: usize,
    y: &mut [f64],
) {
    let mut h = vec![0.0; channels * d_state];
    for l in 0..seq_len {
        let cl = &c[l * d_state..(l + 1) * d_state];
        for d in 0..channels {
            let ul = u[l * channels + d];
            let base = (l * channels + d) * d_state;
            let hd = &mut h[d * d_state..(d + 1) * d_state];
            let mut acc = 0.0;
            for s in 0..d_state {
                hd[s] = a_bar[base + s] * hd[s] + b_bar[base + s] * ul;
                acc += hd[s] * cl[s];
            }
            y[l * channels + d] = acc + feedthrough[d] * ul;
        }
    }
}

/// The same recurrence evaluated by a log-depth inclusive prefix scan
/// (Hillis-Steele) over the associative pair operator
/// `(a1, b1) ∘ (a2, b2) = (a1 a2, a2 b1 + b2)`.
#[allow(clippy::too_many_arguments)]
pub fn scan_associative(
    u: &[f64],
    a_bar: &[f64],
    b_bar: &[f64],
    c: &[f64],
    feedthrough: &[f64],
    seq_len: usize,
    channels: usize,
    d_state: usize,
    y: &mut [f64],
) {
    let width = channels * d_state;
    let mut acc_a: Vec<f64> = a_bar[..seq_len * width].to_vec();
    let mut acc_b: Vec<f64> = (0..seq_len * width)
        .map(|i| b_bar[i] * u[(i / width) * channels + (i % width) / d_state])
        .collect();
    let mut offset = 1;
    while offset < seq_len {
        let (prev_a, prev_b) = (acc_a.clone(), acc_b.clone());
        for l in offset..seq_len {
            for i in 0..width {
                let cur = l * width + i;
                let earlier = (l - offset) * width + i;
                acc_b[cur] = prev_a[cur] * prev_b[earlier] + prev_b[cur];
                acc_a[cur] = prev_a[cur] * prev_a[earlier];
            }
        }
        offset *= 2;
    }
    for l in 0..seq_len {
        for d in 0..channels {
            let base = l * width + d * d_state;
            let acc: f64 = (0..d_state).map(|s| acc_b[base + s] * c[l * d_state + s]).sum();
            y[l * channels + d] = acc + feedthrough[d] * u[l * channels + d];
        }
    }
}
