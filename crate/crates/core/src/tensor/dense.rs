//! Slice kernels for row-major activations `(rows x features)` and weights
//! stored as `(out x in)`, i.e. the `X W^T` convention.

/// `y = x W^T (+ b)`, overwriting `y`.
pub fn linear(x: &[f64], w: &[f64], bias: Option<&[f64]>, in_dim: usize, out_dim: usize, y: &mut [f64]) {
    debug_assert_eq!(w.len(), in_dim * out_dim);
    debug_assert_eq!(x.len() / in_dim, y.len() / out_dim);
    for (xr, yr) in x.chunks_exact(in_dim).zip(y.chunks_exact_mut(out_dim)) {
        for (o, (yo, wr)) in yr.iter_mut().zip(w.chunks_exact(in_dim)).enumerate() {
            let acc: f64 = xr.iter().zip(wr).map(|(a, b)| a * b).sum();
            *yo = acc + bias.map_or(0.0, |b| b[o]);
        }
    }
}

/// `dW += dY^T X`.
pub fn linear_grad_weight(dy: &[f64], x: &[f64], in_dim: usize, out_dim: usize, dw: &mut [f64]) {
    for (xr, dyr) in x.chunks_exact(in_dim).zip(dy.chunks_exact(out_dim)) {
        for (&g, dwr) in dyr.iter().zip(dw.chunks_exact_mut(in_dim)) {
            if g != 0.0 {
                for (d, &xi) in dwr.iter_mut().zip(xr) {
                    *d += g * xi;
                }
            }
        }
    }
}

/// `dX += dY W`.
pub fn linear_grad_input(dy: &[f64], w: &[f64], in_dim: usize, out_dim: usize, dx: &mut [f64]) {
    for (dxr, dyr) in dx.chunks_exact_mut(in_dim).zip(dy.chunks_exact(out_dim)) {
        for (&g, wr) in dyr.iter().zip(w.chunks_exact(in_dim)) {
            if g != 0.0 {
                for (d, &wi) in dxr.iter_mut().zip(wr) {
                    *d += g * wi;
                }
            }
        }
    }
}

/// `db += column sums of dY`.
pub fn bias_grad(dy: &[f64], out_dim: usize, db: &mut [f64]) {
    for row in dy.chunks_exact(out_dim) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

#[inline]
pub fn silu_grad(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// `ln(1 + e^x)`, returning `x` itself once the correction drops below f64
/// resolution.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_matches_hand_product() {
        // x: 2x3, W: 2x3
        let x = [1.0, 2.0, 3.0, -1.0, 0.5, 2.0];
        let w = [1.0, 0.0, -1.0, 2.0, 1.0, 0.5];
        let mut y = [0.0; 4];
        linear(&x, &w, Some(&[0.5, -0.5]), 3, 2, &mut y);
        assert_eq!(y, [1.0 - 3.0 + 0.5, 2.0 + 2.0 + 1.5 - 0.5, -1.0 - 2.0 + 0.5, -2.0 + 0.5 + 1.0 - 0.5]);
    }

    #[test]
    fn activation_limits() {
        assert_eq!(silu(0.0), 0.0);
        assert!((silu(25.0) - 25.0).abs() < 1e-8);
        assert!((silu(1.0) - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(softplus(-50.0) <= 1e-20);
        assert!((softplus(50.0) - 50.0).abs() < 1e-12);
        assert!(sigmoid(-800.0).is_finite() && sigmoid(800.0) == 1.0);
    }

    #[test]
    fn silu_grad_matches_central_difference() {
        for &x in &[-4.0, -0.3, 0.0, 0.7, 3.0] {
            let h = 1e-6;
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!((fd - silu_grad(x)).abs() < 1e-8, "x={x}");
        }
    }
}
