use super::{RealMatrix, SeqTensor, Tensor4};
use crate::error::{Error, Result};

/// Element-wise product with numpy-style broadcasting over size-1 axes.
pub fn hadamard_broadcast(a: &SeqTensor, b: &SeqTensor) -> Result<SeqTensor> {
    let (sa, sb) = (a.shape(), b.shape());
    let mut out_shape = [0; 3];
    for n in 0..3 {
        out_shape[n] = match (sa[n], sb[n]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            (x, y) => {
                return Err(Error::Shape(format!(
                    "axis {n} cannot broadcast {x} against {y} ({sa:?} vs {sb:?})"
                )))
            }
        };
    }
    // Zero stride on replicated axes.
    let strides = |s: [usize; 3]| {
        [
            if s[0] == 1 { 0 } else { s[1] * s[2] },
            if s[1] == 1 { 0 } else { s[2] },
            if s[2] == 1 { 0 } else { 1 },
        ]
    };
    let (ta, tb) = (strides(sa), strides(sb));
    let mut data = Vec::with_capacity(out_shape.iter().product());
    for i in 0..out_shape[0] {
        for j in 0..out_shape[1] {
            for k in 0..out_shape[2] {
                let x = a.data()[i * ta[0] + j * ta[1] + k * ta[2]];
                let y = b.data()[i * tb[0] + j * tb[1] + k * tb[2]];
                data.push(x * y);
            }
        }
    }
    SeqTensor::new(out_shape, data)
}

/// `L[p,t,r] = sum_e H[p,t,r,e] * K[p,t,e]`.
pub fn einsum_contract(h: &Tensor4, k: &SeqTensor) -> Result<SeqTensor> {
    let [p, t, r, e] = h.shape();
    if k.shape() != [p, t, e] {
        return Err(Error::Shape(format!(
            "cannot contract {:?} with {:?} over the last axis",
            h.shape(),
            k.shape()
        )));
    }
    let out: Vec<f64> = h
        .data()
        .chunks_exact(e)
        .enumerate()
        .map(|(idx, row)| {
            let pt = idx / r;
            let kk = &k.data()[pt * e..(pt + 1) * e];
            row.iter().zip(kk).map(|(x, y)| x * y).sum()
        })
        .collect();
    SeqTensor::new([p, t, r], out)
}

/// Banded matrix of size `seq_len x (seq_len + K - 1)` whose row `i` holds the
/// kernel starting at column `i`.
pub fn toeplitz_from_kernel(w: &[f64], seq_len: usize) -> Result<RealMatrix> {
    if w.is_empty() || seq_len == 0 {
        return Err(Error::Shape("Toeplitz needs a non-empty kernel and sequence".into()));
    }
    let cols = seq_len + w.len() - 1;
    let mut m = RealMatrix::zeros(seq_len, cols);
    for i in 0..seq_len {
        m.data[i * cols + i..i * cols + i + w.len()].copy_from_slice(w);
    }
    Ok(m)
}

pub fn block_diag(blocks: &[RealMatrix]) -> Result<RealMatrix> {
    if blocks.is_empty() {
        return Err(Error::Shape("block_diag of zero blocks".into()));
    }
    let rows = blocks.iter().map(|b| b.rows()).sum();
    let cols = blocks.iter().map(|b| b.cols()).sum();
    let mut m = RealMatrix::zeros(rows, cols);
    let (mut r0, mut c0) = (0, 0);
    for b in blocks {
        for i in 0..b.rows() {
            let dst = (r0 + i) * cols + c0;
            m.data[dst..dst + b.cols()].copy_from_slice(&b.data()[i * b.cols()..(i + 1) * b.cols()]);
        }
        r0 += b.rows();
        c0 += b.cols();
    }
    Ok(m)
}

/// Column-stacking vectorization.
pub fn vec(m: &RealMatrix) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.rows() * m.cols());
    for j in 0..m.cols() {
        out.extend((0..m.rows()).map(|i| m.get(i, j)));
    }
    out
}

/// Inverse of [`vec`]: refills an `m x n` matrix column by column.
pub fn unvec(g: &[f64], m: usize, n: usize) -> Result<RealMatrix> {
    if g.len() != m * n {
        return Err(Error::Shape(format!("{} values cannot form a {m}x{n} matrix", g.len())));
    }
    let mut out = RealMatrix::zeros(m, n);
    for (idx, &v) in g.iter().enumerate() {
        out.set(idx % m, idx / m, v);
    }
    Ok(out)
}

/// Stacks the batch slices on top of each other: `(b, n, m) -> (b*n, m)`.
pub fn mat(t: &SeqTensor) -> RealMatrix {
    let [b, n, m] = t.shape();
    RealMatrix::new(b * n, m, t.data().to_vec()).expect("shape checked at construction")
}
