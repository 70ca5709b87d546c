use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::RealMatrix;

/// A weight given as a scalar multiple of the identity, a diagonal, or a
/// full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Scalar(f64),
    Diagonal(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

impl WeightSpec {
    /// Expands to a `dim x dim` matrix, rejecting asymmetric or indefinite
    /// weights.
    pub fn to_matrix(&self, dim: usize) -> Result<RealMatrix> {
        let mut m = RealMatrix::zeros(dim, dim);
        match self {
            WeightSpec::Scalar(v) => (0..dim).for_each(|i| m.set(i, i, *v)),
            WeightSpec::Diagonal(d) => {
                if d.len() != dim {
                    return Err(Error::Config(format!("diagonal weight has {} entries, expected {dim}", d.len())));
                }
                d.iter().enumerate().for_each(|(i, v)| m.set(i, i, *v));
            }
            WeightSpec::Full(rows) => {
                if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
                    return Err(Error::Config(format!("weight matrix must be {dim}x{dim}")));
                }
                for (i, r) in rows.iter().enumerate() {
                    for (j, v) in r.iter().enumerate() {
                        m.set(i, j, *v);
                    }
                }
            }
        }
        check_psd(&m)?;
        Ok(m)
    }
}

fn check_psd(m: &RealMatrix) -> Result<()> {
    let n = m.rows();
    if m.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("weight has non-finite entries".into()));
    }
    for i in 0..n {
        for j in 0..i {
            if (m.get(i, j) - m.get(j, i)).abs() > 1e-12 * (1.0 + m.get(i, j).abs()) {
                return Err(Error::Config("weight matrix is not symmetric".into()));
            }
        }
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(n, n, m.data())).eigenvalues;
    let scale = eig.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    if eig.iter().any(|&v| v < -1e-12 * scale) {
        return Err(Error::Config("weight matrix is not positive semidefinite".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop once the projected-gradient residual drops to this value.
    pub tolerance: f64,
    /// Stop once an accepted step moves no input by more than this.
    pub step_tolerance: f64,
    /// Initial output-box penalty weight.
    pub penalty: f64,
    pub penalty_growth: f64,
    pub penalty_rounds: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            tolerance: 1e-6,
            step_tolerance: 1e-9,
            penalty: 1e2,
            penalty_growth: 100.0,
            penalty_rounds: 2,
        }
    }
}

/// Finite-horizon tracking problem over `N` steps with an input box and an
/// optional output box.
#[derive(Debug, Clone, PartialEq)]
pub struct MpcProblem {
    pub horizon: usize,
    pub n_u: usize,
    pub n_y: usize,
    pub q: RealMatrix,
    pub r: RealMatrix,
    pub p: RealMatrix,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub y_bounds: Option<(Vec<f64>, Vec<f64>)>,
    pub options: SolverOptions,
}

impl MpcProblem {
    /// `p = None` uses `P = Q`.
    pub fn new(
        horizon: usize,
        q: RealMatrix,
        r: RealMatrix,
        p: Option<RealMatrix>,
        u_min: Vec<f64>,
        u_max: Vec<f64>,
    ) -> Result<Self> {
        let n_y = q.rows();
        let n_u = r.rows();
        let p = p.unwrap_or_else(|| q.clone());
        if horizon == 0 {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if q.cols() != n_y || p.rows() != n_y || p.cols() != n_y || r.cols() != n_u {
            return Err(Error::Dim("Q and P must be n_y x n_y and R n_u x n_u".into()));
        }
        if u_min.len() != n_u || u_max.len() != n_u {
            return Err(Error::Dim(format!("input bounds need {n_u} entries")));
        }
        if u_min.iter().zip(&u_max).any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::Config("input box needs u_min <= u_max".into()));
        }
        for m in [&q, &r, &p] {
            check_psd(m)?;
        }
        Ok(Self { horizon, n_u, n_y, q, r, p, u_min, u_max, y_bounds: None, options: SolverOptions::default() })
    }

    pub fn with_output_box(mut self, y_min: Vec<f64>, y_max: Vec<f64>) -> Result<Self> {
        if y_min.len() != self.n_y || y_max.len() != self.n_y {
            return Err(Error::Dim(format!("output bounds need {} entries", self.n_y)));
        }
        if y_min.iter().zip(&y_max).any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::Config("output box needs y_min <= y_max".into()));
        }
        self.y_bounds = Some((y_min, y_max));
        Ok(self)
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    /// Weight of output block `i` in `0..=N`.
    pub fn output_weight(&self, i: usize) -> &RealMatrix {
        if i == self.horizon {
            &self.p
        } else {
            &self.q
        }
    }

    /// Block-diagonal `Ω = blkdiag(Q, ..., Q, P)` over `N + 1` blocks.
    pub fn omega(&self) -> RealMatrix {
        let blocks: Vec<RealMatrix> = (0..=self.horizon).map(|i| self.output_weight(i).clone()).collect();
        crate::tensor::block_diag(&blocks).expect("weight blocks are non-empty")
    }

    /// Block-diagonal `Ψ = blkdiag(R, ..., R)` over `N` blocks.
    pub fn psi(&self) -> RealMatrix {
        let blocks = vec![self.r.clone(); self.horizon];
        crate::tensor::block_diag(&blocks).expect("weight blocks are non-empty")
    }

    pub fn clamp_inputs(&self, u: &mut [f64]) {
        for (i, v) in u.iter_mut().enumerate() {
            let j = i % self.n_u;
            *v = v.clamp(self.u_min[j], self.u_max[j]);
        }
    }
}

fn quad(m: &RealMatrix, v: &[f64]) -> f64 {
    let n = v.len();
    let mut s = 0.0;
    for i in 0..n {
        let row = &m.data()[i * n..(i + 1) * n];
        s += v[i] * row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
    s
}

/// Tracking plus input-rate cost.
///
/// `u_seq` is `N x n_u`, `y_seq` the predicted `y(1..N)` (`N x n_y`), `y0`
/// the measured output and `r_seq` the reference `r(0..N)`
/// (`(N + 1) x n_y`).
#[allow(clippy::too_many_arguments)]
pub fn mpc_cost(
    u_seq: &[f64],
    y_seq: &[f64],
    y0: &[f64],
    u_prev: &[f64],
    r_seq: &[f64],
    q: &RealMatrix,
    r: &RealMatrix,
    p: &RealMatrix,
) -> Result<f64> {
    let (ny, nu) = (q.rows(), r.rows());
    let n = u_seq.len() / nu.max(1);
    if u_seq.len() != n * nu || y_seq.len() != n * ny || y0.len() != ny || u_prev.len() != nu || r_seq.len() != (n + 1) * ny {
        return Err(Error::Dim("cost operands disagree with the weight dimensions".into()));
    }
    let mut e = vec![0.0; ny];
    let mut cost = 0.0;
    for i in 0..=n {
        let y = if i == 0 { y0 } else { &y_seq[(i - 1) * ny..i * ny] };
        for c in 0..ny {
            e[c] = y[c] - r_seq[i * ny + c];
        }
        cost += quad(if i == n { p } else { q }, &e);
    }
    let mut d = vec![0.0; nu];
    for i in 0..n {
        for c in 0..nu {
            let before = if i == 0 { u_prev[c] } else { u_seq[(i - 1) * nu + c] };
            d[c] = u_seq[i * nu + c] - before;
        }
        cost += quad(r, &d);
    }
    Ok(cost)
}

/// Piecewise-constant reference given by `(step, value)` breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSchedule {
    pub breakpoints: Vec<Breakpoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    pub step: usize,
    pub value: Vec<f64>,
}

impl ReferenceSchedule {
    pub fn constant(value: Vec<f64>) -> Self {
        Self { breakpoints: vec![Breakpoint { step: 0, value }] }
    }

    pub fn validate(&self, n_y: usize) -> Result<()> {
        if self.breakpoints.is_empty() {
            return Err(Error::Config("reference needs at least one breakpoint".into()));
        }
        if self.breakpoints.iter().any(|b| b.value.len() != n_y) {
            return Err(Error::Config(format!("reference values need {n_y} entries")));
        }
        if self.breakpoints.windows(2).any(|w| w[0].step >= w[1].step) {
            return Err(Error::Config("reference breakpoints must have increasing steps".into()));
        }
        Ok(())
    }

    /// Value in force at step `k`; before the first breakpoint the first
    /// value applies.
    pub fn at(&self, k: usize) -> &[f64] {
        let idx = self.breakpoints.partition_point(|b| b.step <= k).saturating_sub(1);
        &self.breakpoints[idx].value
    }

    /// `r(k..=k+n)` stacked row-major.
    pub fn window(&self, k: usize, n: usize) -> Vec<f64> {
        (k..=k + n).flat_map(|i| self.at(i).iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> RealMatrix {
        RealMatrix::new(1, 1, vec![v]).unwrap()
    }

    #[test]
    fn cost_is_zero_on_reference_with_constant_input() {
        let c = mpc_cost(&[0.7; 3], &[1.0; 3], &[1.0], &[0.7], &[1.0; 4], &scalar(5.0), &scalar(2.0), &scalar(9.0)).unwrap();
        assert_eq!(c, 0.0);
    }

    #[test]
    fn single_step_hand_expansion() {
        let (q, r, p) = (3.0, 0.5, 7.0);
        let (e0, e, d) = (0.4, -1.5, 2.0);
        let c = mpc_cost(&[1.0 + d], &[2.0 + e], &[e0], &[1.0], &[0.0, 2.0], &scalar(q), &scalar(r), &scalar(p)).unwrap();
        assert!((c - (q * e0 * e0 + p * e * e + r * d * d)).abs() < 1e-12);
    }

    #[test]
    fn tracking_part_is_linear_in_weights() {
        let args = ([0.3, -0.2], [1.0, 0.5], [0.2], [0.0], [0.0, 0.1, 0.9]);
        let c = |q: f64, r: f64| {
            mpc_cost(&args.0, &args.1, &args.2, &args.3, &args.4, &scalar(q), &scalar(r), &scalar(q)).unwrap()
        };
        let track = c(1.0, 0.0);
        assert!((c(2.0, 0.0) - 2.0 * track).abs() < 1e-12);
        assert!((c(2.0, 1.0) - c(1.0, 1.0) - track).abs() < 1e-12);
    }

    #[test]
    fn omega_and_psi_layout() {
        let q = WeightSpec::Diagonal(vec![1.0, 2.0]).to_matrix(2).unwrap();
        let p = WeightSpec::Scalar(5.0).to_matrix(2).unwrap();
        let r = WeightSpec::Scalar(0.5).to_matrix(1).unwrap();
        let prob = MpcProblem::new(3, q, r, Some(p), vec![-1.0], vec![1.0]).unwrap();
        let om = prob.omega();
        assert_eq!((om.rows(), om.cols()), (8, 8));
        let diag: Vec<f64> = (0..8).map(|i| om.get(i, i)).collect();
        assert_eq!(diag, [1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 5.0, 5.0]);
        let psi = prob.psi();
        assert_eq!((psi.rows(), psi.cols()), (3, 3));
        assert_eq!(psi.data().iter().sum::<f64>(), 1.5);
    }

    #[test]
    fn rejects_bad_weights_and_boxes() {
        assert!(WeightSpec::Full(vec![vec![1.0, 2.0], vec![2.0, 1.0]]).to_matrix(2).is_err());
        assert!(WeightSpec::Full(vec![vec![1.0, 0.5], vec![0.0, 1.0]]).to_matrix(2).is_err());
        assert!(WeightSpec::Diagonal(vec![1.0]).to_matrix(2).is_err());
        assert!(MpcProblem::new(2, scalar(1.0), scalar(1.0), None, vec![1.0], vec![0.0]).is_err());
        let prob = MpcProblem::new(2, scalar(1.0), scalar(1.0), None, vec![0.0], vec![1.0]).unwrap();
        assert_eq!(prob.p, prob.q);
    }

    #[test]
    fn reference_lookup() {
        let r = ReferenceSchedule {
            breakpoints: vec![
                Breakpoint { step: 0, value: vec![1.0] },
                Breakpoint { step: 5, value: vec![-1.0] },
            ],
        };
        r.validate(1).unwrap();
        assert_eq!(r.at(4), [1.0]);
        assert_eq!(r.at(5), [-1.0]);
        assert_eq!(r.at(1000), [-1.0]);
        assert_eq!(r.window(3, 3), [1.0, 1.0, -1.0, -1.0]);
    }
}
