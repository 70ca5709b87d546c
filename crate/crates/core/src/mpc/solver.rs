use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::predictor::SequencePredictor;
use super::problem::{mpc_cost, MpcProblem};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    /// Projected-gradient residual below tolerance.
    Converged,
    /// Accepted step below the step tolerance.
    StepTolerance,
    /// No descent direction or no acceptable step length.
    Stalled,
    /// Iteration cap reached; the best iterate is returned.
    MaxIterations,
}

impl SolveStatus {
    pub fn is_failure(self) -> bool {
        self == SolveStatus::MaxIterations
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// `u(0..N-1)`, `N x n_u`.
    pub u: Vec<f64>,
    /// `y(1..N)` predicted under `u`, `N x n_y`.
    pub y_pred: Vec<f64>,
    /// Tracking plus input-rate cost at `u`, penalty excluded.
    pub cost: f64,
    /// Accepted Gauss-Newton steps.
    pub iterations: usize,
    /// Projected-gradient residual at the last linearization.
    pub residual: f64,
    pub status: SolveStatus,
    /// Objective after each accepted step, starting with the initial point;
    /// includes the output penalty of the round in force.
    pub cost_trace: Vec<f64>,
}

/// Per-sample data of one solve.
#[derive(Debug, Clone, Copy)]
pub struct StageData<'a> {
    pub x0: &'a [f64],
    /// Measured output `y(k)`.
    pub y0: &'a [f64],
    /// Input applied at the previous sample.
    pub u_prev: &'a [f64],
    /// `r(k..=k+N)`, `(N + 1) x n_y`.
    pub reference: &'a [f64],
}

struct Objective<'a> {
    problem: &'a MpcProblem,
    predictor: &'a dyn SequencePredictor,
    stage: StageData<'a>,
    /// `blkdiag(Q, ..., Q, P)` over the predicted outputs `y(1..N)`.
    w: DMatrix<f64>,
    /// `2 Dᵀ Ψ D`, the input-rate Hessian.
    rate_hess: DMatrix<f64>,
    /// Constant contribution of the measured output.
    e0_cost: f64,
}

struct Linearization {
    value: f64,
    grad: DVector<f64>,
    /// Gauss-Newton Hessian.
    hess: DMatrix<f64>,
    jac: DMatrix<f64>,
    /// `W e + μ v`, so that the output part of the gradient is `2 Jᵀ res`.
    res: DVector<f64>,
}

impl<'a> Objective<'a> {
    fn new(problem: &'a MpcProblem, predictor: &'a dyn SequencePredictor, stage: StageData<'a>) -> Self {
        let (n, nu, ny) = (problem.horizon, problem.n_u, problem.n_y);
        let mut w = DMatrix::zeros(n * ny, n * ny);
        for i in 0..n {
            let m = problem.output_weight(i + 1);
            for a in 0..ny {
                for b in 0..ny {
                    w[(i * ny + a, i * ny + b)] = m.get(a, b);
                }
            }
        }
        let mut d = DMatrix::zeros(n * nu, n * nu);
        let mut psi = DMatrix::zeros(n * nu, n * nu);
        for i in 0..n {
            for a in 0..nu {
                d[(i * nu + a, i * nu + a)] = 1.0;
                if i > 0 {
                    d[(i * nu + a, (i - 1) * nu + a)] = -1.0;
                }
                for b in 0..nu {
                    psi[(i * nu + a, i * nu + b)] = problem.r.get(a, b);
                }
            }
        }
        let rate_hess = 2.0 * d.transpose() * &psi * &d;
        let e0: Vec<f64> = (0..ny).map(|c| stage.y0[c] - stage.reference[c]).collect();
        let e0_cost = (0..ny)
            .map(|a| (0..ny).map(|b| e0[a] * problem.q.get(a, b) * e0[b]).sum::<f64>())
            .sum();
        Self { problem, predictor, stage, w, rate_hess, e0_cost }
    }

    /// Output error against the reference and the output-box violation.
    fn residuals(&self, y: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let ny = self.problem.n_y;
        let e = DVector::from_iterator(y.len(), y.iter().enumerate().map(|(o, v)| v - self.stage.reference[ny + o]));
        let viol = match &self.problem.y_bounds {
            Some((lo, hi)) => DVector::from_iterator(
                y.len(),
                y.iter().enumerate().map(|(o, &v)| v - v.clamp(lo[o % ny], hi[o % ny])),
            ),
            None => DVector::zeros(y.len()),
        };
        (e, viol)
    }

    fn rate(&self, z: &[f64]) -> DVector<f64> {
        let nu = self.problem.n_u;
        DVector::from_iterator(
            z.len(),
            z.iter().enumerate().map(|(i, v)| v - if i < nu { self.stage.u_prev[i] } else { z[i - nu] }),
        )
    }

    fn rate_cost(&self, du: &DVector<f64>) -> f64 {
        let (n, nu) = (self.problem.horizon, self.problem.n_u);
        let mut s = 0.0;
        for i in 0..n {
            for a in 0..nu {
                for b in 0..nu {
                    s += du[i * nu + a] * self.problem.r.get(a, b) * du[i * nu + b];
                }
            }
        }
        s
    }

    fn value(&self, z: &[f64], mu: f64) -> Result<(f64, Vec<f64>)> {
        let y = self.predictor.predict(z, self.stage.x0, None)?;
        let (e, viol) = self.residuals(&y);
        let v = self.e0_cost + e.dot(&(&self.w * &e)) + self.rate_cost(&self.rate(z)) + mu * viol.norm_squared();
        if !v.is_finite() {
            return Err(Error::NonFinite);
        }
        Ok((v, y))
    }

    fn linearize(&self, z: &[f64], mu: f64) -> Result<Linearization> {
        let (rows, cols) = (self.problem.horizon * self.problem.n_y, z.len());
        let mut jac = vec![0.0; rows * cols];
        let y = self.predictor.predict(z, self.stage.x0, Some(&mut jac))?;
        let j = DMatrix::from_row_slice(rows, cols, &jac);
        let (e, viol) = self.residuals(&y);
        let du = self.rate(z);
        let we = &self.w * &e;
        let value = self.e0_cost + e.dot(&we) + self.rate_cost(&du) + mu * viol.norm_squared();
        // Gradient of the rate term: 2 Dᵀ Ψ du.
        let nu = self.problem.n_u;
        let mut psi_du = DVector::zeros(cols);
        for i in 0..self.problem.horizon {
            for a in 0..nu {
                psi_du[i * nu + a] = (0..nu).map(|b| self.problem.r.get(a, b) * du[i * nu + b]).sum();
            }
        }
        let mut rate_grad = psi_du.clone();
        for k in 0..cols - nu {
            rate_grad[k] -= psi_du[k + nu];
        }
        let mut w_tilde = self.w.clone();
        for o in 0..rows {
            if viol[o] != 0.0 {
                w_tilde[(o, o)] += mu;
            }
        }
        let jt = j.transpose();
        let res = we + viol * mu;
        let grad: DVector<f64> = (&jt * &res) * 2.0 + rate_grad * 2.0;
        let hess: DMatrix<f64> = (&jt * w_tilde * &j) * 2.0 + &self.rate_hess;
        if !value.is_finite() || grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Linearization { value, grad, hess, jac: j, res })
    }
}

fn projected_residual(z: &[f64], g: &DVector<f64>, problem: &MpcProblem) -> f64 {
    z.iter()
        .enumerate()
        .map(|(i, &v)| {
            let j = i % problem.n_u;
            (v - (v - g[i]).clamp(problem.u_min[j], problem.u_max[j])).abs()
        })
        .fold(0.0, f64::max)
}

/// Structured secant update of the second-order residual term `S` that the
/// Gauss-Newton Hessian leaves out, after a step `s` from `old` to `new`.
fn update_curvature(corr: &mut DMatrix<f64>, s: &DVector<f64>, old: &Linearization, new: &Linearization) {
    let y = &new.grad - &old.grad;
    let ys = y.dot(s);
    if !(ys > 1e-12 * s.norm() * y.norm()) {
        corr.fill(0.0);
        return;
    }
    let y_sharp: DVector<f64> = (new.jac.transpose() - old.jac.transpose()) * &new.res * 2.0;
    let ss = s.dot(&(&*corr * s));
    if ss > 0.0 {
        *corr *= (s.dot(&y_sharp).abs() / ss).min(1.0);
    }
    let d = &y_sharp - &*corr * s;
    let upd = (&d * y.transpose() + &y * d.transpose()) / ys - (&y * y.transpose()) * (d.dot(s) / (ys * ys));
    *corr += upd;
    if corr.iter().any(|v| !v.is_finite()) {
        corr.fill(0.0);
    }
}

/// Minimizes `gᵀp + ½ pᵀHp` over `lo <= p <= hi` by projected Newton steps
/// on the free variables.
pub(crate) fn box_qp(h: &DMatrix<f64>, g: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    let n = g.len();
    let phi = |p: &DVector<f64>| g.dot(p) + 0.5 * p.dot(&(h * p));
    let scale = 1.0 + g.amax();
    let mut p = DVector::zeros(n);
    for _ in 0..100 {
        let q = g + h * &p;
        let at_lo = |i: usize| p[i] <= lo[i] + 1e-14 * (1.0 + lo[i].abs());
        let at_hi = |i: usize| p[i] >= hi[i] - 1e-14 * (1.0 + hi[i].abs());
        let free: Vec<usize> = (0..n).filter(|&i| !((at_lo(i) && q[i] > 0.0) || (at_hi(i) && q[i] < 0.0))).collect();
        let pg = (0..n).map(|i| (p[i] - (p[i] - q[i]).clamp(lo[i], hi[i])).abs()).fold(0.0, f64::max);
        if free.is_empty() || pg <= 1e-14 * scale {
            break;
        }
        let m = free.len();
        let mut hff = DMatrix::from_fn(m, m, |a, b| h[(free[a], free[b])]);
        let rhs = DVector::from_fn(m, |a, _| -q[free[a]]);
        let ridge = 1e-12 * (1.0 + hff.trace().abs() / m as f64);
        let mut sol = None;
        for k in 0..8 {
            if let Some(ch) = hff.clone().cholesky() {
                sol = Some(ch.solve(&rhs));
                break;
            }
            let bump = ridge * 100f64.powi(k);
            for a in 0..m {
                hff[(a, a)] += bump;
            }
        }
        let Some(d_free) = sol else { break };
        let mut dir = DVector::zeros(n);
        for (a, &i) in free.iter().enumerate() {
            dir[i] = d_free[a];
        }
        let f0 = phi(&p);
        let mut alpha = 1.0;
        let mut next = None;
        for _ in 0..50 {
            let cand = DVector::from_fn(n, |i, _| (p[i] + alpha * dir[i]).clamp(lo[i], hi[i]));
            let slope = q.dot(&(&cand - &p));
            if phi(&cand) <= f0 + 1e-4 * slope && slope < 0.0 {
                next = Some(cand);
                break;
            }
            alpha *= 0.5;
        }
        let Some(next) = next else { break };
        let moved = (&next - &p).amax();
        p = next;
        if moved <= 1e-15 * (1.0 + p.amax()) {
            break;
        }
    }
    p
}

/// Single-shooting solve of the tracking problem by projected Gauss-Newton
/// with a secant correction of the Hessian and a backtracking line search. Output-box violations are penalized
/// quadratically with a weight that grows between rounds.
pub fn solve(
    problem: &MpcProblem,
    predictor: &dyn SequencePredictor,
    stage: StageData<'_>,
    warm_start: Option<&[f64]>,
) -> Result<MpcSolution> {
    let (n, nu, ny) = (problem.horizon, problem.n_u, problem.n_y);
    if predictor.horizon() != n || predictor.n_u() != nu || predictor.n_y() != ny {
        return Err(Error::Dim("predictor and problem disagree on horizon or widths".into()));
    }
    if stage.x0.len() != predictor.n_x()
        || stage.y0.len() != ny
        || stage.u_prev.len() != nu
        || stage.reference.len() != (n + 1) * ny
    {
        return Err(Error::Dim("stage data disagree with the problem".into()));
    }
    let mut z: Vec<f64> = match warm_start {
        Some(w) if w.len() == n * nu => w.to_vec(),
        Some(_) => return Err(Error::Dim(format!("warm start needs {} entries", n * nu))),
        None => stage.u_prev.repeat(n),
    };
    problem.clamp_inputs(&mut z);

    let opts = &problem.options;
    let obj = Objective::new(problem, predictor, stage);
    let (rounds, mut mu) = match problem.y_bounds {
        Some(_) => (opts.penalty_rounds.max(1), opts.penalty),
        None => (1, 0.0),
    };
    let lo = DVector::from_fn(n * nu, |i, _| problem.u_min[i % nu]);
    let hi = DVector::from_fn(n * nu, |i, _| problem.u_max[i % nu]);

    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    let mut status = SolveStatus::Converged;
    let mut cost_trace = Vec::new();
    for round in 0..rounds {
        if round > 0 {
            mu *= opts.penalty_growth;
        }
        let mut first = true;
        let mut corr = DMatrix::zeros(n * nu, n * nu);
        let mut prev: Option<(Vec<f64>, Linearization)> = None;
        status = loop {
            let lin = obj.linearize(&z, mu)?;
            if let Some((z_old, old)) = &prev {
                let s = DVector::from_iterator(z.len(), z.iter().zip(z_old).map(|(a, b)| a - b));
                update_curvature(&mut corr, &s, old, &lin);
            }
            if first {
                cost_trace.push(lin.value);
                first = false;
            }
            residual = projected_residual(&z, &lin.grad, problem);
            if residual <= opts.tolerance {
                break SolveStatus::Converged;
            }
            if iterations >= opts.max_iterations {
                break SolveStatus::MaxIterations;
            }
            let zv = DVector::from_column_slice(&z);
            let corrected = &lin.hess + &corr;
            let hess = if corrected.clone().cholesky().is_some() {
                corrected
            } else {
                corr.fill(0.0);
                lin.hess.clone()
            };
            let p = box_qp(&hess, &lin.grad, &(&lo - &zv), &(&hi - &zv));
            let slope = lin.grad.dot(&p);
            if !(slope < 0.0) {
                break SolveStatus::Stalled;
            }
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..40 {
                let mut cand: Vec<f64> = z.iter().zip(p.iter()).map(|(a, b)| a + alpha * b).collect();
                problem.clamp_inputs(&mut cand);
                let (v, _) = obj.value(&cand, mu)?;
                if v <= lin.value + 1e-4 * alpha * slope {
                    accepted = Some((cand, v));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((cand, v)) = accepted else {
                break SolveStatus::Stalled;
            };
            let step = cand.iter().zip(&z).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prev = Some((std::mem::replace(&mut z, cand), lin));
            iterations += 1;
            cost_trace.push(v);
            if step <= opts.step_tolerance {
                break SolveStatus::StepTolerance;
            }
        };
        if status == SolveStatus::MaxIterations {
            break;
        }
    }
    problem.clamp_inputs(&mut z);
    let (_, y_pred) = obj.value(&z, 0.0)?;
    let cost = mpc_cost(&z, &y_pred, stage.y0, stage.u_prev, stage.reference, &problem.q, &problem.r, &problem.p)?;
    Ok(MpcSolution { u: z, y_pred, cost, iterations, residual, status, cost_trace })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_qp_matches_unconstrained_and_clipped_solutions() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = DVector::from_column_slice(&[-1.0, 0.3]);
        let big = DVector::from_element(2, 1e6);
        let p = box_qp(&h, &g, &(-&big), &big);
        let want = h.clone().cholesky().unwrap().solve(&(-&g));
        assert!((p - want).amax() < 1e-12);
        // Diagonal Hessian: the box solution is the clipped Newton step.
        let h = DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 4.0, 2.0]));
        let g = DVector::from_column_slice(&[-3.0, 2.0, 0.1]);
        let lo = DVector::from_element(3, -0.25);
        let hi = DVector::from_element(3, 1.0);
        let p = box_qp(&h, &g, &lo, &hi);
        assert!((p - DVector::from_column_slice(&[1.0, -0.25, -0.05])).amax() < 1e-12);
    }
}
