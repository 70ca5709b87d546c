use crate::error::{Error, Result};
use crate::mamba::MambaPredictor;
use crate::plants::PlantModel;
use crate::tensor::RealMatrix;

/// Maps `u(0..N-1)` and the current state to `y(1..N)` in one call.
pub trait SequencePredictor: Send + Sync {
    fn horizon(&self) -> usize;
    fn n_u(&self) -> usize;
    fn n_x(&self) -> usize;
    fn n_y(&self) -> usize;

    /// Returns `N x n_y` outputs; `jacobian`, when given, receives
    /// `d y / d u` as an `(N n_y) x (N n_u)` row-major matrix.
    fn predict(&self, u_seq: &[f64], x0: &[f64], jacobian: Option<&mut [f64]>) -> Result<Vec<f64>>;
}

impl SequencePredictor for MambaPredictor {
    fn horizon(&self) -> usize {
        self.config().horizon
    }
    fn n_u(&self) -> usize {
        self.config().n_u
    }
    fn n_x(&self) -> usize {
        self.config().n_x
    }
    fn n_y(&self) -> usize {
        self.config().n_y
    }
    fn predict(&self, u_seq: &[f64], x0: &[f64], jacobian: Option<&mut [f64]>) -> Result<Vec<f64>> {
        self.evaluate(u_seq, x0, jacobian)
    }
}

/// `y = G u + F x0 + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePredictor {
    horizon: usize,
    n_u: usize,
    n_y: usize,
    pub gain: RealMatrix,
    pub state_gain: RealMatrix,
    pub offset: Vec<f64>,
}

impl AffinePredictor {
    pub fn new(horizon: usize, n_u: usize, n_y: usize, gain: RealMatrix, state_gain: RealMatrix, offset: Vec<f64>) -> Result<Self> {
        let rows = horizon * n_y;
        if gain.rows() != rows || gain.cols() != horizon * n_u || state_gain.rows() != rows || offset.len() != rows {
            return Err(Error::Dim("affine predictor blocks disagree with the horizon".into()));
        }
        Ok(Self { horizon, n_u, n_y, gain, state_gain, offset })
    }
}

impl SequencePredictor for AffinePredictor {
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn n_u(&self) -> usize {
        self.n_u
    }
    fn n_x(&self) -> usize {
        self.state_gain.cols()
    }
    fn n_y(&self) -> usize {
        self.n_y
    }
    fn predict(&self, u_seq: &[f64], x0: &[f64], jacobian: Option<&mut [f64]>) -> Result<Vec<f64>> {
        let gu = self.gain.mul_vec(u_seq)?;
        let fx = self.state_gain.mul_vec(x0)?;
        if let Some(jac) = jacobian {
            jac.copy_from_slice(self.gain.data());
        }
        Ok(gu.iter().zip(&fx).zip(&self.offset).map(|((a, b), c)| a + b + c).collect())
    }
}

/// Multi-step predictor obtained by rolling out a plant model, with a
/// central-difference Jacobian.
#[derive(Debug, Clone)]
pub struct RolloutPredictor<P> {
    pub plant: P,
    horizon: usize,
    fd_step: f64,
}

impl<P: PlantModel> RolloutPredictor<P> {
    pub fn new(plant: P, horizon: usize) -> Self {
        Self { plant, horizon, fd_step: 1e-6 }
    }

    fn rollout(&self, u_seq: &[f64], x0: &[f64], y: &mut [f64]) {
        let (nu, ny) = (self.plant.n_u(), self.plant.n_y());
        let mut x = x0.to_vec();
        let mut next = vec![0.0; x.len()];
        for i in 0..self.horizon {
            self.plant.step(&x, &u_seq[i * nu..(i + 1) * nu], &mut next);
            std::mem::swap(&mut x, &mut next);
            let j = (i + 1).min(self.horizon - 1);
            self.plant.output(&x, &u_seq[j * nu..(j + 1) * nu], &mut y[i * ny..(i + 1) * ny]);
        }
    }
}

impl<P: PlantModel> SequencePredictor for RolloutPredictor<P> {
    fn horizon(&self) -> usize {
        self.horizon
    }
    fn n_u(&self) -> usize {
        self.plant.n_u()
    }
    fn n_x(&self) -> usize {
        self.plant.n_x()
    }
    fn n_y(&self) -> usize {
        self.plant.n_y()
    }
    fn predict(&self, u_seq: &[f64], x0: &[f64], jacobian: Option<&mut [f64]>) -> Result<Vec<f64>> {
        let (n, nu, ny) = (self.horizon, self.plant.n_u(), self.plant.n_y());
        if u_seq.len() != n * nu || x0.len() != self.plant.n_x() {
            return Err(Error::Dim("rollout inputs disagree with the plant".into()));
        }
        let mut y = vec![0.0; n * ny];
        self.rollout(u_seq, x0, &mut y);
        if let Some(jac) = jacobian {
            let cols = n * nu;
            let mut u = u_seq.to_vec();
            let (mut yp, mut ym) = (vec![0.0; n * ny], vec![0.0; n * ny]);
            for c in 0..cols {
                let h = self.fd_step * (1.0 + u_seq[c].abs());
                u[c] = u_seq[c] + h;
                self.rollout(&u, x0, &mut yp);
                u[c] = u_seq[c] - h;
                self.rollout(&u, x0, &mut ym);
                u[c] = u_seq[c];
                for o in 0..n * ny {
                    jac[o * cols + c] = (yp[o] - ym[o]) / (2.0 * h);
                }
            }
            if jac.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(y)
    }
}
