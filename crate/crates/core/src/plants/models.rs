use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// A sampled-data plant `x⁺ = f(x, u)`, `y = h(x, u)`.
pub trait PlantModel: Send + Sync {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn n_y(&self) -> usize;
    /// Sampling time in seconds.
    fn ts(&self) -> f64;
    fn step(&self, x: &[f64], u: &[f64], next: &mut [f64]);
    fn output(&self, x: &[f64], u: &[f64], y: &mut [f64]);

    fn is_admissible(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.is_finite())
    }
}

/// Simulates from `x0` under `u` (`T x n_u`). Sample `k` of the result holds
/// `u(k)`, `x(k)` and `y(k) = h(x(k), u(k))`.
pub fn simulate(plant: &dyn PlantModel, x0: &[f64], u: &[f64]) -> Result<Trajectory> {
    let (nx, nu, ny) = (plant.n_x(), plant.n_u(), plant.n_y());
    if x0.len() != nx || u.len() % nu != 0 {
        return Err(Error::Dim("initial state or input width disagrees with the plant".into()));
    }
    let len = u.len() / nu;
    let mut xs = Vec::with_capacity(len * nx);
    let mut ys = vec![0.0; len * ny];
    let mut x = x0.to_vec();
    let mut next = vec![0.0; nx];
    for k in 0..len {
        let uk = &u[k * nu..(k + 1) * nu];
        if !plant.is_admissible(&x) {
            return Err(Error::NonFinite);
        }
        xs.extend_from_slice(&x);
        plant.output(&x, uk, &mut ys[k * ny..(k + 1) * ny]);
        plant.step(&x, uk, &mut next);
        std::mem::swap(&mut x, &mut next);
    }
    Trajectory::new(nu, nx, ny, plant.ts(), u.to_vec(), xs, ys)
}

/// Forced Van der Pol oscillator under forward Euler; `y = x₁`.
///
/// `ẋ₁ = x₂`, `ẋ₂ = μ (1 - x₁²) x₂ - k x₁ + u` with restoring gain `k`
/// (1 for the classical oscillator).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VanDerPol {
    pub mu: f64,
    pub ts: f64,
    pub restoring: f64,
}

impl Default for VanDerPol {
    fn default() -> Self {
        Self { mu: 1.0, ts: 0.1, restoring: 1.0 }
    }
}

impl VanDerPol {
    pub fn new(mu: f64, ts: f64, restoring: f64) -> Result<Self> {
        if !(mu > 0.0 && ts > 0.0 && restoring >= 0.0) {
            return Err(Error::Config("Van der Pol needs mu > 0, ts > 0 and a non-negative restoring gain".into()));
        }
        Ok(Self { mu, ts, restoring })
    }
}

impl PlantModel for VanDerPol {
    fn n_x(&self) -> usize {
        2
    }
    fn n_u(&self) -> usize {
        1
    }
    fn n_y(&self) -> usize {
        1
    }
    fn ts(&self) -> f64 {
        self.ts
    }

    fn step(&self, x: &[f64], u: &[f64], next: &mut [f64]) {
        let (x1, x2) = (x[0], x[1]);
        next[0] = x1 + self.ts * x2;
        next[1] = x2 + self.ts * (self.mu * (1.0 - x1 * x1) * x2 - self.restoring * x1 + u[0]);
    }

    fn output(&self, x: &[f64], _u: &[f64], y: &mut [f64]) {
        y[0] = x[0];
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FourTankParams {
    /// Tank cross-section (m²).
    pub s_c: f64,
    /// Outlet areas (m²).
    pub a: [f64; 4],
    pub gamma_a: f64,
    pub gamma_b: f64,
    pub g: f64,
    pub ts: f64,
    /// Euler sub-steps per sample.
    pub substeps: usize,
}

impl Default for FourTankParams {
    fn default() -> Self {
        Self {
            s_c: 0.06,
            a: [1.31e-4, 1.51e-4, 9.27e-5, 8.82e-5],
            gamma_a: 0.3,
            gamma_b: 0.4,
            g: 9.81,
            ts: 5.0,
            substeps: 50,
        }
    }
}

/// Quadruple-tank process; all four levels are measured.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FourTank {
    pub p: FourTankParams,
}

impl FourTank {
    pub fn new(p: FourTankParams) -> Result<Self> {
        let ok = p.s_c > 0.0
            && p.a.iter().all(|&a| a > 0.0)
            && (0.0..1.0).contains(&p.gamma_a)
            && p.gamma_a > 0.0
            && (0.0..1.0).contains(&p.gamma_b)
            && p.gamma_b > 0.0
            && p.g > 0.0
            && p.ts > 0.0
            && p.substeps > 0;
        if !ok {
            return Err(Error::Config("invalid four-tank parameters".into()));
        }
        Ok(Self { p })
    }

    pub fn derivative(&self, x: &[f64], u: &[f64], dx: &mut [f64]) {
        let p = &self.p;
        let q = |i: usize| p.a[i] / p.s_c * (2.0 * p.g * x[i].max(0.0)).sqrt();
        let inflow = 3600.0 * p.s_c;
        dx[0] = -q(0) + q(2) + p.gamma_a * u[0] / inflow;
        dx[1] = -q(1) + q(3) + p.gamma_b * u[1] / inflow;
        dx[2] = -q(2) + (1.0 - p.gamma_b) * u[1] / inflow;
        dx[3] = -q(3) + (1.0 - p.gamma_a) * u[0] / inflow;
    }

    /// Levels at which a constant input `u` is in equilibrium.
    pub fn steady_state(&self, u: &[f64]) -> [f64; 4] {
        let p = &self.p;
        let level = |flow: f64, a: f64| (flow / a).powi(2) / (2.0 * p.g);
        let f3 = (1.0 - p.gamma_b) * u[1] / 3600.0;
        let f4 = (1.0 - p.gamma_a) * u[0] / 3600.0;
        [
            level(f3 + p.gamma_a * u[0] / 3600.0, p.a[0]),
            level(f4 + p.gamma_b * u[1] / 3600.0, p.a[1]),
            level(f3, p.a[2]),
            level(f4, p.a[3]),
        ]
    }
}

impl PlantModel for FourTank {
    fn n_x(&self) -> usize {
        4
    }
    fn n_u(&self) -> usize {
        2
    }
    fn n_y(&self) -> usize {
        4
    }
    fn ts(&self) -> f64 {
        self.p.ts
    }

    fn step(&self, x: &[f64], u: &[f64], next: &mut [f64]) {
        let h = self.p.ts / self.p.substeps as f64;
        let mut cur = [x[0], x[1], x[2], x[3]];
        let mut dx = [0.0; 4];
        for _ in 0..self.p.substeps {
            self.derivative(&cur, u, &mut dx);
            for (c, d) in cur.iter_mut().zip(&dx) {
                *c += h * d;
            }
        }
        next.copy_from_slice(&cur);
    }

    fn output(&self, x: &[f64], _u: &[f64], y: &mut [f64]) {
        y.copy_from_slice(&x[..4]);
    }
}
