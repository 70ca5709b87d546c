use serde::{Deserialize, Serialize};

use crate::mpc::ClosedLoopLog;

/// Closed-loop tracking metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub steps: usize,
    /// `Σ_k ‖y(k) - r(k)‖²`.
    pub ise: f64,
    /// `Σ_k ‖y(k) - r(k)‖₁`.
    pub iae: f64,
    /// `Σ_k ‖u(k)‖²`.
    pub input_energy: f64,
    /// Per output channel.
    pub mae: Vec<f64>,
    pub mse: Vec<f64>,
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
    pub mean_iterations: f64,
    pub failures: usize,
}

pub fn compute_metrics(log: &ClosedLoopLog) -> RunMetrics {
    let ny = log.n_y;
    let steps = log.steps.len();
    let mut m = RunMetrics {
        steps,
        ise: 0.0,
        iae: 0.0,
        input_energy: 0.0,
        mae: vec![0.0; ny],
        mse: vec![0.0; ny],
        mean_solve_ms: 0.0,
        max_solve_ms: 0.0,
        mean_iterations: 0.0,
        failures: 0,
    };
    for s in &log.steps {
        for c in 0..ny {
            let e = s.y[c] - s.r[c];
            m.ise += e * e;
            m.iae += e.abs();
            m.mae[c] += e.abs();
            m.mse[c] += e * e;
        }
        m.input_energy += s.u.iter().map(|v| v * v).sum::<f64>();
        let ms = s.solve_secs * 1e3;
        m.mean_solve_ms += ms;
        m.max_solve_ms = m.max_solve_ms.max(ms);
        m.mean_iterations += s.iterations as f64;
        m.failures += usize::from(s.status.is_failure());
    }
    if steps > 0 {
        let n = steps as f64;
        m.mae.iter_mut().chain(m.mse.iter_mut()).for_each(|v| *v /= n);
        m.mean_solve_ms /= n;
        m.mean_iterations /= n;
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    /// Population statistics; all zero for an empty slice.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0, min: 0.0, max: 0.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Statistics over realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub runs: usize,
    pub ise: Stat,
    pub iae: Stat,
    pub input_energy: Stat,
    pub mae: Vec<Stat>,
    pub mse: Vec<Stat>,
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
    pub failures: usize,
}

pub fn aggregate(runs: &[RunMetrics]) -> Aggregate {
    let col = |f: &dyn Fn(&RunMetrics) -> f64| Stat::of(&runs.iter().map(f).collect::<Vec<_>>());
    let ny = runs.first().map_or(0, |r| r.mae.len());
    let total_steps: usize = runs.iter().map(|r| r.steps).sum();
    let mean_solve_ms = if total_steps == 0 {
        0.0
    } else {
        runs.iter().map(|r| r.mean_solve_ms * r.steps as f64).sum::<f64>() / total_steps as f64
    };
    Aggregate {
        runs: runs.len(),
        ise: col(&|r| r.ise),
        iae: col(&|r| r.iae),
        input_energy: col(&|r| r.input_energy),
        mae: (0..ny).map(|c| col(&|r| r.mae[c])).collect(),
        mse: (0..ny).map(|c| col(&|r| r.mse[c])).collect(),
        mean_solve_ms,
        max_solve_ms: runs.iter().map(|r| r.max_solve_ms).fold(0.0, f64::max),
        failures: runs.iter().map(|r| r.failures).sum(),
    }
}
