use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::predictor::SequencePredictor;
use super::problem::{MpcProblem, ReferenceSchedule};
use super::solver::{solve, SolveStatus, StageData};
use crate::error::{Error, Result};
use crate::plants::{gaussian_noise, PlantModel};

/// Zero-mean Gaussian noise on the measured state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementNoise {
    pub std: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub r: Vec<f64>,
    /// Noise-free plant output.
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    /// Iterations of a cold-started solve of the same problem, when requested.
    pub cold_iterations: Option<usize>,
    pub status: SolveStatus,
    pub solve_secs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopLog {
    pub ts: f64,
    pub n_u: usize,
    pub n_x: usize,
    pub n_y: usize,
    pub steps: Vec<StepRecord>,
}

impl ClosedLoopLog {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Trace with columns `k, t, r.., y.., u.., cost, iters`. Solve times are
    /// kept out so that identical runs give identical files.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["k".to_string(), "t".to_string()];
        header.extend((0..self.n_y).map(|i| format!("r{i}")));
        header.extend((0..self.n_y).map(|i| format!("y{i}")));
        header.extend((0..self.n_u).map(|i| format!("u{i}")));
        header.extend(["cost".to_string(), "iters".to_string()]);
        w.write_record(&header)?;
        for s in &self.steps {
            let mut row = vec![s.k.to_string(), (s.k as f64 * self.ts).to_string()];
            row.extend(s.r.iter().chain(&s.y).chain(&s.u).map(f64::to_string));
            row.push(s.cost.to_string());
            row.push(s.iterations.to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_timing_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "k,solve_ms")?;
        for s in &self.steps {
            writeln!(f, "{},{}", s.k, s.solve_secs * 1e3)?;
        }
        f.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopConfig {
    pub steps: usize,
    /// Input assumed applied before the first step.
    pub u_init: Vec<f64>,
    pub noise: Option<MeasurementNoise>,
    /// Also solve every step from a cold start and record its iterations.
    pub compare_cold: bool,
}

/// Receding-horizon loop: measure, solve, apply the first input, shift the
/// solution as the next warm start.
pub fn run_closed_loop(
    plant: &dyn PlantModel,
    predictor: &dyn SequencePredictor,
    problem: &MpcProblem,
    reference: &ReferenceSchedule,
    x_init: &[f64],
    cfg: &ClosedLoopConfig,
) -> Result<ClosedLoopLog> {
    let (nx, nu, ny, n) = (plant.n_x(), plant.n_u(), plant.n_y(), problem.horizon);
    if x_init.len() != nx || cfg.u_init.len() != nu || predictor.n_x() != nx {
        return Err(Error::Dim("initial state or input disagrees with the plant".into()));
    }
    reference.validate(ny)?;
    let mut rng = cfg.noise.as_ref().map(|nz| ChaCha8Rng::seed_from_u64(nz.seed));
    if let Some(nz) = &cfg.noise {
        if nz.std.len() != nx {
            return Err(Error::Dim(format!("state noise needs {nx} entries")));
        }
    }
    let mut log = ClosedLoopLog { ts: plant.ts(), n_u: nu, n_x: nx, n_y: ny, steps: Vec::with_capacity(cfg.steps) };
    let mut x = x_init.to_vec();
    let mut next = vec![0.0; nx];
    let mut u_prev = cfg.u_init.clone();
    let mut warm: Option<Vec<f64>> = None;
    let (mut y, mut y_meas) = (vec![0.0; ny], vec![0.0; ny]);
    for k in 0..cfg.steps {
        if !plant.is_admissible(&x) {
            return Err(Error::NonFinite);
        }
        let mut x_meas = x.clone();
        if let (Some(nz), Some(rng)) = (&cfg.noise, rng.as_mut()) {
            for (v, e) in x_meas.iter_mut().zip(gaussian_noise(1, &nz.std, rng)) {
                *v += e;
            }
        }
        plant.output(&x, &u_prev, &mut y);
        plant.output(&x_meas, &u_prev, &mut y_meas);
        let r_seq = reference.window(k, n);
        let stage = StageData { x0: &x_meas, y0: &y_meas, u_prev: &u_prev, reference: &r_seq };
        let start = Instant::now();
        let sol = solve(problem, predictor, stage, warm.as_deref())?;
        let solve_secs = start.elapsed().as_secs_f64();
        let cold_iterations = match (&warm, cfg.compare_cold) {
            (Some(_), true) => Some(solve(problem, predictor, stage, None)?.iterations),
            (None, true) => Some(sol.iterations),
            (_, false) => None,
        };
        let u0 = sol.u[..nu].to_vec();
        log.steps.push(StepRecord {
            k,
            r: reference.at(k).to_vec(),
            y: y.clone(),
            x: x.clone(),
            u: u0.clone(),
            cost: sol.cost,
            iterations: sol.iterations,
            cold_iterations,
            status: sol.status,
            solve_secs,
        });
        let mut shifted = sol.u[nu..].to_vec();
        shifted.extend_from_slice(&sol.u[(n - 1) * nu..]);
        warm = Some(shifted);
        plant.step(&x, &u0, &mut next);
        std::mem::swap(&mut x, &mut next);
        u_prev = u0;
    }
    Ok(log)
}
