use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{derive_seed, ExperimentConfig, ExperimentName, Plant, PredictorKind, ScenarioSpec};
use super::manifest::{Manifest, SolveTiming};
use super::metrics::{aggregate, compute_metrics, Aggregate, RunMetrics};
use super::oracles::{run_oracles, OracleOutcome};
use crate::error::{Error, Result};
use crate::mamba::{MambaMpcParams, MambaPredictor, Normalization};
use crate::mpc::{
    run_closed_loop, ClosedLoopConfig, ClosedLoopLog, MeasurementNoise, MpcProblem, ReferenceSchedule,
    RolloutPredictor, SequencePredictor,
};
use crate::plants::{add_noise_snr, simulate, PlantModel};
use crate::train::{build_dataset, fit_with, Dataset, EpochRecord, FitResult, TrainConfig};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Serialize)]
pub struct TrainingSummary {
    pub parameters: usize,
    pub windows: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_rse: f64,
    pub final_train_rse: f64,
    pub seconds: f64,
}

impl TrainingSummary {
    fn from_fit(fit: &FitResult, windows: usize, seconds: f64) -> Self {
        Self {
            parameters: fit.predictor.params.len(),
            windows,
            epochs: fit.history.len(),
            best_epoch: fit.best_epoch,
            best_val_rse: fit.best_val_rse,
            final_train_rse: fit.history.last().map_or(f64::NAN, |r| r.train_rse),
            seconds,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ClosedLoopSummary {
    pub predictor: PredictorKind,
    pub runs: Vec<RunMetrics>,
    pub aggregate: Aggregate,
    pub sampling_time_ms: f64,
    pub solve_within_sampling_time: bool,
    /// Every applied input lies in the input box.
    pub inputs_within_bounds: bool,
    /// First step from which `|y| <= band` holds to the end, per run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub settle_steps: Option<Vec<Option<usize>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stabilized: Option<usize>,
    /// Share of steps on which the warm-started solve needed no more
    /// iterations than a cold start.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warm_not_worse_fraction: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub experiment: ExperimentName,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_loop: Option<ClosedLoopSummary>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub oracles: Vec<OracleOutcome>,
    /// Solver failures plus failed oracles; nonzero means the run failed.
    pub failures: usize,
}

/// Excitation experiment of the config: one signal channel per input, seeded
/// per channel, optionally with measurement noise at the configured SNR.
pub fn generate_data(cfg: &ExperimentConfig) -> Result<Trajectory> {
    let plant = cfg.require(&cfg.plant, "plant")?.build()?;
    let data = cfg.require(&cfg.data, "data")?;
    let nu = plant.n_u();
    let channels = (0..nu)
        .map(|c| data.signal.generate(data.length, plant.ts(), derive_seed(cfg.seed, &format!("input-{c}"))))
        .collect::<Result<Vec<_>>>()?;
    let u: Vec<f64> = (0..data.length).flat_map(|k| channels.iter().map(move |ch| ch[k])).collect();
    let traj = simulate(&plant, &data.x0, &u)?;
    match data.snr_db {
        None => Ok(traj),
        Some(snr) => {
            let (nx, ny) = (plant.n_x(), plant.n_y());
            let x = add_noise_snr(&traj.x, nx, snr, derive_seed(cfg.seed, "measurement-noise"))?;
            let mut y = vec![0.0; traj.len() * ny];
            for k in 0..traj.len() {
                plant.output(&x[k * nx..(k + 1) * nx], traj.u_at(k), &mut y[k * ny..(k + 1) * ny]);
            }
            Trajectory::new(nu, nx, ny, traj.ts, traj.u, x, y)
        }
    }
}

fn train_config(cfg: &ExperimentConfig, label: &str) -> TrainConfig {
    TrainConfig { seed: derive_seed(cfg.seed, label), ..cfg.train.clone() }
}

/// Trains the configured model on windows of `traj`.
pub fn train_model(
    cfg: &ExperimentConfig,
    traj: &Trajectory,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<(FitResult, TrainingSummary)> {
    let horizon = cfg.require(&cfg.mpc, "mpc")?.horizon;
    let model = cfg.require(&cfg.model, "model")?.config(horizon, traj.n_u, traj.n_x, traj.n_y);
    let data = build_dataset(traj, horizon)?;
    let start = Instant::now();
    let fit = fit_with(&data, &model, &train_config(cfg, "train"), on_epoch)?;
    let summary = TrainingSummary::from_fit(&fit, data.len(), start.elapsed().as_secs_f64());
    Ok((fit, summary))
}

/// Runs one experiment and writes its artifacts below `out`:
/// `metrics.json`, `summary.md`, `manifest.json`, `config.toml`, and where
/// applicable `checkpoint.json`, `history.csv`, `traces/` and `timing/`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path, log: &mut dyn FnMut(&str)) -> Result<ExperimentReport> {
    std::fs::create_dir_all(out)?;
    let mut manifest = Manifest::new(cfg)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    let mut report =
        ExperimentReport { experiment: cfg.experiment, seed: cfg.seed, training: None, closed_loop: None, oracles: Vec::new(), failures: 0 };

    match cfg.experiment {
        ExperimentName::UnitOracles => {
            report.oracles = run_oracles();
            for o in &report.oracles {
                log(&format!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.detail));
            }
            report.failures = report.oracles.iter().filter(|o| !o.passed).count();
        }
        ExperimentName::TeacherStudent => {
            let (summary, fit) = teacher_student(cfg, log)?;
            crate::train::write_history(&out.join("history.csv"), &fit.history)?;
            fit.predictor.save(&out.join("checkpoint.json"))?;
            manifest.checkpoint(&out.join("checkpoint.json"))?;
            report.training = Some(summary);
        }
        _ => {
            let (summary, failures) = closed_loop_experiment(cfg, out, &mut manifest, &mut report.training, log)?;
            report.failures = failures;
            report.closed_loop = Some(summary);
        }
    }

    std::fs::write(out.join("metrics.json"), serde_json::to_string_pretty(&report)?)?;
    std::fs::write(out.join("summary.md"), summary_table(&report))?;
    manifest.add_file(out, "metrics.json")?;
    manifest.write(&out.join("manifest.json"))?;
    Ok(report)
}

fn obtain_predictor(
    cfg: &ExperimentConfig,
    out: &Path,
    manifest: &mut Manifest,
    training: &mut Option<TrainingSummary>,
    log: &mut dyn FnMut(&str),
) -> Result<MambaPredictor> {
    let path = out.join("checkpoint.json");
    let predictor = match &cfg.checkpoint {
        Some(src) => {
            log(&format!("loading checkpoint {}", src.display()));
            let p = MambaPredictor::load(src)?;
            if src.canonicalize().ok() != path.canonicalize().ok() {
                p.save(&path)?;
            }
            p
        }
        None => {
            log("generating training data");
            let traj = generate_data(cfg)?;
            let epochs = cfg.train.epochs;
            let (fit, summary) = train_model(cfg, &traj, |r| {
                if r.epoch == 1 || r.epoch % 10 == 0 || r.epoch == epochs {
                    log(&format!("epoch {:>4}  train {:.3e}  val {:.3e}", r.epoch, r.train_rse, r.val_rse));
                }
            })?;
            log(&format!("best val RSE {:.3e} at epoch {}", summary.best_val_rse, summary.best_epoch));
            crate::train::write_history(&out.join("history.csv"), &fit.history)?;
            fit.predictor.save(&path)?;
            *training = Some(summary);
            fit.predictor
        }
    };
    manifest.checkpoint(&path)?;
    Ok(predictor)
}

struct RunSpec {
    x_init: Vec<f64>,
    u_init: Vec<f64>,
    noise: Option<MeasurementNoise>,
}

fn closed_loop_experiment(
    cfg: &ExperimentConfig,
    out: &Path,
    manifest: &mut Manifest,
    training: &mut Option<TrainingSummary>,
    log: &mut dyn FnMut(&str),
) -> Result<(ClosedLoopSummary, usize)> {
    let plant = cfg.require(&cfg.plant, "plant")?.build()?;
    let mpc = cfg.require(&cfg.mpc, "mpc")?;
    let scenario = cfg.require(&cfg.scenario, "scenario")?;
    let problem = mpc.problem(plant.n_u(), plant.n_y())?;
    let (nx, nu, ny) = (plant.n_x(), plant.n_u(), plant.n_y());

    let predictor: Box<dyn SequencePredictor> = match scenario.predictor() {
        PredictorKind::Teacher => Box::new(RolloutPredictor::new(plant, problem.horizon)),
        PredictorKind::Mamba => {
            let p = obtain_predictor(cfg, out, manifest, training, log)?;
            let c = p.config();
            if (c.horizon, c.n_u, c.n_x, c.n_y) != (problem.horizon, nu, nx, ny) {
                return Err(Error::Config("checkpoint shape disagrees with the plant or horizon".into()));
            }
            Box::new(p)
        }
    };

    let (steps, reference, runs, compare_cold) = match scenario {
        ScenarioSpec::Stabilize { realizations, steps, x_ranges, .. } => {
            if x_ranges.len() != nx {
                return Err(Error::Config(format!("x_ranges needs {nx} entries")));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "initial-states"));
            let runs = (0..*realizations)
                .map(|_| RunSpec {
                    x_init: x_ranges.iter().map(|[lo, hi]| rng.random_range(*lo..=*hi)).collect(),
                    u_init: vec![0.0; nu],
                    noise: None,
                })
                .collect();
            (*steps, ReferenceSchedule::constant(vec![0.0; ny]), runs, false)
        }
        ScenarioSpec::Track { steps, reference, x_init, u_init, compare_cold, .. } => {
            let reference_sched = reference.schedule(&plant)?;
            let (x, u) = initial_point(reference, &plant, x_init, u_init)?;
            (*steps, reference_sched, vec![RunSpec { x_init: x, u_init: u, noise: None }], *compare_cold)
        }
        ScenarioSpec::NoisyTrack { realizations, steps, state_noise_std, reference, x_init, u_init, .. } => {
            let reference_sched = reference.schedule(&plant)?;
            let (x, u) = initial_point(reference, &plant, x_init, u_init)?;
            let runs = (0..*realizations)
                .map(|i| RunSpec {
                    x_init: x.clone(),
                    u_init: u.clone(),
                    noise: Some(MeasurementNoise {
                        std: state_noise_std.clone(),
                        seed: derive_seed(cfg.seed, &format!("state-noise-{i}")),
                    }),
                })
                .collect();
            (*steps, reference_sched, runs, false)
        }
    };

    log(&format!("running {} closed-loop realization(s) of {steps} steps", runs.len()));
    let logs: Vec<ClosedLoopLog> = runs
        .par_iter()
        .map(|r| {
            let lc = ClosedLoopConfig { steps, u_init: r.u_init.clone(), noise: r.noise.clone(), compare_cold };
            run_closed_loop(&plant, predictor.as_ref(), &problem, &reference, &r.x_init, &lc)
        })
        .collect::<Result<_>>()?;

    std::fs::create_dir_all(out.join("traces"))?;
    std::fs::create_dir_all(out.join("timing"))?;
    for (i, l) in logs.iter().enumerate() {
        let name = format!("traces/run_{i:03}.csv");
        l.write_csv(&out.join(&name))?;
        l.write_timing_csv(&out.join(format!("timing/run_{i:03}.csv")))?;
        manifest.add_file(out, &name)?;
    }

    let metrics: Vec<RunMetrics> = logs.iter().map(compute_metrics).collect();
    let agg = aggregate(&metrics);
    let sampling_time_ms = plant.ts() * 1e3;
    let (settle_steps, stabilized) = match scenario {
        ScenarioSpec::Stabilize { band, settle_within, .. } => {
            let s: Vec<Option<usize>> = logs.iter().map(|l| settle_step(l, *band)).collect();
            let n = s.iter().filter(|v| v.is_some_and(|k| k <= *settle_within)).count();
            (Some(s), Some(n))
        }
        _ => (None, None),
    };
    let warm_not_worse_fraction = compare_cold.then(|| {
        let steps: Vec<_> = logs.iter().flat_map(|l| &l.steps).collect();
        let ok = steps.iter().filter(|s| s.cold_iterations.is_some_and(|c| s.iterations <= c)).count();
        ok as f64 / steps.len().max(1) as f64
    });
    let summary = ClosedLoopSummary {
        predictor: scenario.predictor(),
        inputs_within_bounds: logs.iter().all(|l| inputs_within(l, &problem)),
        solve_within_sampling_time: agg.mean_solve_ms < sampling_time_ms,
        runs: metrics,
        aggregate: agg,
        sampling_time_ms,
        settle_steps,
        stabilized,
        warm_not_worse_fraction,
    };
    manifest.set_timing(SolveTiming {
        mean_solve_ms: summary.aggregate.mean_solve_ms,
        max_solve_ms: summary.aggregate.max_solve_ms,
        sampling_time_ms,
        mean_below_sampling_time: summary.solve_within_sampling_time,
    });
    let failures = summary.aggregate.failures;
    Ok((summary, failures))
}

fn initial_point(
    reference: &super::config::ReferenceSpec,
    plant: &Plant,
    x_init: &Option<Vec<f64>>,
    u_init: &Option<Vec<f64>>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let eq = reference.initial_equilibrium(plant);
    let x = x_init
        .clone()
        .or_else(|| eq.as_ref().map(|e| e.0.clone()))
        .ok_or_else(|| Error::Config("scenario needs x_init".into()))?;
    let u = u_init.clone().or_else(|| eq.map(|e| e.1)).unwrap_or_else(|| vec![0.0; plant.n_u()]);
    Ok((x, u))
}

/// First step from which every output stays within `band`, if any.
pub fn settle_step(log: &ClosedLoopLog, band: f64) -> Option<usize> {
    let last_out = log.steps.iter().rposition(|s| s.y.iter().any(|v| v.abs() > band));
    match last_out {
        None => Some(0),
        Some(k) if k + 1 < log.len() => Some(k + 1),
        Some(_) => None,
    }
}

fn inputs_within(log: &ClosedLoopLog, problem: &MpcProblem) -> bool {
    const TOL: f64 = 1e-8;
    log.steps.iter().all(|s| {
        s.u.iter().enumerate().all(|(i, &v)| v >= problem.u_min[i] - TOL && v <= problem.u_max[i] + TOL)
    })
}

/// Frozen random teacher generating windows from uniform inputs and initial
/// states; a student of the same shape is fitted from another seed.
fn teacher_student(cfg: &ExperimentConfig, log: &mut dyn FnMut(&str)) -> Result<(TrainingSummary, FitResult)> {
    let ts = cfg.require(&cfg.teacher_student, "teacher_student")?;
    let model = cfg.require(&cfg.model, "model")?.config(ts.horizon, ts.n_u, ts.n_x, ts.n_y);
    let teacher_params = MambaMpcParams::init(model.clone(), derive_seed(cfg.seed, "teacher"))?;
    let teacher = MambaPredictor::new(teacher_params, Normalization::identity(&model))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "teacher-inputs"));
    let a = ts.amplitude;
    let mut data = Dataset::empty(ts.horizon, ts.n_u, ts.n_x, ts.n_y);
    for _ in 0..ts.windows {
        let u: Vec<f64> = (0..ts.horizon * ts.n_u).map(|_| rng.random_range(-a..=a)).collect();
        let x0: Vec<f64> = (0..ts.n_x).map(|_| rng.random_range(-a..=a)).collect();
        let y = teacher.evaluate(&u, &x0, None)?;
        data.x0.extend_from_slice(&x0);
        data.uf.extend_from_slice(&u);
        data.yf.extend_from_slice(&y);
    }
    log(&format!("teacher: {} parameters, {} windows", teacher.params.len(), data.len()));
    let train = train_config(cfg, "student");
    let epochs = train.epochs;
    let start = Instant::now();
    let fit = fit_with(&data, &model, &train, |r| {
        if r.epoch == 1 || r.epoch % 25 == 0 || r.epoch == epochs {
            log(&format!("epoch {:>4}  train {:.3e}  val {:.3e}", r.epoch, r.train_rse, r.val_rse));
        }
    })?;
    let summary = TrainingSummary::from_fit(&fit, data.len(), start.elapsed().as_secs_f64());
    log(&format!("student best val RSE {:.3e} at epoch {}", summary.best_val_rse, summary.best_epoch));
    Ok((summary, fit))
}

fn summary_table(r: &ExperimentReport) -> String {
    let mut s = format!("# {}\n\nseed: {}\n\n| metric | value |\n|---|---|\n", r.experiment, r.seed);
    let mut row = |k: &str, v: String| s.push_str(&format!("| {k} | {v} |\n"));
    if let Some(t) = &r.training {
        row("parameters", t.parameters.to_string());
        row("epochs", t.epochs.to_string());
        row("best validation RSE", format!("{:.3e} (epoch {})", t.best_val_rse, t.best_epoch));
        row("training time (s)", format!("{:.1}", t.seconds));
    }
    if let Some(c) = &r.closed_loop {
        let a = &c.aggregate;
        let fmt = |v: &[super::metrics::Stat]| {
            v.iter().map(|st| format!("{:.4} ± {:.4}", st.mean, st.std)).collect::<Vec<_>>().join(", ")
        };
        row("runs", a.runs.to_string());
        row("MAE", fmt(&a.mae));
        row("MSE", fmt(&a.mse));
        row("ISE", format!("{:.4} ± {:.4}", a.ise.mean, a.ise.std));
        row("IAE", format!("{:.4} ± {:.4}", a.iae.mean, a.iae.std));
        row("input energy", format!("{:.4} ± {:.4}", a.input_energy.mean, a.input_energy.std));
        row("mean / max solve (ms)", format!("{:.3} / {:.3}", a.mean_solve_ms, a.max_solve_ms));
        row("sampling time (ms)", format!("{:.1}", c.sampling_time_ms));
        row("inputs within bounds", c.inputs_within_bounds.to_string());
        row("solver failures", a.failures.to_string());
        if let Some(n) = c.stabilized {
            row("stabilized", format!("{n}/{}", a.runs));
        }
        if let Some(f) = c.warm_not_worse_fraction {
            row("warm start no worse than cold", format!("{:.1}%", 100.0 * f));
        }
    }
    if !r.oracles.is_empty() {
        let passed = r.oracles.iter().filter(|o| o.passed).count();
        row("oracles passed", format!("{passed}/{}", r.oracles.len()));
    }
    s
}

/// Output directory of an experiment below a results root.
pub fn experiment_dir(root: &Path, name: ExperimentName) -> PathBuf {
    root.join(name.as_str())
}
