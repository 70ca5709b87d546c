use std::path::Path;

use mamba_mpc::harness::{
    compute_metrics, derive_seed, run_experiment, settle_step, sha256_file, ExperimentConfig, ExperimentName, Manifest, ScenarioSpec,
};
use mamba_mpc::mpc::{ClosedLoopLog, SolveStatus, StepRecord};
use mamba_mpc::Error;
use proptest::prelude::*;

fn configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn log_of(y: &[f64], r: &[f64], u: &[f64]) -> ClosedLoopLog {
    let steps = (0..y.len())
        .map(|k| StepRecord {
            k,
            r: vec![r[k]],
            y: vec![y[k]],
            x: vec![y[k], 0.0],
            u: vec![u[k]],
            cost: 0.0,
            iterations: 1,
            cold_iterations: None,
            status: SolveStatus::Converged,
            solve_secs: 1e-4,
        })
        .collect();
    ClosedLoopLog { ts: 0.1, n_u: 1, n_x: 2, n_y: 1, steps }
}

#[test]
fn committed_configs_parse_and_round_trip() {
    for name in ExperimentName::ALL {
        let path = configs().join(format!("{}.toml", name.as_str()));
        let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(cfg.experiment, name);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }
}

#[test]
fn configured_scenarios_keep_the_benchmark_settings() {
    let load = |n: &str| ExperimentConfig::load(&configs().join(format!("{n}.toml"))).unwrap();
    let stab = load("vdp-stabilize");
    let Some(ScenarioSpec::Stabilize { realizations, x_ranges, .. }) = &stab.scenario else { panic!("stabilize scenario") };
    assert_eq!(*realizations, 100);
    assert_eq!(x_ranges, &vec![[-2.5, 2.5], [-2.0, 2.0]]);
    let noise = load("vdp-noise");
    assert_eq!(noise.data.as_ref().unwrap().snr_db, Some(20.0));
    let Some(ScenarioSpec::NoisyTrack { realizations, state_noise_std, .. }) = &noise.scenario else { panic!("noisy scenario") };
    assert_eq!((*realizations, state_noise_std.as_slice()), (100, &[0.16, 0.13][..]));
    let tank = load("fourtank-track");
    let mpc = tank.mpc.as_ref().unwrap();
    assert_eq!((mpc.horizon, mpc.u_min.as_slice(), mpc.u_max.as_slice()), (20, &[0.0, 0.0][..], &[4.0, 4.0][..]));
}

#[test]
fn missing_checkpoint_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&configs().join("vdp-track.toml")).unwrap();
    cfg.checkpoint = Some(dir.path().join("absent.json"));
    let err = run_experiment(&cfg, &dir.path().join("out"), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::MissingCheckpoint(_)), "{err}");
}

#[test]
fn small_run_writes_a_consistent_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::load(&configs().join("vdp-stabilize.toml")).unwrap();
    cfg.data.as_mut().unwrap().length = 1500;
    cfg.train.epochs = 1;
    if let Some(ScenarioSpec::Stabilize { realizations, steps, .. }) = cfg.scenario.as_mut() {
        *realizations = 3;
        *steps = 20;
    }
    let out = dir.path().join("run");
    let report = run_experiment(&cfg, &out, &mut |_| {}).unwrap();
    assert_eq!(report.closed_loop.as_ref().unwrap().runs.len(), 3);
    let manifest = Manifest::load(&out.join("manifest.json")).unwrap();
    assert_eq!(manifest.seed, cfg.seed);
    assert_eq!(manifest.checkpoint_sha256.as_deref(), Some(sha256_file(&out.join("checkpoint.json")).unwrap().as_str()));
    assert!(manifest.files.keys().any(|k| k.starts_with("traces/")));
    for (rel, hash) in &manifest.files {
        assert_eq!(&sha256_file(&out.join(rel)).unwrap(), hash, "{rel}");
    }
    let timing = manifest.timing.unwrap();
    assert_eq!(timing.sampling_time_ms, 100.0);
}

#[test]
fn seeds_differ_by_label() {
    let labels = ["train", "student", "teacher", "input-0", "input-1", "measurement-noise"];
    let seeds: std::collections::BTreeSet<u64> = labels.iter().map(|l| derive_seed(7, l)).collect();
    assert_eq!(seeds.len(), labels.len());
    assert_eq!(derive_seed(7, "train"), derive_seed(7, "train"));
    assert_ne!(derive_seed(7, "train"), derive_seed(8, "train"));
}

proptest! {
    #[test]
    fn metrics_are_non_negative_and_order_free(rows in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64, -15.0..15.0f64), 1..40)) {
        let (y, (r, u)): (Vec<f64>, (Vec<f64>, Vec<f64>)) = rows.iter().map(|&(a, b, c)| (a, (b, c))).unzip();
        let m = compute_metrics(&log_of(&y, &r, &u));
        prop_assert!(m.ise >= 0.0 && m.iae >= 0.0 && m.input_energy >= 0.0 && m.mae[0] >= 0.0 && m.mse[0] >= 0.0);
        let rev = |v: &[f64]| v.iter().rev().copied().collect::<Vec<_>>();
        let back = compute_metrics(&log_of(&rev(&y), &rev(&r), &rev(&u)));
        prop_assert!((m.ise - back.ise).abs() <= 1e-9 * m.ise.max(1.0));
        prop_assert!((m.iae - back.iae).abs() <= 1e-9 * m.iae.max(1.0));
        prop_assert!((m.input_energy - back.input_energy).abs() <= 1e-9 * m.input_energy.max(1.0));
    }

    #[test]
    fn settle_step_marks_the_final_entry_into_the_band(y in prop::collection::vec(-1.0..1.0f64, 1..60), band in 0.05..0.5f64) {
        let zeros = vec![0.0; y.len()];
        match settle_step(&log_of(&y, &zeros, &zeros), band) {
            Some(k) => {
                prop_assert!(y[k..].iter().all(|v| v.abs() <= band));
                prop_assert!(k == 0 || y[k - 1].abs() > band);
            }
            None => prop_assert!(y.last().unwrap().abs() > band),
        }
    }
}
