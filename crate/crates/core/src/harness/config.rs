use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mamba::{ModelConfig, Padding};
use crate::mpc::{Breakpoint, MpcProblem, ReferenceSchedule, SolverOptions, WeightSpec};
use crate::plants::{
    gen_multisine, gen_piecewise_constant, gen_prbs_multilevel, FourTank, FourTankParams, MultisineSpec, PhaseSchedule,
    PlantModel, PrbsSpec, Spacing, VanDerPol,
};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentName {
    VdpStabilize,
    VdpTrack,
    VdpNoise,
    FourtankTrack,
    TeacherStudent,
    UnitOracles,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 6] = [
        ExperimentName::VdpStabilize,
        ExperimentName::VdpTrack,
        ExperimentName::VdpNoise,
        ExperimentName::FourtankTrack,
        ExperimentName::TeacherStudent,
        ExperimentName::UnitOracles,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentName::VdpStabilize => "vdp-stabilize",
            ExperimentName::VdpTrack => "vdp-track",
            ExperimentName::VdpNoise => "vdp-noise",
            ExperimentName::FourtankTrack => "fourtank-track",
            ExperimentName::TeacherStudent => "teacher-student",
            ExperimentName::UnitOracles => "unit-oracles",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PlantSpec {
    VanDerPol(VanDerPol),
    FourTank(FourTankParams),
}

/// A plant built from its spec.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Plant {
    VanDerPol(VanDerPol),
    FourTank(FourTank),
}

impl PlantSpec {
    pub fn build(&self) -> Result<Plant> {
        Ok(match *self {
            PlantSpec::VanDerPol(p) => Plant::VanDerPol(VanDerPol::new(p.mu, p.ts, p.restoring)?),
            PlantSpec::FourTank(p) => Plant::FourTank(FourTank::new(p)?),
        })
    }
}

impl Plant {
    fn inner(&self) -> &dyn PlantModel {
        match self {
            Plant::VanDerPol(p) => p,
            Plant::FourTank(p) => p,
        }
    }
}

impl PlantModel for Plant {
    fn n_x(&self) -> usize {
        self.inner().n_x()
    }
    fn n_u(&self) -> usize {
        self.inner().n_u()
    }
    fn n_y(&self) -> usize {
        self.inner().n_y()
    }
    fn ts(&self) -> f64 {
        self.inner().ts()
    }
    fn step(&self, x: &[f64], u: &[f64], next: &mut [f64]) {
        self.inner().step(x, u, next)
    }
    fn output(&self, x: &[f64], u: &[f64], y: &mut [f64]) {
        self.inner().output(x, u, y)
    }
    fn is_admissible(&self, x: &[f64]) -> bool {
        self.inner().is_admissible(x)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SignalSpec {
    Multisine {
        f_min: f64,
        f_max: f64,
        harmonics: usize,
        peak: f64,
        #[serde(default)]
        spacing: Spacing,
        #[serde(default)]
        phases: PhaseSchedule,
    },
    Prbs {
        levels: Vec<f64>,
        max_switch_freq: f64,
    },
    PiecewiseConstant {
        lo: f64,
        hi: f64,
        min_hold: usize,
        max_hold: usize,
    },
}

impl SignalSpec {
    /// One channel of `length` samples.
    pub fn generate(&self, length: usize, ts: f64, seed: u64) -> Result<Vec<f64>> {
        match self {
            SignalSpec::Multisine { f_min, f_max, harmonics, peak, spacing, phases } => gen_multisine(
                &MultisineSpec {
                    length,
                    ts,
                    f_min: *f_min,
                    f_max: *f_max,
                    harmonics: *harmonics,
                    peak: *peak,
                    spacing: *spacing,
                    phases: *phases,
                },
                seed,
            ),
            SignalSpec::Prbs { levels, max_switch_freq } => {
                gen_prbs_multilevel(&PrbsSpec { length, ts, levels: levels.clone(), max_switch_freq: *max_switch_freq }, seed)
            }
            SignalSpec::PiecewiseConstant { lo, hi, min_hold, max_hold } => {
                gen_piecewise_constant(length, *lo, *hi, *min_hold, *max_hold, seed)
            }
        }
    }
}

/// Open-loop identification experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub length: usize,
    pub signal: SignalSpec,
    pub x0: Vec<f64>,
    /// Measurement noise on states and outputs, as an SNR in dB.
    #[serde(default)]
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub d_model: usize,
    pub expand: usize,
    pub d_state: usize,
    pub d_conv: usize,
    #[serde(default = "one")]
    pub dt_rank: usize,
    pub n_layers: usize,
    #[serde(default)]
    pub padding: Padding,
}

fn one() -> usize {
    1
}

impl ModelSpec {
    pub fn config(&self, horizon: usize, n_u: usize, n_x: usize, n_y: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            expand: self.expand,
            d_state: self.d_state,
            d_conv: self.d_conv,
            dt_rank: self.dt_rank,
            n_layers: self.n_layers,
            padding: self.padding,
            ..ModelConfig::new(horizon, n_u, n_x, n_y)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpcSpec {
    pub horizon: usize,
    pub q: WeightSpec,
    pub r: WeightSpec,
    /// Terminal weight; `Q` when absent.
    #[serde(default)]
    pub p: Option<WeightSpec>,
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    #[serde(default)]
    pub y_min: Option<Vec<f64>>,
    #[serde(default)]
    pub y_max: Option<Vec<f64>>,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl MpcSpec {
    pub fn problem(&self, n_u: usize, n_y: usize) -> Result<MpcProblem> {
        let p = self.p.as_ref().map(|p| p.to_matrix(n_y)).transpose()?;
        let prob = MpcProblem::new(
            self.horizon,
            self.q.to_matrix(n_y)?,
            self.r.to_matrix(n_u)?,
            p,
            self.u_min.clone(),
            self.u_max.clone(),
        )?
        .with_options(self.solver);
        match (&self.y_min, &self.y_max) {
            (None, None) => Ok(prob),
            (lo, hi) => prob.with_output_box(
                lo.clone().unwrap_or_else(|| vec![f64::NEG_INFINITY; n_y]),
                hi.clone().unwrap_or_else(|| vec![f64::INFINITY; n_y]),
            ),
        }
    }
}

/// Piecewise-constant reference, either as explicit breakpoints or as the
/// equilibrium outputs of a sequence of constant inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReferenceSpec {
    Breakpoints { breakpoints: Vec<Breakpoint> },
    SteadyStates { steady_inputs: Vec<Vec<f64>>, hold: usize },
}

impl ReferenceSpec {
    pub fn schedule(&self, plant: &Plant) -> Result<ReferenceSchedule> {
        let sched = match self {
            ReferenceSpec::Breakpoints { breakpoints } => ReferenceSchedule { breakpoints: breakpoints.clone() },
            ReferenceSpec::SteadyStates { steady_inputs, hold } => {
                let Plant::FourTank(ft) = plant else {
                    return Err(Error::Config("steady-state references need the four-tank plant".into()));
                };
                if steady_inputs.iter().any(|u| u.len() != 2) {
                    return Err(Error::Config("four-tank steady inputs need two entries".into()));
                }
                ReferenceSchedule {
                    breakpoints: steady_inputs
                        .iter()
                        .enumerate()
                        .map(|(i, u)| Breakpoint { step: i * hold, value: ft.steady_state(u).to_vec() })
                        .collect(),
                }
            }
        };
        sched.validate(plant.n_y())?;
        Ok(sched)
    }

    /// Equilibrium state and input matching the first reference level, when
    /// the reference is given by steady inputs.
    pub fn initial_equilibrium(&self, plant: &Plant) -> Option<(Vec<f64>, Vec<f64>)> {
        match (self, plant) {
            (ReferenceSpec::SteadyStates { steady_inputs, .. }, Plant::FourTank(ft)) => {
                let u = steady_inputs.first()?.clone();
                Some((ft.steady_state(&u).to_vec(), u))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PredictorKind {
    /// The trained sequence model.
    #[default]
    Mamba,
    /// Rollouts of the true plant.
    Teacher,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScenarioSpec {
    /// Regulation to zero from random initial states.
    Stabilize {
        realizations: usize,
        steps: usize,
        /// Uniform sampling interval per state.
        x_ranges: Vec<[f64; 2]>,
        band: f64,
        /// A run succeeds if `|y| <= band` from some step at or before this
        /// one until the end of the run.
        settle_within: usize,
        #[serde(default)]
        predictor: PredictorKind,
    },
    Track {
        steps: usize,
        reference: ReferenceSpec,
        #[serde(default)]
        x_init: Option<Vec<f64>>,
        #[serde(default)]
        u_init: Option<Vec<f64>>,
        #[serde(default)]
        predictor: PredictorKind,
        /// Also solve each step from a cold start to compare iteration counts.
        #[serde(default)]
        compare_cold: bool,
    },
    /// Tracking with Gaussian noise on the measured state, repeated over
    /// independent noise realizations.
    NoisyTrack {
        realizations: usize,
        steps: usize,
        state_noise_std: Vec<f64>,
        reference: ReferenceSpec,
        #[serde(default)]
        x_init: Option<Vec<f64>>,
        #[serde(default)]
        u_init: Option<Vec<f64>>,
        #[serde(default)]
        predictor: PredictorKind,
    },
}

impl ScenarioSpec {
    pub fn predictor(&self) -> PredictorKind {
        match self {
            ScenarioSpec::Stabilize { predictor, .. }
            | ScenarioSpec::Track { predictor, .. }
            | ScenarioSpec::NoisyTrack { predictor, .. } => *predictor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherStudentSpec {
    pub horizon: usize,
    pub n_u: usize,
    pub n_x: usize,
    pub n_y: usize,
    /// Number of independent windows drawn.
    pub windows: usize,
    /// Inputs and initial conditions are drawn from `U(-amplitude, amplitude)`.
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentName,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub plant: Option<PlantSpec>,
    #[serde(default)]
    pub data: Option<DataSpec>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub train: TrainConfig,
    /// Load this checkpoint instead of training.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub mpc: Option<MpcSpec>,
    #[serde(default)]
    pub scenario: Option<ScenarioSpec>,
    #[serde(default)]
    pub teacher_student: Option<TeacherStudentSpec>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn require<'a, T>(&self, field: &'a Option<T>, name: &str) -> Result<&'a T> {
        field
            .as_ref()
            .ok_or_else(|| Error::Config(format!("experiment {} needs a [{name}] section", self.experiment)))
    }
}

/// Independent stream seed derived from a base seed and a label.
pub fn derive_seed(base: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TRACK: &str = r#"
experiment = "vdp-track"
seed = 3

[plant]
kind = "van-der-pol"
mu = 1.0
ts = 0.1

[data]
length = 2000
x0 = [0.0, 0.0]
signal = { kind = "multisine", f_min = 0.0049, f_max = 4.88, harmonics = 30, peak = 15.0 }

[model]
d_model = 8
expand = 1
d_state = 8
d_conv = 10
n_layers = 2

[train]
epochs = 3

[mpc]
horizon = 10
q = 100.0
r = 0.5
u_min = [-15.0]
u_max = [15.0]

[scenario]
kind = "track"
steps = 50
x_init = [0.0, 0.0]
reference = { breakpoints = [{ step = 0, value = [1.0] }, { step = 25, value = [-1.0] }] }
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(TRACK).unwrap();
        assert_eq!(cfg.experiment, ExperimentName::VdpTrack);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.batch_size, TrainConfig::default().batch_size);
        let PlantSpec::VanDerPol(p) = cfg.plant.unwrap() else { panic!() };
        assert_eq!(p.restoring, 1.0);
        let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        let prob = cfg.mpc.unwrap().problem(1, 1).unwrap();
        assert_eq!(prob.p.get(0, 0), 100.0);
    }

    #[test]
    fn rejects_unknown_fields_and_names() {
        assert!(ExperimentConfig::from_toml(&TRACK.replace("seed = 3", "seed = 3\nbogus = 1")).is_err());
        assert!(ExperimentConfig::from_toml(&TRACK.replace("vdp-track", "vdp-dance")).is_err());
        assert!("fourtank-track".parse::<ExperimentName>().is_ok());
        assert!("nope".parse::<ExperimentName>().is_err());
    }

    #[test]
    fn steady_state_reference() {
        let plant = PlantSpec::FourTank(FourTankParams::default()).build().unwrap();
        let spec = ReferenceSpec::SteadyStates { steady_inputs: vec![vec![2.0, 2.0], vec![3.0, 1.0]], hold: 10 };
        let sched = spec.schedule(&plant).unwrap();
        assert_eq!(sched.breakpoints[1].step, 10);
        let (x, u) = spec.initial_equilibrium(&plant).unwrap();
        assert_eq!(u, vec![2.0, 2.0]);
        assert_eq!(x, sched.at(0));
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(1, "a"), derive_seed(1, "b"));
        assert_eq!(derive_seed(1, "a"), derive_seed(1, "a"));
    }
}
