//! Tracking MPC with a sequence predictor as the prediction model, solved
//! by single shooting over the input sequence.

mod closed_loop;
mod predictor;
mod problem;
mod solver;

pub use closed_loop::{run_closed_loop, ClosedLoopConfig, ClosedLoopLog, MeasurementNoise, StepRecord};
pub use predictor::{AffinePredictor, RolloutPredictor, SequencePredictor};
pub use problem::{mpc_cost, Breakpoint, MpcProblem, ReferenceSchedule, SolverOptions, WeightSpec};
pub use solver::{solve, MpcSolution, SolveStatus, StageData};
