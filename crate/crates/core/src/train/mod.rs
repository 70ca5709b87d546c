//! Fitting the predictor to windowed input/state/output data.

mod adam;
mod dataset;
mod fit;
mod loss;

pub use adam::Adam;
pub use dataset::{build_dataset, build_dataset_multi, Dataset};
pub use fit::{evaluate_rse, fit, fit_with, split_point, write_history, EpochRecord, FitResult, TrainConfig};
pub use loss::{rse_loss, BatchLoss, GradEngine};
