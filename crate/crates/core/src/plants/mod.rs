//! Benchmark plants and the excitation and noise signals used to identify
//! them.

mod models;
mod signals;

pub use models::{simulate, FourTank, FourTankParams, PlantModel, VanDerPol};
pub use signals::{
    add_noise_snr, gaussian_noise, gen_multisine, gen_piecewise_constant, gen_prbs_multilevel, multisine_bins,
    prbs_min_hold, MultisineSpec, PhaseSchedule, PrbsSpec, Spacing,
};
