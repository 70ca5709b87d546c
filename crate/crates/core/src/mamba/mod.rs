//! Mamba blocks and the Mamba-MPC sequence-to-sequence predictor.

pub mod block;
mod config;
pub mod kernels;
pub mod model;
mod ops;
mod params;
mod predictor;

pub use config::{ModelConfig, Padding};
pub use ops::{
    conv1d_depthwise, embed_ic, mamba_block, predict, rmsnorm, selective_discretize, silu, softplus, ssm_scan,
    ssm_scan_parallel, Discretization, EmbeddedInput,
};
pub use params::{inverse_softplus, BlockLayout, MambaBlockParams, MambaMpcParams, ParamEntry, ParamLayout};
pub use predictor::{ChannelScaling, MambaPredictor, Normalization};
