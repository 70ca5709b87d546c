use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Zero padding applied around each channel before the depthwise convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// `floor((K-1)/2)` zeros on the left, `ceil((K-1)/2)` on the right.
    #[default]
    Paper,
    /// `K-1` zeros on the left only; outputs never see later steps.
    Causal,
}

impl Padding {
    /// (left, right) pad widths for kernel width `k`.
    pub fn widths(self, k: usize) -> (usize, usize) {
        match self {
            Padding::Paper => ((k - 1) / 2, k / 2),
            Padding::Causal => (k - 1, 0),
        }
    }
}

impl std::str::FromStr for Padding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Padding::Paper),
            "causal" => Ok(Padding::Causal),
            other => Err(Error::Config(format!("unknown padding mode {other:?}"))),
        }
    }
}

/// Architecture of a Mamba-MPC predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Model dimension D.
    pub d_model: usize,
    /// Expansion factor E; the SSM runs on `E * D` channels.
    pub expand: usize,
    /// Hidden state dimension S per channel.
    pub d_state: usize,
    /// Convolution kernel width K.
    pub d_conv: usize,
    /// Rank of the Δ projection.
    pub dt_rank: usize,
    pub n_layers: usize,
    /// Prediction horizon N (sequence length).
    pub horizon: usize,
    pub n_u: usize,
    pub n_x: usize,
    pub n_y: usize,
    #[serde(default)]
    pub padding: Padding,
    #[serde(default = "default_eps")]
    pub eps_rms: f64,
}

fn default_eps() -> f64 {
    1e-5
}

impl ModelConfig {
    /// Defaults for everything but the problem dimensions.
    pub fn new(horizon: usize, n_u: usize, n_x: usize, n_y: usize) -> Self {
        Self {
            d_model: 8,
            expand: 2,
            d_state: 8,
            d_conv: 4,
            dt_rank: 1,
            n_layers: 1,
            horizon,
            n_u,
            n_x,
            n_y,
            padding: Padding::Paper,
            eps_rms: default_eps(),
        }
    }

    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn n_in(&self) -> usize {
        self.n_u + self.n_x
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d_model", self.d_model),
            ("expand", self.expand),
            ("d_state", self.d_state),
            ("d_conv", self.d_conv),
            ("dt_rank", self.dt_rank),
            ("n_layers", self.n_layers),
            ("horizon", self.horizon),
            ("n_u", self.n_u),
            ("n_y", self.n_y),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.eps_rms > 0.0) {
            return Err(Error::Config("eps_rms must be positive".into()));
        }
        Ok(())
    }
}
