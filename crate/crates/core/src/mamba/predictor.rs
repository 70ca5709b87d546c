//! A trained model together with its data scaling, evaluated in physical
//! units, and the JSON checkpoint format that stores both.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::model::{backward, embed_into, forward, ModelCache, ModelScratch};
use super::params::MambaMpcParams;
use crate::error::{Error, Result};

/// Per-channel affine standardization `z = (v - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScaling {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelScaling {
    pub fn identity(n: usize) -> Self {
        Self { mean: vec![0.0; n], std: vec![1.0; n] }
    }

    /// Statistics over rows of width `n`. Channels with (near) zero spread keep
    /// unit scale.
    pub fn fit(values: &[f64], n: usize) -> Self {
        if n == 0 {
            return Self::identity(0);
        }
        let rows = (values.len() / n).max(1) as f64;
        let mut mean = vec![0.0; n];
        for row in values.chunks_exact(n) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows);
        let mut var = vec![0.0; n];
        for row in values.chunks_exact(n) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.iter().map(|s| (s / rows).sqrt()).map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Self { mean, std }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn apply(&self, values: &[f64], out: &mut [f64]) {
        let n = self.len();
        if n == 0 {
            return;
        }
        for (o, (i, v)) in out.iter_mut().zip(values.iter().enumerate()) {
            let c = i % n;
            *o = (v - self.mean[c]) / self.std[c];
        }
    }

    pub fn apply_in_place(&self, values: &mut [f64]) {
        let n = self.len();
        for (i, v) in values.iter_mut().enumerate() {
            let c = i % n;
            *v = (*v - self.mean[c]) / self.std[c];
        }
    }

    pub fn invert_in_place(&self, values: &mut [f64]) {
        let n = self.len();
        for (i, v) in values.iter_mut().enumerate() {
            let c = i % n;
            *v = *v * self.std[c] + self.mean[c];
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub u: ChannelScaling,
    pub x0: ChannelScaling,
    pub y: ChannelScaling,
}

impl Normalization {
    pub fn identity(cfg: &ModelConfig) -> Self {
        Self {
            u: ChannelScaling::identity(cfg.n_u),
            x0: ChannelScaling::identity(cfg.n_x),
            y: ChannelScaling::identity(cfg.n_y),
        }
    }
}

/// Trained parameters plus the scaling they were trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct MambaPredictor {
    pub params: MambaMpcParams,
    pub norm: Normalization,
}

impl MambaPredictor {
    pub fn new(params: MambaMpcParams, norm: Normalization) -> Result<Self> {
        let cfg = params.config();
        if norm.u.len() != cfg.n_u || norm.x0.len() != cfg.n_x || norm.y.len() != cfg.n_y {
            return Err(Error::Dim("normalization widths disagree with the model".into()));
        }
        Ok(Self { params, norm })
    }

    pub fn config(&self) -> &ModelConfig {
        self.params.config()
    }

    /// Predicted outputs `y(1..N)` (`N x n_y`, physical units) for inputs
    /// `u(0..N-1)` (`N x n_u`) from initial condition `x0`. When `jacobian`
    /// is given it receives `d y / d u` as an `(N n_y) x (N n_u)` row-major
    /// matrix computed by reverse-mode sweeps.
    pub fn evaluate(&self, u_seq: &[f64], x0: &[f64], jacobian: Option<&mut [f64]>) -> Result<Vec<f64>> {
        let cfg = self.config();
        let (n, nu, ny) = (cfg.horizon, cfg.n_u, cfg.n_y);
        if u_seq.len() != n * nu || x0.len() != cfg.n_x {
            return Err(Error::Dim(format!(
                "expected {} inputs and {} initial values, got {} and {}",
                n * nu,
                cfg.n_x,
                u_seq.len(),
                x0.len()
            )));
        }
        let mut cache = ModelCache::new(&self.params);
        let mut un = vec![0.0; u_seq.len()];
        let mut xn = vec![0.0; x0.len()];
        self.norm.u.apply(u_seq, &mut un);
        self.norm.x0.apply(x0, &mut xn);
        embed_into(&un, &xn, nu, &mut cache.emb);
        forward(&self.params, &mut cache);
        let mut y = cache.out.clone();
        self.norm.y.invert_in_place(&mut y);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        if let Some(jac) = jacobian {
            let cols = n * nu;
            debug_assert_eq!(jac.len(), n * ny * cols);
            let mut sc = ModelScratch::new(&self.params);
            let mut dout = vec![0.0; n * ny];
            let mut d_emb = vec![0.0; n * cfg.n_in()];
            for o in 0..n * ny {
                dout.fill(0.0);
                dout[o] = self.norm.y.std[o % ny];
                backward(&self.params, &cache, &dout, &mut sc, None, Some(&mut d_emb));
                let row = &mut jac[o * cols..(o + 1) * cols];
                for i in 0..n {
                    for j in 0..nu {
                        row[i * nu + j] = d_emb[i * cfg.n_in() + j] / self.norm.u.std[j];
                    }
                }
            }
            if jac.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
        }
        Ok(y)
    }
}

const CHECKPOINT_FORMAT: &str = "mamba-mpc-checkpoint";

#[derive(Debug, Serialize, Deserialize)]
struct NamedArray {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    normalization: Normalization,
    weights: Vec<NamedArray>,
}

impl MambaPredictor {
    pub fn to_json(&self) -> Result<String> {
        let layout = self.params.layout();
        let weights = layout
            .entries
            .iter()
            .map(|e| NamedArray {
                name: e.name.clone(),
                shape: e.shape.clone(),
                data: self.params.data()[e.range.clone()].to_vec(),
            })
            .collect();
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: 1,
            config: self.config().clone(),
            normalization: self.norm.clone(),
            weights,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(s)?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(Error::Parse(format!("not a checkpoint: format {:?}", file.format)));
        }
        let mut params = MambaMpcParams::zeros(file.config)?;
        let mut seen = 0;
        for w in file.weights {
            let entry = params
                .layout()
                .entries
                .iter()
                .find(|e| e.name == w.name)
                .cloned()
                .ok_or_else(|| Error::Parse(format!("unknown weight {:?}", w.name)))?;
            if entry.shape != w.shape || w.data.len() != entry.range.len() {
                return Err(Error::Parse(format!("weight {:?} has shape {:?}, expected {:?}", w.name, w.shape, entry.shape)));
            }
            params.data_mut()[entry.range].copy_from_slice(&w.data);
            seen += 1;
        }
        if seen != params.layout().entries.len() {
            return Err(Error::Parse("checkpoint is missing weights".into()));
        }
        Self::new(params, file.normalization)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingCheckpoint(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
