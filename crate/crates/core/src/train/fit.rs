use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::dataset::Dataset;
use super::loss::GradEngine;
use crate::error::{Error, Result};
use crate::mamba::{MambaMpcParams, MambaPredictor, ModelConfig, Normalization};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    /// Coefficient of the `‖θ‖²` loss term.
    pub l2: f64,
    /// Decoupled multiplicative decay, scaled by the learning rate.
    pub weight_decay: f64,
    pub gamma: f64,
    /// The learning rate is multiplied by `gamma` once every this many epochs.
    pub gamma_every: usize,
    pub seed: u64,
    pub val_fraction: f64,
    /// Standardize every channel with statistics of the training split.
    pub normalize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 64,
            lr0: 1e-3,
            l2: 1e-5,
            weight_decay: 1e-5,
            gamma: 0.998,
            gamma_every: 10,
            seed: 0,
            val_fraction: 0.15,
            normalize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 >= 0.0) || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("need lr0 >= 0 and 0 < gamma <= 1".into()));
        }
        if self.batch_size == 0 || self.gamma_every == 0 {
            return Err(Error::Config("batch_size and gamma_every must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * self.gamma.powi((epoch / self.gamma_every) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_rse: f64,
    pub val_rse: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub predictor: MambaPredictor,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (0 for the initialization).
    pub best_epoch: usize,
    pub best_val_rse: f64,
}

/// Number of training windows; the remaining tail is validation.
pub fn split_point(len: usize, val_fraction: f64) -> usize {
    let val = (len as f64 * val_fraction).round() as usize;
    len - val.min(len.saturating_sub(1))
}

/// Minibatch Adam on the relative squared error. Returns the parameters with
/// the lowest validation RSE seen (the training RSE when there is no
/// validation split).
pub fn fit(data: &Dataset, model: &ModelConfig, cfg: &TrainConfig) -> Result<FitResult> {
    fit_with(data, model, cfg, |_| {})
}

/// [`fit`] with a callback after every epoch.
pub fn fit_with(
    data: &Dataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitResult> {
    cfg.validate()?;
    model.validate()?;
    if (model.horizon, model.n_u, model.n_x, model.n_y) != (data.horizon, data.n_u, data.n_x, data.n_y) {
        return Err(Error::Dim("dataset shape disagrees with the model".into()));
    }
    if data.is_empty() {
        return Err(Error::Config("empty dataset".into()));
    }
    let n_train = split_point(data.len(), cfg.val_fraction);
    let norm = if cfg.normalize { data.slice(0..n_train).fit_normalization() } else { Normalization::identity(model) };
    let scaled = data.normalized(&norm);
    let train_idx: Vec<usize> = (0..n_train).collect();
    let val_idx: Vec<usize> = (n_train..data.len()).collect();
    let select_idx = if val_idx.is_empty() { &train_idx } else { &val_idx };

    let mut params = MambaMpcParams::init(model.clone(), cfg.seed)?;
    let mut engine = GradEngine::new(&params, cfg.batch_size);
    let mut adam = Adam::new(params.len());
    let mut grad = vec![0.0; params.len()];
    let mut order = train_idx.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5e_ed0f_5a3e);

    let mut best = params.data().to_vec();
    let mut best_val = engine.rse(&params, &scaled, select_idx)?;
    let mut best_epoch = 0;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let lr = cfg.lr_at(epoch - 1);
        order.shuffle(&mut rng);
        let (mut err, mut energy) = (0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            let stats = engine.loss_and_grad(&params, &scaled, batch, cfg.l2, &mut grad).map_err(|e| match e {
                Error::NonFinite => Error::Diverged { epoch },
                e => e,
            })?;
            err += stats.sq_err;
            energy += stats.sq_target;
            adam.step(params.data_mut(), &grad, lr, cfg.weight_decay);
        }
        let train_rse = err / energy;
        if !train_rse.is_finite() || params.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        let val_rse = if val_idx.is_empty() { train_rse } else { engine.rse(&params, &scaled, &val_idx)? };
        if !val_rse.is_finite() {
            return Err(Error::Diverged { epoch });
        }
        if val_rse < best_val {
            best_val = val_rse;
            best_epoch = epoch;
            best.copy_from_slice(params.data());
        }
        let rec = EpochRecord { epoch, train_rse, val_rse, lr };
        on_epoch(&rec);
        history.push(rec);
    }

    let params = MambaMpcParams::from_data(model.clone(), best)?;
    Ok(FitResult { predictor: MambaPredictor::new(params, norm)?, history, best_epoch, best_val_rse: best_val })
}

/// RSE of the predictor over every window of `data`, in the predictor's
/// normalized coordinates.
pub fn evaluate_rse(predictor: &MambaPredictor, data: &Dataset) -> Result<f64> {
    let cfg = predictor.config();
    if (cfg.horizon, cfg.n_u, cfg.n_x, cfg.n_y) != (data.horizon, data.n_u, data.n_x, data.n_y) {
        return Err(Error::Dim("dataset shape disagrees with the model".into()));
    }
    let scaled = data.normalized(&predictor.norm);
    let idx: Vec<usize> = (0..data.len()).collect();
    GradEngine::new(&predictor.params, 256).rse(&predictor.params, &scaled, &idx)
}

/// CSV with columns `epoch,train_rse,val_rse,lr`.
pub fn write_history(path: &Path, history: &[EpochRecord]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for rec in history {
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}
