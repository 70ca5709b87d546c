use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Error, Result};

/// One named weight array inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub range: Range<usize>,
}

/// Offsets of one Mamba block's weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockLayout {
    pub norm: Range<usize>,
    pub w_s: Range<usize>,
    pub w_r: Range<usize>,
    pub conv_w: Range<usize>,
    pub conv_b: Range<usize>,
    pub a: Range<usize>,
    pub w_b: Range<usize>,
    pub w_c: Range<usize>,
    pub w_delta: Range<usize>,
    pub w_delta_tau: Range<usize>,
    pub b_delta_tau: Range<usize>,
    pub feedthrough: Range<usize>,
    pub w_y: Range<usize>,
}

/// Where every weight lives in the flat vector, in checkpoint order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub embed_w: Range<usize>,
    pub embed_b: Range<usize>,
    pub blocks: Vec<BlockLayout>,
    pub norm_out: Range<usize>,
    pub head_w: Range<usize>,
    pub head_b: Range<usize>,
    pub len: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let mut entries = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            let range = offset..offset + n;
            offset += n;
            entries.push(ParamEntry { name, shape, range: range.clone() });
            range
        };
        let (d, ed, s, k, r) = (cfg.d_model, cfg.d_inner(), cfg.d_state, cfg.d_conv, cfg.dt_rank);
        let embed_w = push("embed.weight".into(), vec![d, cfg.n_in()]);
        let embed_b = push("embed.bias".into(), vec![d]);
        let blocks = (0..cfg.n_layers)
            .map(|i| {
                let p = |n: &str| format!("layers.{i}.{n}");
                BlockLayout {
                    norm: push(p("norm.weight"), vec![d]),
                    w_s: push(p("w_s"), vec![ed, d]),
                    w_r: push(p("w_r"), vec![ed, d]),
                    conv_w: push(p("conv.weight"), vec![ed, k]),
                    conv_b: push(p("conv.bias"), vec![ed]),
                    a: push(p("a"), vec![ed, s]),
                    w_b: push(p("w_b"), vec![s, ed]),
                    w_c: push(p("w_c"), vec![s, ed]),
                    w_delta: push(p("w_delta"), vec![r, ed]),
                    w_delta_tau: push(p("w_delta_tau"), vec![ed, r]),
                    b_delta_tau: push(p("b_delta_tau"), vec![ed]),
                    feedthrough: push(p("feedthrough"), vec![ed]),
                    w_y: push(p("w_y"), vec![d, ed]),
                }
            })
            .collect();
        let norm_out = push("norm_out.weight".into(), vec![d]);
        let head_w = push("head.weight".into(), vec![cfg.n_y, d]);
        let head_b = push("head.bias".into(), vec![cfg.n_y]);
        Self { entries, embed_w, embed_b, blocks, norm_out, head_w, head_b, len: offset }
    }
}

/// Borrowed weights of one Mamba block.
#[derive(Debug, Clone, Copy)]
pub struct MambaBlockParams<'a> {
    pub w_s: &'a [f64],
    pub w_r: &'a [f64],
    pub conv_w: &'a [f64],
    pub conv_b: &'a [f64],
    pub a: &'a [f64],
    pub w_b: &'a [f64],
    pub w_c: &'a [f64],
    pub w_delta: &'a [f64],
    pub w_delta_tau: &'a [f64],
    pub b_delta_tau: &'a [f64],
    pub feedthrough_gain: &'a [f64],
    pub w_y: &'a [f64],
}

impl<'a> MambaBlockParams<'a> {
    pub fn view(data: &'a [f64], l: &BlockLayout) -> Self {
        Self {
            w_s: &data[l.w_s.clone()],
            w_r: &data[l.w_r.clone()],
            conv_w: &data[l.conv_w.clone()],
            conv_b: &data[l.conv_b.clone()],
            a: &data[l.a.clone()],
            w_b: &data[l.w_b.clone()],
            w_c: &data[l.w_c.clone()],
            w_delta: &data[l.w_delta.clone()],
            w_delta_tau: &data[l.w_delta_tau.clone()],
            b_delta_tau: &data[l.b_delta_tau.clone()],
            feedthrough_gain: &data[l.feedthrough.clone()],
            w_y: &data[l.w_y.clone()],
        }
    }
}

/// All learnable weights of a Mamba-MPC predictor, stored flat.
#[derive(Debug, Clone, PartialEq)]
pub struct MambaMpcParams {
    config: ModelConfig,
    layout: ParamLayout,
    data: Vec<f64>,
}

impl MambaMpcParams {
    /// All weights zero (RMS scales included).
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = ParamLayout::new(&config);
        let data = vec![0.0; layout.len];
        Ok(Self { config, layout, data })
    }

    pub fn from_data(config: ModelConfig, data: Vec<f64>) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        if data.len() != p.data.len() {
            return Err(Error::Dim(format!(
                "expected {} parameters, got {}",
                p.data.len(),
                data.len()
            )));
        }
        p.data = data;
        Ok(p)
    }

    /// Seeded initialization.
    ///
    /// Dense maps draw from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`. `A[d, s] =
    /// -(s + 1)`, so every discretized pole `exp(Δ A)` starts inside (0, 1).
    /// `b_delta_tau` is chosen so that `softplus(b)` is log-spaced over
    /// `[1e-3, 1e-1]` across channels. RMS scales and the feedthrough gain
    /// start at one; convolution and head biases at zero.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = p.config.clone();
        let (d, ed, s, k, r) = (cfg.d_model, cfg.d_inner(), cfg.d_state, cfg.d_conv, cfg.dt_rank);
        let layout = p.layout.clone();
        let data = &mut p.data;

        let mut uniform = |range: &Range<usize>, fan_in: usize, data: &mut [f64]| {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            for v in &mut data[range.clone()] {
                *v = rng.random_range(-bound..=bound);
            }
        };
        uniform(&layout.embed_w, cfg.n_in(), data);
        uniform(&layout.embed_b, cfg.n_in(), data);
        for b in &layout.blocks {
            data[b.norm.clone()].fill(1.0);
            uniform(&b.w_s, d, data);
            uniform(&b.w_r, d, data);
            uniform(&b.conv_w, k, data);
            for (i, v) in data[b.a.clone()].iter_mut().enumerate() {
                *v = -((i % s) as f64 + 1.0);
            }
            uniform(&b.w_b, ed, data);
            uniform(&b.w_c, ed, data);
            uniform(&b.w_delta, ed, data);
            uniform(&b.w_delta_tau, r, data);
            for (i, v) in data[b.b_delta_tau.clone()].iter_mut().enumerate() {
                let frac = if ed > 1 { i as f64 / (ed - 1) as f64 } else { 0.0 };
                let dt = (1e-3f64.ln() + frac * (1e-1f64.ln() - 1e-3f64.ln())).exp();
                *v = inverse_softplus(dt);
            }
            data[b.feedthrough.clone()].fill(1.0);
            uniform(&b.w_y, ed, data);
        }
        data[layout.norm_out.clone()].fill(1.0);
        uniform(&layout.head_w, d, data);
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn block(&self, i: usize) -> MambaBlockParams<'_> {
        MambaBlockParams::view(&self.data, &self.layout.blocks[i])
    }

    pub fn entry(&self, name: &str) -> Option<&[f64]> {
        self.layout
            .entries
            .iter()
            .find(|e| e.name == name)
            .map(|e| &self.data[e.range.clone()])
    }

    pub fn entry_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let range = self.layout.entries.iter().find(|e| e.name == name)?.range.clone();
        Some(&mut self.data[range])
    }
}

/// `x` such that `softplus(x) = y`, for `y > 0`.
pub fn inverse_softplus(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::dense::softplus;

    #[test]
    fn layout_is_contiguous_and_complete() {
        let mut cfg = ModelConfig::new(5, 2, 3, 1);
        cfg.n_layers = 2;
        let layout = ParamLayout::new(&cfg);
        let mut next = 0;
        for e in &layout.entries {
            assert_eq!(e.range.start, next, "{}", e.name);
            assert_eq!(e.range.len(), e.shape.iter().product::<usize>());
            next = e.range.end;
        }
        assert_eq!(next, layout.len);
        assert_eq!(layout.blocks.len(), 2);
    }

    #[test]
    fn init_respects_pole_and_delta_ranges() {
        let mut cfg = ModelConfig::new(4, 1, 2, 1);
        cfg.d_state = 3;
        let p = MambaMpcParams::init(cfg.clone(), 7).unwrap();
        let blk = p.block(0);
        assert!(blk.a.iter().all(|&a| a < 0.0));
        assert_eq!(&blk.a[..3], &[-1.0, -2.0, -3.0]);
        for &b in blk.b_delta_tau {
            let dt = softplus(b);
            assert!((1e-3 * (1.0 - 1e-9)..=1e-1 * (1.0 + 1e-9)).contains(&dt), "{dt}");
        }
        assert!(p.entry("head.bias").unwrap().iter().all(|&v| v == 0.0));
        assert!(p.entry("layers.0.conv.bias").unwrap().iter().all(|&v| v == 0.0));
        assert_eq!(MambaMpcParams::init(cfg, 7).unwrap().data(), p.data());
    }

    #[test]
    fn inverse_softplus_roundtrip() {
        for &y in &[1e-3, 0.01, 0.5, 3.0] {
            assert!((softplus(inverse_softplus(y)) - y).abs() < 1e-12 * y.max(1.0));
        }
    }
}
