use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mamba::{ChannelScaling, Normalization};
use crate::trajectory::Trajectory;

/// Aligned training windows: initial conditions `X0` (`T x n_x`), input
/// windows `Uf` (`T x N x n_u`) and output windows `Yf` (`T x N x n_y`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub horizon: usize,
    pub n_u: usize,
    pub n_x: usize,
    pub n_y: usize,
    pub x0: Vec<f64>,
    pub uf: Vec<f64>,
    pub yf: Vec<f64>,
}

impl Dataset {
    pub fn empty(horizon: usize, n_u: usize, n_x: usize, n_y: usize) -> Self {
        Self { horizon, n_u, n_x, n_y, x0: Vec::new(), uf: Vec::new(), yf: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.uf.len() / (self.horizon * self.n_u)
    }

    pub fn is_empty(&self) -> bool {
        self.uf.is_empty()
    }

    pub fn x0(&self, t: usize) -> &[f64] {
        &self.x0[t * self.n_x..(t + 1) * self.n_x]
    }

    pub fn u(&self, t: usize) -> &[f64] {
        let w = self.horizon * self.n_u;
        &self.uf[t * w..(t + 1) * w]
    }

    pub fn y(&self, t: usize) -> &[f64] {
        let w = self.horizon * self.n_y;
        &self.yf[t * w..(t + 1) * w]
    }

    /// Samples `range` as a new dataset.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let (wu, wy) = (self.horizon * self.n_u, self.horizon * self.n_y);
        Self {
            x0: self.x0[range.start * self.n_x..range.end * self.n_x].to_vec(),
            uf: self.uf[range.start * wu..range.end * wu].to_vec(),
            yf: self.yf[range.start * wy..range.end * wy].to_vec(),
            ..Self::empty(self.horizon, self.n_u, self.n_x, self.n_y)
        }
    }

    /// Appends the stride-1 windows of one trajectory.
    pub fn extend_from(&mut self, traj: &Trajectory) -> Result<()> {
        let n = self.horizon;
        if (traj.n_u, traj.n_x, traj.n_y) != (self.n_u, self.n_x, self.n_y) {
            return Err(Error::Dim("trajectory channels disagree with the dataset".into()));
        }
        if traj.len() < n + 1 {
            return Err(Error::TooShort { len: traj.len(), horizon: n });
        }
        for t in 0..traj.len() - n {
            self.x0.extend_from_slice(traj.x_at(t));
            self.uf.extend_from_slice(&traj.u[t * self.n_u..(t + n) * self.n_u]);
            self.yf.extend_from_slice(&traj.y[(t + 1) * self.n_y..(t + 1 + n) * self.n_y]);
        }
        Ok(())
    }

    /// Per-channel statistics of this dataset.
    pub fn fit_normalization(&self) -> Normalization {
        Normalization {
            u: ChannelScaling::fit(&self.uf, self.n_u),
            x0: ChannelScaling::fit(&self.x0, self.n_x),
            y: ChannelScaling::fit(&self.yf, self.n_y),
        }
    }

    /// A copy expressed in the scaled coordinates of `norm`.
    pub fn normalized(&self, norm: &Normalization) -> Self {
        let mut d = self.clone();
        norm.u.apply_in_place(&mut d.uf);
        if self.n_x > 0 {
            norm.x0.apply_in_place(&mut d.x0);
        }
        norm.y.apply_in_place(&mut d.yf);
        d
    }

    /// Writes `<stem>.csv` (one sample per row) and `<stem>.json` (shapes and
    /// optional normalization).
    pub fn save(&self, stem: &Path, norm: Option<&Normalization>) -> Result<()> {
        if let Some(dir) = stem.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = csv::Writer::from_path(stem.with_extension("csv"))?;
        let mut header: Vec<String> = (0..self.n_x).map(|j| format!("x0_{j}")).collect();
        for i in 0..self.horizon {
            header.extend((0..self.n_u).map(|j| format!("u{i}_{j}")));
        }
        for i in 0..self.horizon {
            header.extend((0..self.n_y).map(|j| format!("y{}_{j}", i + 1)));
        }
        w.write_record(&header)?;
        for t in 0..self.len() {
            w.write_record(self.x0(t).iter().chain(self.u(t)).chain(self.y(t)).map(f64::to_string))?;
        }
        w.flush()?;
        let side = Sidecar {
            samples: self.len(),
            horizon: self.horizon,
            n_u: self.n_u,
            n_x: self.n_x,
            n_y: self.n_y,
            normalization: norm.cloned(),
        };
        std::fs::write(stem.with_extension("json"), serde_json::to_string_pretty(&side)?)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<(Self, Option<Normalization>)> {
        let side: Sidecar = serde_json::from_str(&std::fs::read_to_string(stem.with_extension("json"))?)?;
        let mut d = Self::empty(side.horizon, side.n_u, side.n_x, side.n_y);
        let (wu, wy) = (side.horizon * side.n_u, side.horizon * side.n_y);
        let mut r = csv::Reader::from_path(stem.with_extension("csv"))?;
        for rec in r.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("{v:?}: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != side.n_x + wu + wy {
                return Err(Error::Parse(format!("dataset row has {} columns", vals.len())));
            }
            d.x0.extend_from_slice(&vals[..side.n_x]);
            d.uf.extend_from_slice(&vals[side.n_x..side.n_x + wu]);
            d.yf.extend_from_slice(&vals[side.n_x + wu..]);
        }
        if d.len() != side.samples {
            return Err(Error::Parse(format!("sidecar lists {} samples, found {}", side.samples, d.len())));
        }
        Ok((d, side.normalization))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    samples: usize,
    horizon: usize,
    n_u: usize,
    n_x: usize,
    n_y: usize,
    normalization: Option<Normalization>,
}

/// Stride-1 windows over one trajectory: sample `t` holds `x(t)`,
/// `u(t..t+N-1)` and `y(t+1..t+N)`.
pub fn build_dataset(traj: &Trajectory, horizon: usize) -> Result<Dataset> {
    let mut d = Dataset::empty(horizon, traj.n_u, traj.n_x, traj.n_y);
    d.extend_from(traj)?;
    Ok(d)
}

/// Windows of several trajectories; no window spans two of them.
pub fn build_dataset_multi(trajs: &[Trajectory], horizon: usize) -> Result<Dataset> {
    let first = trajs.first().ok_or_else(|| Error::Config("no trajectories given".into()))?;
    let mut d = Dataset::empty(horizon, first.n_u, first.n_x, first.n_y);
    for t in trajs {
        d.extend_from(t)?;
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(len: usize) -> Trajectory {
        let u = (0..len).map(|k| k as f64).collect();
        let x = (0..len).flat_map(|k| [100.0 + k as f64, 200.0 + k as f64]).collect();
        let y = (0..len).map(|k| 1000.0 + k as f64).collect();
        Trajectory::new(1, 2, 1, 1.0, u, x, y).unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(build_dataset(&ramp(4), 3).unwrap().len(), 1);
        let d = build_dataset(&ramp(5), 3).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(&d.u(0)[1..], &d.u(1)[..2]);
        assert!(matches!(build_dataset(&ramp(3), 3), Err(Error::TooShort { len: 3, horizon: 3 })));
    }

    #[test]
    fn ramp_windows_by_index() {
        let n = 4;
        let d = build_dataset(&ramp(20), n).unwrap();
        assert_eq!(d.len(), 16);
        for t in 0..d.len() {
            assert_eq!(d.x0(t), &[100.0 + t as f64, 200.0 + t as f64]);
            for i in 0..n {
                assert_eq!(d.u(t)[i], (t + i) as f64);
                assert_eq!(d.y(t)[i], 1000.0 + (t + i + 1) as f64);
            }
        }
    }

    #[test]
    fn multi_trajectory_windows_stay_inside_each_source() {
        let mut b = ramp(6);
        b.u.iter_mut().for_each(|v| *v += 50.0);
        b.y.iter_mut().for_each(|v| *v += 50.0);
        let d = build_dataset_multi(&[ramp(6), b], 3).unwrap();
        assert_eq!(d.len(), 6);
        for t in 0..d.len() {
            let (u, y) = (d.u(t), d.y(t));
            let base = if u[0] >= 50.0 { 50.0 } else { 0.0 };
            assert!(u.iter().all(|&v| (v - base) < 6.0 && v >= base));
            assert!(y.iter().all(|&v| v - base - 1000.0 < 6.0 && v - base >= 1000.0));
            assert_eq!(y[0] - 1000.0, u[0] + 1.0);
        }
    }

    #[test]
    fn bundle_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let d = build_dataset(&ramp(12), 3).unwrap();
        let norm = d.fit_normalization();
        let stem = dir.path().join("bundle");
        d.save(&stem, Some(&norm)).unwrap();
        let (back, nb) = Dataset::load(&stem).unwrap();
        assert_eq!(back, d);
        assert_eq!(nb.unwrap(), norm);
    }
}
