//! Sampled input/state/output records shared by the simulators, the dataset
//! builder and the command line tools.

use std::path::Path;

use crate::error::{Error, Result};

/// `len` aligned samples of `u(k)`, `x(k)` and `y(k)`, each stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub n_u: usize,
    pub n_x: usize,
    pub n_y: usize,
    /// Sampling time in seconds.
    pub ts: f64,
    pub u: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Trajectory {
    pub fn new(n_u: usize, n_x: usize, n_y: usize, ts: f64, u: Vec<f64>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if n_u == 0 || n_y == 0 {
            return Err(Error::Dim("trajectories need at least one input and one output".into()));
        }
        let len = u.len() / n_u;
        if u.len() != len * n_u || x.len() != len * n_x || y.len() != len * n_y {
            return Err(Error::Dim(format!(
                "channel buffers of {}, {} and {} values do not share a length",
                u.len(),
                x.len(),
                y.len()
            )));
        }
        Ok(Self { n_u, n_x, n_y, ts, u, x, y })
    }

    pub fn len(&self) -> usize {
        self.u.len() / self.n_u
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn u_at(&self, k: usize) -> &[f64] {
        &self.u[k * self.n_u..(k + 1) * self.n_u]
    }

    pub fn x_at(&self, k: usize) -> &[f64] {
        &self.x[k * self.n_x..(k + 1) * self.n_x]
    }

    pub fn y_at(&self, k: usize) -> &[f64] {
        &self.y[k * self.n_y..(k + 1) * self.n_y]
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["k".to_string(), "t".to_string()];
        h.extend((0..self.n_u).map(|i| format!("u{i}")));
        h.extend((0..self.n_x).map(|i| format!("x{i}")));
        h.extend((0..self.n_y).map(|i| format!("y{i}")));
        h
    }

    /// CSV with header `k,t,u0..,x0..,y0..`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        for k in 0..self.len() {
            let mut row = vec![k.to_string(), (k as f64 * self.ts).to_string()];
            row.extend(self.u_at(k).iter().chain(self.x_at(k)).chain(self.y_at(k)).map(f64::to_string));
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let count = |p: char| header.iter().filter(|h| h.starts_with(p) && h[1..].parse::<usize>().is_ok()).count();
        let (n_u, n_x, n_y) = (count('u'), count('x'), count('y'));
        if header.len() != 2 + n_u + n_x + n_y {
            return Err(Error::Parse(format!("unexpected trajectory header {header:?}")));
        }
        let (mut u, mut x, mut y) = (Vec::new(), Vec::new(), Vec::new());
        let mut times = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|e| Error::Parse(format!("{v:?}: {e}"))))
                .collect::<Result<_>>()?;
            times.push(vals[0]);
            u.extend_from_slice(&vals[1..1 + n_u]);
            x.extend_from_slice(&vals[1 + n_u..1 + n_u + n_x]);
            y.extend_from_slice(&vals[1 + n_u + n_x..]);
        }
        let ts = if times.len() > 1 { times[1] - times[0] } else { 1.0 };
        Self::new(n_u, n_x, n_y, ts, u, x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let t = Trajectory::new(1, 2, 1, 0.1, vec![0.5, -1.0], vec![1.0, 2.0, 3.0, 1.0 / 3.0], vec![1.0, 3.0]).unwrap();
        let p = dir.path().join("t.csv");
        t.write_csv(&p).unwrap();
        assert_eq!(Trajectory::read_csv(&p).unwrap(), t);
    }

    #[test]
    fn rejects_ragged_buffers() {
        assert!(Trajectory::new(1, 1, 1, 1.0, vec![0.0; 3], vec![0.0; 2], vec![0.0; 3]).is_err());
    }
}
