use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PhaseSchedule {
    #[default]
    Random,
    Schroeder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultisineSpec {
    pub length: usize,
    pub ts: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub harmonics: usize,
    pub peak: f64,
    #[serde(default)]
    pub spacing: Spacing,
    #[serde(default)]
    pub phases: PhaseSchedule,
}

/// FFT bins (cycles per `length` samples) of the multisine components. Each
/// requested frequency is rounded to the nearest bin; collisions move to the
/// next free bin so every harmonic stays distinct.
pub fn multisine_bins(spec: &MultisineSpec) -> Result<Vec<usize>> {
    let nyq = spec.length / 2;
    let to_bin = |f: f64| (f * spec.length as f64 * spec.ts).round() as usize;
    let lo = to_bin(spec.f_min).max(1);
    let hi = to_bin(spec.f_max).min(nyq.saturating_sub(1));
    if spec.harmonics == 0 || hi < lo || hi - lo + 1 < spec.harmonics {
        return Err(Error::Config(format!(
            "{} harmonics do not fit between bins {lo} and {hi}",
            spec.harmonics
        )));
    }
    let h = spec.harmonics;
    let mut bins = Vec::with_capacity(h);
    for i in 0..h {
        let frac = if h == 1 { 0.0 } else { i as f64 / (h - 1) as f64 };
        let b = match spec.spacing {
            Spacing::Linear => lo as f64 + frac * (hi - lo) as f64,
            Spacing::Log => (lo as f64).ln() + frac * ((hi as f64).ln() - (lo as f64).ln()),
        };
        let b = if spec.spacing == Spacing::Log { b.exp() } else { b };
        let mut b = (b.round() as usize).clamp(lo, hi);
        // Leave room for the remaining harmonics at the top of the band.
        b = b.min(hi - (h - 1 - i));
        if let Some(&last) = bins.last() {
            b = b.max(last + 1);
        }
        bins.push(b);
    }
    Ok(bins)
}

/// Sum of cosines at the snapped bins, rescaled so that `max |u| = peak`.
pub fn gen_multisine(spec: &MultisineSpec, seed: u64) -> Result<Vec<f64>> {
    if spec.length < 4 || !(spec.ts > 0.0) || !(spec.peak > 0.0) {
        return Err(Error::Config("multisine needs length >= 4, ts > 0 and peak > 0".into()));
    }
    let bins = multisine_bins(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = bins.len() as f64;
    let phases: Vec<f64> = (0..bins.len())
        .map(|i| match spec.phases {
            PhaseSchedule::Random => rng.random_range(0.0..std::f64::consts::TAU),
            PhaseSchedule::Schroeder => -std::f64::consts::PI * (i * (i + 1)) as f64 / h,
        })
        .collect();
    let n = spec.length as f64;
    let mut u: Vec<f64> = (0..spec.length)
        .map(|k| {
            bins.iter()
                .zip(&phases)
                .map(|(&b, &p)| (std::f64::consts::TAU * b as f64 * k as f64 / n + p).cos())
                .sum()
        })
        .collect();
    let max = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return Err(Error::DegenerateSignal);
    }
    let scale = spec.peak / max;
    u.iter_mut().for_each(|v| *v *= scale);
    Ok(u)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrbsSpec {
    pub length: usize,
    pub ts: f64,
    pub levels: Vec<f64>,
    /// Upper bound on switches per second.
    pub max_switch_freq: f64,
}

/// Minimum hold in samples for a switching-rate bound.
pub fn prbs_min_hold(spec: &PrbsSpec) -> usize {
    ((1.0 / (spec.max_switch_freq * spec.ts)) - 1e-9).ceil().max(1.0) as usize
}

/// Piecewise-constant signal over `levels`; a new level is drawn only at
/// multiples of the minimum hold.
pub fn gen_prbs_multilevel(spec: &PrbsSpec, seed: u64) -> Result<Vec<f64>> {
    if spec.levels.is_empty() || !(spec.max_switch_freq > 0.0) || !(spec.ts > 0.0) {
        return Err(Error::Config("PRBS needs levels, ts > 0 and a positive switching frequency".into()));
    }
    let hold = prbs_min_hold(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(spec.length);
    while out.len() < spec.length {
        let v = spec.levels[rng.random_range(0..spec.levels.len())];
        let n = hold.min(spec.length - out.len());
        out.extend(std::iter::repeat_n(v, n));
    }
    Ok(out)
}

/// Piecewise-constant signal with uniform levels in `[lo, hi]` and holds of
/// `min_hold..=max_hold` samples.
pub fn gen_piecewise_constant(length: usize, lo: f64, hi: f64, min_hold: usize, max_hold: usize, seed: u64) -> Result<Vec<f64>> {
    if !(lo <= hi) || min_hold == 0 || max_hold < min_hold {
        return Err(Error::Config("piecewise-constant signal needs lo <= hi and 0 < min_hold <= max_hold".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(length);
    while out.len() < length {
        let v = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        let n = rng.random_range(min_hold..=max_hold).min(length - out.len());
        out.extend(std::iter::repeat_n(v, n));
    }
    Ok(out)
}

/// Adds white Gaussian noise to each channel of a row-major `T x channels`
/// signal so that `10 log10(P_signal / P_noise) = snr_db`, where `P` is the
/// mean square of the channel.
pub fn add_noise_snr(signal: &[f64], channels: usize, snr_db: f64, seed: u64) -> Result<Vec<f64>> {
    if channels == 0 || signal.len() % channels != 0 {
        return Err(Error::Dim("signal length is not a multiple of the channel count".into()));
    }
    let rows = signal.len() / channels;
    let mut stds = Vec::with_capacity(channels);
    for c in 0..channels {
        let p = (0..rows).map(|r| signal[r * channels + c].powi(2)).sum::<f64>() / rows.max(1) as f64;
        if !(p > 0.0) {
            return Err(Error::DegenerateSignal);
        }
        stds.push((p / 10f64.powf(snr_db / 10.0)).sqrt());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(signal
        .iter()
        .enumerate()
        .map(|(i, v)| v + stds[i % channels] * normal.sample(&mut rng))
        .collect())
}

/// Zero-mean Gaussian noise with a fixed standard deviation per channel.
pub fn gaussian_noise(rows: usize, std: &[f64], rng: &mut impl Rng) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (0..rows * std.len()).map(|i| std[i % std.len()] * normal.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(h: usize) -> MultisineSpec {
        MultisineSpec {
            length: 4096,
            ts: 0.1,
            f_min: 0.05,
            f_max: 2.0,
            harmonics: h,
            peak: 15.0,
            spacing: Spacing::Linear,
            phases: PhaseSchedule::Random,
        }
    }

    #[test]
    fn single_harmonic_is_a_sinusoid_of_peak_amplitude() {
        let u = gen_multisine(&spec(1), 3).unwrap();
        let max = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((max - 15.0).abs() < 1e-12);
        let b = multisine_bins(&spec(1)).unwrap()[0] as f64;
        // A pure tone obeys u[k+1] + u[k-1] = 2 cos(ω) u[k].
        let c = 2.0 * (std::f64::consts::TAU * b / 4096.0).cos();
        assert!(u.windows(3).all(|w| (w[2] + w[0] - c * w[1]).abs() < 1e-9));
    }

    #[test]
    fn multisine_hits_peak_and_is_seeded() {
        for spacing in [Spacing::Linear, Spacing::Log] {
            let s = MultisineSpec { spacing, harmonics: 30, ..spec(30) };
            let u = gen_multisine(&s, 11).unwrap();
            assert!((u.iter().fold(0.0f64, |m, v| m.max(v.abs())) - 15.0).abs() < 1e-12);
            assert_eq!(u, gen_multisine(&s, 11).unwrap());
            assert_ne!(u, gen_multisine(&s, 12).unwrap());
            let bins = multisine_bins(&s).unwrap();
            assert_eq!(bins.len(), 30);
            assert!(bins.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn prbs_holds_and_levels() {
        let s = PrbsSpec { length: 1000, ts: 0.04, levels: vec![3.0], max_switch_freq: 2.0 };
        assert!(gen_prbs_multilevel(&s, 1).unwrap().iter().all(|&v| v == 3.0));
        let s = PrbsSpec { levels: vec![-1.0, 1.0], ..s };
        let u = gen_prbs_multilevel(&s, 1).unwrap();
        let switches = u.windows(2).filter(|w| w[0] != w[1]).count();
        assert!(switches as f64 <= 1000.0 * 0.04 * 2.0);
        assert_eq!(u, gen_prbs_multilevel(&s, 1).unwrap());
    }

    #[test]
    fn noise_reaches_requested_snr() {
        let sig: Vec<f64> = (0..200_000).map(|k| (k as f64 * 0.01).sin() * 3.0).collect();
        let noisy = add_noise_snr(&sig, 1, 20.0, 5).unwrap();
        let ps: f64 = sig.iter().map(|v| v * v).sum();
        let pn: f64 = noisy.iter().zip(&sig).map(|(a, b)| (a - b).powi(2)).sum();
        let snr = 10.0 * (ps / pn).log10();
        assert!((snr - 20.0).abs() < 0.5, "{snr}");
        assert_eq!(noisy, add_noise_snr(&sig, 1, 20.0, 5).unwrap());
        assert!(matches!(add_noise_snr(&[0.0; 10], 1, 20.0, 1), Err(Error::DegenerateSignal)));
    }
}
