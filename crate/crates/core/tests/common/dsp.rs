//! Independent DSP oracles, shared by the core tests and the acceptance suite.

#![allow(dead_code)]

use std::f64::consts::PI;

use auscult_core::audio_io::AudioClip;
use auscult_core::preprocess::{design_butterworth_lowpass, zero_phase_filter};
use auscult_core::spectrogram::{hz_to_mel, StftEngine, StftParams, WindowKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest allowed gap between designed and analytic `|H|^2`, as a fraction of unity gain.
pub const BUTTER_TOL: f64 = 0.02;
pub const PARSEVAL_REL_TOL: f64 = 1e-6;
pub const BIN_ENERGY_FRACTION: f64 = 0.95;

/// Designed `|H(f)|^2` against `1 / (1 + (f/fc)^(2n))` at 10 log-spaced
/// frequencies between `fc/10` and `5 fc`, orders 2-8. Returns the worst gap.
pub fn butterworth_vs_analytic() -> Result<f64, String> {
    let (fs, fc) = (4000.0, 195.0);
    let mut worst = 0.0f64;
    for order in 2..=8 {
        let c = design_butterworth_lowpass(order, fc, fs).map_err(|e| e.to_string())?;
        for i in 0..10 {
            let f = 0.1 * fc * 50f64.powf(i as f64 / 9.0);
            let analytic = 1.0 / (1.0 + (f / fc).powi(2 * order as i32));
            let designed = c.magnitude_at(f).powi(2);
            let gap = (designed - analytic).abs();
            worst = worst.max(gap);
            if gap > BUTTER_TOL {
                return Err(format!("order {order} at {f:.1} Hz: {designed} vs {analytic}"));
            }
        }
    }
    Ok(worst)
}

fn white(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Lag in `[-max_lag, max_lag]` maximising the cross-correlation of `x` and `y`.
pub fn peak_lag(x: &[f64], y: &[f64], max_lag: i64) -> i64 {
    let n = x.len() as i64;
    (-max_lag..=max_lag)
        .map(|lag| {
            let s: f64 =
                (0..n).filter(|&i| (0..n).contains(&(i + lag))).map(|i| x[i as usize] * y[(i + lag) as usize]).sum();
            (lag, s)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|p| p.0)
        .unwrap_or(0)
}

/// Zero-phase filtering of random noise clips with random designs must leave
/// the input/output cross-correlation peaked at lag 0.
pub fn zero_phase_lag(n_clips: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for k in 0..n_clips {
        let order = rng.gen_range(2..=8);
        let fc = rng.gen_range(100.0..600.0);
        let len = rng.gen_range(1000..3000);
        let clip = AudioClip::new(white(&mut rng, len), 4000).map_err(|e| e.to_string())?;
        let c = design_butterworth_lowpass(order, fc, 4000.0).map_err(|e| e.to_string())?;
        let y = zero_phase_filter(&c, &clip).map_err(|e| e.to_string())?;
        let lag = peak_lag(clip.samples(), y.samples(), 40);
        if lag != 0 {
            return Err(format!("clip {k} (order {order}, fc {fc:.0}): peak lag {lag}"));
        }
    }
    Ok(())
}

/// One-sided per-frame Parseval identity for random clips and random STFT sizes.
pub fn parseval(n_clips: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..n_clips {
        let win = rng.gen_range(16..300);
        let fft = win + rng.gen_range(0..64);
        let hop = rng.gen_range(1..=win);
        let window = if rng.gen_bool(0.5) { WindowKind::Hann } else { WindowKind::Rectangular };
        let params = StftParams { window_len: win, hop_len: hop, fft_len: fft, window };
        let engine = StftEngine::new(params).map_err(|e| e.to_string())?;
        let len = win + rng.gen_range(0..2000);
        let x = white(&mut rng, len);
        let spec = engine.stft(&x).map_err(|e| e.to_string())?;
        let w = engine.window();
        for t in 0..spec.ncols() {
            let frame = &x[t * hop..t * hop + win];
            let time: f64 = frame.iter().zip(w).map(|(a, b)| (a * b).powi(2)).sum::<f64>() * fft as f64;
            let mut freq = 0.0;
            for k in 0..spec.nrows() {
                let p = spec[[k, t]].norm_sqr();
                let mirrored = k != 0 && !(fft % 2 == 0 && k == fft / 2);
                freq += if mirrored { 2.0 * p } else { p };
            }
            let rel = (freq - time).abs() / time;
            worst = worst.max(rel);
            if rel > PARSEVAL_REL_TOL {
                return Err(format!("frame {t} (win {win}, fft {fft}): relative error {rel:e}"));
            }
        }
    }
    Ok(worst)
}

/// A sinusoid exactly on bin `k` of a rectangular-window frame puts all its
/// energy into that bin. Returns the smallest per-frame fraction seen.
pub fn bin_centred_energy() -> Result<f64, String> {
    let params = StftParams { window: WindowKind::Rectangular, ..StftParams::default() };
    let engine = StftEngine::new(params).map_err(|e| e.to_string())?;
    let sr = 4000.0;
    let mut worst = 1.0f64;
    for k in [5usize, 20, 37, 90] {
        let f = k as f64 * sr / params.fft_len as f64;
        let x: Vec<f64> = (0..12000).map(|i| (2.0 * PI * f * i as f64 / sr + 0.3).sin()).collect();
        let spec = engine.stft(&x).map_err(|e| e.to_string())?;
        for t in 0..spec.ncols() {
            let total: f64 = spec.column(t).iter().map(|c| c.norm_sqr()).sum();
            let frac = spec[[k, t]].norm_sqr() / total;
            worst = worst.min(frac);
            if frac < BIN_ENERGY_FRACTION {
                return Err(format!("bin {k} frame {t}: fraction {frac}"));
            }
        }
    }
    Ok(worst)
}

pub fn mel_of_1000() -> f64 {
    hz_to_mel(1000.0)
}

pub fn frames_for_3s_at_4000() -> Result<usize, String> {
    let engine = StftEngine::new(StftParams::default()).map_err(|e| e.to_string())?;
    let spec = engine.stft(&vec![0.1; 12000]).map_err(|e| e.to_string())?;
    Ok(spec.ncols())
}
