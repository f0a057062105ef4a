//! Waveform augmentation: phase-vocoder pitch shift and circular time shift.

use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;

use crate::audio_io::AudioClip;
use crate::error::{Error, Result};
use crate::spectrogram::{StftEngine, StftParams, WindowKind};

pub const VOCODER_WINDOW: usize = 200;
pub const VOCODER_HOP: usize = 50;

/// Default pitch step (one half step down).
pub const DEFAULT_PITCH_SEMITONES: f64 = -1.0;
/// Default circular right shift.
pub const DEFAULT_TIME_SHIFT_SECONDS: f64 = 1.0;

fn vocoder_engine() -> StftEngine {
    StftEngine::new(StftParams {
        window_len: VOCODER_WINDOW,
        hop_len: VOCODER_HOP,
        fft_len: VOCODER_WINDOW,
        window: WindowKind::Hann,
    })
    .expect("static vocoder parameters are valid")
}

/// Local maxima of a magnitude spectrum, ascending.
fn spectral_peaks(mags: &[f64]) -> Vec<usize> {
    let n = mags.len();
    (0..n)
        .filter(|&k| {
            let m = mags[k];
            m > 0.0 && (k == 0 || m >= mags[k - 1]) && (k + 1 == n || m > mags[k + 1])
        })
        .collect()
}

fn principal_angle(x: f64) -> f64 {
    x - 2.0 * PI * (x / (2.0 * PI)).round()
}

/// Phase-vocoder time stretch. `rate > 1` shortens the signal; the output has
/// `round(len / rate)` samples and the same pitch.
pub fn time_stretch(x: &[f64], rate: f64) -> Result<Vec<f64>> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(Error::param("rate", "must be positive"));
    }
    if x.len() < 4 * VOCODER_WINDOW {
        return Err(Error::TooShort(format!(
            "phase vocoder needs at least {} samples, got {}",
            4 * VOCODER_WINDOW,
            x.len()
        )));
    }
    let engine = vocoder_engine();
    let pad = VOCODER_WINDOW / 2;
    let n = x.len();
    // Reflect-pad so the first and last samples sit at frame centres.
    let mut padded = Vec::with_capacity(n + 2 * pad);
    padded.extend((1..=pad).rev().map(|i| x[i]));
    padded.extend_from_slice(x);
    padded.extend((1..=pad).map(|i| x[n - 1 - i]));

    let spec = engine.stft(&padded)?;
    let (n_bins, n_frames) = spec.dim();
    let advance: Vec<f64> = (0..n_bins).map(|k| 2.0 * PI * (k * VOCODER_HOP) as f64 / VOCODER_WINDOW as f64).collect();

    let steps: Vec<f64> = (0..).map(|i| i as f64 * rate).take_while(|&t| t < n_frames as f64).collect();
    let column = |t: usize, k: usize| {
        if t < n_frames {
            spec[[k, t]]
        } else {
            Complex64::new(0.0, 0.0)
        }
    };

    // Phases are accumulated per bin and then locked to the nearest spectral
    // peak, so bins belonging to one partial stay mutually coherent.
    let mut phase: Vec<f64> = (0..n_bins).map(|k| spec[[k, 0]].arg()).collect();
    let mut out = Array2::zeros((n_bins, steps.len()));
    let mut mags = vec![0.0; n_bins];
    let mut synth = vec![0.0; n_bins];
    for (i, &t) in steps.iter().enumerate() {
        let t0 = t.floor() as usize;
        let alpha = t - t0 as f64;
        let reference = if alpha < 0.5 || t0 + 1 >= n_frames { t0 } else { t0 + 1 };
        for (k, m) in mags.iter_mut().enumerate() {
            *m = (1.0 - alpha) * column(t0, k).norm() + alpha * column(t0 + 1, k).norm();
        }
        let peaks = spectral_peaks(&mags);
        if peaks.is_empty() {
            synth.copy_from_slice(&phase);
        } else {
            let mut nearest = 0;
            for k in 0..n_bins {
                while nearest + 1 < peaks.len() && peaks[nearest + 1].abs_diff(k) < peaks[nearest].abs_diff(k) {
                    nearest += 1;
                }
                let p = peaks[nearest];
                synth[k] = phase[p] + spec[[k, reference]].arg() - spec[[p, reference]].arg();
            }
        }
        for k in 0..n_bins {
            out[[k, i]] = Complex64::from_polar(mags[k], synth[k]);
            let c0 = column(t0, k);
            let c1 = column(t0 + 1, k);
            let dphi = principal_angle(c1.arg() - c0.arg() - advance[k]);
            phase[k] = synth[k] + advance[k] + dphi;
        }
    }

    let target = (n as f64 / rate).round() as usize;
    let full = engine.istft(&out, pad + target);
    Ok(full[pad..].to_vec())
}

/// Linear-interpolation resampling of `x` to exactly `len` samples; output
/// sample `i` reads input position `i * x.len() / len`.
fn resample_linear(x: &[f64], len: usize) -> Vec<f64> {
    if x.is_empty() || len == 0 {
        return vec![0.0; len];
    }
    let scale = x.len() as f64 / len as f64;
    let last = x.len() - 1;
    (0..len)
        .map(|i| {
            let pos = i as f64 * scale;
            let i0 = (pos.floor() as usize).min(last);
            let i1 = (i0 + 1).min(last);
            let frac = pos - i0 as f64;
            x[i0] * (1.0 - frac) + x[i1] * frac
        })
        .collect()
}

/// Scales every frequency by `2^(semitones/12)` while keeping the duration:
/// time-stretch by rate `2^(-semitones/12)`, then resample back to the input length.
pub fn pitch_shift(clip: &AudioClip, semitones: f64) -> Result<AudioClip> {
    if !semitones.is_finite() {
        return Err(Error::param("semitones", "must be finite"));
    }
    let rate = 2f64.powf(-semitones / 12.0);
    let stretched = time_stretch(clip.samples(), rate)?;
    let shifted = resample_linear(&stretched, clip.len());
    Ok(clip.derive(shifted, clip.sample_rate()))
}

/// Circular right rotation by `round(shift_seconds * sample_rate)` samples.
/// Negative shifts rotate left.
pub fn time_shift(clip: &AudioClip, shift_seconds: f64) -> Result<AudioClip> {
    if !shift_seconds.is_finite() {
        return Err(Error::param("shift_seconds", "must be finite"));
    }
    let shift = (shift_seconds * clip.sample_rate() as f64).round();
    if shift.abs() > clip.len() as f64 {
        return Err(Error::param("shift_seconds", format!("{shift} samples exceeds clip length {}", clip.len())));
    }
    let mut samples = clip.samples().to_vec();
    if !samples.is_empty() {
        let k = (shift as i64).rem_euclid(samples.len() as i64) as usize;
        samples.rotate_right(k);
    }
    Ok(clip.derive(samples, clip.sample_rate()))
}
