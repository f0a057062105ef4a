//! Butterworth low-pass design, zero-phase filtering and fixed-length segmentation.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::audio_io::AudioClip;
use crate::error::{Error, Result};

/// Default denoising cutoff.
pub const DEFAULT_CUTOFF_HZ: f64 = 195.0;
/// Default Butterworth order.
pub const DEFAULT_ORDER: usize = 4;
/// Default chunk length.
pub const DEFAULT_CHUNK_SECONDS: f64 = 3.0;

const MAX_ORDER: usize = 12;

/// One second-order section `(b0 + b1 z^-1 + b2 z^-2) / (1 + a1 z^-1 + a2 z^-2)`.
///
/// First-order sections carry `b2 = a2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct-form II state that a constant unit input settles to.
    fn steady_state(&self) -> [f64; 2] {
        let y = self.dc_gain();
        let z2 = self.b[2] - self.a[1] * y;
        let z1 = y - self.b[0];
        [z1, z2]
    }

    fn run(&self, x: &mut [f64], mut state: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + state[0];
            state[0] = b1 * input - a1 * y + state[1];
            state[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// Digital IIR low-pass coefficients.
///
/// `numerator`/`denominator` hold the expanded transfer function with
/// `denominator[0] == 1`. Filtering runs over the equivalent cascade of
/// second-order sections, which stays well conditioned at low normalized
/// cutoffs where the expanded polynomials lose precision.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoefficients {
    pub numerator: Vec<f64>,
    pub denominator: Vec<f64>,
    pub order: usize,
    pub cutoff_hz: f64,
    pub sample_rate: f64,
    sections: Vec<Biquad>,
    poles: Vec<Complex64>,
}

impl FilterCoefficients {
    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    /// Digital poles, all strictly inside the unit circle.
    pub fn poles(&self) -> &[Complex64] {
        &self.poles
    }

    /// Cutoff as a fraction of the Nyquist frequency.
    pub fn normalized_cutoff(&self) -> f64 {
        self.cutoff_hz / (self.sample_rate / 2.0)
    }

    /// `|H(e^{jw})|` at `freq_hz`, evaluated section by section.
    pub fn magnitude_at(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate;
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections
            .iter()
            .map(|s| {
                let num = s.b[0] + s.b[1] * z1 + s.b[2] * z2;
                let den = 1.0 + s.a[0] * z1 + s.a[1] * z2;
                (num / den).norm()
            })
            .product()
    }

    /// Single-pass causal filtering over the section cascade, zero initial state.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            s.run(&mut y, [0.0, 0.0]);
        }
        y
    }

    fn filter_steady(&self, x: &mut [f64]) {
        let Some(&first) = x.first() else { return };
        let mut level = first;
        for s in &self.sections {
            let [z1, z2] = s.steady_state();
            s.run(x, [z1 * level, z2 * level]);
            level *= s.dc_gain();
        }
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Designs an order-`order` digital Butterworth low-pass by prewarped
/// bilinear transform of the analog prototype.
pub fn design_butterworth_lowpass(order: usize, cutoff_hz: f64, sample_rate: f64) -> Result<FilterCoefficients> {
    if !(1..=MAX_ORDER).contains(&order) {
        return Err(Error::param("order", format!("{order} outside 1..={MAX_ORDER}")));
    }
    if !(sample_rate > 0.0 && sample_rate.is_finite()) {
        return Err(Error::param("sample_rate", "must be positive"));
    }
    let nyquist = sample_rate / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::param(
            "cutoff_hz",
            format!("{cutoff_hz} Hz must lie strictly between 0 and Nyquist {nyquist} Hz"),
        ));
    }

    let fs2 = 2.0 * sample_rate;
    let warped = fs2 * (PI * cutoff_hz / sample_rate).tan();
    let n = order as f64;
    let analog: Vec<Complex64> = (0..order)
        .map(|k| {
            let theta = PI * (2.0 * k as f64 + n + 1.0) / (2.0 * n);
            Complex64::from_polar(warped, theta)
        })
        .collect();
    let poles: Vec<Complex64> =
        analog.iter().map(|&p| (Complex64::new(fs2, 0.0) + p) / (Complex64::new(fs2, 0.0) - p)).collect();

    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for z in poles.iter().take(order / 2) {
        let a1 = -2.0 * z.re;
        let a2 = z.norm_sqr();
        let g = (1.0 + a1 + a2) / 4.0;
        sections.push(Biquad { b: [g, 2.0 * g, g], a: [a1, a2] });
    }
    if order % 2 == 1 {
        let z = poles[order / 2].re;
        let g = (1.0 - z) / 2.0;
        sections.push(Biquad { b: [g, g, 0.0], a: [-z, 0.0] });
    }

    let mut numerator = vec![1.0];
    let mut denominator = vec![1.0];
    for s in &sections {
        let (b, a): (&[f64], Vec<f64>) = if s.a[1] == 0.0 && s.b[2] == 0.0 {
            (&s.b[..2], vec![1.0, s.a[0]])
        } else {
            (&s.b[..], vec![1.0, s.a[0], s.a[1]])
        };
        numerator = poly_mul(&numerator, b);
        denominator = poly_mul(&denominator, &a);
    }

    Ok(FilterCoefficients { numerator, denominator, order, cutoff_hz, sample_rate, sections, poles })
}

/// Edge padding used by [`zero_phase_filter`].
pub fn pad_length(coeffs: &FilterCoefficients) -> usize {
    3 * (coeffs.order + 1)
}

/// Forward-backward filtering: zero group delay, magnitude response `|H|^2`.
///
/// Both ends are extended by odd reflection of `3 * (order + 1)` samples and
/// each pass starts from the steady state for its first sample, which keeps
/// start-up transients out of the interior.
pub fn zero_phase_filter(coeffs: &FilterCoefficients, clip: &AudioClip) -> Result<AudioClip> {
    let x = clip.samples();
    let pad = pad_length(coeffs);
    if x.len() <= pad {
        return Err(Error::TooShort(format!(
            "zero-phase filtering needs more than {pad} samples, clip has {}",
            x.len()
        )));
    }
    let n = x.len();
    let (first, last) = (x[0], x[n - 1]);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));

    coeffs.filter_steady(&mut ext);
    ext.reverse();
    coeffs.filter_steady(&mut ext);
    ext.reverse();

    Ok(clip.derive(ext[pad..pad + n].to_vec(), clip.sample_rate()))
}

/// Splits a clip into consecutive, disjoint chunks of exactly
/// `chunk_seconds * sample_rate` samples. The tail remainder is dropped and a
/// clip shorter than one chunk yields no chunks.
pub fn segment(clip: &AudioClip, chunk_seconds: f64) -> Result<Vec<AudioClip>> {
    if !(chunk_seconds > 0.0 && chunk_seconds.is_finite()) {
        return Err(Error::param("chunk_seconds", "must be > 0"));
    }
    let chunk_len = (chunk_seconds * clip.sample_rate() as f64).round() as usize;
    if chunk_len == 0 {
        return Err(Error::param("chunk_seconds", "shorter than one sample"));
    }
    Ok(clip
        .samples()
        .chunks_exact(chunk_len)
        .enumerate()
        .map(|(k, chunk)| {
            let mut c = clip.derive(chunk.to_vec(), clip.sample_rate());
            c.source_id = format!("{}_{k}", clip.source_id);
            c
        })
        .collect())
}
