//! STFT, mel filterbank, log-power scaling and rendering to 128x128 RGB images.

use std::f64::consts::PI;
use std::io::{BufWriter, Read};
use std::path::Path;
use std::sync::Arc;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioClip;
use crate::error::{Error, Result};

/// Lower clamp of every log-power spectrogram, relative to its maximum.
pub const FLOOR_DB: f64 = -80.0;
/// Power floor before taking the logarithm.
pub const POWER_EPS: f64 = 1e-10;
/// Side length of the square classifier input.
pub const IMAGE_SIZE: usize = 128;
/// Default number of mel bands.
pub const DEFAULT_N_MELS: usize = 64;
/// Requested upper mel frequency; clamped to Nyquist.
pub const DEFAULT_FMAX: f64 = 8000.0;

static VIRIDIS: &[u8; 768] = include_bytes!("../assets/viridis.lut");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
    Rectangular,
}

impl WindowKind {
    /// Periodic window of length `n`.
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect(),
            WindowKind::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StftParams {
    pub window_len: usize,
    pub hop_len: usize,
    pub fft_len: usize,
    pub window: WindowKind,
}

impl Default for StftParams {
    fn default() -> Self {
        Self { window_len: 200, hop_len: 100, fft_len: 200, window: WindowKind::Hann }
    }
}

impl StftParams {
    pub fn validate(&self) -> Result<()> {
        if self.hop_len == 0 || self.hop_len > self.window_len || self.window_len > self.fft_len {
            return Err(Error::param(
                "stft",
                format!("need 0 < hop ({}) <= window ({}) <= fft ({})", self.hop_len, self.window_len, self.fft_len),
            ));
        }
        Ok(())
    }

    pub fn n_bins(&self) -> usize {
        self.fft_len / 2 + 1
    }

    /// `1 + floor((n - window) / hop)`, or 0 when the signal is shorter than a window.
    pub fn n_frames(&self, n_samples: usize) -> usize {
        if n_samples < self.window_len {
            0
        } else {
            1 + (n_samples - self.window_len) / self.hop_len
        }
    }
}

/// Reusable forward/inverse transform of one size.
#[derive(Clone)]
pub struct StftEngine {
    params: StftParams,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for StftEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("StftEngine").field("params", &self.params).finish()
    }
}

impl StftEngine {
    pub fn new(params: StftParams) -> Result<Self> {
        params.validate()?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            params,
            window: params.window.coefficients(params.window_len),
            forward: planner.plan_fft_forward(params.fft_len),
            inverse: planner.plan_fft_inverse(params.fft_len),
        })
    }

    pub fn params(&self) -> &StftParams {
        &self.params
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// One-sided spectrum, shape `[fft_len/2 + 1, n_frames]`.
    pub fn stft(&self, x: &[f64]) -> Result<Array2<Complex64>> {
        let p = &self.params;
        let n_frames = p.n_frames(x.len());
        if n_frames == 0 {
            return Err(Error::TooShort(format!("stft needs at least {} samples, got {}", p.window_len, x.len())));
        }
        let n_bins = p.n_bins();
        let mut out = Array2::zeros((n_bins, n_frames));
        let mut buf = vec![Complex64::new(0.0, 0.0); p.fft_len];
        for t in 0..n_frames {
            let start = t * p.hop_len;
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            for (i, (b, w)) in buf.iter_mut().zip(&self.window).enumerate() {
                b.re = x[start + i] * w;
            }
            self.forward.process(&mut buf);
            for k in 0..n_bins {
                out[[k, t]] = buf[k];
            }
        }
        Ok(out)
    }

    /// Weighted overlap-add inverse of [`StftEngine::stft`], normalized by the
    /// summed squared synthesis window. Output has `length` samples.
    pub fn istft(&self, spec: &Array2<Complex64>, length: usize) -> Vec<f64> {
        let p = &self.params;
        let n = p.fft_len;
        let n_frames = spec.ncols();
        let total = (n_frames.saturating_sub(1)) * p.hop_len + p.window_len;
        let mut out = vec![0.0; total.max(length)];
        let mut norm = vec![0.0; out.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for t in 0..n_frames {
            for k in 0..p.n_bins() {
                buf[k] = spec[[k, t]];
            }
            // Hermitian completion.
            for k in p.n_bins()..n {
                buf[k] = buf[n - k].conj();
            }
            self.inverse.process(&mut buf);
            let start = t * p.hop_len;
            for (i, w) in self.window.iter().enumerate() {
                out[start + i] += buf[i].re / n as f64 * w;
                norm[start + i] += w * w;
            }
        }
        for (o, w) in out.iter_mut().zip(&norm) {
            if *w > 1e-10 {
                *o /= w;
            }
        }
        out.truncate(length);
        out
    }
}

/// Short-time Fourier transform of a clip.
pub fn stft(clip: &AudioClip, params: StftParams) -> Result<Array2<Complex64>> {
    StftEngine::new(params)?.stft(clip.samples())
}

/// Mel scale `2595 * log10(1 + f / 700)`.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filterbank, shape `[n_mels, fft_len/2 + 1]`, peak weight 1.
///
/// Centers are equally spaced in mel between 0 and `min(fmax, sample_rate/2)`.
/// Fails when a band would contain no FFT bin, which happens once `n_mels`
/// outgrows the frequency resolution of `fft_len`.
pub fn mel_filterbank(n_mels: usize, fft_len: usize, sample_rate: f64, fmax: f64) -> Result<Array2<f64>> {
    if n_mels < 2 {
        return Err(Error::param("n_mels", "must be >= 2"));
    }
    if fft_len < 2 || sample_rate.is_nan() || sample_rate <= 0.0 || fmax.is_nan() || fmax <= 0.0 {
        return Err(Error::param("mel_filterbank", "fft_len, sample_rate and fmax must be positive"));
    }
    let fmax = fmax.min(sample_rate / 2.0);
    let n_bins = fft_len / 2 + 1;
    let top = hz_to_mel(fmax);
    let edges: Vec<f64> = (0..n_mels + 2).map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64)).collect();
    let mut fb = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let mut any = false;
        for k in 0..n_bins {
            let f = k as f64 * sample_rate / fft_len as f64;
            let w = ((f - lo) / (center - lo)).min((hi - f) / (hi - center)).max(0.0);
            if w > 0.0 {
                any = true;
            }
            fb[[m, k]] = w;
        }
        if !any {
            return Err(Error::param(
                "n_mels",
                format!(
                    "{n_mels} bands exceed the resolution of a {fft_len}-point FFT at {sample_rate} Hz \
                     (band {m} covers no bin)"
                ),
            ));
        }
    }
    Ok(fb)
}

/// `10 * log10(max(p, eps))`, shifted so the maximum is 0 dB, clamped at [`FLOOR_DB`].
pub fn power_to_db(power: &Array2<f64>) -> Result<Array2<f64>> {
    if power.is_empty() {
        return Err(Error::Empty("power matrix".into()));
    }
    if power.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::param("power", "entries must be finite and non-negative"));
    }
    let db = power.mapv(|p| 10.0 * p.max(POWER_EPS).log10());
    let top = db.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(db.mapv(|v| (v - top).max(FLOOR_DB)))
}

/// Log-power mel spectrogram, `values` shaped `[n_mels, n_frames]` in dB.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub values: Array2<f64>,
    pub fmax: f64,
    pub stft: StftParams,
    pub sample_rate: u32,
    /// Provenance, e.g. augmentation draws.
    pub tags: Vec<String>,
}

impl MelSpectrogram {
    pub fn n_mels(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    /// Same metadata with new values and one more tag.
    pub fn derive(&self, values: Array2<f64>, tag: String) -> Self {
        let mut tags = self.tags.clone();
        tags.push(tag);
        Self { values, fmax: self.fmax, stft: self.stft, sample_rate: self.sample_rate, tags }
    }

    const MAGIC: &'static [u8; 8] = b"AUSCMEL1";

    /// Raw little-endian dump, readable with [`MelSpectrogram::read_raw`].
    pub fn write_raw(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(64 + self.values.len() * 8);
        buf.extend_from_slice(Self::MAGIC);
        for v in [
            self.n_mels(),
            self.n_frames(),
            self.sample_rate as usize,
            self.stft.window_len,
            self.stft.hop_len,
            self.stft.fft_len,
        ] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        buf.push(match self.stft.window {
            WindowKind::Hann => 0,
            WindowKind::Rectangular => 1,
        });
        buf.extend_from_slice(&self.fmax.to_le_bytes());
        let tags = self.tags.join("\n");
        buf.extend_from_slice(&(tags.len() as u32).to_le_bytes());
        buf.extend_from_slice(tags.as_bytes());
        for v in self.values.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_raw(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path).and_then(|mut f| f.read_to_end(&mut bytes)).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::FileNotFound(path.to_owned())
            } else {
                Error::io(path, e)
            }
        })?;
        let bad = |what: &str| Error::Manifest(format!("{}: {what}", path.display()));
        if bytes.len() < 8 + 24 + 1 + 8 + 4 || &bytes[..8] != Self::MAGIC {
            return Err(bad("not a mel matrix file"));
        }
        let mut pos = 8;
        let u32_at = |pos: &mut usize| {
            let v = u32::from_le_bytes(bytes[*pos..*pos + 4].try_into().unwrap());
            *pos += 4;
            v as usize
        };
        let n_mels = u32_at(&mut pos);
        let n_frames = u32_at(&mut pos);
        let sample_rate = u32_at(&mut pos) as u32;
        let stft = StftParams {
            window_len: u32_at(&mut pos),
            hop_len: u32_at(&mut pos),
            fft_len: u32_at(&mut pos),
            window: match bytes[pos] {
                0 => WindowKind::Hann,
                1 => WindowKind::Rectangular,
                _ => return Err(bad("unknown window kind")),
            },
        };
        pos += 1;
        let fmax = f64::from_le_bytes(bytes[pos..pos + 8].try_into().unwrap());
        pos += 8;
        let tag_len = u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize;
        pos += 4;
        if bytes.len() != pos + tag_len + n_mels * n_frames * 8 {
            return Err(bad("truncated or oversized payload"));
        }
        let tag_str = std::str::from_utf8(&bytes[pos..pos + tag_len]).map_err(|_| bad("tags are not UTF-8"))?;
        let tags = if tag_str.is_empty() { Vec::new() } else { tag_str.split('\n').map(str::to_owned).collect() };
        pos += tag_len;
        let data: Vec<f64> = bytes[pos..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let values = Array2::from_shape_vec((n_mels, n_frames), data).map_err(|e| bad(&e.to_string()))?;
        Ok(Self { values, fmax, stft, sample_rate, tags })
    }
}

/// Everything needed to turn a clip into a mel spectrogram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub stft: StftParams,
    pub n_mels: usize,
    pub fmax: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self { stft: StftParams::default(), n_mels: DEFAULT_N_MELS, fmax: DEFAULT_FMAX }
    }
}

/// Clip-to-mel pipeline for one sample rate; the filterbank is built once.
#[derive(Debug, Clone)]
pub struct MelExtractor {
    config: MelConfig,
    sample_rate: u32,
    engine: StftEngine,
    filterbank: Array2<f64>,
}

impl MelExtractor {
    pub fn new(config: MelConfig, sample_rate: u32) -> Result<Self> {
        let engine = StftEngine::new(config.stft)?;
        let filterbank = mel_filterbank(config.n_mels, config.stft.fft_len, sample_rate as f64, config.fmax)?;
        Ok(Self { config, sample_rate, engine, filterbank })
    }

    pub fn filterbank(&self) -> &Array2<f64> {
        &self.filterbank
    }

    /// Mel-pooled squared magnitudes, `[n_mels, n_frames]`.
    pub fn mel_power(&self, clip: &AudioClip) -> Result<Array2<f64>> {
        if clip.sample_rate() != self.sample_rate {
            return Err(Error::param(
                "sample_rate",
                format!("extractor built for {} Hz, clip is {} Hz", self.sample_rate, clip.sample_rate()),
            ));
        }
        let spec = self.engine.stft(clip.samples())?;
        let power = spec.mapv(|c| c.norm_sqr());
        Ok(self.filterbank.dot(&power))
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        let values = power_to_db(&self.mel_power(clip)?)?;
        Ok(MelSpectrogram {
            values,
            fmax: self.config.fmax.min(self.sample_rate as f64 / 2.0),
            stft: self.config.stft,
            sample_rate: self.sample_rate,
            tags: Vec::new(),
        })
    }
}

/// How dB values become RGB.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorMode {
    /// Same value in all three channels.
    #[default]
    Gray,
    /// 256-entry viridis lookup table.
    Viridis,
}

/// `[128, 128, 3]` image with values in `[0, 1]`; row 0 is the highest mel band.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectroImage {
    pub pixels: Array3<f32>,
    pub provenance: String,
}

impl SpectroImage {
    /// Channel-major copy, `[3, 128, 128]` flattened.
    pub fn to_chw(&self) -> Vec<f32> {
        let (h, w, c) = self.pixels.dim();
        let mut out = vec![0.0; h * w * c];
        for ((y, x, ch), v) in self.pixels.indexed_iter() {
            out[ch * h * w + y * w + x] = *v;
        }
        out
    }

    /// 8-bit RGB bytes, `round(value * 255)` per channel.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (h, w, _) = self.pixels.dim();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        let mut writer = encoder.write_header().map_err(|e| Error::Image(e.to_string()))?;
        writer.write_image_data(&self.to_rgb8()).map_err(|e| Error::Image(e.to_string()))?;
        writer.finish().map_err(|e| Error::Image(e.to_string()))?;
        Ok(())
    }
}

/// Half-pixel-centred bilinear resize of a `[rows, cols]` matrix.
fn resize_bilinear(src: &Array2<f64>, rows: usize, cols: usize) -> Array2<f64> {
    let (sr, sc) = src.dim();
    let coord = |dst: usize, n_dst: usize, n_src: usize| {
        let s = ((dst as f64 + 0.5) * n_src as f64 / n_dst as f64 - 0.5).clamp(0.0, (n_src - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(n_src - 1);
        (i0, i1, s - i0 as f64)
    };
    let col_map: Vec<_> = (0..cols).map(|c| coord(c, cols, sc)).collect();
    Array2::from_shape_fn((rows, cols), |(r, c)| {
        let (r0, r1, fr) = coord(r, rows, sr);
        let (c0, c1, fc) = col_map[c];
        let top = src[[r0, c0]] * (1.0 - fc) + src[[r0, c1]] * fc;
        let bottom = src[[r1, c0]] * (1.0 - fc) + src[[r1, c1]] * fc;
        top * (1.0 - fr) + bottom * fr
    })
}

/// Maps `[-80, 0]` dB linearly onto `[0, 1]`, resizes to 128x128 and places
/// low frequencies at the bottom of the image.
pub fn render_image(mel: &MelSpectrogram, mode: ColorMode) -> Result<SpectroImage> {
    if mel.values.is_empty() {
        return Err(Error::Empty("mel spectrogram".into()));
    }
    let unit = mel.values.mapv(|db| ((db - FLOOR_DB) / -FLOOR_DB).clamp(0.0, 1.0));
    let resized = resize_bilinear(&unit, IMAGE_SIZE, IMAGE_SIZE);
    let mut pixels = Array3::zeros((IMAGE_SIZE, IMAGE_SIZE, 3));
    for r in 0..IMAGE_SIZE {
        let src_row = IMAGE_SIZE - 1 - r;
        for c in 0..IMAGE_SIZE {
            let v = resized[[src_row, c]];
            match mode {
                ColorMode::Gray => {
                    for ch in 0..3 {
                        pixels[[r, c, ch]] = v as f32;
                    }
                }
                ColorMode::Viridis => {
                    let idx = (v * 255.0).round() as usize;
                    for ch in 0..3 {
                        pixels[[r, c, ch]] = VIRIDIS[idx * 3 + ch] as f32 / 255.0;
                    }
                }
            }
        }
    }
    Ok(SpectroImage { pixels, provenance: mel.tags.join("+") })
}
