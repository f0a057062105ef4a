//! WAV decoding/encoding and integer-factor decimation.
//!
//! Clips are always mono `f64` samples in the nominal range `[-1, 1]`.
//! Multi-channel files are averaged down to one channel on read.

use std::path::Path;

use crate::error::{Error, Result};
use crate::preprocess::{design_butterworth_lowpass, zero_phase_filter};

/// Order of the anti-alias low-pass applied before sample dropping.
pub const DECIMATION_FILTER_ORDER: usize = 8;
/// Anti-alias cutoff as a fraction of the post-decimation Nyquist frequency.
pub const DECIMATION_CUTOFF_RATIO: f64 = 0.9;

/// A mono audio clip.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
    /// Class label, if known.
    pub label: Option<String>,
    /// Provenance string; chunking appends `_<index>`.
    pub source_id: String,
}

impl AudioClip {
    /// Builds a clip, rejecting a zero sample rate and non-finite samples.
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::param("sample_rate", "must be > 0"));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("sample {i} of clip")));
        }
        Ok(Self { samples, sample_rate, label: None, source_id: String::new() })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn with_source_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Same metadata, new samples (and possibly new rate).
    ///
    /// Samples produced by this crate's DSP are finite for finite input, so
    /// only a debug assertion guards the invariant here.
    pub(crate) fn derive(&self, samples: Vec<f64>, sample_rate: u32) -> Self {
        debug_assert!(samples.iter().all(|s| s.is_finite()));
        Self { samples, sample_rate, label: self.label.clone(), source_id: self.source_id.clone() }
    }
}

fn map_hound_error(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::Unsupported => Error::UnsupportedCodec {
            path: path.to_owned(),
            reason: "only integer PCM and 32-bit float are supported".into(),
        },
        hound::Error::InvalidSampleFormat => {
            Error::UnsupportedCodec { path: path.to_owned(), reason: "invalid sample format".into() }
        }
        hound::Error::TooWide => {
            Error::UnsupportedCodec { path: path.to_owned(), reason: "sample width above 32 bits".into() }
        }
        hound::Error::FormatError(msg) => Error::MalformedWav { path: path.to_owned(), reason: msg.to_string() },
        hound::Error::UnfinishedSample => {
            Error::MalformedWav { path: path.to_owned(), reason: "truncated sample data".into() }
        }
        hound::Error::IoError(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
            Error::MalformedWav { path: path.to_owned(), reason: "unexpected end of file".into() }
        }
        hound::Error::IoError(e) => Error::io(path, e),
    }
}

/// Reads a PCM WAV file (8/16/24/32-bit integer or 32-bit float) as a mono clip.
///
/// Integer samples are divided by `2^(bits-1)`; channels are averaged.
/// The clip's `source_id` is the file stem.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioClip> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_owned()));
    }
    let reader = hound::WavReader::open(path).map_err(|e| map_hound_error(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;

    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::UnsupportedCodec {
                    path: path.to_owned(),
                    reason: format!("{}-bit float", spec.bits_per_sample),
                });
            }
            reader
                .into_samples::<f32>()
                .map(|s| s.map(f64::from))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| map_hound_error(path, e))?
        }
        hound::SampleFormat::Int => {
            let full_scale = (1u64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / full_scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| map_hound_error(path, e))?
        }
    };

    let mono: Vec<f64> =
        interleaved.chunks_exact(channels).map(|frame| frame.iter().sum::<f64>() / channels as f64).collect();

    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(AudioClip::new(mono, spec.sample_rate)?.with_source_id(stem))
}

/// Writes a clip as 16-bit PCM mono. Returns the number of samples whose
/// magnitude exceeded 1.0 and were stored at full scale.
pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound_error(path, e))?;
    let mut clipped = 0usize;
    for &s in &clip.samples {
        if s.abs() > 1.0 {
            clipped += 1;
        }
        let q = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| map_hound_error(path, e))?;
    }
    writer.finalize().map_err(|e| map_hound_error(path, e))?;
    if clipped > 0 {
        log::warn!("{}: {clipped} samples clipped to full scale", path.display());
    }
    Ok(clipped)
}

/// Low-pass filters at 0.9 of the new Nyquist frequency, then keeps every
/// `factor`-th sample.
pub fn decimate(clip: &AudioClip, factor: usize) -> Result<AudioClip> {
    if factor == 0 {
        return Err(Error::param("factor", "must be >= 1"));
    }
    if factor == 1 {
        return Ok(clip.clone());
    }
    if factor > clip.len() {
        return Err(Error::param("factor", format!("{factor} exceeds clip length {}", clip.len())));
    }
    if !(clip.sample_rate as usize).is_multiple_of(factor) {
        return Err(Error::param("factor", format!("{} Hz is not divisible by {factor}", clip.sample_rate)));
    }
    let new_rate = clip.sample_rate / factor as u32;
    let cutoff = DECIMATION_CUTOFF_RATIO * new_rate as f64 / 2.0;
    let coeffs = design_butterworth_lowpass(DECIMATION_FILTER_ORDER, cutoff, clip.sample_rate as f64)?;
    let filtered = zero_phase_filter(&coeffs, clip)?;
    let n_out = clip.len() / factor;
    let samples = filtered.samples.iter().step_by(factor).take(n_out).copied().collect();
    Ok(clip.derive(samples, new_rate))
}
