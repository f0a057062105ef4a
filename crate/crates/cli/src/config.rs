//! Flat `key = value` pipeline configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error. Every value is checked against the preconditions of the stage that
//! consumes it when the configuration is loaded, before any output exists.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use auscult_core::dataset::{ClassWeightMode, DatasetId};
use auscult_core::model::{Arch, OptimizerKind, TrainConfig};
use auscult_core::preprocess::{DEFAULT_CHUNK_SECONDS, DEFAULT_CUTOFF_HZ, DEFAULT_ORDER};
use auscult_core::spectrogram::{ColorMode, MelConfig, StftParams, WindowKind, DEFAULT_FMAX, DEFAULT_N_MELS, FLOOR_DB};
use auscult_core::SpecAugmentParams;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("config key {key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("cannot read config {path}: {reason}")]
    Read { path: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), reason: reason.into() }
}

/// Every stage setting in one place.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub dataset: DatasetId,
    pub seed: u64,
    pub decimation_factor: usize,
    pub cutoff_hz: f64,
    pub filter_order: usize,
    pub chunk_seconds: f64,
    pub stft: StftParams,
    pub n_mels: usize,
    pub fmax: f64,
    pub color: ColorMode,
    pub audio_augment: bool,
    pub pitch_semitones: f64,
    pub time_shift_seconds: f64,
    pub specaugment: SpecAugmentParams,
    pub class_weights: ClassWeightMode,
    /// Class whose training items are thinned, with the dropped fraction.
    pub downsample: Option<(String, f64)>,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub plateau_patience: usize,
    pub plateau_factor: f64,
    pub plateau_min_delta: f64,
    pub conv_channels: Vec<usize>,
    pub dense_width: usize,
}

impl PipelineConfig {
    /// Defaults for one dataset: A is decimated by 10, thinned on `artifact`
    /// and audio-augmented; B is used as recorded.
    pub fn defaults(dataset: DatasetId) -> Self {
        let a = dataset == DatasetId::A;
        let arch = Arch::standard(dataset.n_classes(), 0.35);
        let train = TrainConfig::default();
        Self {
            dataset,
            seed: 42,
            decimation_factor: if a { 10 } else { 1 },
            cutoff_hz: DEFAULT_CUTOFF_HZ,
            filter_order: DEFAULT_ORDER,
            chunk_seconds: DEFAULT_CHUNK_SECONDS,
            stft: StftParams::default(),
            n_mels: DEFAULT_N_MELS,
            fmax: DEFAULT_FMAX,
            color: ColorMode::Gray,
            audio_augment: a,
            pitch_semitones: -1.0,
            time_shift_seconds: 1.0,
            specaugment: SpecAugmentParams::default(),
            class_weights: ClassWeightMode::default(),
            downsample: a.then(|| ("artifact".to_string(), 0.5)),
            optimizer: train.optimizer,
            lr: train.base_lr,
            momentum: train.momentum,
            epochs: train.epochs,
            batch_size: train.batch_size,
            dropout: arch.dropout,
            plateau_patience: train.plateau_patience,
            plateau_factor: train.plateau_factor,
            plateau_min_delta: train.plateau_min_delta,
            conv_channels: arch.conv_channels,
            dense_width: arch.dense_width,
        }
    }

    /// Parses config text. `dataset` is read first so that the remaining keys
    /// override that dataset's defaults; it falls back to `fallback`.
    pub fn parse(text: &str, fallback: DatasetId) -> Result<Self, ConfigError> {
        let pairs = parse_pairs(text)?;
        let dataset = match pairs.iter().find(|(k, _)| k == "dataset") {
            Some((_, v)) => v.parse().map_err(|_| invalid("dataset", format!("{v:?} is not A or B")))?,
            None => fallback,
        };
        let mut cfg = Self::defaults(dataset);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, fallback: DatasetId) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Read { path: path.display().to_string(), reason: e.to_string() })?;
        Self::parse(&text, fallback)
    }

    /// Applies one `key = value` assignment without validating the whole config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key {
            "dataset" => {
                let d: DatasetId = v.parse().map_err(|_| invalid(key, format!("{v:?} is not A or B")))?;
                if d != self.dataset {
                    let keep = std::mem::replace(self, Self::defaults(d));
                    self.seed = keep.seed;
                }
            }
            "seed" => self.seed = num(key, v)?,
            "decimation_factor" => self.decimation_factor = num(key, v)?,
            "cutoff_hz" => self.cutoff_hz = num(key, v)?,
            "filter_order" => self.filter_order = num(key, v)?,
            "chunk_seconds" => self.chunk_seconds = num(key, v)?,
            "window_len" => self.stft.window_len = num(key, v)?,
            "hop_len" => self.stft.hop_len = num(key, v)?,
            "fft_len" => self.stft.fft_len = num(key, v)?,
            "window" => {
                self.stft.window = match v {
                    "hann" => WindowKind::Hann,
                    "rectangular" => WindowKind::Rectangular,
                    _ => return Err(invalid(key, format!("{v:?} is not hann or rectangular"))),
                }
            }
            "n_mels" => self.n_mels = num(key, v)?,
            "fmax" => self.fmax = num(key, v)?,
            "color" => {
                self.color = match v {
                    "gray" => ColorMode::Gray,
                    "viridis" => ColorMode::Viridis,
                    _ => return Err(invalid(key, format!("{v:?} is not gray or viridis"))),
                }
            }
            "audio_augment" => self.audio_augment = boolean(key, v)?,
            "pitch_semitones" => self.pitch_semitones = num(key, v)?,
            "time_shift_seconds" => self.time_shift_seconds = num(key, v)?,
            "warp_w" => self.specaugment.warp_w = num(key, v)?,
            "freq_mask_f" => self.specaugment.freq_mask_f = num(key, v)?,
            "time_mask_t" => self.specaugment.time_mask_t = num(key, v)?,
            "n_freq_masks" => self.specaugment.n_freq_masks = num(key, v)?,
            "n_time_masks" => self.specaugment.n_time_masks = num(key, v)?,
            "mask_fill_db" => self.specaugment.fill = num(key, v)?,
            "class_weights" => {
                self.class_weights = v.parse().map_err(|_| invalid(key, format!("unknown mode {v:?}")))?
            }
            "downsample" => {
                self.downsample = if v == "none" {
                    None
                } else {
                    let (class, frac) =
                        v.split_once(':').ok_or_else(|| invalid(key, "expected `class:fraction` or `none`"))?;
                    Some((class.trim().to_string(), num(key, frac.trim())?))
                }
            }
            "optimizer" => self.optimizer = v.parse().map_err(|_| invalid(key, format!("unknown optimizer {v:?}")))?,
            "lr" => self.lr = num(key, v)?,
            "momentum" => self.momentum = num(key, v)?,
            "epochs" => self.epochs = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "dropout" => self.dropout = num(key, v)?,
            "plateau_patience" => self.plateau_patience = num(key, v)?,
            "plateau_factor" => self.plateau_factor = num(key, v)?,
            "plateau_min_delta" => self.plateau_min_delta = num(key, v)?,
            "conv_channels" => {
                self.conv_channels = v.split(',').map(|c| num(key, c.trim())).collect::<Result<_, _>>()?
            }
            "dense_width" => self.dense_width = num(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Applies `key=value` overrides in order, then revalidates.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<(), ConfigError> {
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Syntax { line: 0, text: o.clone() })?;
            self.set(k.trim(), v)?;
        }
        self.validate()
    }

    pub fn mel_config(&self) -> MelConfig {
        MelConfig { stft: self.stft, n_mels: self.n_mels, fmax: self.fmax }
    }

    pub fn arch(&self) -> Arch {
        Arch {
            conv_channels: self.conv_channels.clone(),
            dense_width: self.dense_width,
            ..Arch::standard(self.dataset.n_classes(), self.dropout)
        }
    }

    pub fn train_config(&self, class_weights: Vec<f64>) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            base_lr: self.lr,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            plateau_patience: self.plateau_patience,
            plateau_factor: self.plateau_factor,
            plateau_min_delta: self.plateau_min_delta,
            class_weights,
            seed: self.seed,
        }
    }

    /// Spectrogram frames in one chunk at the given input sample rate.
    pub fn frames_per_chunk(&self, input_rate: u32) -> usize {
        let rate = input_rate as f64 / self.decimation_factor as f64;
        self.stft.n_frames((self.chunk_seconds * rate).round() as usize)
    }

    /// Checks the settings that depend on the audio's sample rate.
    pub fn validate_for_rate(&self, input_rate: u32) -> Result<(), ConfigError> {
        if !(input_rate as usize).is_multiple_of(self.decimation_factor) {
            return Err(invalid(
                "decimation_factor",
                format!("{} does not divide the {input_rate} Hz input rate", self.decimation_factor),
            ));
        }
        let rate = input_rate as f64 / self.decimation_factor as f64;
        if self.cutoff_hz >= rate / 2.0 {
            return Err(invalid("cutoff_hz", format!("{} must be below Nyquist {}", self.cutoff_hz, rate / 2.0)));
        }
        auscult_core::spectrogram::mel_filterbank(self.n_mels, self.stft.fft_len, rate, self.fmax)
            .map_err(|e| invalid("n_mels", e.to_string()))?;
        let frames = self.frames_per_chunk(input_rate);
        if frames <= 2 * self.specaugment.warp_w {
            return Err(invalid(
                "warp_w",
                format!("2 * {} must be below the {frames} frames per chunk", self.specaugment.warp_w),
            ));
        }
        if self.specaugment.n_time_masks > 0 && self.specaugment.time_mask_t >= frames {
            return Err(invalid("time_mask_t", format!("must be below the {frames} frames per chunk")));
        }
        if self.audio_augment && self.time_shift_seconds.abs() > self.chunk_seconds {
            return Err(invalid("time_shift_seconds", "longer than a chunk"));
        }
        Ok(())
    }

    /// Checks the rate-independent preconditions of every stage.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.decimation_factor == 0 {
            return Err(invalid("decimation_factor", "must be at least 1"));
        }
        if !(self.cutoff_hz > 0.0 && self.cutoff_hz.is_finite()) {
            return Err(invalid("cutoff_hz", "must be positive"));
        }
        if !(1..=12).contains(&self.filter_order) {
            return Err(invalid("filter_order", "must be in 1..=12"));
        }
        if !(self.chunk_seconds > 0.0 && self.chunk_seconds.is_finite()) {
            return Err(invalid("chunk_seconds", "must be positive"));
        }
        self.stft.validate().map_err(|e| invalid("window_len/hop_len/fft_len", e.to_string()))?;
        if self.n_mels < 2 {
            return Err(invalid("n_mels", "must be at least 2"));
        }
        if !(self.fmax > 0.0 && self.fmax.is_finite()) {
            return Err(invalid("fmax", "must be positive"));
        }
        if !self.pitch_semitones.is_finite() || !self.time_shift_seconds.is_finite() {
            return Err(invalid("pitch_semitones/time_shift_seconds", "must be finite"));
        }
        let sa = &self.specaugment;
        if sa.freq_mask_f >= self.n_mels {
            return Err(invalid("freq_mask_f", format!("{} must be below n_mels {}", sa.freq_mask_f, self.n_mels)));
        }
        if !(FLOOR_DB..=0.0).contains(&sa.fill) {
            return Err(invalid("mask_fill_db", format!("must lie in [{FLOOR_DB}, 0]")));
        }
        if let Some((class, frac)) = &self.downsample {
            self.dataset.class_index(class).map_err(|e| invalid("downsample", e.to_string()))?;
            if !(0.0..1.0).contains(frac) {
                return Err(invalid("downsample", format!("fraction {frac} outside [0, 1)")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("dropout", format!("{} outside [0, 1)", self.dropout)));
        }
        self.arch().validate().map_err(|e| invalid("conv_channels/dense_width", e.to_string()))?;
        self.train_config(Vec::new()).validate(self.dataset.n_classes()).map_err(|e| match e {
            auscult_core::Error::InvalidParameter { name, reason } => invalid(&config_key(name), reason),
            other => invalid("train", other.to_string()),
        })?;
        Ok(())
    }

    /// Canonical key-value text; parsing it reproduces this config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_map() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn to_map(&self) -> BTreeMap<&'static str, String> {
        let sa = &self.specaugment;
        let window = match self.stft.window {
            WindowKind::Hann => "hann",
            WindowKind::Rectangular => "rectangular",
        };
        let color = match self.color {
            ColorMode::Gray => "gray",
            ColorMode::Viridis => "viridis",
        };
        let channels: Vec<String> = self.conv_channels.iter().map(usize::to_string).collect();
        BTreeMap::from([
            ("dataset", self.dataset.to_string()),
            ("seed", self.seed.to_string()),
            ("decimation_factor", self.decimation_factor.to_string()),
            ("cutoff_hz", self.cutoff_hz.to_string()),
            ("filter_order", self.filter_order.to_string()),
            ("chunk_seconds", self.chunk_seconds.to_string()),
            ("window_len", self.stft.window_len.to_string()),
            ("hop_len", self.stft.hop_len.to_string()),
            ("fft_len", self.stft.fft_len.to_string()),
            ("window", window.to_string()),
            ("n_mels", self.n_mels.to_string()),
            ("fmax", self.fmax.to_string()),
            ("color", color.to_string()),
            ("audio_augment", self.audio_augment.to_string()),
            ("pitch_semitones", self.pitch_semitones.to_string()),
            ("time_shift_seconds", self.time_shift_seconds.to_string()),
            ("warp_w", sa.warp_w.to_string()),
            ("freq_mask_f", sa.freq_mask_f.to_string()),
            ("time_mask_t", sa.time_mask_t.to_string()),
            ("n_freq_masks", sa.n_freq_masks.to_string()),
            ("n_time_masks", sa.n_time_masks.to_string()),
            ("mask_fill_db", sa.fill.to_string()),
            ("class_weights", self.class_weights.to_string()),
            (
                "downsample",
                match &self.downsample {
                    Some((c, f)) => format!("{c}:{f}"),
                    None => "none".to_string(),
                },
            ),
            ("optimizer", self.optimizer.to_string()),
            ("lr", self.lr.to_string()),
            ("momentum", self.momentum.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("dropout", self.dropout.to_string()),
            ("plateau_patience", self.plateau_patience.to_string()),
            ("plateau_factor", self.plateau_factor.to_string()),
            ("plateau_min_delta", self.plateau_min_delta.to_string()),
            ("conv_channels", channels.join(",")),
            ("dense_width", self.dense_width.to_string()),
        ])
    }
}

fn config_key(train_field: &str) -> String {
    match train_field {
        "base_lr" => "lr".to_string(),
        other => other.to_string(),
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| invalid(key, format!("cannot parse {v:?}")))
}

fn boolean(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(invalid(key, format!("{v:?} is not a boolean"))),
    }
}

fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.to_string() })?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}
