//! Heart-sound classification pipeline: WAV I/O, Butterworth denoising,
//! segmentation, waveform and spectrogram augmentation, mel-spectrogram
//! imaging, a compact CNN and evaluation metrics.

pub mod audio_io;
pub mod augment_audio;
pub mod dataset;
pub mod error;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod specaugment;
pub mod spectrogram;

pub use audio_io::{read_wav, write_wav, AudioClip};
pub use dataset::{ClassWeightMode, DatasetId, DatasetSplit, Item, Manifest, ManifestEntry};
pub use error::{Error, Result};
pub use metrics::{ConfusionMatrix, EvaluationReport};
pub use model::{Arch, ModelState, TrainConfig, TrainHistory};
pub use preprocess::FilterCoefficients;
pub use specaugment::SpecAugmentParams;
pub use spectrogram::{ColorMode, MelConfig, MelSpectrogram, SpectroImage, StftParams};
