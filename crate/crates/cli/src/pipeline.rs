//! The pipeline stages behind each subcommand. Stages talk to each other only
//! through manifest files, so each one can be run and tested on its own.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use auscult_core::augment_audio::{pitch_shift, time_shift};
use auscult_core::dataset::{
    class_counts, class_weights, downsample_class, split_dataset, split_train_val, synth_fixture, SYNTH_CATEGORIES,
};
use auscult_core::model::{load_checkpoint, predict_all, save_checkpoint, train, ModelState, SampleSource};
use auscult_core::preprocess::{design_butterworth_lowpass, segment, zero_phase_filter};
use auscult_core::spectrogram::{render_image, MelExtractor};
use auscult_core::{
    audio_io, specaugment, AudioClip, DatasetId, EvaluationReport, Item, Manifest, ManifestEntry, MelSpectrogram,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ConfigError, PipelineConfig};

pub const CHUNK_MANIFEST: &str = "chunks.csv";
pub const IMAGE_MANIFEST: &str = "images.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LAST_GOOD_FILE: &str = "last_good.ckpt";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const SPLIT_FILE: &str = "split.json";
pub const PREPROCESS_REPORT: &str = "preprocess_report.json";

/// Failures that are about the pipeline run rather than one stage's inputs.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{stage}: all {n} input files failed")]
    AllFailed { stage: &'static str, n: usize },
    #[error("manifest is for dataset {manifest} but the config is for dataset {config}")]
    DatasetMismatch { manifest: DatasetId, config: DatasetId },
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("two manifest rows share the file name {0:?}")]
    DuplicateStem(String),
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-file seed for fixture `index` of `category`.
pub fn fixture_seed(seed: u64, category: &str, index: usize) -> u64 {
    let cat = SYNTH_CATEGORIES.iter().position(|c| *c == category).unwrap_or(usize::MAX) as u64;
    splitmix(splitmix(seed ^ splitmix(cat)) ^ index as u64)
}

#[derive(Debug, Clone)]
pub struct SynthOptions {
    pub dataset: DatasetId,
    pub categories: Vec<String>,
    pub count: usize,
    pub seconds: f64,
    pub sample_rate: u32,
    pub seed: u64,
}

/// Writes `count` fixtures per category as `<category>_<index>.wav` and a manifest.
pub fn run_synth(opts: &SynthOptions, out: &Path) -> Result<Manifest> {
    if opts.count == 0 {
        bail!(ConfigError::Invalid { key: "count".into(), reason: "must be at least 1".into() });
    }
    for c in &opts.categories {
        opts.dataset.class_index(c)?;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let jobs: Vec<(String, usize)> =
        opts.categories.iter().flat_map(|c| (0..opts.count).map(move |i| (c.clone(), i))).collect();
    let entries = jobs
        .par_iter()
        .map(|(cat, i)| {
            let clip = synth_fixture(cat, opts.seconds, opts.sample_rate, fixture_seed(opts.seed, cat, *i))?;
            let path = out.join(format!("{cat}_{i:03}.wav"));
            audio_io::write_wav(&clip, &path)?;
            Ok(ManifestEntry {
                path,
                label: cat.clone(),
                dataset: opts.dataset,
                recording: String::new(),
                source: String::new(),
            })
        })
        .collect::<auscult_core::Result<Vec<_>>>()?;
    let manifest = Manifest::new(opts.dataset, entries)?;
    manifest.write(&out.join("manifest.csv"))?;
    Ok(manifest)
}

fn check_dataset(manifest: &Manifest, cfg: &PipelineConfig) -> Result<()> {
    if manifest.dataset() != cfg.dataset {
        bail!(PipelineError::DatasetMismatch { manifest: manifest.dataset(), config: cfg.dataset });
    }
    Ok(())
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn unique_stems(manifest: &Manifest) -> Result<()> {
    let mut seen = HashSet::new();
    for e in manifest.entries() {
        let stem = file_stem(&e.path);
        if !seen.insert(stem.clone()) {
            bail!(PipelineError::DuplicateStem(stem));
        }
    }
    Ok(())
}

/// Decimates, low-passes and chunks one recording.
pub fn condition(clip: &AudioClip, cfg: &PipelineConfig) -> Result<Vec<AudioClip>> {
    cfg.validate_for_rate(clip.sample_rate())?;
    let decimated = audio_io::decimate(clip, cfg.decimation_factor)?;
    let coeffs = design_butterworth_lowpass(cfg.filter_order, cfg.cutoff_hz, decimated.sample_rate() as f64)?;
    let filtered = zero_phase_filter(&coeffs, &decimated)?;
    Ok(segment(&filtered, cfg.chunk_seconds)?)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileOutcome {
    pub path: PathBuf,
    pub chunks: usize,
    /// `ok`, `too short`, or the error message.
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PreprocessReport {
    pub files: Vec<FileOutcome>,
    pub chunks: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Writes `chunks/<stem>_<k>.wav` per recording and `chunks.csv`. Files that
/// fail or are shorter than one chunk are logged and skipped.
pub fn run_preprocess(manifest_path: &Path, cfg: &PipelineConfig, out: &Path) -> Result<PreprocessReport> {
    let manifest = Manifest::read(manifest_path)?;
    check_dataset(&manifest, cfg)?;
    unique_stems(&manifest)?;
    let chunk_dir = out.join("chunks");
    fs::create_dir_all(&chunk_dir).with_context(|| format!("creating {}", chunk_dir.display()))?;

    let results: Vec<Result<Vec<ManifestEntry>>> = manifest
        .entries()
        .par_iter()
        .map(|e| {
            let clip = audio_io::read_wav(&e.path)?;
            let stem = file_stem(&e.path);
            let mut rows = Vec::new();
            for (k, chunk) in condition(&clip, cfg)?.iter().enumerate() {
                let path = chunk_dir.join(format!("{stem}_{k}.wav"));
                audio_io::write_wav(chunk, &path)?;
                rows.push(ManifestEntry {
                    path,
                    label: e.label.clone(),
                    dataset: e.dataset,
                    recording: e.recording.clone(),
                    source: e.path.to_string_lossy().into_owned(),
                });
            }
            Ok(rows)
        })
        .collect();

    let mut files = Vec::new();
    let mut rows = Vec::new();
    let (mut skipped, mut failed) = (0, 0);
    for (e, r) in manifest.entries().iter().zip(results) {
        let (chunks, status) = match r {
            Ok(v) if v.is_empty() => {
                log::warn!("{}: shorter than one {} s chunk, skipped", e.path.display(), cfg.chunk_seconds);
                skipped += 1;
                (0, "too short".to_string())
            }
            Ok(v) => {
                let n = v.len();
                rows.extend(v);
                (n, "ok".to_string())
            }
            Err(err) => {
                log::error!("{}: {err:#}", e.path.display());
                failed += 1;
                (0, format!("{err:#}"))
            }
        };
        files.push(FileOutcome { path: e.path.clone(), chunks, status });
    }
    if failed == manifest.len() {
        bail!(PipelineError::AllFailed { stage: "preprocess", n: failed });
    }
    let report = PreprocessReport { chunks: rows.len(), files, skipped, failed };
    if rows.is_empty() {
        bail!(auscult_core::Error::Empty("no recording produced a chunk".into()));
    }
    Manifest::new(manifest.dataset(), rows)?.write(&out.join(CHUNK_MANIFEST))?;
    fs::write(out.join(PREPROCESS_REPORT), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

/// Writes `mel/<stem>.mel` and `png/<stem>.png` per chunk and `images.csv`,
/// whose `source` column points back at the chunk WAV.
pub fn run_spectrogram(manifest_path: &Path, cfg: &PipelineConfig, out: &Path) -> Result<Manifest> {
    let manifest = Manifest::read(manifest_path)?;
    check_dataset(&manifest, cfg)?;
    unique_stems(&manifest)?;
    let (mel_dir, png_dir) = (out.join("mel"), out.join("png"));
    for d in [&mel_dir, &png_dir] {
        fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    let rows = manifest
        .entries()
        .par_iter()
        .map(|e| {
            let clip = audio_io::read_wav(&e.path).with_context(|| format!("reading chunk {}", e.path.display()))?;
            let mel = MelExtractor::new(cfg.mel_config(), clip.sample_rate())?.extract(&clip)?;
            let stem = file_stem(&e.path);
            let mel_path = mel_dir.join(format!("{stem}.mel"));
            mel.write_raw(&mel_path)?;
            render_image(&mel, cfg.color)?.write_png(png_dir.join(format!("{stem}.png")))?;
            Ok(ManifestEntry {
                path: mel_path,
                label: e.label.clone(),
                dataset: e.dataset,
                recording: e.recording.clone(),
                source: e.path.to_string_lossy().into_owned(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let images = Manifest::new(manifest.dataset(), rows)?;
    images.write(&out.join(IMAGE_MANIFEST))?;
    Ok(images)
}

/// Mel matrices rendered into network inputs on demand.
pub struct MelSamples<'a> {
    pub mels: Vec<&'a MelSpectrogram>,
    pub labels: Vec<usize>,
    pub color: auscult_core::ColorMode,
}

impl SampleSource for MelSamples<'_> {
    fn len(&self) -> usize {
        self.mels.len()
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn fill_input(&self, index: usize, out: &mut [f32]) -> auscult_core::Result<()> {
        out.copy_from_slice(&render_image(self.mels[index], self.color)?.to_chw());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub train_items: usize,
    pub val_items: usize,
    pub test_items: usize,
    pub train_counts: Vec<usize>,
    pub val_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
    pub class_weights: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub history: auscult_core::TrainHistory,
    pub split: SplitSummary,
    pub report: EvaluationReport,
}

/// Every training spectrogram of one chunk: the original, the audio-augmented
/// versions, and the SpecAugment variants of each of those.
fn augment_item(
    item: &Item,
    mel: &MelSpectrogram,
    source: &str,
    cfg: &PipelineConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<(Item, MelSpectrogram)>> {
    let mut bases = vec![(item.id.clone(), mel.clone())];
    if cfg.audio_augment {
        if source.is_empty() {
            bail!(auscult_core::Error::Manifest(format!("{} has no source chunk for audio augmentation", item.id)));
        }
        let clip = audio_io::read_wav(source).with_context(|| format!("reading source chunk of {}", item.id))?;
        let extractor = MelExtractor::new(cfg.mel_config(), clip.sample_rate())?;
        let pitched = extractor.extract(&pitch_shift(&clip, cfg.pitch_semitones)?)?;
        let shifted = extractor.extract(&time_shift(&clip, cfg.time_shift_seconds)?)?;
        bases.push((format!("{}#pitch", item.id), pitched));
        bases.push((format!("{}#shift", item.id), shifted));
    }
    let mut out = Vec::new();
    for (id, base) in bases {
        let variants = specaugment::apply_policy(cfg.dataset, &base, &cfg.specaugment, rng)?;
        let augmented = id != item.id;
        let derived = |id: String| Item { id, recording: item.recording.clone(), class: item.class, augmented: true };
        let tagged: Vec<_> =
            variants.into_iter().enumerate().map(|(v, spec)| (derived(format!("{id}#spec{v}")), spec)).collect();
        out.push((Item { augmented, ..derived(id) }, base));
        out.extend(tagged);
    }
    Ok(out)
}

/// Split, balance, augment, train and score the held-out test items.
pub fn run_train(manifest_path: &Path, cfg: &PipelineConfig, out: &Path) -> Result<TrainOutcome> {
    let manifest = Manifest::read(manifest_path)?;
    check_dataset(&manifest, cfg)?;
    let k = cfg.dataset.n_classes();
    let mut split = split_dataset(&manifest, cfg.seed)?;
    if let Some((class, frac)) = &cfg.downsample {
        split = downsample_class(split, class, *frac, cfg.seed)?;
    }
    let sources: HashMap<String, String> =
        manifest.entries().iter().map(|e| (e.path.to_string_lossy().into_owned(), e.source.clone())).collect();
    let load = |it: &Item| MelSpectrogram::read_raw(&it.id).with_context(|| format!("loading {}", it.id));
    if let Some(first) = split.train.first() {
        let mel = load(first)?;
        if mel.n_mels() != cfg.n_mels {
            bail!(ConfigError::Invalid {
                key: "n_mels".into(),
                reason: format!("{} but the spectrograms have {} bands", cfg.n_mels, mel.n_mels()),
            });
        }
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let mut store: Vec<MelSpectrogram> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut pool = Vec::new();
    for it in &split.train {
        let mel = load(it)?;
        for (item, spec) in augment_item(it, &mel, &sources[&it.id], cfg, &mut rng)? {
            index.insert(item.id.clone(), store.len());
            store.push(spec);
            pool.push(item);
        }
    }
    log::info!("{} train-pool items expanded to {} spectrograms", split.train.len(), pool.len());
    split.train = pool;
    let mut split = split_train_val(split, cfg.seed);
    let weights = class_weights(&split, cfg.class_weights)?;
    split.class_weights = weights.clone();

    let source_of = |items: &[Item]| MelSamples {
        mels: items.iter().map(|it| &store[index[&it.id]]).collect(),
        labels: items.iter().map(|it| it.class).collect(),
        color: cfg.color,
    };
    let (train_set, val_set) = (source_of(&split.train), source_of(&split.val));
    let model = ModelState::<f32>::init(cfg.arch(), cfg.seed)?;
    let tcfg = cfg.train_config(weights.clone());
    let meta = checkpoint_meta(cfg);
    let (history, best) = match train(model, &train_set, &val_set, &tcfg) {
        Ok(r) => r,
        Err(auscult_core::Error::Diverged { epoch, reason, last_good }) => {
            if let Some(m) = &last_good {
                save_checkpoint(m, &meta, &out.join(LAST_GOOD_FILE))?;
            }
            return Err(auscult_core::Error::Diverged { epoch, reason, last_good }.into());
        }
        Err(e) => return Err(e.into()),
    };

    let test_mels = split.test.iter().map(load).collect::<Result<Vec<_>>>()?;
    let test_set = MelSamples {
        mels: test_mels.iter().collect(),
        labels: split.test.iter().map(|it| it.class).collect(),
        color: cfg.color,
    };
    let probs = predict_all(&best, &test_set, cfg.batch_size)?;
    let report = auscult_core::metrics::evaluate(cfg.dataset.class_set(), &test_set.labels, &probs)?;

    let mut meta = meta;
    meta["best_epoch"] = serde_json::json!(history.best_epoch);
    save_checkpoint(&best, &meta, &out.join(CHECKPOINT_FILE))?;
    fs::write(out.join(HISTORY_FILE), history.to_jsonl())?;
    fs::write(out.join(METRICS_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    let summary = SplitSummary {
        train_items: split.train.len(),
        val_items: split.val.len(),
        test_items: split.test.len(),
        train_counts: class_counts(&split.train, k),
        val_counts: class_counts(&split.val, k),
        test_counts: class_counts(&split.test, k),
        class_weights: weights,
        warnings: split.warnings.clone(),
    };
    fs::write(out.join(SPLIT_FILE), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(TrainOutcome { history, split: summary, report })
}

fn checkpoint_meta(cfg: &PipelineConfig) -> serde_json::Value {
    serde_json::json!({
        "config": cfg.to_map(),
        "class_names": cfg.dataset.class_set(),
    })
}

/// Loads a checkpoint and the pipeline configuration it was trained with.
pub fn load_model(path: &Path) -> Result<(ModelState<f32>, PipelineConfig)> {
    let ckpt = load_checkpoint(path)?;
    let map = ckpt
        .meta
        .get("config")
        .and_then(|c| c.as_object())
        .ok_or_else(|| PipelineError::IncompatibleCheckpoint("no embedded pipeline config".into()))?;
    let text: String = map.iter().map(|(k, v)| format!("{k} = {}\n", v.as_str().unwrap_or_default())).collect();
    let cfg = PipelineConfig::parse(&text, DatasetId::A)
        .map_err(|e| PipelineError::IncompatibleCheckpoint(format!("embedded config: {e}")))?;
    if ckpt.model.arch() != &cfg.arch() {
        bail!(PipelineError::IncompatibleCheckpoint("network architecture differs from the embedded config".into()));
    }
    Ok((ckpt.model, cfg))
}

/// Scores every item of an image manifest with a trained checkpoint.
pub fn run_evaluate(manifest_path: &Path, checkpoint: &Path, out: &Path) -> Result<EvaluationReport> {
    let (model, cfg) = load_model(checkpoint)?;
    let manifest = Manifest::read(manifest_path)?;
    check_dataset(&manifest, &cfg)?;
    let mels = manifest
        .entries()
        .iter()
        .map(|e| MelSpectrogram::read_raw(&e.path).with_context(|| format!("loading {}", e.path.display())))
        .collect::<Result<Vec<_>>>()?;
    let labels = manifest
        .entries()
        .iter()
        .map(|e| cfg.dataset.class_index(&e.label))
        .collect::<auscult_core::Result<Vec<_>>>()?;
    let set = MelSamples { mels: mels.iter().collect(), labels, color: cfg.color };
    let probs = predict_all(&model, &set, cfg.batch_size)?;
    let report = auscult_core::metrics::evaluate(cfg.dataset.class_set(), &set.labels, &probs)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join(METRICS_FILE), serde_json::to_string_pretty(&report)? + "\n")?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction {
    pub file: PathBuf,
    /// `ok`, `too short`, or the error message.
    pub status: String,
    pub n_chunks: usize,
    pub predicted: Option<String>,
    pub probabilities: BTreeMap<String, f64>,
}

fn wav_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    Ok(files)
}

fn predict_file(model: &ModelState<f32>, cfg: &PipelineConfig, path: &Path) -> Result<(usize, Vec<f64>)> {
    let clip = audio_io::read_wav(path)?;
    let chunks = condition(&clip, cfg)?;
    if chunks.is_empty() {
        return Ok((0, Vec::new()));
    }
    let extractor = MelExtractor::new(cfg.mel_config(), chunks[0].sample_rate())?;
    let mels = chunks.iter().map(|c| extractor.extract(c)).collect::<auscult_core::Result<Vec<_>>>()?;
    let set = MelSamples { mels: mels.iter().collect(), labels: vec![0; mels.len()], color: cfg.color };
    let probs = predict_all(model, &set, cfg.batch_size)?;
    let mut mean = vec![0.0; probs.ncols()];
    for row in probs.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / probs.nrows() as f64;
        }
    }
    Ok((chunks.len(), mean))
}

/// Per-file class probabilities, averaged over the file's chunks. Directories
/// contribute their `.wav` files in name order.
pub fn run_predict(checkpoint: &Path, inputs: &[PathBuf]) -> Result<Vec<Prediction>> {
    let (model, cfg) = load_model(checkpoint)?;
    let classes = cfg.dataset.class_set();
    let files = wav_files(inputs)?;
    if files.is_empty() {
        bail!(auscult_core::Error::Empty("no WAV files to score".into()));
    }
    let mut out = Vec::with_capacity(files.len());
    for f in files {
        let mut p = Prediction {
            file: f.clone(),
            status: "ok".into(),
            n_chunks: 0,
            predicted: None,
            probabilities: BTreeMap::new(),
        };
        match predict_file(&model, &cfg, &f) {
            Ok((0, _)) => p.status = "too short".into(),
            Ok((n, mean)) => {
                p.n_chunks = n;
                p.predicted = Some(classes[auscult_core::metrics::argmax(&mean)].to_string());
                p.probabilities = classes.iter().map(|c| c.to_string()).zip(mean).collect();
            }
            Err(e) => {
                log::error!("{}: {e:#}", f.display());
                p.status = format!("{e:#}");
            }
        }
        out.push(p);
    }
    Ok(out)
}
