//! Manifests, recording-level splitting, class balancing, batch ordering and
//! a synthetic heart-sound generator.

use std::collections::{BTreeMap, HashSet};
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio_io::AudioClip;
use crate::error::{Error, Result};
use crate::preprocess::design_butterworth_lowpass;

pub const CLASSES_A: [&str; 4] = ["normal", "murmur", "extrahls", "artifact"];
pub const CLASSES_B: [&str; 3] = ["normal", "murmur", "extrasystole"];
/// Every category the fixture generator understands.
pub const SYNTH_CATEGORIES: [&str; 5] = ["normal", "murmur", "extrahls", "extrasystole", "artifact"];

pub const TRAIN_POOL_FRACTION: f64 = 0.7;
pub const VAL_FRACTION: f64 = 0.2;
pub const DEFAULT_BATCH_SIZE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DatasetId {
    A,
    B,
}

impl DatasetId {
    pub fn class_set(self) -> &'static [&'static str] {
        match self {
            DatasetId::A => &CLASSES_A,
            DatasetId::B => &CLASSES_B,
        }
    }

    pub fn n_classes(self) -> usize {
        self.class_set().len()
    }

    pub fn class_index(self, label: &str) -> Result<usize> {
        self.class_set()
            .iter()
            .position(|c| *c == label)
            .ok_or_else(|| Error::UnknownClass(format!("{label:?} is not a dataset {self} class")))
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetId::A => "A",
            DatasetId::B => "B",
        })
    }
}

impl FromStr for DatasetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(DatasetId::A),
            "B" | "b" => Ok(DatasetId::B),
            other => Err(Error::UnknownDataset(other.to_string())),
        }
    }
}

/// One manifest row. `recording` groups chunks of one source recording and
/// defaults to the file stem; `source` optionally points at the file this
/// entry was derived from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: String,
    pub dataset: DatasetId,
    #[serde(default)]
    pub recording: String,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    dataset: DatasetId,
    entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn new(dataset: DatasetId, mut entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (row, e) in entries.iter_mut().enumerate() {
            if e.dataset != dataset {
                return Err(Error::Manifest(format!(
                    "row {row}: dataset {} in a dataset {dataset} manifest",
                    e.dataset
                )));
            }
            dataset.class_index(&e.label).map_err(|err| Error::Manifest(format!("row {row}: {err}")))?;
            if !seen.insert(e.path.clone()) {
                return Err(Error::Manifest(format!("duplicate path {}", e.path.display())));
            }
            if e.recording.is_empty() {
                e.recording = e.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            }
        }
        Ok(Self { dataset, entries })
    }

    pub fn dataset(&self) -> DatasetId {
        self.dataset
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Reads a CSV manifest. Relative paths resolve against the manifest's directory.
    pub fn read(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut reader =
            csv::Reader::from_path(path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for row in reader.deserialize::<ManifestEntry>() {
            let mut e = row.map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
            if e.path.is_relative() {
                e.path = base.join(&e.path);
            }
            if !e.source.is_empty() && Path::new(&e.source).is_relative() {
                e.source = base.join(&e.source).to_string_lossy().into_owned();
            }
            entries.push(e);
        }
        let dataset = entries
            .first()
            .map(|e| e.dataset)
            .ok_or_else(|| Error::Empty(format!("manifest {} has no rows", path.display())))?;
        Self::new(dataset, entries)
    }

    /// Writes the manifest with paths made relative to the manifest's directory where possible.
    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut writer =
            csv::Writer::from_path(path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        let relative = |p: &Path| p.strip_prefix(&base).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf());
        for e in &self.entries {
            let row = ManifestEntry {
                path: relative(&e.path),
                source: if e.source.is_empty() {
                    String::new()
                } else {
                    relative(Path::new(&e.source)).to_string_lossy().into_owned()
                },
                ..e.clone()
            };
            writer.serialize(&row).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

/// A split member: `id` is the manifest path (or a derived name for augmented material).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub recording: String,
    pub class: usize,
    pub augmented: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub dataset: DatasetId,
    pub train: Vec<Item>,
    pub val: Vec<Item>,
    pub test: Vec<Item>,
    pub class_weights: Vec<f64>,
    pub seed: u64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ClassWeightMode {
    /// `count_c / N`, the rule exactly as stated.
    PaperLiteral,
    /// `N / (K * count_c)`.
    #[default]
    InverseFrequency,
}

impl FromStr for ClassWeightMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "paper-literal" => Ok(Self::PaperLiteral),
            "inverse-frequency" => Ok(Self::InverseFrequency),
            other => Err(Error::param("class_weights", format!("unknown mode {other:?}"))),
        }
    }
}

impl fmt::Display for ClassWeightMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::PaperLiteral => "paper-literal",
            Self::InverseFrequency => "inverse-frequency",
        })
    }
}

/// Shuffles the recordings of each class and sends `round(fraction * n)` of
/// them (with all their items) to the first output.
fn stratified_group_split(
    items: Vec<Item>,
    fraction: f64,
    n_classes: usize,
    rng: &mut ChaCha8Rng,
) -> (Vec<Item>, Vec<Item>) {
    let mut by_class: Vec<Vec<String>> = vec![Vec::new(); n_classes];
    let mut known = HashSet::new();
    for it in &items {
        if known.insert(it.recording.clone()) {
            by_class[it.class].push(it.recording.clone());
        }
    }
    let mut first = HashSet::new();
    for recs in &mut by_class {
        recs.sort();
        recs.shuffle(rng);
        let take = (fraction * recs.len() as f64).round() as usize;
        first.extend(recs.drain(..take));
    }
    items.into_iter().partition(|it| first.contains(&it.recording))
}

/// Recording-level stratified 70:30 split into a train pool and a test set.
/// `val` is left empty; see [`split_train_val`].
pub fn split_dataset(manifest: &Manifest, seed: u64) -> Result<DatasetSplit> {
    let dataset = manifest.dataset();
    let n_classes = dataset.n_classes();
    let mut items = Vec::with_capacity(manifest.len());
    let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
    for e in manifest.entries() {
        let class = dataset.class_index(&e.label)?;
        if let Some(&c) = owner.get(e.recording.as_str()) {
            if c != class {
                return Err(Error::Manifest(format!("recording {} carries two labels", e.recording)));
            }
        }
        owner.insert(&e.recording, class);
        items.push(Item {
            id: e.path.to_string_lossy().into_owned(),
            recording: e.recording.clone(),
            class,
            augmented: false,
        });
    }
    for (c, name) in dataset.class_set().iter().enumerate() {
        if !owner.values().any(|&k| k == c) {
            return Err(Error::Empty(format!("class {name} has no recordings")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (train, test) = stratified_group_split(items, TRAIN_POOL_FRACTION, n_classes, &mut rng);
    let mut split = DatasetSplit {
        dataset,
        train,
        val: Vec::new(),
        test,
        class_weights: vec![1.0; n_classes],
        seed,
        warnings: Vec::new(),
    };
    if let Ok(w) = class_weights(&split, ClassWeightMode::default()) {
        split.class_weights = w;
    }
    Ok(split)
}

/// Moves 20% of the train-pool recordings of each class, with every item
/// derived from them, into `val`.
pub fn split_train_val(mut split: DatasetSplit, seed: u64) -> DatasetSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let pool = std::mem::take(&mut split.train);
    let n_classes = split.dataset.n_classes();
    let (val, train) = stratified_group_split(pool, VAL_FRACTION, n_classes, &mut rng);
    split.train = train;
    split.val.extend(val);
    split
}

/// Keeps `ceil((1 - fraction) * n)` uniformly chosen train items of one class.
pub fn downsample_class(mut split: DatasetSplit, class_label: &str, fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::param("fraction", format!("{fraction} outside [0, 1]")));
    }
    let class = split.dataset.class_index(class_label)?;
    let mut members: Vec<usize> = (0..split.train.len()).filter(|&i| split.train[i].class == class).collect();
    let keep = ((1.0 - fraction) * members.len() as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    members.shuffle(&mut rng);
    let dropped: HashSet<usize> = members[keep..].iter().copied().collect();
    if keep == 0 && !members.is_empty() {
        let msg = format!("down-sampling removed every {class_label} item from train");
        log::warn!("{msg}");
        split.warnings.push(msg);
    }
    let mut i = 0;
    split.train.retain(|_| {
        let k = !dropped.contains(&i);
        i += 1;
        k
    });
    Ok(split)
}

/// Per-class weights from raw counts.
pub fn weights_from_counts(counts: &[usize], mode: ClassWeightMode) -> Result<Vec<f64>> {
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Empty(format!("class {c} has no training items")));
    }
    let n: usize = counts.iter().sum();
    let k = counts.len() as f64;
    Ok(counts
        .iter()
        .map(|&c| match mode {
            ClassWeightMode::PaperLiteral => c as f64 / n as f64,
            ClassWeightMode::InverseFrequency => n as f64 / (k * c as f64),
        })
        .collect())
}

pub fn class_counts(items: &[Item], n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for it in items {
        counts[it.class] += 1;
    }
    counts
}

/// Weights computed from the current train partition.
pub fn class_weights(split: &DatasetSplit, mode: ClassWeightMode) -> Result<Vec<f64>> {
    if split.train.is_empty() {
        return Err(Error::Empty("train partition is empty".into()));
    }
    weights_from_counts(&class_counts(&split.train, split.dataset.n_classes()), mode)
}

/// Index batches of one epoch: a permutation of `0..n` keyed by `(seed, epoch)`
/// and cut into chunks of `batch_size`, the last possibly short.
pub fn batches(n: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::param("batch_size", "must be at least 1"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

// Fixture waveform constants (seconds, Hz, linear amplitude).
const S1_FREQ: f64 = 100.0;
const S1_DUR: f64 = 0.080;
const S1_AMP: f64 = 1.0;
const S2_FREQ: f64 = 150.0;
const S2_DUR: f64 = 0.040;
const S2_AMP: f64 = 0.6;
const SYSTOLE_FRACTION: f64 = 0.3;
const BACKGROUND_STD: f64 = 0.01;
const MURMUR_CUTOFF: f64 = 180.0;
const MURMUR_AMP: f64 = 0.25;
const ARTIFACT_STD: f64 = 0.3;

fn add_burst(buf: &mut [f64], sr: f64, start: f64, freq: f64, dur: f64, amp: f64) {
    let i0 = (start * sr).round() as i64;
    let len = (dur * sr).round() as i64;
    for k in 0..len {
        let i = i0 + k;
        if i < 0 || i >= buf.len() as i64 {
            continue;
        }
        let t = k as f64 / sr;
        let env = 0.5 - 0.5 * (2.0 * PI * k as f64 / len as f64).cos();
        buf[i as usize] += amp * env * (2.0 * PI * freq * t).sin();
    }
}

/// Gaussian noise low-passed at `MURMUR_CUTOFF`, shaped by a Hann envelope
/// over `[start, start + dur)`.
fn add_murmur(buf: &mut [f64], sr: f64, start: f64, dur: f64, amp: f64, rng: &mut ChaCha8Rng) -> Result<()> {
    let len = (dur * sr).round() as usize;
    if len < 2 {
        return Ok(());
    }
    let coeffs = design_butterworth_lowpass(4, MURMUR_CUTOFF, sr)?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    // Warm-up prefix lets the causal filter settle before the envelope opens.
    let warm = len;
    let raw: Vec<f64> = (0..warm + len).map(|_| normal.sample(rng)).collect();
    let filtered = coeffs.filter(&raw);
    let band = &filtered[warm..];
    let rms = (band.iter().map(|v| v * v).sum::<f64>() / len as f64).sqrt().max(1e-12);
    let i0 = (start * sr).round() as i64;
    for (k, v) in band.iter().enumerate() {
        let i = i0 + k as i64;
        if i < 0 || i >= buf.len() as i64 {
            continue;
        }
        let env = 0.5 - 0.5 * (2.0 * PI * k as f64 / len as f64).cos();
        buf[i as usize] += amp * env * v / rms;
    }
    Ok(())
}

/// Synthetic recording of `category` at a heart rate drawn uniformly from 60-100 bpm.
pub fn synth_fixture(category: &str, seconds: f64, sample_rate: u32, seed: u64) -> Result<AudioClip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bpm = rng.gen_range(60.0..100.0);
    synth_fixture_at_bpm(category, seconds, sample_rate, bpm, seed)
}

/// Synthetic recording at a fixed heart rate. All cardiac content sits below 200 Hz.
pub fn synth_fixture_at_bpm(category: &str, seconds: f64, sample_rate: u32, bpm: f64, seed: u64) -> Result<AudioClip> {
    if !SYNTH_CATEGORIES.contains(&category) {
        return Err(Error::UnknownClass(format!("no fixture generator for {category:?}")));
    }
    if !(seconds > 0.0 && seconds.is_finite()) {
        return Err(Error::param("seconds", "must be positive"));
    }
    if sample_rate < 2 * 400 {
        return Err(Error::param("sample_rate", format!("{sample_rate} Hz cannot carry 200 Hz content")));
    }
    if !(bpm > 0.0 && bpm.is_finite()) {
        return Err(Error::param("bpm", "must be positive"));
    }
    let sr = sample_rate as f64;
    let n = (seconds * sr).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(7);
    let mut buf = vec![0.0; n];
    let noise = Normal::new(0.0, BACKGROUND_STD).expect("positive std");

    if category == "artifact" {
        let wide = Normal::new(0.0, ARTIFACT_STD * rng.gen_range(0.5..1.5)).expect("positive std");
        for v in &mut buf {
            *v = wide.sample(&mut rng);
        }
    } else {
        let period = 60.0 / bpm;
        let gain = rng.gen_range(0.6..1.0);
        let s1_freq = S1_FREQ * rng.gen_range(0.9..1.1);
        let s2_freq = S2_FREQ * rng.gen_range(0.9..1.1);
        let doubled_s1 = rng.gen_bool(0.5);
        let mut t = -rng.gen_range(0.0..period);
        let mut regular_run = 0;
        let mut beats = Vec::new();
        while t < seconds {
            beats.push(t);
            let mut next = t + period * rng.gen_range(0.98..1.02);
            if category == "extrasystole" {
                let forced = regular_run >= 2;
                if forced || rng.gen_bool(0.4) {
                    regular_run = 0;
                    if rng.gen_bool(0.5) {
                        // Premature beat halfway through diastole.
                        beats.push(t + period * rng.gen_range(0.55..0.7));
                    } else {
                        // Dropped beat.
                        next += period;
                    }
                } else {
                    regular_run += 1;
                }
            }
            t = next;
        }
        beats.sort_by(f64::total_cmp);
        for &b in &beats {
            let a = gain * rng.gen_range(0.9..1.1);
            let s2_start = b + SYSTOLE_FRACTION * period;
            add_burst(&mut buf, sr, b, s1_freq, S1_DUR, S1_AMP * a);
            add_burst(&mut buf, sr, s2_start, s2_freq, S2_DUR, S2_AMP * a);
            match category {
                "murmur" => {
                    let start = b + S1_DUR;
                    add_murmur(&mut buf, sr, start, s2_start - start, MURMUR_AMP * a, &mut rng)?;
                }
                "extrahls" if doubled_s1 => {
                    add_burst(&mut buf, sr, b + S1_DUR + 0.02, s1_freq, S1_DUR, 0.8 * S1_AMP * a)
                }
                "extrahls" => {
                    add_burst(&mut buf, sr, s2_start + S2_DUR + 0.04, s2_freq * 0.6, S2_DUR * 1.5, 0.8 * S1_AMP * a)
                }
                _ => {}
            }
        }
    }
    for v in &mut buf {
        *v += noise.sample(&mut rng);
    }
    let peak = buf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.99 {
        buf.iter_mut().for_each(|v| *v *= 0.99 / peak);
    }
    Ok(AudioClip::new(buf, sample_rate)?.with_label(category).with_source_id(format!("{category}_{seed}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(counts: &[(usize, usize)]) -> Manifest {
        // (class, recordings) with 3 chunks per recording.
        let mut entries = Vec::new();
        for &(class, recs) in counts {
            for r in 0..recs {
                for k in 0..3 {
                    entries.push(ManifestEntry {
                        path: PathBuf::from(format!("c{class}/r{r}_{k}.wav")),
                        label: CLASSES_A[class].to_string(),
                        dataset: DatasetId::A,
                        recording: format!("c{class}r{r}"),
                        source: String::new(),
                    });
                }
            }
        }
        Manifest::new(DatasetId::A, entries).unwrap()
    }

    fn recordings(items: &[Item]) -> HashSet<String> {
        items.iter().map(|i| i.recording.clone()).collect()
    }

    #[test]
    fn dataset_id_parsing() {
        assert_eq!("A".parse::<DatasetId>().unwrap(), DatasetId::A);
        assert_eq!("b".parse::<DatasetId>().unwrap(), DatasetId::B);
        assert!(matches!("C".parse::<DatasetId>(), Err(Error::UnknownDataset(_))));
        assert_eq!(DatasetId::A.n_classes(), 4);
        assert_eq!(DatasetId::B.class_index("extrasystole").unwrap(), 2);
        assert!(DatasetId::B.class_index("artifact").is_err());
    }

    #[test]
    fn manifest_validation() {
        let e = |p: &str, l: &str| ManifestEntry {
            path: PathBuf::from(p),
            label: l.into(),
            dataset: DatasetId::A,
            recording: String::new(),
            source: String::new(),
        };
        assert!(Manifest::new(DatasetId::A, vec![e("x.wav", "normal"), e("x.wav", "murmur")]).is_err());
        assert!(Manifest::new(DatasetId::A, vec![e("x.wav", "extrasystole")]).is_err());
        let m = Manifest::new(DatasetId::A, vec![e("dir/abc.wav", "normal")]).unwrap();
        assert_eq!(m.entries()[0].recording, "abc");
    }

    #[test]
    fn manifest_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, "path,label,dataset\na.wav,normal,A\nsub/b.wav,artifact,A\n").unwrap();
        let m = Manifest::read(&path).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.entries()[1].path, dir.path().join("sub/b.wav"));
        assert_eq!(m.entries()[1].recording, "b");
        let out = dir.path().join("m2.csv");
        m.write(&out).unwrap();
        let text = std::fs::read_to_string(&out).unwrap();
        assert!(text.contains("sub/b.wav,artifact,A,b,"), "{text}");
        assert_eq!(Manifest::read(&out).unwrap(), m);
        assert!(matches!(Manifest::read(&dir.path().join("none.csv")), Err(Error::FileNotFound(_))));
    }

    #[test]
    fn seventy_thirty_single_class() {
        let m = manifest(&[(0, 100), (1, 1), (2, 1), (3, 1)]);
        let s = split_dataset(&m, 5).unwrap();
        let train0 = recordings(&s.train).iter().filter(|r| r.starts_with("c0")).count();
        let test0 = recordings(&s.test).iter().filter(|r| r.starts_with("c0")).count();
        assert_eq!((train0, test0), (70, 30));
    }

    #[test]
    fn split_is_deterministic_and_leak_free() {
        let m = manifest(&[(0, 20), (1, 13), (2, 7), (3, 9)]);
        let a = split_dataset(&m, 11).unwrap();
        assert_eq!(a, split_dataset(&m, 11).unwrap());
        assert_ne!(a.test, split_dataset(&m, 12).unwrap().test);
        assert!(recordings(&a.train).is_disjoint(&recordings(&a.test)));
        assert_eq!(a.train.len() + a.test.len(), m.len());
        assert!(a.val.is_empty());
        let b = split_train_val(a.clone(), 11);
        assert!(recordings(&b.train).is_disjoint(&recordings(&b.val)));
        assert_eq!(b.test, a.test);
        assert_eq!(b.train.len() + b.val.len(), a.train.len());
        // 14 class-0 train-pool recordings -> round(2.8) = 3 in val.
        assert_eq!(recordings(&b.val).iter().filter(|r| r.starts_with("c0")).count(), 3);
    }

    #[test]
    fn missing_class_is_an_error() {
        let m = manifest(&[(0, 5), (1, 5), (2, 5)]);
        assert!(matches!(split_dataset(&m, 0), Err(Error::Empty(_))));
    }

    fn split_with_train(counts: &[usize]) -> DatasetSplit {
        let mut train = Vec::new();
        for (class, &n) in counts.iter().enumerate() {
            for i in 0..n {
                train.push(Item {
                    id: format!("{class}-{i}"),
                    recording: format!("{class}-{i}"),
                    class,
                    augmented: false,
                });
            }
        }
        DatasetSplit {
            dataset: if counts.len() == 3 { DatasetId::B } else { DatasetId::A },
            train,
            val: vec![Item { id: "v".into(), recording: "v".into(), class: 0, augmented: false }],
            test: vec![Item {
                id: "t".into(),
                recording: "t".into(),
                class: 3.min(counts.len() - 1),
                augmented: false,
            }],
            class_weights: vec![],
            seed: 0,
            warnings: vec![],
        }
    }

    #[test]
    fn downsampling_rules() {
        let s = split_with_train(&[10, 10, 10, 40]);
        let half = downsample_class(s.clone(), "artifact", 0.5, 3).unwrap();
        assert_eq!(class_counts(&half.train, 4), vec![10, 10, 10, 20]);
        assert_eq!((half.val.clone(), half.test.clone()), (s.val.clone(), s.test.clone()));
        assert_eq!(downsample_class(s.clone(), "artifact", 0.0, 3).unwrap(), s);
        let gone = downsample_class(s.clone(), "artifact", 1.0, 3).unwrap();
        assert_eq!(class_counts(&gone.train, 4)[3], 0);
        assert_eq!(gone.warnings.len(), 1);
        assert_eq!(
            class_counts(&downsample_class(split_with_train(&[1, 1, 1, 7]), "artifact", 0.5, 0).unwrap().train, 4)[3],
            4
        );
        assert!(downsample_class(s.clone(), "extrasystole", 0.5, 3).is_err());
        assert!(downsample_class(s, "artifact", 1.5, 3).is_err());
    }

    #[test]
    fn class_weight_modes() {
        let literal = weights_from_counts(&[62, 30, 8], ClassWeightMode::PaperLiteral).unwrap();
        for (w, e) in literal.iter().zip([0.62, 0.30, 0.08]) {
            assert!((w - e).abs() < 1e-12);
        }
        // Hand arithmetic: 100 / (3 * 62), 100 / 90, 100 / 24.
        let inv = weights_from_counts(&[62, 30, 8], ClassWeightMode::InverseFrequency).unwrap();
        for (w, e) in inv.iter().zip([0.5376, 1.1111, 4.1667]) {
            assert!((w - e).abs() < 5e-5, "{w} vs {e}");
        }
        let total: f64 = literal.iter().map(|w| w * 100.0).sum();
        assert!((total - 100.0).abs() < 1e-9);
        for mode in [ClassWeightMode::PaperLiteral, ClassWeightMode::InverseFrequency] {
            let w = weights_from_counts(&[7, 7, 7], mode).unwrap();
            assert!(w.iter().all(|&x| x == w[0]));
        }
        assert!(weights_from_counts(&[3, 0], ClassWeightMode::InverseFrequency).is_err());
        let s = split_with_train(&[62, 30, 8]);
        assert_eq!(class_weights(&s, ClassWeightMode::PaperLiteral).unwrap(), literal);
    }

    #[test]
    fn batch_orders() {
        let b = batches(20, 8, 1, 1).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![8, 8, 4]);
        assert_eq!(b, batches(20, 8, 1, 1).unwrap());
        assert_ne!(b, batches(20, 8, 1, 2).unwrap());
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert!(batches(5, 0, 0, 0).is_err());
        assert!(batches(0, 8, 0, 0).unwrap().is_empty());
    }

    /// 20 ms moving average of |x|.
    fn envelope(x: &[f64], sr: f64) -> Vec<f64> {
        let w = (0.02 * sr) as usize;
        let mut out = Vec::with_capacity(x.len());
        let mut acc = 0.0;
        for i in 0..x.len() {
            acc += x[i].abs();
            if i >= w {
                acc -= x[i - w].abs();
            }
            out.push(acc / w as f64);
        }
        out
    }

    #[test]
    fn normal_fixture_has_expected_s1_count() {
        for seed in 0..10 {
            let c = synth_fixture_at_bpm("normal", 3.0, 4000, 75.0, seed).unwrap();
            let env = envelope(c.samples(), 4000.0);
            let max = env.iter().cloned().fold(0.0, f64::max);
            // Rising crossings of 75% of peak at least 0.4 s apart.
            let mut peaks = 0;
            let mut last = -1.0;
            for i in 1..env.len() {
                let t = i as f64 / 4000.0;
                if env[i] >= 0.75 * max && env[i - 1] < 0.75 * max && t - last > 0.4 {
                    peaks += 1;
                    last = t;
                }
            }
            assert!((3..=4).contains(&peaks), "seed {seed}: {peaks} peaks");
        }
    }

    fn envelope_autocorr_max(x: &[f64], sr: f64, lag_lo: f64, lag_hi: f64) -> f64 {
        let env = envelope(x, sr);
        let mean = env.iter().sum::<f64>() / env.len() as f64;
        let e: Vec<f64> = env.iter().map(|v| v - mean).collect();
        let r0: f64 = e.iter().map(|v| v * v).sum();
        ((lag_lo * sr) as usize..=(lag_hi * sr) as usize)
            .map(|lag| e.iter().zip(&e[lag..]).map(|(a, b)| a * b).sum::<f64>() / r0)
            .fold(f64::MIN, f64::max)
    }

    #[test]
    fn artifact_has_no_periodicity() {
        for seed in 0..5 {
            let art = synth_fixture("artifact", 3.0, 4000, seed).unwrap();
            assert!(envelope_autocorr_max(art.samples(), 4000.0, 0.6, 1.0) < 0.2);
            let norm = synth_fixture("normal", 3.0, 4000, seed).unwrap();
            assert!(envelope_autocorr_max(norm.samples(), 4000.0, 0.6, 1.0) > 0.5);
        }
    }

    #[test]
    fn fixtures_are_deterministic_and_bounded() {
        for cat in SYNTH_CATEGORIES {
            let a = synth_fixture(cat, 3.5, 4410, 9).unwrap();
            assert_eq!(a, synth_fixture(cat, 3.5, 4410, 9).unwrap());
            assert_ne!(a.samples(), synth_fixture(cat, 3.5, 4410, 10).unwrap().samples());
            assert_eq!(a.len(), 15435);
            assert_eq!(a.label.as_deref(), Some(cat));
            assert!(a.samples().iter().all(|v| v.abs() < 1.0));
        }
        assert!(matches!(synth_fixture("stridor", 3.0, 4000, 0), Err(Error::UnknownClass(_))));
    }

    #[test]
    fn fixture_energy_sits_below_cutoff() {
        for cat in ["normal", "murmur", "extrahls", "extrasystole"] {
            let c = synth_fixture(cat, 2.0, 4000, 3).unwrap();
            let x = c.samples();
            let n = x.len();
            let mut low = 0.0;
            let mut total = 0.0;
            for k in 1..n / 2 {
                let (mut re, mut im) = (0.0, 0.0);
                for (i, &v) in x.iter().enumerate() {
                    let ph = 2.0 * PI * ((k * i) % n) as f64 / n as f64;
                    re += v * ph.cos();
                    im -= v * ph.sin();
                }
                let p = re * re + im * im;
                total += p;
                if k as f64 * 4000.0 / n as f64 <= 250.0 {
                    low += p;
                }
            }
            assert!(low / total > 0.95, "{cat}: {}", low / total);
        }
    }
}
