//! Spectrogram-domain augmentation: time warping, frequency and time masking,
//! and the per-dataset variant policy.
//!
//! Every random draw is recorded as a tag on the output spectrogram
//! (`warp(p=..,w=..)`, `fmask(f0=..,f=..)`, `tmask(t0=..,t=..)`), and each
//! operation has a deterministic `*_at` counterpart taking the draws directly.

use ndarray::{s, Array2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetId;
use crate::error::{Error, Result};
use crate::spectrogram::{MelSpectrogram, FLOOR_DB};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpecAugmentParams {
    /// Maximum warp displacement W, in frames.
    pub warp_w: usize,
    /// Maximum frequency-mask width F, in mel channels.
    pub freq_mask_f: usize,
    /// Maximum time-mask width T, in frames.
    pub time_mask_t: usize,
    pub n_freq_masks: usize,
    /// Time masks per masked variant; zero in the default policy.
    pub n_time_masks: usize,
    /// dB value written into masked cells.
    pub fill: f64,
}

impl Default for SpecAugmentParams {
    fn default() -> Self {
        Self { warp_w: 5, freq_mask_f: 15, time_mask_t: 10, n_freq_masks: 1, n_time_masks: 0, fill: FLOOR_DB }
    }
}

/// Warps columns so that frame `pivot` lands at `pivot + displacement`, with
/// the first and last frames fixed. Columns are resampled linearly along
/// two straight segments meeting at the displaced pivot.
pub fn time_warp_at(spec: &MelSpectrogram, pivot: usize, displacement: i64) -> Result<MelSpectrogram> {
    let n = spec.n_frames();
    let dest = pivot as i64 + displacement;
    if n == 0 || pivot >= n || dest < 0 || dest >= n as i64 {
        return Err(Error::param(
            "time_warp",
            format!("pivot {pivot} displaced by {displacement} leaves the {n}-frame range"),
        ));
    }
    let tag = format!("warp(p={pivot},w={displacement})");
    if displacement == 0 {
        return Ok(spec.derive(spec.values.clone(), tag));
    }
    let (p, d, last) = (pivot as f64, dest as f64, (n - 1) as f64);
    let source_of = |j: usize| -> f64 {
        let j = j as f64;
        if j <= d {
            if d == 0.0 {
                0.0
            } else {
                j * p / d
            }
        } else {
            p + (j - d) * (last - p) / (last - d)
        }
    };
    let src = &spec.values;
    let mut out = Array2::zeros(src.dim());
    for j in 0..n {
        let s = source_of(j).clamp(0.0, last);
        let c0 = s.floor() as usize;
        let c1 = (c0 + 1).min(n - 1);
        let frac = s - c0 as f64;
        for r in 0..src.nrows() {
            out[[r, j]] = src[[r, c0]] * (1.0 - frac) + src[[r, c1]] * frac;
        }
    }
    Ok(spec.derive(out, tag))
}

/// Random time warp: pivot uniform in `[W, n - W)`, displacement uniform in `[-W, W]`.
pub fn time_warp<R: Rng + ?Sized>(spec: &MelSpectrogram, warp_w: usize, rng: &mut R) -> Result<MelSpectrogram> {
    let n = spec.n_frames();
    if n <= 2 * warp_w {
        return Err(Error::TooShort(format!(
            "time warp with W={warp_w} needs more than {} frames, spectrogram has {n}",
            2 * warp_w
        )));
    }
    let pivot = rng.gen_range(warp_w..n - warp_w);
    let w = warp_w as i64;
    let displacement = rng.gen_range(-w..=w);
    time_warp_at(spec, pivot, displacement)
}

/// Sets rows `[start, start + width)` to `fill`.
pub fn freq_mask_at(spec: &MelSpectrogram, start: usize, width: usize, fill: f64) -> Result<MelSpectrogram> {
    if start + width > spec.n_mels() {
        return Err(Error::param("freq_mask", format!("band {start}+{width} exceeds {} channels", spec.n_mels())));
    }
    let mut values = spec.values.clone();
    values.slice_mut(s![start..start + width, ..]).fill(fill);
    Ok(spec.derive(values, format!("fmask(f0={start},f={width})")))
}

/// Sets columns `[start, start + width)` to `fill`.
pub fn time_mask_at(spec: &MelSpectrogram, start: usize, width: usize, fill: f64) -> Result<MelSpectrogram> {
    if start + width > spec.n_frames() {
        return Err(Error::param("time_mask", format!("band {start}+{width} exceeds {} frames", spec.n_frames())));
    }
    let mut values = spec.values.clone();
    values.slice_mut(s![.., start..start + width]).fill(fill);
    Ok(spec.derive(values, format!("tmask(t0={start},t={width})")))
}

fn draw_band<R: Rng + ?Sized>(extent: usize, max_width: usize, rng: &mut R) -> (usize, usize) {
    let width = rng.gen_range(0..=max_width);
    let start = rng.gen_range(0..extent - width);
    (start, width)
}

/// `n_masks` frequency masks, each of width uniform in `[0, max_width]` and
/// start uniform in `[0, n_mels - width)`.
pub fn freq_mask<R: Rng + ?Sized>(
    spec: &MelSpectrogram,
    max_width: usize,
    n_masks: usize,
    fill: f64,
    rng: &mut R,
) -> Result<MelSpectrogram> {
    if max_width >= spec.n_mels() {
        return Err(Error::param(
            "freq_mask_f",
            format!("{max_width} must be below the {} mel channels", spec.n_mels()),
        ));
    }
    let mut out = spec.clone();
    for _ in 0..n_masks {
        let (start, width) = draw_band(spec.n_mels(), max_width, rng);
        out = freq_mask_at(&out, start, width, fill)?;
    }
    Ok(out)
}

/// Column-wise analogue of [`freq_mask`].
pub fn time_mask<R: Rng + ?Sized>(
    spec: &MelSpectrogram,
    max_width: usize,
    n_masks: usize,
    fill: f64,
    rng: &mut R,
) -> Result<MelSpectrogram> {
    if max_width >= spec.n_frames() {
        return Err(Error::param("time_mask_t", format!("{max_width} must be below the {} frames", spec.n_frames())));
    }
    let mut out = spec.clone();
    for _ in 0..n_masks {
        let (start, width) = draw_band(spec.n_frames(), max_width, rng);
        out = time_mask_at(&out, start, width, fill)?;
    }
    Ok(out)
}

/// Augmented variants of one spectrogram; the original is not included.
///
/// Dataset A yields one warped and two independently masked variants,
/// dataset B one warped and one masked. Warping and masking are never
/// composed within a variant.
pub fn apply_policy<R: Rng + ?Sized>(
    dataset: DatasetId,
    spec: &MelSpectrogram,
    params: &SpecAugmentParams,
    rng: &mut R,
) -> Result<Vec<MelSpectrogram>> {
    let n_masked = match dataset {
        DatasetId::A => 2,
        DatasetId::B => 1,
    };
    let mut out = Vec::with_capacity(1 + n_masked);
    out.push(time_warp(spec, params.warp_w, rng)?);
    for _ in 0..n_masked {
        let mut masked = freq_mask(spec, params.freq_mask_f, params.n_freq_masks, params.fill, rng)?;
        if params.n_time_masks > 0 {
            masked = time_mask(&masked, params.time_mask_t, params.n_time_masks, params.fill, rng)?;
        }
        out.push(masked);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrogram::StftParams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec_from(values: Array2<f64>) -> MelSpectrogram {
        MelSpectrogram { values, fmax: 2000.0, stft: StftParams::default(), sample_rate: 4000, tags: vec![] }
    }

    fn ramp(rows: usize, cols: usize) -> MelSpectrogram {
        spec_from(Array2::from_shape_fn((rows, cols), |(_, c)| c as f64))
    }

    fn noisy(rows: usize, cols: usize, seed: u64) -> MelSpectrogram {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        spec_from(Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-80.0..0.0)))
    }

    #[test]
    fn zero_warp_is_identity() {
        let s = noisy(64, 119, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(time_warp(&s, 0, &mut rng).unwrap().values, s.values);
    }

    #[test]
    fn warp_endpoints_fixed() {
        let s = noisy(16, 119, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let w = time_warp(&s, 5, &mut rng).unwrap();
            assert_eq!(w.values.column(0), s.values.column(0));
            assert_eq!(w.values.column(118), s.values.column(118));
            assert_eq!(w.values.dim(), s.values.dim());
        }
    }

    #[test]
    fn warp_pulls_content_from_the_left() {
        let s = ramp(4, 119);
        let w = time_warp_at(&s, 50, 3).unwrap();
        // Oracle: destination 50 reads source 50 * 50 / 53.
        let want = 50.0 * 50.0 / 53.0;
        assert!((w.values[[0, 50]] - want).abs() < 1e-12);
        assert!((w.values[[0, 53]] - 50.0).abs() < 1e-12);
        assert!((w.values[[2, 50]] - 47.0).abs() < 0.5);
        assert_eq!(w.tags, vec!["warp(p=50,w=3)".to_string()]);
    }

    #[test]
    fn warp_too_narrow() {
        let s = noisy(8, 10, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(time_warp(&s, 5, &mut rng).is_err());
    }

    #[test]
    fn freq_mask_exact_band() {
        let s = noisy(64, 119, 6);
        let m = freq_mask_at(&s, 20, 10, -80.0).unwrap();
        for r in 20..30 {
            assert!(m.values.row(r).iter().all(|&v| v == -80.0));
        }
        assert_eq!(m.values.row(19), s.values.row(19));
        assert_eq!(m.values.row(30), s.values.row(30));
        assert_eq!(freq_mask_at(&s, 20, 0, -80.0).unwrap().values, s.values);
    }

    #[test]
    fn masks_with_zero_count_are_identity() {
        let s = noisy(64, 119, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        assert_eq!(freq_mask(&s, 15, 0, -80.0, &mut rng).unwrap().values, s.values);
        assert_eq!(time_mask(&s, 10, 0, -80.0, &mut rng).unwrap().values, s.values);
        assert!(freq_mask(&s, 64, 1, -80.0, &mut rng).is_err());
    }

    #[test]
    fn time_mask_exact_band() {
        let s = noisy(64, 119, 9);
        let m = time_mask_at(&s, 40, 5, -80.0).unwrap();
        for c in 40..45 {
            assert!(m.values.column(c).iter().all(|&v| v == -80.0));
        }
        assert_eq!(m.values.column(39), s.values.column(39));
        assert_eq!(m.values.column(45), s.values.column(45));
    }

    /// Parses `name(a=..,b=..)` tags back into their two integers.
    fn draws(tag: &str) -> (usize, usize) {
        let inner = &tag[tag.find('(').unwrap() + 1..tag.len() - 1];
        let mut it = inner.split(',').map(|kv| kv.split('=').nth(1).unwrap().parse::<usize>().unwrap());
        (it.next().unwrap(), it.next().unwrap())
    }

    #[test]
    fn random_masks_touch_only_recorded_bands() {
        let s = noisy(64, 119, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let m = freq_mask(&s, 15, 2, -80.0, &mut rng).unwrap();
            let mut masked = [false; 64];
            for t in &m.tags {
                let (f0, f) = draws(t);
                assert!(f <= 15 && f0 + f <= 64);
                masked[f0..f0 + f].iter_mut().for_each(|b| *b = true);
            }
            for (r, &hit) in masked.iter().enumerate() {
                if hit {
                    assert!(m.values.row(r).iter().all(|&v| v == -80.0));
                } else {
                    assert_eq!(m.values.row(r), s.values.row(r));
                }
            }
            let untouched = (0..64).filter(|&r| !masked[r]).count();
            assert!(untouched >= 64 - 2 * 15);

            let t = time_mask(&s, 10, 3, -80.0, &mut rng).unwrap();
            let covered: std::collections::BTreeSet<usize> = t
                .tags
                .iter()
                .flat_map(|tag| {
                    let (a, b) = draws(tag);
                    a..a + b
                })
                .collect();
            assert!(covered.len() <= 3 * 10);
            for c in 0..119 {
                if !covered.contains(&c) {
                    assert_eq!(t.values.column(c), s.values.column(c));
                }
            }
        }
    }

    #[test]
    fn policy_counts_and_shapes() {
        let s = noisy(64, 119, 12);
        let p = SpecAugmentParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = apply_policy(DatasetId::A, &s, &p, &mut rng).unwrap();
        let b = apply_policy(DatasetId::B, &s, &p, &mut rng).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(b.len(), 2);
        for v in a.iter().chain(&b) {
            assert_eq!(v.values.dim(), s.values.dim());
            assert!(v.values.iter().all(|&x| (-80.0..=0.0).contains(&x)));
        }
        assert!(a[0].tags[0].starts_with("warp"));
        assert!(a[1].tags.iter().all(|t| t.starts_with("fmask")));
    }

    #[test]
    fn policy_is_deterministic() {
        let s = noisy(64, 119, 14);
        let p = SpecAugmentParams::default();
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            apply_policy(DatasetId::A, &s, &p, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }
}
