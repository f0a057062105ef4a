//! Central finite-difference checks of every layer's analytic gradient.
//! Shared by the core integration tests and the acceptance suite.

#![allow(dead_code)]

use auscult_core::model::layers::{self, ConvShape};
use auscult_core::model::{weighted_cross_entropy, Arch, ModelState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;
pub const REL_TOL: f64 = 1e-4;
pub const ABS_FLOOR: f64 = 1e-6;

pub fn agrees(analytic: f64, numeric: f64) -> bool {
    let diff = (analytic - numeric).abs();
    diff <= ABS_FLOOR || diff <= REL_TOL * analytic.abs().max(numeric.abs())
}

/// Compares `analytic` with central differences of `f` around `x`.
pub fn compare(what: &str, x: &[f64], analytic: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Result<(), String> {
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + EPS;
        let up = f(&xp);
        xp[i] = x[i] - EPS;
        let down = f(&xp);
        xp[i] = x[i];
        let numeric = (up - down) / (2.0 * EPS);
        if !agrees(analytic[i], numeric) {
            return Err(format!("{what}[{i}]: analytic {} vs numeric {numeric}", analytic[i]));
        }
    }
    Ok(())
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn check_conv(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let s = ConvShape {
        c_in: rng.gen_range(1..4),
        c_out: rng.gen_range(1..4),
        h: rng.gen_range(2..7),
        w: rng.gen_range(2..7),
    };
    let n = rng.gen_range(1..3);
    let x = uniform(rng, n * s.in_len());
    let w = uniform(rng, s.c_out * s.patch_len());
    let b = uniform(rng, s.c_out);
    let r = uniform(rng, n * s.out_len());
    let (_, cols) = layers::conv_forward(&s, n, &x, &w, &b);
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; b.len()];
    let mut gx = vec![0.0; x.len()];
    layers::conv_backward(&s, n, &cols, &w, &r, &mut gw, &mut gb, Some(&mut gx));
    compare("conv.input", &x, &gx, |v| dot(&layers::conv_forward(&s, n, v, &w, &b).0, &r))?;
    compare("conv.weight", &w, &gw, |v| dot(&layers::conv_forward(&s, n, &x, v, &b).0, &r))?;
    compare("conv.bias", &b, &gb, |v| dot(&layers::conv_forward(&s, n, &x, &w, v).0, &r))
}

pub fn check_relu(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.gen_range(1..50);
    // Keep inputs away from the kink at zero.
    let x: Vec<f64> = uniform(rng, n).into_iter().map(|v| if v.abs() < 1e-3 { v + 0.01 } else { v }).collect();
    let r = uniform(rng, n);
    let mut y = x.clone();
    layers::relu_forward(&mut y);
    let mut g = r.clone();
    layers::relu_backward(&y, &mut g);
    compare("relu", &x, &g, |v| {
        let mut y = v.to_vec();
        layers::relu_forward(&mut y);
        dot(&y, &r)
    })
}

pub fn check_maxpool(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let (planes, h, w) = (rng.gen_range(1..4), 2 * rng.gen_range(1..4), 2 * rng.gen_range(1..4));
    // Distinct values at least 0.01 apart so no perturbation changes a winner.
    let mut x: Vec<f64> = (0..planes * h * w).map(|i| i as f64 * 0.01).collect();
    for i in (1..x.len()).rev() {
        x.swap(i, rng.gen_range(0..=i));
    }
    let (y, idx) = layers::maxpool_forward(planes, h, w, &x);
    let r = uniform(rng, y.len());
    let mut g = vec![0.0; x.len()];
    layers::maxpool_backward(&idx, &r, &mut g);
    compare("maxpool", &x, &g, |v| dot(&layers::maxpool_forward(planes, h, w, v).0, &r))
}

pub fn check_dense(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let (n, di, dout) = (rng.gen_range(1..4), rng.gen_range(1..9), rng.gen_range(1..6));
    let x = uniform(rng, n * di);
    let w = uniform(rng, dout * di);
    let b = uniform(rng, dout);
    let r = uniform(rng, n * dout);
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; b.len()];
    let gx = layers::dense_backward(n, di, dout, &x, &w, &r, &mut gw, &mut gb);
    compare("dense.input", &x, &gx, |v| dot(&layers::dense_forward(n, di, dout, v, &w, &b), &r))?;
    compare("dense.weight", &w, &gw, |v| dot(&layers::dense_forward(n, di, dout, &x, v, &b), &r))?;
    compare("dense.bias", &b, &gb, |v| dot(&layers::dense_forward(n, di, dout, &x, &w, v), &r))
}

pub fn check_dropout(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let n = rng.gen_range(1..40);
    let p: f64 = rng.gen_range(0.1..0.6);
    let mask: Vec<f64> = (0..n).map(|_| if rng.gen_bool(p) { 0.0 } else { 1.0 / (1.0 - p) }).collect();
    let x = uniform(rng, n);
    let r = uniform(rng, n);
    let mut g = r.clone();
    layers::dropout_apply(&mut g, &mask);
    compare("dropout", &x, &g, |v| {
        let mut y = v.to_vec();
        layers::dropout_apply(&mut y, &mask);
        dot(&y, &r)
    })
}

pub fn check_cross_entropy(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let (n, k) = (rng.gen_range(1..6), rng.gen_range(2..5));
    let logits: Vec<f64> = uniform(rng, n * k).into_iter().map(|v| 3.0 * v).collect();
    let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    let weights: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..3.0)).collect();
    let loss = |l: &[f64]| weighted_cross_entropy(&layers::softmax(l, k), k, &targets, &weights).unwrap().0;
    let (_, grad) = weighted_cross_entropy(&layers::softmax(&logits, k), k, &targets, &weights).unwrap();
    compare("cross_entropy.logits", &logits, &grad, loss)
}

/// End-to-end check of the whole network on an 8x8 toy architecture, dropout
/// included (the mask is replayed by reseeding). Coordinates whose
/// perturbation changes the ReLU/pooling pattern are skipped and counted.
pub fn check_model(rng: &mut ChaCha8Rng) -> Result<usize, String> {
    let arch = Arch {
        input_channels: 2,
        input_height: 8,
        input_width: 8,
        conv_channels: vec![3, 4],
        dense_width: 5,
        dropout: 0.3,
        n_classes: 3,
    };
    let n = 2;
    let model = ModelState::<f64>::init(arch.clone(), rng.gen()).map_err(|e| e.to_string())?;
    let x = uniform(rng, n * arch.input_len());
    let targets: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
    let weights = [1.0, 2.0, 0.5];
    let drop_seed: u64 = rng.gen();
    let run = |m: &ModelState<f64>| {
        let mut r = ChaCha8Rng::seed_from_u64(drop_seed);
        m.forward(&x, n, Some(&mut r)).unwrap()
    };
    let cache = run(&model);
    let (_, dlogits) = weighted_cross_entropy(&cache.probs, 3, &targets, &weights).unwrap();
    let grads = model.backward(&cache, &dlogits).map_err(|e| e.to_string())?;
    let base_pattern = cache.activation_pattern();
    let mut skipped = 0;
    let mut checked = 0;
    for (ti, g) in grads.iter().enumerate() {
        for j in 0..g.data.len() {
            let probe = |delta: f64| {
                let mut m = model.clone();
                m.params_mut()[ti].data[j] += delta;
                let c = run(&m);
                let loss = weighted_cross_entropy(&c.probs, 3, &targets, &weights).unwrap().0;
                (loss, c.activation_pattern() == base_pattern)
            };
            let (up, same_up) = probe(EPS);
            let (down, same_down) = probe(-EPS);
            if !(same_up && same_down) {
                skipped += 1;
                continue;
            }
            checked += 1;
            let numeric = (up - down) / (2.0 * EPS);
            if !agrees(g.data[j], numeric) {
                return Err(format!("{}[{j}]: analytic {} vs numeric {numeric}", g.name, g.data[j]));
            }
        }
    }
    if skipped * 20 > checked {
        return Err(format!("{skipped} of {} coordinates straddled a kink", skipped + checked));
    }
    Ok(skipped)
}

/// Runs every layer check once with the given seed.
pub fn suite(seed: u64) -> Vec<(&'static str, Result<(), String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        ("conv", check_conv(&mut rng)),
        ("relu", check_relu(&mut rng)),
        ("maxpool", check_maxpool(&mut rng)),
        ("dense", check_dense(&mut rng)),
        ("dropout", check_dropout(&mut rng)),
        ("cross_entropy", check_cross_entropy(&mut rng)),
        ("model", check_model(&mut rng).map(|_| ())),
    ]
}
