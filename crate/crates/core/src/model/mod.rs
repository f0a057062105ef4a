//! Compact CNN classifier: three conv/ReLU/pool blocks, a dense-64 ReLU layer,
//! dropout and a softmax output, with hand-written backpropagation.

pub mod checkpoint;
pub mod layers;
pub mod optim;
pub mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use layers::{ConvShape, Real};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use optim::{adam_step, decayed_lr, lr_schedule, sgd_step, AdamState, PlateauState};
pub use train::{
    predict_all, train, EpochRecord, InMemorySamples, OptimizerKind, SampleSource, TrainConfig, TrainHistory,
};

/// Architecture descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    /// Output channels of each conv block; every block halves both spatial sizes.
    pub conv_channels: Vec<usize>,
    pub dense_width: usize,
    pub dropout: f64,
    pub n_classes: usize,
}

impl Arch {
    /// 128x128x3 input, conv blocks of 8/16/32 channels, dense 64.
    pub fn standard(n_classes: usize, dropout: f64) -> Self {
        Self {
            input_channels: 3,
            input_height: 128,
            input_width: 128,
            conv_channels: vec![8, 16, 32],
            dense_width: 64,
            dropout,
            n_classes,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let scale = 1usize << self.conv_channels.len();
        if self.input_channels == 0 || self.input_height == 0 || self.input_width == 0 {
            return Err(Error::ShapeMismatch("input dimensions must be positive".into()));
        }
        if !self.input_height.is_multiple_of(scale) || !self.input_width.is_multiple_of(scale) {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} input is not divisible by {scale} for {} pooling stages",
                self.input_height,
                self.input_width,
                self.conv_channels.len()
            )));
        }
        if self.conv_channels.contains(&0) || self.dense_width == 0 {
            return Err(Error::ShapeMismatch("layer widths must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::ShapeMismatch(format!("{} output classes", self.n_classes)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::param("dropout", format!("{} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_channels * self.input_height * self.input_width
    }

    pub fn conv_shapes(&self) -> Vec<ConvShape> {
        let (mut c, mut h, mut w) = (self.input_channels, self.input_height, self.input_width);
        self.conv_channels
            .iter()
            .map(|&co| {
                let s = ConvShape { c_in: c, c_out: co, h, w };
                c = co;
                h /= 2;
                w /= 2;
                s
            })
            .collect()
    }

    /// Length of the flattened feature vector fed to the dense head.
    pub fn flat_len(&self) -> usize {
        let scale = 1usize << self.conv_channels.len();
        let c = self.conv_channels.last().copied().unwrap_or(self.input_channels);
        c * (self.input_height / scale) * (self.input_width / scale)
    }

    /// Names and shapes of every parameter tensor, in storage order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        for (i, s) in self.conv_shapes().iter().enumerate() {
            out.push((format!("conv{i}.weight"), vec![s.c_out, s.c_in, 3, 3]));
            out.push((format!("conv{i}.bias"), vec![s.c_out]));
        }
        out.push(("dense0.weight".into(), vec![self.dense_width, self.flat_len()]));
        out.push(("dense0.bias".into(), vec![self.dense_width]));
        out.push(("dense1.weight".into(), vec![self.n_classes, self.dense_width]));
        out.push(("dense1.bias".into(), vec![self.n_classes]));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { name: name.into(), shape, data: vec![T::zero(); n] }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.name.clone(), self.shape.clone())
    }
}

/// Parameters plus their architecture. Every mutable access bumps a
/// generation counter so gradients from an older forward pass are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    arch: Arch,
    seed: u64,
    params: Vec<Tensor<T>>,
    generation: u64,
}

/// Activations retained by [`ModelState::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    generation: u64,
    batch: usize,
    blocks: Vec<BlockCache<T>>,
    flat: Vec<T>,
    hidden: Vec<T>,
    mask: Option<Vec<T>>,
    head_input: Vec<T>,
    pub logits: Vec<T>,
    pub probs: Vec<T>,
}

impl<T: Real> ForwardCache<T> {
    /// ReLU on/off flags and pooling winners of the whole pass. Two passes with
    /// equal patterns lie on the same linear piece of the network.
    pub fn activation_pattern(&self) -> Vec<u32> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.extend(b.activation.iter().map(|&v| (v > T::zero()) as u32));
            out.extend_from_slice(&b.pool_idx);
        }
        out.extend(self.hidden.iter().map(|&v| (v > T::zero()) as u32));
        out
    }
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    cols: Vec<T>,
    activation: Vec<T>,
    pool_idx: Vec<u32>,
}

impl<T: Real> ModelState<T> {
    /// Fan-in scaled uniform initialisation, `U(-sqrt(6/fan_in), sqrt(6/fan_in))`; biases zero.
    pub fn init(arch: Arch, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = arch
            .param_shapes()
            .into_iter()
            .map(|(name, shape)| {
                let mut t = Tensor::zeros(name, shape);
                if t.shape.len() > 1 {
                    let fan_in: usize = t.shape[1..].iter().product();
                    let limit = (6.0 / fan_in as f64).sqrt();
                    t.data.iter_mut().for_each(|v| *v = T::of_f64(rng.gen_range(-limit..limit)));
                }
                t
            })
            .collect();
        Ok(Self { arch, seed, params, generation: 0 })
    }

    pub fn zeros(arch: Arch) -> Result<Self> {
        arch.validate()?;
        let params = arch.param_shapes().into_iter().map(|(n, s)| Tensor::zeros(n, s)).collect();
        Ok(Self { arch, seed: 0, params, generation: 0 })
    }

    /// Builds a model from explicit tensors, checking names, shapes and finiteness.
    pub fn from_params(arch: Arch, seed: u64, params: Vec<Tensor<T>>) -> Result<Self> {
        arch.validate()?;
        let expected = arch.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tensors, architecture needs {}",
                params.len(),
                expected.len()
            )));
        }
        for ((name, shape), t) in expected.iter().zip(&params) {
            if &t.name != name || &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {} {:?} does not fit {name} {shape:?}",
                    t.name, t.shape
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameter tensor {name}")));
            }
        }
        Ok(Self { arch, seed, params, generation: 0 })
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        self.generation += 1;
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(Tensor::zeros_like).collect()
    }

    /// Converts every parameter to another scalar type.
    pub fn cast<U: Real>(&self) -> ModelState<U> {
        ModelState {
            arch: self.arch.clone(),
            seed: self.seed,
            params: self
                .params
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| U::of_f64(v.as_f64())).collect(),
                })
                .collect(),
            generation: self.generation,
        }
    }

    /// Forward pass over `batch` inputs laid out `[batch, c, h, w]`.
    /// Passing `dropout_rng` enables training mode (inverted dropout).
    pub fn forward(&self, input: &[T], batch: usize, dropout_rng: Option<&mut ChaCha8Rng>) -> Result<ForwardCache<T>> {
        let a = &self.arch;
        if input.len() != batch * a.input_len() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} values, expected {batch} x {}",
                input.len(),
                a.input_len()
            )));
        }
        let shapes = a.conv_shapes();
        let mut blocks = Vec::with_capacity(shapes.len());
        let mut x = input.to_vec();
        for (i, s) in shapes.iter().enumerate() {
            let (mut y, cols) =
                layers::conv_forward(s, batch, &x, &self.params[2 * i].data, &self.params[2 * i + 1].data);
            layers::relu_forward(&mut y);
            let (pooled, pool_idx) = layers::maxpool_forward(batch * s.c_out, s.h, s.w, &y);
            blocks.push(BlockCache { cols, activation: y, pool_idx });
            x = pooled;
        }
        let flat = x;
        let d = 2 * shapes.len();
        let (fl, dw, k) = (a.flat_len(), a.dense_width, a.n_classes);
        let mut hidden = layers::dense_forward(batch, fl, dw, &flat, &self.params[d].data, &self.params[d + 1].data);
        layers::relu_forward(&mut hidden);
        let mut head_input = hidden.clone();
        let mask = match dropout_rng {
            Some(rng) if a.dropout > 0.0 => {
                let scale = T::of_f64(1.0 / (1.0 - a.dropout));
                let m: Vec<T> =
                    (0..hidden.len()).map(|_| if rng.gen::<f64>() < a.dropout { T::zero() } else { scale }).collect();
                layers::dropout_apply(&mut head_input, &m);
                Some(m)
            }
            _ => None,
        };
        let logits =
            layers::dense_forward(batch, dw, k, &head_input, &self.params[d + 2].data, &self.params[d + 3].data);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("logits".into()));
        }
        let probs = layers::softmax(&logits, k);
        Ok(ForwardCache { generation: self.generation, batch, blocks, flat, hidden, mask, head_input, logits, probs })
    }

    /// Class probabilities in evaluation mode.
    pub fn predict(&self, input: &[T], batch: usize) -> Result<Vec<T>> {
        Ok(self.forward(input, batch, None)?.probs)
    }

    /// Parameter gradients given the loss gradient with respect to the logits.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &[T]) -> Result<Vec<Tensor<T>>> {
        if cache.generation != self.generation {
            return Err(Error::StaleCache { cache: cache.generation, model: self.generation });
        }
        let a = &self.arch;
        let n = cache.batch;
        let (fl, dw, k) = (a.flat_len(), a.dense_width, a.n_classes);
        if grad_logits.len() != n * k {
            return Err(Error::ShapeMismatch(format!(
                "logit gradient has {} values, expected {}",
                grad_logits.len(),
                n * k
            )));
        }
        let shapes = a.conv_shapes();
        let d = 2 * shapes.len();
        let mut grads = self.zero_grads();
        let (lo, hi) = grads.split_at_mut(d + 2);
        let (out_w, out_b) = hi.split_at_mut(1);
        let mut dh = layers::dense_backward(
            n,
            dw,
            k,
            &cache.head_input,
            &self.params[d + 2].data,
            grad_logits,
            &mut out_w[0].data,
            &mut out_b[0].data,
        );
        if let Some(m) = &cache.mask {
            layers::dropout_apply(&mut dh, m);
        }
        layers::relu_backward(&cache.hidden, &mut dh);
        let (dense_w, dense_b) = lo[d..].split_at_mut(1);
        let mut dx = layers::dense_backward(
            n,
            fl,
            dw,
            &cache.flat,
            &self.params[d].data,
            &dh,
            &mut dense_w[0].data,
            &mut dense_b[0].data,
        );
        for (i, s) in shapes.iter().enumerate().rev() {
            let b = &cache.blocks[i];
            let mut dy = vec![T::zero(); b.activation.len()];
            layers::maxpool_backward(&b.pool_idx, &dx, &mut dy);
            layers::relu_backward(&b.activation, &mut dy);
            let mut dinput = if i > 0 { Some(vec![T::zero(); n * s.in_len()]) } else { None };
            let (gw, gb) = lo[2 * i..2 * i + 2].split_at_mut(1);
            layers::conv_backward(
                s,
                n,
                &b.cols,
                &self.params[2 * i].data,
                &dy,
                &mut gw[0].data,
                &mut gb[0].data,
                dinput.as_deref_mut(),
            );
            if let Some(g) = dinput {
                dx = g;
            }
        }
        Ok(grads)
    }
}

/// Weighted categorical cross-entropy over probability rows.
///
/// Returns `sum_i w[c_i] * -ln p_i[c_i] / sum_i w[c_i]` and its gradient with
/// respect to the logits, `w[c_i] * (p_i - onehot_i) / sum_i w[c_i]`.
pub fn weighted_cross_entropy<T: Real>(
    probs: &[T],
    n_classes: usize,
    targets: &[usize],
    class_weights: &[f64],
) -> Result<(f64, Vec<T>)> {
    if probs.len() != targets.len() * n_classes || class_weights.len() != n_classes {
        return Err(Error::ShapeMismatch(format!(
            "{} probabilities, {} targets, {} weights for {n_classes} classes",
            probs.len(),
            targets.len(),
            class_weights.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= n_classes) {
        return Err(Error::UnknownClass(format!("target {t} out of range")));
    }
    if targets.iter().any(|&t| class_weights[t].is_nan() || class_weights[t] < 0.0) {
        return Err(Error::param("class_weights", "weights must be non-negative"));
    }
    let total: f64 = targets.iter().map(|&t| class_weights[t]).sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::param("class_weights", "total batch weight is zero"));
    }
    // Weights relative to the largest one present: a uniform weighting becomes
    // exactly 1.0 per sample and reproduces the unweighted mean bit for bit.
    let reference = targets.iter().map(|&t| class_weights[t]).fold(0.0, f64::max);
    let total: f64 = targets.iter().map(|&t| class_weights[t] / reference).sum();
    let mut loss = 0.0;
    let mut grad = vec![T::zero(); probs.len()];
    for (i, &t) in targets.iter().enumerate() {
        let w = class_weights[t] / reference;
        let row = &probs[i * n_classes..(i + 1) * n_classes];
        loss += w * -row[t].as_f64().max(f64::MIN_POSITIVE).ln();
        for c in 0..n_classes {
            let y = if c == t { 1.0 } else { 0.0 };
            grad[i * n_classes + c] = T::of_f64(w * (row[c].as_f64() - y) / total);
        }
    }
    Ok((loss / total, grad))
}
