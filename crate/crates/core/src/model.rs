//! Shallow softmax classifier: 784 inputs, 2 outputs, cross-entropy loss,
//! mini-batch SGD.
//!
//! Parameters live in one flat vector. Weight `(pixel, class)` sits at
//! `pixel * N_CLASSES + class`, followed by the two biases. [`ModelParams::flat`]
//! is the only flattening used anywhere in the crate (aggregation, PCA input,
//! checkpoints).

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, DigitSample, PIXELS};
use crate::error::{Error, Result};
use crate::rng;

pub const N_CLASSES: usize = 2;
pub const N_WEIGHTS: usize = PIXELS * N_CLASSES;
pub const N_PARAMS: usize = N_WEIGHTS + N_CLASSES;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    flat: Vec<f64>,
}

impl ModelParams {
    pub fn zeros() -> Self {
        Self {
            flat: vec![0.0; N_PARAMS],
        }
    }

    /// Weights uniform in `[-0.05, 0.05]`, biases zero.
    pub fn init(seed: u64) -> Self {
        let mut rng = rng::rng_for(seed, &[rng::stream::INIT]);
        let mut flat: Vec<f64> = (0..N_WEIGHTS).map(|_| rng.gen_range(-0.05..=0.05)).collect();
        flat.extend([0.0; N_CLASSES]);
        Self { flat }
    }

    pub fn from_flat(flat: Vec<f64>) -> Result<Self> {
        if flat.len() != N_PARAMS {
            return Err(Error::Shape {
                expected: N_PARAMS,
                actual: flat.len(),
            });
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Precondition("parameters must be finite".into()));
        }
        Ok(Self { flat })
    }

    /// `weights` is row-major `PIXELS × N_CLASSES`.
    pub fn from_parts(weights: &[f64], biases: [f64; N_CLASSES]) -> Result<Self> {
        if weights.len() != N_WEIGHTS {
            return Err(Error::Shape {
                expected: N_WEIGHTS,
                actual: weights.len(),
            });
        }
        let mut flat = weights.to_vec();
        flat.extend(biases);
        Self::from_flat(flat)
    }

    pub fn flat(&self) -> &[f64] {
        &self.flat
    }

    pub fn into_flat(self) -> Vec<f64> {
        self.flat
    }

    pub fn weights(&self) -> &[f64] {
        &self.flat[..N_WEIGHTS]
    }

    pub fn biases(&self) -> &[f64] {
        &self.flat[N_WEIGHTS..]
    }

    #[inline]
    pub fn weight(&self, pixel: usize, class: usize) -> f64 {
        self.flat[pixel * N_CLASSES + class]
    }

    pub fn is_finite(&self) -> bool {
        self.flat.iter().all(|v| v.is_finite())
    }

    /// Writes the flat vector as a two-column checkpoint CSV.
    pub fn write_checkpoint<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "value"])?;
        for (i, v) in self.flat.iter().enumerate() {
            w.write_record([i.to_string(), format!("{v:e}")])?;
        }
        w.flush().map_err(|e| Error::io("<checkpoint>", e))?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut flat = Vec::with_capacity(N_PARAMS);
        for (expected, record) in r.records().enumerate() {
            let record = record?;
            let index: usize = record
                .get(0)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format("checkpoint index column".into()))?;
            if index != expected {
                return Err(Error::Format(format!(
                    "checkpoint row {expected} carries index {index}"
                )));
            }
            let value: f64 = record
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format("checkpoint value column".into()))?;
            flat.push(value);
        }
        Self::from_flat(flat)
    }
}

/// Weight portion of a local-minus-global update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightUpdate {
    pub node_id: usize,
    pub round: usize,
    pub delta: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 32,
            local_epochs: 1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        // lr = 0 is accepted so the zero-step limit can be exercised directly.
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be a finite non-negative real".into()));
        }
        if self.batch_size == 0 || self.local_epochs == 0 {
            return Err(Error::Config("batch_size and local_epochs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Softmax with the max logit subtracted before exponentiation.
pub fn softmax(logits: [f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = logits.map(|z| (z - max).exp());
    let sum: f64 = exps.iter().sum();
    exps.map(|e| e / sum)
}

fn logits_of(params: &ModelParams, pixel: impl Fn(usize) -> f64) -> [f64; N_CLASSES] {
    let w = params.weights();
    let b = params.biases();
    let mut z = [b[0], b[1]];
    for i in 0..PIXELS {
        let x = pixel(i);
        z[0] += x * w[2 * i];
        z[1] += x * w[2 * i + 1];
    }
    z
}

/// Logits for a byte-encoded sample. Four interleaved partial sums per class
/// keep the loop vectorizable while fixing the summation order.
fn sample_logits(params: &ModelParams, sample: &DigitSample) -> [f64; N_CLASSES] {
    let w = params.weights();
    let mut acc0 = [0.0f64; 4];
    let mut acc1 = [0.0f64; 4];
    let px = sample.raw_pixels();
    for (xs, ws) in px.chunks_exact(4).zip(w.chunks_exact(8)) {
        for lane in 0..4 {
            let x = f64::from(xs[lane]) * dataset::PIXEL_SCALE;
            acc0[lane] += x * ws[2 * lane];
            acc1[lane] += x * ws[2 * lane + 1];
        }
    }
    let b = params.biases();
    [
        b[0] + (acc0[0] + acc0[1]) + (acc0[2] + acc0[3]),
        b[1] + (acc1[0] + acc1[1]) + (acc1[2] + acc1[3]),
    ]
}

/// Class probabilities for a flattened 784-pixel input.
pub fn forward(params: &ModelParams, pixels: &[f64]) -> Result<[f64; N_CLASSES]> {
    if pixels.len() != PIXELS {
        return Err(Error::Shape {
            expected: PIXELS,
            actual: pixels.len(),
        });
    }
    Ok(softmax(logits_of(params, |i| pixels[i])))
}

pub fn predict_proba(params: &ModelParams, sample: &DigitSample) -> [f64; N_CLASSES] {
    softmax(sample_logits(params, sample))
}

/// Label 1 only when its probability is strictly larger.
pub fn predict(params: &ModelParams, sample: &DigitSample) -> u8 {
    let p = predict_proba(params, sample);
    u8::from(p[1] > p[0])
}

/// Mean cross-entropy over `batch` together with its gradient (flat layout).
pub fn loss_and_gradient(params: &ModelParams, batch: &[DigitSample]) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; N_PARAMS];
    let loss = accumulate_gradient(params, batch.iter(), &mut grad);
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    (loss * scale, grad)
}

/// Adds the summed gradient over `batch` into `grad`; returns the summed loss.
fn accumulate_gradient<'a>(
    params: &ModelParams,
    batch: impl Iterator<Item = &'a DigitSample>,
    grad: &mut [f64],
) -> f64 {
    let mut loss = 0.0;
    for sample in batch {
        let z = sample_logits(params, sample);
        let p = softmax(z);
        let y = sample.class_label as usize;
        // log-sum-exp form keeps the loss finite under saturation
        let max = z[0].max(z[1]);
        loss += max + ((z[0] - max).exp() + (z[1] - max).exp()).ln() - z[y];
        let mut err = p;
        err[y] -= 1.0;
        for (g, &b) in grad[..N_WEIGHTS].chunks_exact_mut(2).zip(sample.raw_pixels()) {
            let x = f64::from(b) * dataset::PIXEL_SCALE;
            g[0] += x * err[0];
            g[1] += x * err[1];
        }
        grad[N_WEIGHTS] += err[0];
        grad[N_WEIGHTS + 1] += err[1];
    }
    loss
}

pub fn mean_loss(params: &ModelParams, data: &[DigitSample]) -> f64 {
    loss_and_gradient(params, data).0
}

/// Result of one node's local training pass.
#[derive(Debug, Clone)]
pub struct LocalTraining {
    pub local: ModelParams,
    pub update: WeightUpdate,
    pub bias_delta: [f64; N_CLASSES],
    pub n_samples: usize,
}

impl LocalTraining {
    /// Full local-minus-global vector (weights then biases).
    pub fn full_delta(&self) -> Vec<f64> {
        let mut d = self.update.delta.clone();
        d.extend(self.bias_delta);
        d
    }
}

/// Runs `cfg.local_epochs` shuffled passes of mini-batch SGD starting from
/// `global` and packages the difference as an update.
pub fn train_local(
    global: &ModelParams,
    data: &[DigitSample],
    cfg: &TrainConfig,
    node_id: usize,
    round: usize,
) -> Result<LocalTraining> {
    if data.is_empty() {
        return Err(Error::Precondition("local training needs at least one sample".into()));
    }
    cfg.validate()?;
    let mut rng = rng::rng_for(cfg.seed, &[rng::stream::TRAIN]);
    let mut local = global.clone();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; N_PARAMS];
    for _ in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            accumulate_gradient(&local, batch.iter().map(|&i| &data[i]), &mut grad);
            let step = cfg.learning_rate / batch.len() as f64;
            for (w, g) in local.flat.iter_mut().zip(&grad) {
                *w -= step * g;
            }
        }
    }
    let delta: Vec<f64> = local
        .weights()
        .iter()
        .zip(global.weights())
        .map(|(l, g)| l - g)
        .collect();
    let bias_delta = [
        local.biases()[0] - global.biases()[0],
        local.biases()[1] - global.biases()[1],
    ];
    Ok(LocalTraining {
        local,
        update: WeightUpdate {
            node_id,
            round,
            delta,
        },
        bias_delta,
        n_samples: data.len(),
    })
}

/// Fraction of samples whose predicted label matches `class_label`.
pub fn accuracy(params: &ModelParams, data: &[DigitSample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Precondition("accuracy of an empty dataset".into()));
    }
    let hits = data
        .iter()
        .filter(|s| predict(params, s) == s.class_label)
        .count();
    Ok(hits as f64 / data.len() as f64)
}
