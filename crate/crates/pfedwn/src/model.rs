//! Desk-scale learners: multinomial logistic regression and a one-hidden-
//! layer perceptron with tanh activation, trained by plain gradient descent.
//!
//! Parameters live in a flat vector so model exchange and aggregation are
//! elementwise. All accumulation is in f64.

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::substream;

/// Learner architecture descriptor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "arch")]
pub enum Arch {
    /// Linear softmax classifier.
    Softmax { dim: usize, n_classes: usize },
    /// One hidden tanh layer.
    Mlp { dim: usize, hidden: usize, n_classes: usize },
}

impl Arch {
    pub fn param_count(&self) -> usize {
        match *self {
            Arch::Softmax { dim, n_classes } => n_classes * dim + n_classes,
            Arch::Mlp { dim, hidden, n_classes } => {
                hidden * dim + hidden + n_classes * hidden + n_classes
            }
        }
    }

    pub fn dim(&self) -> usize {
        match *self {
            Arch::Softmax { dim, .. } | Arch::Mlp { dim, .. } => dim,
        }
    }

    pub fn n_classes(&self) -> usize {
        match *self {
            Arch::Softmax { n_classes, .. } | Arch::Mlp { n_classes, .. } => n_classes,
        }
    }
}

/// Flat parameter vector with its architecture.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Arch,
    pub values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(arch: Arch) -> Self {
        ModelParams { arch, values: vec![0.0; arch.param_count()] }
    }

    /// Small random initialization drawn from the given generator.
    pub fn random_init<R: Rng>(arch: Arch, scale: f64, rng: &mut R) -> Self {
        let values = (0..arch.param_count())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                scale * z
            })
            .collect();
        ModelParams { arch, values }
    }

    pub fn check_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Writes the parameter vector as little-endian f64 bytes.
    pub fn write_binary<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Reads a parameter vector previously written by [`write_binary`],
    /// validated against the architecture descriptor.
    ///
    /// [`write_binary`]: ModelParams::write_binary
    pub fn read_binary<R: std::io::Read>(arch: Arch, r: &mut R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != 8 * arch.param_count() {
            return Err(Error::Format {
                file: "<model binary>".into(),
                reason: format!(
                    "expected {} parameter bytes, found {}",
                    8 * arch.param_count(),
                    bytes.len()
                ),
            });
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Ok(ModelParams { arch, values })
    }

    /// JSON architecture descriptor accompanying the binary parameters.
    pub fn arch_json(&self) -> String {
        serde_json::to_string(&self.arch).expect("arch serialization")
    }
}

/// Batching strategy for local training.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BatchMode {
    Full,
    Minibatch { size: usize, seed: u64 },
}

/// Local training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Number of local passes; one full-batch pass is one gradient step.
    pub local_epochs: usize,
    pub batch: BatchMode,
    /// L2 regularization strength; zero disables it.
    pub l2: f64,
}

impl TrainConfig {
    pub fn full_batch(learning_rate: f64, local_epochs: usize) -> Self {
        TrainConfig { learning_rate, local_epochs, batch: BatchMode::Full, l2: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) {
            return Err(Error::Parameter("learning_rate must be non-negative".into()));
        }
        if self.local_epochs == 0 {
            return Err(Error::Parameter("local_epochs must be at least 1".into()));
        }
        if self.l2 < 0.0 {
            return Err(Error::Parameter("l2 must be non-negative".into()));
        }
        if let BatchMode::Minibatch { size, .. } = self.batch {
            if size == 0 {
                return Err(Error::Parameter("minibatch size must be at least 1".into()));
            }
        }
        Ok(())
    }
}

fn check_dims(params: &ModelParams, data: &Dataset) -> Result<()> {
    if params.values.len() != params.arch.param_count() {
        return Err(Error::DimensionMismatch(format!(
            "parameter vector has {} entries, architecture expects {}",
            params.values.len(),
            params.arch.param_count()
        )));
    }
    if data.dim() != params.arch.dim() {
        return Err(Error::DimensionMismatch(format!(
            "dataset dimension {} vs model dimension {}",
            data.dim(),
            params.arch.dim()
        )));
    }
    if data.n_classes > params.arch.n_classes() {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} classes, model only {}",
            data.n_classes,
            params.arch.n_classes()
        )));
    }
    Ok(())
}

/// Forward pass: per-row class log-probabilities and, for the MLP, the
/// hidden activations needed for the backward pass.
struct Forward {
    log_probs: Array2<f64>,
    hidden: Option<Array2<f64>>,
}

fn forward(params: &ModelParams, data: &Dataset) -> Forward {
    match params.arch {
        Arch::Softmax { dim, n_classes } => {
            let (w, b) = softmax_views(&params.values, dim, n_classes);
            let logits = data.features.dot(&w.t()) + &b;
            Forward { log_probs: log_softmax(logits), hidden: None }
        }
        Arch::Mlp { dim, hidden, n_classes } => {
            let (w1, b1, w2, b2) = mlp_views(&params.values, dim, hidden, n_classes);
            let mut a1 = data.features.dot(&w1.t()) + &b1;
            a1.mapv_inplace(f64::tanh);
            let logits = a1.dot(&w2.t()) + &b2;
            Forward { log_probs: log_softmax(logits), hidden: Some(a1) }
        }
    }
}

fn softmax_views(values: &[f64], dim: usize, n_classes: usize) -> (Array2<f64>, Array1<f64>) {
    let w = Array2::from_shape_vec((n_classes, dim), values[..n_classes * dim].to_vec())
        .expect("weight shape");
    let b = Array1::from_vec(values[n_classes * dim..].to_vec());
    (w, b)
}

#[allow(clippy::type_complexity)]
fn mlp_views(
    values: &[f64],
    dim: usize,
    hidden: usize,
    n_classes: usize,
) -> (Array2<f64>, Array1<f64>, Array2<f64>, Array1<f64>) {
    let mut off = 0;
    let w1 = Array2::from_shape_vec((hidden, dim), values[off..off + hidden * dim].to_vec())
        .expect("w1 shape");
    off += hidden * dim;
    let b1 = Array1::from_vec(values[off..off + hidden].to_vec());
    off += hidden;
    let w2 = Array2::from_shape_vec((n_classes, hidden), values[off..off + n_classes * hidden].to_vec())
        .expect("w2 shape");
    off += n_classes * hidden;
    let b2 = Array1::from_vec(values[off..].to_vec());
    (w1, b1, w2, b2)
}

fn log_softmax(mut logits: Array2<f64>) -> Array2<f64> {
    for mut row in logits.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        row.mapv_inplace(|v| v - log_sum);
    }
    logits
}

/// Mean cross-entropy over the dataset plus an optional quadratic penalty
/// `(l2/2) * ||theta||^2`.
pub fn loss(params: &ModelParams, data: &Dataset, l2: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Parameter("loss of an empty dataset is undefined".into()));
    }
    check_dims(params, data)?;
    let fwd = forward(params, data);
    let n = data.len() as f64;
    let ce = data
        .labels
        .iter()
        .enumerate()
        .map(|(i, &y)| -fwd.log_probs[[i, y]])
        .sum::<f64>()
        / n;
    let penalty = 0.5 * l2 * params.values.iter().map(|v| v * v).sum::<f64>();
    Ok(ce + penalty)
}

/// Per-sample negative log-likelihoods under the model (no penalty); this is
/// the loss column the EM responsibilities are computed from.
pub fn per_sample_losses(params: &ModelParams, data: &Dataset) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Parameter("per-sample losses of an empty dataset".into()));
    }
    check_dims(params, data)?;
    let fwd = forward(params, data);
    Ok(data.labels.iter().enumerate().map(|(i, &y)| -fwd.log_probs[[i, y]]).collect())
}

/// Analytic gradient of [`loss`].
pub fn gradient(params: &ModelParams, data: &Dataset, l2: f64) -> Result<Vec<f64>> {
    gradient_weighted(params, data, None, l2)
}

/// Gradient of the weighted empirical risk
/// `(1/n) * sum_i w_i * l_i + (l2/2) ||theta||^2`. Uniform weights reduce to
/// the plain mean-loss gradient.
pub fn gradient_weighted(
    params: &ModelParams,
    data: &Dataset,
    sample_weights: Option<&[f64]>,
    l2: f64,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Parameter("gradient of an empty dataset is undefined".into()));
    }
    check_dims(params, data)?;
    if let Some(w) = sample_weights {
        if w.len() != data.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} sample weights vs {} samples",
                w.len(),
                data.len()
            )));
        }
    }
    let fwd = forward(params, data);
    let n = data.len();
    let n_classes = params.arch.n_classes();

    // Residual matrix (softmax probabilities minus one-hot labels), scaled by
    // the per-sample weight over n.
    let mut residual = Array2::zeros((n, n_classes));
    for i in 0..n {
        let w = sample_weights.map_or(1.0, |w| w[i]) / n as f64;
        for c in 0..n_classes {
            residual[[i, c]] = w * fwd.log_probs[[i, c]].exp();
        }
        residual[[i, data.labels[i]]] -= sample_weights.map_or(1.0, |w| w[i]) / n as f64;
    }

    let mut grad = vec![0.0; params.values.len()];
    match params.arch {
        Arch::Softmax { dim, n_classes } => {
            let gw = residual.t().dot(&data.features);
            let gb = residual.sum_axis(ndarray::Axis(0));
            grad[..n_classes * dim].copy_from_slice(gw.as_slice().expect("contiguous"));
            grad[n_classes * dim..].copy_from_slice(gb.as_slice().expect("contiguous"));
        }
        Arch::Mlp { dim, hidden, n_classes } => {
            let (_, _, w2, _) = mlp_views(&params.values, dim, hidden, n_classes);
            let a1 = fwd.hidden.expect("mlp forward keeps activations");
            let gw2 = residual.t().dot(&a1);
            let gb2 = residual.sum_axis(ndarray::Axis(0));
            // Backprop through tanh: d/dz tanh = 1 - tanh^2.
            let mut hidden_grad = residual.dot(&w2);
            hidden_grad.zip_mut_with(&a1, |g, a| *g *= 1.0 - a * a);
            let gw1 = hidden_grad.t().dot(&data.features);
            let gb1 = hidden_grad.sum_axis(ndarray::Axis(0));
            let mut off = 0;
            grad[off..off + hidden * dim].copy_from_slice(gw1.as_slice().expect("contiguous"));
            off += hidden * dim;
            grad[off..off + hidden].copy_from_slice(gb1.as_slice().expect("contiguous"));
            off += hidden;
            grad[off..off + n_classes * hidden]
                .copy_from_slice(gw2.as_slice().expect("contiguous"));
            off += n_classes * hidden;
            grad[off..].copy_from_slice(gb2.as_slice().expect("contiguous"));
        }
    }
    if l2 > 0.0 {
        for (g, v) in grad.iter_mut().zip(&params.values) {
            *g += l2 * v;
        }
    }
    Ok(grad)
}

/// Predicted class per row: the argmax of the logits, ties broken by the
/// lowest class index.
pub fn predict(params: &ModelParams, data: &Dataset) -> Result<Vec<usize>> {
    if data.is_empty() {
        return Ok(Vec::new());
    }
    check_dims(params, data)?;
    let fwd = forward(params, data);
    Ok(fwd
        .log_probs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (c, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

/// Central-difference gradient, component `i` being
/// `(loss(theta + h e_i) - loss(theta - h e_i)) / (2h)`.
pub fn finite_diff_grad(params: &ModelParams, data: &Dataset, l2: f64, h: f64) -> Result<Vec<f64>> {
    if !(h > 0.0) {
        return Err(Error::Parameter("finite-difference step must be positive".into()));
    }
    let mut probe = params.clone();
    let mut grad = Vec::with_capacity(params.values.len());
    for i in 0..params.values.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + h;
        let plus = loss(&probe, data, l2)?;
        probe.values[i] = orig - h;
        let minus = loss(&probe, data, l2)?;
        probe.values[i] = orig;
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

/// Runs local gradient descent per the configuration and returns the updated
/// parameters. Full-batch mode performs exactly `local_epochs` deterministic
/// steps; minibatch mode shuffles per epoch from the configured seed.
pub fn local_train(params: &ModelParams, data: &Dataset, config: &TrainConfig) -> Result<ModelParams> {
    config.validate()?;
    check_dims(params, data)?;
    let mut current = params.clone();
    let mut step = 0usize;
    match config.batch {
        BatchMode::Full => {
            for _ in 0..config.local_epochs {
                step += 1;
                descend(&mut current, data, config, step)?;
            }
        }
        BatchMode::Minibatch { size, seed } => {
            for epoch in 0..config.local_epochs {
                let mut order: Vec<usize> = (0..data.len()).collect();
                let mut rng = substream(seed, "minibatch", epoch as u64);
                order.shuffle(&mut rng);
                for chunk in order.chunks(size) {
                    step += 1;
                    let batch = data.subset(chunk);
                    descend(&mut current, &batch, config, step)?;
                }
            }
        }
    }
    Ok(current)
}

fn descend(current: &mut ModelParams, batch: &Dataset, config: &TrainConfig, step: usize) -> Result<()> {
    let grad = gradient(current, batch, config.l2)?;
    for (v, g) in current.values.iter_mut().zip(&grad) {
        *v -= config.learning_rate * g;
    }
    if !current.check_finite() {
        return Err(Error::Divergence { step });
    }
    Ok(())
}
