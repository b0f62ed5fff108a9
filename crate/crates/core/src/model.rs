//! Small trainable classifier used as the shared federated model.
//!
//! Multinomial logistic regression when `hidden_dim == 0`, otherwise a
//! one-hidden-layer tanh perceptron with a softmax head. Parameters live in a
//! single flat vector so gradient deltas can be averaged coordinate-wise.
//!
//! Flat layout, row-major:
//! linear: `W[input x classes] | b[classes]`;
//! hidden: `W1[input x hidden] | b1[hidden] | W2[hidden x classes] | b2[classes]`.

use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{DpvsError, Result};
use crate::seed::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
}

impl Layout {
    pub fn new(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Result<Self> {
        let layout = Self {
            input_dim,
            hidden_dim,
            num_classes,
        };
        layout.validate()?;
        Ok(layout)
    }

    pub fn linear(input_dim: usize, num_classes: usize) -> Result<Self> {
        Self::new(input_dim, 0, num_classes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(DpvsError::InvalidLayout("input_dim must be positive".into()));
        }
        if self.num_classes == 0 {
            return Err(DpvsError::InvalidLayout("num_classes must be positive".into()));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        if self.hidden_dim == 0 {
            self.input_dim * self.num_classes + self.num_classes
        } else {
            self.input_dim * self.hidden_dim
                + self.hidden_dim
                + self.hidden_dim * self.num_classes
                + self.num_classes
        }
    }

    fn first_fan_in(&self) -> usize {
        self.input_dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    layout: Layout,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn from_values(layout: Layout, values: Vec<f64>) -> Result<Self> {
        layout.validate()?;
        if values.len() != layout.param_count() {
            return Err(DpvsError::LayoutMismatch {
                expected: layout.param_count(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DpvsError::InvalidArgument(
                "model parameters must be finite".into(),
            ));
        }
        Ok(Self { layout, values })
    }

    pub fn zeros(layout: Layout) -> Result<Self> {
        Self::from_values(layout, vec![0.0; layout.param_count()])
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Per-class softmax probabilities for one feature row.
    pub fn predict_proba(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let l = self.layout;
        if l.hidden_dim == 0 {
            affine(&self.values, x, l.input_dim, l.num_classes)
        } else {
            let (first, second) = self.values.split_at(l.input_dim * l.hidden_dim + l.hidden_dim);
            let hidden: Vec<f64> = affine(first, x, l.input_dim, l.hidden_dim)
                .into_iter()
                .map(f64::tanh)
                .collect();
            affine(second, &hidden, l.hidden_dim, l.num_classes)
        }
    }
}

/// `y = x W + b` where `block = W[rows x cols] | b[cols]`.
fn affine(block: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let (w, b) = block.split_at(rows * cols);
    let mut out = b[..cols].to_vec();
    for (r, &xr) in x.iter().enumerate().take(rows) {
        let row = &w[r * cols..(r + 1) * cols];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xr * wv;
        }
    }
    out
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest probability; ties resolve to the lowest class id.
pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if v.partial_cmp(&values[best]) == Some(Ordering::Greater) {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientUpdate {
    pub client_id: usize,
    pub round: usize,
    pub num_samples: usize,
    pub delta: Vec<f64>,
}

impl GradientUpdate {
    pub fn new(client_id: usize, round: usize, num_samples: usize, delta: Vec<f64>) -> Result<Self> {
        if num_samples == 0 {
            return Err(DpvsError::InvalidArgument(
                "gradient update must cover at least one sample".into(),
            ));
        }
        Ok(Self {
            client_id,
            round,
            num_samples,
            delta,
        })
    }

    pub fn zero(client_id: usize, round: usize, num_samples: usize, layout: Layout) -> Result<Self> {
        Self::new(client_id, round, num_samples, vec![0.0; layout.param_count()])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub sample_index: usize,
    pub correct: bool,
    /// Softmax probability of the predicted class.
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub records: Vec<EvalRecord>,
    /// Percentage in `[0, 100]`.
    pub accuracy: f64,
}

impl Evaluation {
    pub fn num_correct(&self) -> usize {
        self.records.iter().filter(|r| r.correct).count()
    }
}

/// Draw initial parameters uniformly from `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_model(layout: Layout, seed: u64) -> Result<ModelParams> {
    layout.validate()?;
    let mut rng = rng_from_seed(seed);
    let bound = 1.0 / (layout.first_fan_in() as f64).sqrt();
    let values = (0..layout.param_count())
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    ModelParams::from_values(layout, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 1,
            lr: 0.1,
            batch_size: 32,
        }
    }
}

/// Mini-batch gradient descent on softmax cross-entropy, starting at `params`.
///
/// Batches follow a seeded shuffle per epoch. The returned update carries
/// `trained - params` and the shard size.
pub fn local_train(
    params: &ModelParams,
    shard: &LabeledDataset,
    opts: TrainOptions,
    seed: u64,
    client_id: usize,
    round: usize,
) -> Result<GradientUpdate> {
    if shard.is_empty() {
        return Err(DpvsError::Empty("training shard"));
    }
    if !(opts.lr > 0.0) || !opts.lr.is_finite() {
        return Err(DpvsError::InvalidArgument(format!(
            "learning rate must be positive, got {}",
            opts.lr
        )));
    }
    if opts.batch_size == 0 {
        return Err(DpvsError::InvalidArgument("batch_size must be positive".into()));
    }
    check_dims(params.layout(), shard)?;

    let mut rng = rng_from_seed(seed);
    let mut weights = params.values.clone();
    let mut order: Vec<usize> = (0..shard.len()).collect();
    let mut grad = vec![0.0; weights.len()];

    for _ in 0..opts.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(opts.batch_size) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            for &i in batch {
                accumulate_gradient(params.layout, &weights, shard.row(i), shard.label(i), &mut grad);
            }
            let scale = opts.lr / batch.len() as f64;
            for (w, g) in weights.iter_mut().zip(&grad) {
                *w -= scale * g;
            }
        }
    }

    let delta = weights
        .iter()
        .zip(&params.values)
        .map(|(t, p)| t - p)
        .collect();
    GradientUpdate::new(client_id, round, shard.len(), delta)
}

fn check_dims(layout: Layout, data: &LabeledDataset) -> Result<()> {
    if data.num_features() != layout.input_dim {
        return Err(DpvsError::InvalidArgument(format!(
            "dataset has {} features but model expects {}",
            data.num_features(),
            layout.input_dim
        )));
    }
    if data.num_classes() > layout.num_classes {
        return Err(DpvsError::InvalidArgument(format!(
            "dataset has {} classes but model outputs {}",
            data.num_classes(),
            layout.num_classes
        )));
    }
    Ok(())
}

/// Add d(cross-entropy)/d(params) for one sample into `grad`.
fn accumulate_gradient(layout: Layout, w: &[f64], x: &[f64], label: usize, grad: &mut [f64]) {
    let k = layout.num_classes;
    if layout.hidden_dim == 0 {
        let mut d_out = softmax(&affine(w, x, layout.input_dim, k));
        d_out[label] -= 1.0;
        let (gw, gb) = grad.split_at_mut(layout.input_dim * k);
        for (r, &xr) in x.iter().enumerate() {
            for (g, &d) in gw[r * k..(r + 1) * k].iter_mut().zip(&d_out) {
                *g += xr * d;
            }
        }
        for (g, &d) in gb.iter_mut().zip(&d_out) {
            *g += d;
        }
        return;
    }

    let h = layout.hidden_dim;
    let split = layout.input_dim * h + h;
    let (w1, w2) = w.split_at(split);
    let hidden: Vec<f64> = affine(w1, x, layout.input_dim, h)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let mut d_out = softmax(&affine(w2, &hidden, h, k));
    d_out[label] -= 1.0;

    let (g1, g2) = grad.split_at_mut(split);
    let (gw2, gb2) = g2.split_at_mut(h * k);
    let w2_mat = &w2[..h * k];
    let mut d_hidden = vec![0.0; h];
    for j in 0..h {
        let row = &w2_mat[j * k..(j + 1) * k];
        let mut back = 0.0;
        for c in 0..k {
            gw2[j * k + c] += hidden[j] * d_out[c];
            back += row[c] * d_out[c];
        }
        d_hidden[j] = back * (1.0 - hidden[j] * hidden[j]);
    }
    for (g, &d) in gb2.iter_mut().zip(&d_out) {
        *g += d;
    }
    let (gw1, gb1) = g1.split_at_mut(layout.input_dim * h);
    for (r, &xr) in x.iter().enumerate() {
        for (g, &d) in gw1[r * h..(r + 1) * h].iter_mut().zip(&d_hidden) {
            *g += xr * d;
        }
    }
    for (g, &d) in gb1.iter_mut().zip(&d_hidden) {
        *g += d;
    }
}

/// `base + sum_i (n_i / sum_j n_j) * delta_i` (sample-weighted FedAvg).
///
/// Updates are folded in a canonical content order, so the result is
/// bit-identical under any permutation of `updates`, and coalitions that
/// differ only by swapping two identical updates reconstruct identically.
pub fn reconstruct_coalition_model(
    base: &ModelParams,
    updates: &[&GradientUpdate],
) -> Result<ModelParams> {
    if updates.is_empty() {
        return Err(DpvsError::Empty("coalition update set"));
    }
    let dim = base.values.len();
    let round = updates[0].round;
    for u in updates {
        if u.delta.len() != dim {
            return Err(DpvsError::LayoutMismatch {
                expected: dim,
                actual: u.delta.len(),
            });
        }
        if u.round != round {
            return Err(DpvsError::InvalidArgument(format!(
                "coalition mixes rounds {} and {}",
                round, u.round
            )));
        }
        if u.num_samples == 0 {
            return Err(DpvsError::InvalidArgument(
                "gradient update must cover at least one sample".into(),
            ));
        }
    }

    let mut ordered: Vec<&GradientUpdate> = updates.to_vec();
    ordered.sort_by(|a, b| canonical_order(a, b));

    let total: usize = ordered.iter().map(|u| u.num_samples).sum();
    let mut aggregate = vec![0.0; dim];
    for u in &ordered {
        let weight = u.num_samples as f64 / total as f64;
        for (a, d) in aggregate.iter_mut().zip(&u.delta) {
            *a += weight * d;
        }
    }
    let values = base
        .values
        .iter()
        .zip(&aggregate)
        .map(|(b, a)| b + a)
        .collect();
    ModelParams::from_values(base.layout, values)
}

fn canonical_order(a: &GradientUpdate, b: &GradientUpdate) -> Ordering {
    a.num_samples.cmp(&b.num_samples).then_with(|| {
        a.delta
            .iter()
            .zip(&b.delta)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// Evaluate `params` on the rows of `data` listed in `indices`.
pub fn evaluate(params: &ModelParams, data: &LabeledDataset, indices: &[usize]) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(DpvsError::Empty("evaluation subset"));
    }
    check_dims(params.layout(), data)?;
    let mut records = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= data.len() {
            return Err(DpvsError::IndexOutOfRange {
                index: i,
                len: data.len(),
            });
        }
        let proba = params.predict_proba(data.row(i));
        let predicted = argmax(&proba);
        records.push(EvalRecord {
            sample_index: i,
            correct: predicted == data.label(i),
            confidence: proba[predicted].clamp(0.0, 1.0),
        });
    }
    let correct = records.iter().filter(|r| r.correct).count();
    let accuracy = 100.0 * correct as f64 / records.len() as f64;
    Ok(Evaluation { records, accuracy })
}

/// Evaluate on every row of `data`.
pub fn evaluate_all(params: &ModelParams, data: &LabeledDataset) -> Result<Evaluation> {
    let all: Vec<usize> = (0..data.len()).collect();
    evaluate(params, data, &all)
}
