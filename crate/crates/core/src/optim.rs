//! Adam, per-epoch cosine annealing and gradient accumulation.

use std::f64::consts::PI;

use crate::autograd::{Tape, Var};
use crate::config::KvDoc;
use crate::error::{Error, Result};
use crate::model::{ForwardPass, ModelParams};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub total_epochs: usize,
    pub eta_min: f64,
    pub accumulation_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-4,
            total_epochs: 50,
            eta_min: 0.0,
            accumulation_steps: 4,
            batch_size: 16,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub const TRAIN_KEYS: &[&str] =
    &["lr", "epochs", "eta_min", "accum_steps", "batch_size", "seed", "beta1", "beta2", "eps"];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0) || !self.initial_lr.is_finite() {
            return Err(Error::config("lr", "must be positive"));
        }
        if !(self.eta_min >= 0.0 && self.eta_min <= self.initial_lr) {
            return Err(Error::config("eta_min", "must lie in [0, lr]"));
        }
        if self.total_epochs == 0 {
            return Err(Error::config("epochs", "must be at least 1"));
        }
        if self.accumulation_steps == 0 {
            return Err(Error::config("accum_steps", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        for (key, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(key, "must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps", "must be positive"));
        }
        Ok(())
    }

    pub fn to_kv(&self, doc: &mut KvDoc) {
        doc.set("lr", self.initial_lr);
        doc.set("epochs", self.total_epochs);
        doc.set("eta_min", self.eta_min);
        doc.set("accum_steps", self.accumulation_steps);
        doc.set("batch_size", self.batch_size);
        doc.set("seed", self.seed);
        doc.set("beta1", self.beta1);
        doc.set("beta2", self.beta2);
        doc.set("eps", self.eps);
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            initial_lr: doc.parse_opt("lr")?.unwrap_or(d.initial_lr),
            total_epochs: doc.parse_opt("epochs")?.unwrap_or(d.total_epochs),
            eta_min: doc.parse_opt("eta_min")?.unwrap_or(d.eta_min),
            accumulation_steps: doc.parse_opt("accum_steps")?.unwrap_or(d.accumulation_steps),
            batch_size: doc.parse_opt("batch_size")?.unwrap_or(d.batch_size),
            seed: doc.parse_opt("seed")?.unwrap_or(d.seed),
            beta1: doc.parse_opt("beta1")?.unwrap_or(d.beta1),
            beta2: doc.parse_opt("beta2")?.unwrap_or(d.beta2),
            eps: doc.parse_opt("eps")?.unwrap_or(d.eps),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `η_min + ½(η_max − η_min)(1 + cos(π · epoch / total))`.
pub fn cosine_lr(epoch: f64, cfg: &TrainConfig) -> Result<f64> {
    let total = cfg.total_epochs as f64;
    if !(0.0..=total).contains(&epoch) {
        return Err(Error::invalid("cosine_lr", format!("epoch {epoch} outside [0, {total}]")));
    }
    Ok(cfg.eta_min + 0.5 * (cfg.initial_lr - cfg.eta_min) * (1.0 + (PI * epoch / total).cos()))
}

/// First and second moment estimates for every parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros = || params.tensors.iter().map(|t| vec![T::zero(); t.tensor.len()]).collect();
        Self { m: zeros(), v: zeros(), step: 0 }
    }
}

/// One bias-corrected Adam update from the gradients stored in `params`;
/// tensors without a gradient are treated as having a zero gradient.
pub fn adam_step<T: Real>(
    params: &mut ModelParams<T>,
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &TrainConfig,
) -> Result<()> {
    if state.m.len() != params.tensors.len()
        || state.m.iter().zip(&params.tensors).any(|(m, t)| m.len() != t.tensor.len())
    {
        return Err(Error::shape("adam_step", "optimizer state does not mirror the parameters"));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let c1 = T::one() - T::of(cfg.beta1.powi(t));
    let c2 = T::one() - T::of(cfg.beta2.powi(t));
    let (lr, eps) = (T::of(lr), T::of(cfg.eps));
    for ((p, m), v) in params.tensors.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let grad = p.tensor.grad().map(<[T]>::to_vec);
        let data = p.tensor.data_mut();
        for i in 0..data.len() {
            let g = grad.as_ref().map_or(T::zero(), |g| g[i]);
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            data[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

/// A mini-batch: images plus integer labels, and for distillation the
/// teachers' logits on the same samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch<T> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub teacher_a: Option<Tensor<T>>,
    pub teacher_b: Option<Tensor<T>>,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// What a loss closure hands back for one mini-batch: the batch-mean loss
/// and the forward pass whose parameter handles receive the gradient.
pub struct BatchLoss {
    pub loss: Var,
    pub pass: ForwardPass,
}

/// Runs `loss_fn` on each batch, scales each batch-mean loss by `1/k`
/// before its backward pass and sums the gradients into `params`.
/// Returns the unscaled per-batch losses.
pub fn accumulate_gradients<T, F>(params: &mut ModelParams<T>, batches: &[Batch<T>], mut loss_fn: F) -> Result<Vec<T>>
where
    T: Real,
    F: FnMut(&mut Tape<T>, &ModelParams<T>, &Batch<T>) -> Result<BatchLoss>,
{
    let Some(first) = batches.first() else {
        return Err(Error::invalid("accumulate_gradients", "no batches"));
    };
    if let Some(b) = batches.iter().find(|b| b.len() != first.len()) {
        return Err(Error::invalid(
            "accumulate_gradients",
            format!("unequal mini-batch sizes {} and {}", first.len(), b.len()),
        ));
    }
    let k = T::of(batches.len() as f64);
    let mut losses = Vec::with_capacity(batches.len());
    for batch in batches {
        let mut tape = Tape::new();
        let BatchLoss { loss, pass } = loss_fn(&mut tape, params, batch)?;
        losses.push(tape.scalar(loss));
        let scaled = tape.scale(loss, T::one() / k);
        let grads = tape.backward(scaled)?;
        pass.accumulate_grads(&tape, &grads, params)?;
    }
    Ok(losses)
}

/// Accumulates over `batches`, applies one Adam step and zeroes the
/// gradients. Returns the unscaled per-batch losses.
pub fn accumulate_and_step<T, F>(
    params: &mut ModelParams<T>,
    state: &mut AdamState<T>,
    batches: &[Batch<T>],
    lr: f64,
    cfg: &TrainConfig,
    loss_fn: F,
) -> Result<Vec<T>>
where
    T: Real,
    F: FnMut(&mut Tape<T>, &ModelParams<T>, &Batch<T>) -> Result<BatchLoss>,
{
    params.zero_grad();
    let losses = accumulate_gradients(params, batches, loss_fn)?;
    adam_step(params, state, lr, cfg)?;
    params.zero_grad();
    Ok(losses)
}
