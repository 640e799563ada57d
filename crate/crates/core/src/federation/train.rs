use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::globalmodel::{GlobalBatch, GlobalLeaves, GlobalModel, GraphUse};
use crate::graphsampler::EdgeNoise;
use crate::numcore::{Adam, AdamConfig, Matrix, Tape, Var};
use crate::rng::{stream_rng, streams};
use rand::seq::SliceRandom;

/// Global training protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Minibatch size; 0 means full batch.
    pub batch_size: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub patience: usize,
    /// Candidate learning rates; the one with the lowest validation loss
    /// wins, ties going to the earlier entry.
    pub learning_rates: Vec<f64>,
    pub hidden: usize,
    pub skip: bool,
    /// Learning-rate multiplier of the edge logits.
    pub edge_lr_scale: f64,
    /// Learning-rate multiplier of client parameters in the VFL variants.
    pub local_lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 500,
            batch_size: 32,
            patience: 50,
            learning_rates: vec![0.01, 0.001],
            hidden: crate::globalmodel::DEFAULT_HIDDEN,
            skip: true,
            edge_lr_scale: 1.0,
            local_lr_scale: 1.0,
        }
    }
}

/// Something trained epoch by epoch and judged on a validation loss.
pub(crate) trait Trainable: Clone {
    type Opt;
    fn optimizer(&self, lr: f64) -> Self::Opt;
    /// One pass over the training data; `epoch` keys any randomness.
    /// Returns the mean training loss of its minibatches.
    fn epoch(&mut self, opt: &mut Self::Opt, epoch: usize) -> Result<f64>;
    fn val_loss(&self) -> Result<f64>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitSummary {
    pub lr: f64,
    /// Epochs run with the chosen learning rate.
    pub epochs_run: usize,
    /// Epochs run across all candidate learning rates.
    pub total_epochs: usize,
    pub best_val_loss: f64,
    pub train_losses: Vec<f64>,
    pub val_losses: Vec<f64>,
}

/// Early stopping per learning rate, keeping the parameters with the best
/// validation loss (the initial parameters included).
pub(crate) fn fit<T: Trainable>(init: &T, cfg: &TrainConfig) -> Result<(T, FitSummary)> {
    let mut best: Option<(T, FitSummary)> = None;
    let mut total = 0;
    for &lr in &cfg.learning_rates {
        let mut cur = init.clone();
        let mut opt = cur.optimizer(lr);
        let mut best_val = cur.val_loss()?;
        let mut kept = cur.clone();
        let mut since = 0;
        let mut summary = FitSummary {
            lr,
            epochs_run: 0,
            total_epochs: 0,
            best_val_loss: best_val,
            train_losses: Vec::new(),
            val_losses: Vec::new(),
        };
        for epoch in 0..cfg.max_epochs {
            summary.train_losses.push(cur.epoch(&mut opt, epoch)?);
            let v = cur.val_loss()?;
            summary.val_losses.push(v);
            summary.epochs_run = epoch + 1;
            if v < best_val {
                best_val = v;
                kept = cur.clone();
                since = 0;
            } else {
                since += 1;
                if since >= cfg.patience {
                    break;
                }
            }
        }
        total += summary.epochs_run;
        summary.best_val_loss = best_val;
        if best.as_ref().is_none_or(|(_, b)| best_val < b.best_val_loss) {
            best = Some((kept, summary));
        }
    }
    let (model, mut summary) = match best {
        Some(b) => b,
        None => (
            init.clone(),
            FitSummary {
                lr: 0.0,
                epochs_run: 0,
                total_epochs: 0,
                best_val_loss: init.val_loss()?,
                train_losses: Vec::new(),
                val_losses: Vec::new(),
            },
        ),
    };
    summary.total_epochs = total;
    Ok((model, summary))
}

/// Per-parameter learning-rate multipliers: `edge` on the edge logits,
/// 1 elsewhere.
pub(crate) fn edge_scales(model: &GlobalModel, edge: f64) -> Vec<f64> {
    let mut s = vec![1.0; model.params().len()];
    if model.posterior().is_some() {
        *s.last_mut().expect("logits are a parameter") = edge;
    }
    s
}

/// The server-side F³ objective on fixed latents.
#[derive(Clone)]
pub(crate) struct GlobalFit<'a> {
    pub model: GlobalModel,
    pub train: &'a GlobalBatch,
    pub val: &'a GlobalBatch,
    pub noise: EdgeNoise,
    pub graph_samples: usize,
    pub edge_lr_scale: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Optimizer steps taken so far; keys the graph samples.
    pub steps: usize,
}

/// Graph-sample keys of optimizer step `step`.
pub(crate) fn sample_keys(step: usize, samples: usize) -> Vec<u64> {
    (0..samples).map(|s| (step * samples + s) as u64).collect()
}

/// Minibatches of `0..len` for one epoch: a seeded shuffle cut into
/// chunks of `size` (one chunk when `size` is 0).
pub(crate) fn minibatches(len: usize, size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..len).collect();
    if size == 0 || size >= len {
        return vec![order];
    }
    let mut rng = stream_rng(seed, streams::BATCH_ORDER + epoch as u64);
    order.shuffle(&mut rng);
    order.chunks(size).map(|c| c.to_vec()).collect()
}

impl Trainable for GlobalFit<'_> {
    type Opt = Adam;

    fn optimizer(&self, lr: f64) -> Adam {
        Adam::new(AdamConfig::with_lr(lr), &self.model.params())
    }

    fn epoch(&mut self, opt: &mut Adam, epoch: usize) -> Result<f64> {
        let batches = minibatches(self.train.len(), self.batch_size, self.seed, epoch);
        let mut total = 0.0;
        for idx in &batches {
            let batch = self.train.select(idx);
            let mut tape = Tape::new();
            let leaves = self.model.leaves(&mut tape);
            let hv: Vec<Var> = batch.latents.iter().map(|h| tape.leaf(h.clone())).collect();
            let keys = sample_keys(self.steps, self.graph_samples);
            let loss = global_loss(&self.model, &mut tape, &leaves, &hv, &batch.labels, &self.noise, &keys)?;
            let grads = tape.backward(loss)?;
            let g: Vec<Matrix> = leaves.all().iter().map(|&v| grads.get(v)).collect();
            let scales = edge_scales(&self.model, self.edge_lr_scale);
            opt.step(&mut self.model.params_mut(), &g, Some(&scales));
            self.model.after_update();
            self.steps += 1;
            total += tape.scalar_value(loss);
        }
        Ok(total / batches.len() as f64)
    }

    fn val_loss(&self) -> Result<f64> {
        self.model.eval_loss(self.val)
    }
}

/// Training loss shared by [`GlobalFit`] and the VFL trainer.
pub(crate) fn global_loss(
    model: &GlobalModel,
    tape: &mut Tape,
    leaves: &GlobalLeaves,
    latents: &[Var],
    labels: &[usize],
    noise: &EdgeNoise,
    keys: &[u64],
) -> Result<Var> {
    model.loss_var(tape, leaves, latents, labels, GraphUse::Sampled { noise, keys })
}
