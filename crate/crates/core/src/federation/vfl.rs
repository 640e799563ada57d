//! End-to-end training in which the server returns latent gradients to
//! the clients every step.

use super::bundle::scatter_rows;
use super::train::{edge_scales, global_loss, minibatches, sample_keys, Trainable};
use crate::error::Result;
use crate::globalmodel::{GlobalBatch, GlobalModel};
use crate::graphsampler::EdgeNoise;
use crate::localmodels::{LocalClient, LocalModel};
use crate::numcore::{Adam, AdamConfig, CustomOp, Matrix, Tape, Var};

/// The present rows of one client within a batch.
#[derive(Debug, Clone)]
pub(crate) struct ClientRows {
    pub x: Matrix,
    /// Batch positions of the rows of `x`.
    pub rows: Vec<usize>,
}

/// Inputs of every client for the samples `idx`, read from each client's
/// own shard.
#[derive(Debug, Clone)]
pub(crate) struct VflBatch {
    pub clients: Vec<ClientRows>,
    pub present: Vec<Vec<bool>>,
    pub labels: Vec<usize>,
}

impl VflBatch {
    pub fn gather(clients: &[LocalClient], labels: &[usize], idx: &[usize]) -> Result<Self> {
        let mut rows = Vec::with_capacity(clients.len());
        let mut present = Vec::with_capacity(clients.len());
        for c in clients {
            let flags: Vec<bool> = idx.iter().map(|&k| c.shard.is_present(k)).collect();
            let pos: Vec<usize> = (0..idx.len()).filter(|&r| flags[r]).collect();
            let samples: Vec<usize> = pos.iter().map(|&r| idx[r]).collect();
            rows.push(ClientRows {
                x: c.shard.rows(c.id, &samples)?,
                rows: pos,
            });
            present.push(flags);
        }
        Ok(VflBatch {
            clients: rows,
            present,
            labels: idx.iter().map(|&k| labels[k]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    /// The samples at batch positions `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> VflBatch {
        let clients = self
            .clients
            .iter()
            .zip(&self.present)
            .map(|(c, flags)| {
                // row of x holding each present batch position
                let mut at = vec![usize::MAX; flags.len()];
                for (r, &pos) in c.rows.iter().enumerate() {
                    at[pos] = r;
                }
                let kept: Vec<usize> = (0..idx.len()).filter(|&j| flags[idx[j]]).collect();
                let src: Vec<usize> = kept.iter().map(|&j| at[idx[j]]).collect();
                ClientRows {
                    x: c.x.select_rows(&src),
                    rows: kept,
                }
            })
            .collect();
        VflBatch {
            clients,
            present: self
                .present
                .iter()
                .map(|p| idx.iter().map(|&k| p[k]).collect())
                .collect(),
            labels: idx.iter().map(|&k| self.labels[k]).collect(),
        }
    }

    /// Server-side batch from the current client models.
    pub fn global_batch(&self, locals: &[LocalModel]) -> Result<GlobalBatch> {
        let latents = locals
            .iter()
            .zip(&self.clients)
            .map(|(m, c)| Ok(scatter_rows(&m.forward(&c.x)?.latents, &c.rows, self.len())))
            .collect::<Result<_>>()?;
        Ok(GlobalBatch {
            latents,
            present: self.present.clone(),
            labels: self.labels.clone(),
        })
    }
}

/// Places row `r` of the input at row `rows[r]` of a `len`-row output.
struct ScatterRows {
    rows: Vec<usize>,
}

impl CustomOp for ScatterRows {
    fn name(&self) -> &'static str {
        "scatter_rows"
    }

    fn backward(&self, _inputs: &[&Matrix], _output: &Matrix, grad: &Matrix) -> Vec<Matrix> {
        vec![grad.select_rows(&self.rows)]
    }
}

fn scatter_var(tape: &mut Tape, h: Var, rows: &[usize], len: usize) -> Var {
    let value = scatter_rows(tape.value(h), rows, len);
    tape.custom(&[h], value, Box::new(ScatterRows { rows: rows.to_vec() }))
}

#[derive(Clone)]
pub(crate) struct VflFit<'a> {
    pub global: GlobalModel,
    pub locals: Vec<LocalModel>,
    pub train: &'a VflBatch,
    pub val: &'a VflBatch,
    pub noise: EdgeNoise,
    pub graph_samples: usize,
    pub edge_lr_scale: f64,
    pub local_lr_scale: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub steps: usize,
}

impl Trainable for VflFit<'_> {
    /// Server optimizer, client optimizer.
    type Opt = (Adam, Adam);

    fn optimizer(&self, lr: f64) -> Self::Opt {
        let local: Vec<&Matrix> = self.locals.iter().flat_map(|m| m.params()).collect();
        (
            Adam::new(AdamConfig::with_lr(lr), &self.global.params()),
            Adam::new(AdamConfig::with_lr(lr * self.local_lr_scale), &local),
        )
    }

    fn epoch(&mut self, opt: &mut Self::Opt, epoch: usize) -> Result<f64> {
        let batches = minibatches(self.train.len(), self.batch_size, self.seed, epoch);
        let mut total = 0.0;
        for idx in &batches {
            let batch = self.train.select(idx);
            total += self.step(opt, &batch)?;
        }
        Ok(total / batches.len() as f64)
    }

    fn val_loss(&self) -> Result<f64> {
        self.global.eval_loss(&self.val.global_batch(&self.locals)?)
    }
}

impl VflFit<'_> {
    fn step(&mut self, opt: &mut (Adam, Adam), batch: &VflBatch) -> Result<f64> {
        let b = batch.len();
        let mut tape = Tape::new();
        let gleaves = self.global.leaves(&mut tape);
        let mut lleaves = Vec::with_capacity(self.locals.len());
        let mut hv = Vec::with_capacity(self.locals.len());
        for (m, c) in self.locals.iter().zip(&batch.clients) {
            let leaves = m.leaves(&mut tape);
            let h = m.latents_var(&mut tape, &leaves, &c.x)?;
            hv.push(scatter_var(&mut tape, h, &c.rows, b));
            lleaves.push(leaves);
        }
        let keys = sample_keys(self.steps, self.graph_samples);
        let loss = global_loss(
            &self.global,
            &mut tape,
            &gleaves,
            &hv,
            &batch.labels,
            &self.noise,
            &keys,
        )?;
        let grads = tape.backward(loss)?;
        let g: Vec<Matrix> = gleaves.all().iter().map(|&v| grads.get(v)).collect();
        let scales = edge_scales(&self.global, self.edge_lr_scale);
        opt.0.step(&mut self.global.params_mut(), &g, Some(&scales));
        self.global.after_update();
        let lg: Vec<Matrix> = lleaves.iter().flatten().map(|&v| grads.get(v)).collect();
        let mut lp: Vec<&mut Matrix> = self.locals.iter_mut().flat_map(|m| m.params_mut()).collect();
        opt.1.step(&mut lp, &lg, None);
        self.steps += 1;
        Ok(tape.scalar_value(loss))
    }
}
