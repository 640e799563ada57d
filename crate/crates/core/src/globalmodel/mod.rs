//! Server-side fusion of client latents: a mean-pooling network and a
//! two-layer GCN over a consensus graph, trained with cross-entropy.
//!
//! Latents are laid out one sample per row. For a batch of `b` samples the
//! aligned latents of the `n` clients are interleaved into a `b·n × d`
//! matrix whose `n`-row blocks are the node feature matrices `Hₖ`.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alignment::AlignmentSet;
use crate::error::{contract, F3Error, Result};
use crate::graphsampler::{EdgeNoise, GraphPosterior};
use crate::numcore::{Matrix, Tape, Var};

/// Hidden width of the global layers.
pub const DEFAULT_HIDDEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalKind {
    MeanPool,
    Gcn,
}

/// Where the GCN's normalized adjacency comes from.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum GraphSource {
    /// `Â = I`.
    Identity,
    /// A fixed normalized adjacency.
    Fixed { adjacency: Matrix },
    /// Learned Bernoulli posterior.
    Learned { posterior: GraphPosterior },
}

/// How a learned graph enters one forward pass.
#[derive(Debug, Clone, Copy)]
pub enum GraphUse<'a> {
    /// Relaxed samples keyed by `(noise, key)`, one per key; the loss is
    /// averaged over them.
    Sampled { noise: &'a EdgeNoise, keys: &'a [u64] },
    /// Expected adjacency `E[A] = θ`.
    Expected,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GlobalModel {
    pub kind: GlobalKind,
    /// `d_out × hidden`.
    pub w0: Matrix,
    /// `hidden × classes`.
    pub w1: Matrix,
    /// `1 × hidden`, mean-pool only.
    pub b0: Option<Matrix>,
    /// `1 × classes`, mean-pool only.
    pub b1: Option<Matrix>,
    /// `d_out × hidden` skip map, GCN only.
    pub skip: Option<Matrix>,
    pub alignment: AlignmentSet,
    pub graph: GraphSource,
}

/// One sample batch as seen by the server.
#[derive(Debug, Clone)]
pub struct GlobalBatch {
    /// Per client, `b × d` latents; rows of absent pairs are zero.
    pub latents: Vec<Matrix>,
    /// Per client, presence of each batch sample.
    pub present: Vec<Vec<bool>>,
    pub labels: Vec<usize>,
}

impl GlobalBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The samples at positions `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> GlobalBatch {
        GlobalBatch {
            latents: self.latents.iter().map(|h| h.select_rows(idx)).collect(),
            present: self
                .present
                .iter()
                .map(|p| idx.iter().map(|&k| p[k]).collect())
                .collect(),
            labels: idx.iter().map(|&k| self.labels[k]).collect(),
        }
    }

    /// Fails on the first sample that no client observed.
    pub fn check(&self) -> Result<()> {
        let b = self.len();
        if self.latents.len() != self.present.len() {
            return contract("latents and presence masks disagree on the client count");
        }
        for (i, (h, p)) in self.latents.iter().zip(&self.present).enumerate() {
            if h.rows() != b || p.len() != b {
                return contract(format!("client {i}: batch has {} rows, expected {b}", h.rows()));
            }
        }
        for k in 0..b {
            if !self.present.iter().any(|p| p[k]) {
                return Err(F3Error::DegenerateSample(k));
            }
        }
        Ok(())
    }
}

/// Tape handles of a model's parameters.
#[derive(Debug, Clone)]
pub struct GlobalLeaves {
    pub w0: Var,
    pub w1: Var,
    pub b0: Option<Var>,
    pub b1: Option<Var>,
    pub skip: Option<Var>,
    pub alignment: Vec<Var>,
    pub logits: Option<Var>,
}

impl GlobalLeaves {
    /// Same order as [`GlobalModel::params_mut`].
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.w0, self.w1];
        v.extend(self.b0);
        v.extend(self.b1);
        v.extend(self.skip);
        v.extend(&self.alignment);
        v.extend(self.logits);
        v
    }

    /// Leaves of `model` from handles listed in [`GlobalModel::params`]
    /// order.
    pub fn from_vars(model: &GlobalModel, vars: &[Var]) -> Result<GlobalLeaves> {
        if vars.len() != model.params().len() {
            return contract(format!(
                "{} handles for {} parameters",
                vars.len(),
                model.params().len()
            ));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        Ok(GlobalLeaves {
            w0: next(),
            w1: next(),
            b0: model.b0.as_ref().map(|_| next()),
            b1: model.b1.as_ref().map(|_| next()),
            skip: model.skip.as_ref().map(|_| next()),
            alignment: (0..model.alignment.params().len()).map(|_| next()).collect(),
            logits: model.posterior().map(|_| next()),
        })
    }
}

impl GlobalModel {
    /// Uniform `±1/√fan_in` weights; biases start at zero.
    pub fn new<R: Rng + ?Sized>(
        kind: GlobalKind,
        alignment: AlignmentSet,
        graph: GraphSource,
        hidden: usize,
        classes: usize,
        skip: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let d = alignment.d_out;
        let a0 = 1.0 / (d as f64).sqrt();
        let a1 = 1.0 / (hidden as f64).sqrt();
        let w0 = Matrix::random_uniform(d, hidden, -a0, a0, rng);
        let w1 = Matrix::random_uniform(hidden, classes, -a1, a1, rng);
        let (b0, b1, skip) = match kind {
            GlobalKind::MeanPool => (Some(Matrix::zeros(1, hidden)), Some(Matrix::zeros(1, classes)), None),
            GlobalKind::Gcn => (
                None,
                None,
                skip.then(|| Matrix::random_uniform(d, hidden, -a0, a0, rng)),
            ),
        };
        let model = GlobalModel {
            kind,
            w0,
            w1,
            b0,
            b1,
            skip,
            alignment,
            graph,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.alignment.clients;
        let d = self.alignment.d_out;
        let h = self.w0.cols();
        let expect = |m: &Matrix, shape: (usize, usize), op: &'static str| -> Result<()> {
            if m.shape() != shape {
                return Err(F3Error::Shape {
                    op,
                    left: m.shape(),
                    right: shape,
                });
            }
            Ok(())
        };
        expect(&self.w0, (d, h), "global W0")?;
        if self.w1.rows() != h {
            return Err(F3Error::Shape {
                op: "global W1",
                left: self.w1.shape(),
                right: (h, self.w1.cols()),
            });
        }
        if let Some(s) = &self.skip {
            expect(s, (d, h), "global skip")?;
        }
        match &self.graph {
            GraphSource::Identity => {}
            GraphSource::Fixed { adjacency } => expect(adjacency, (n, n), "fixed adjacency")?,
            GraphSource::Learned { posterior } => expect(&posterior.logits, (n, n), "edge logits")?,
        }
        if self.kind == GlobalKind::MeanPool && !matches!(self.graph, GraphSource::Identity) {
            return contract("mean pooling does not use a graph");
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.w1.cols()
    }

    pub fn posterior(&self) -> Option<&GraphPosterior> {
        match &self.graph {
            GraphSource::Learned { posterior } => Some(posterior),
            _ => None,
        }
    }

    /// Trainable parameters; the order matches [`GlobalLeaves::all`].
    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v: Vec<&mut Matrix> = vec![&mut self.w0, &mut self.w1];
        v.extend(self.b0.as_mut());
        v.extend(self.b1.as_mut());
        v.extend(self.skip.as_mut());
        v.extend(self.alignment.params_mut().iter_mut());
        if let GraphSource::Learned { posterior } = &mut self.graph {
            v.push(&mut posterior.logits);
        }
        v
    }

    pub fn params(&self) -> Vec<&Matrix> {
        let mut v: Vec<&Matrix> = vec![&self.w0, &self.w1];
        v.extend(self.b0.as_ref());
        v.extend(self.b1.as_ref());
        v.extend(self.skip.as_ref());
        v.extend(self.alignment.params().iter());
        if let GraphSource::Learned { posterior } = &self.graph {
            v.push(&posterior.logits);
        }
        v
    }

    /// Restores invariants after an optimizer step.
    pub fn after_update(&mut self) {
        if let GraphSource::Learned { posterior } = &mut self.graph {
            posterior.resymmetrize();
        }
    }

    pub fn leaves(&self, tape: &mut Tape) -> GlobalLeaves {
        GlobalLeaves {
            w0: tape.leaf(self.w0.clone()),
            w1: tape.leaf(self.w1.clone()),
            b0: self.b0.as_ref().map(|m| tape.leaf(m.clone())),
            b1: self.b1.as_ref().map(|m| tape.leaf(m.clone())),
            skip: self.skip.as_ref().map(|m| tape.leaf(m.clone())),
            alignment: self.alignment.leaves(tape),
            logits: self.posterior().map(|p| tape.leaf(p.logits.clone())),
        }
    }

    /// Class probabilities (`b × classes`) for each adjacency the graph use
    /// produces: one entry per key when sampling, a single entry otherwise.
    pub fn forward_var(
        &self,
        tape: &mut Tape,
        leaves: &GlobalLeaves,
        latents: &[Var],
        graph: GraphUse,
    ) -> Result<Vec<Var>> {
        let n = self.alignment.clients;
        if latents.len() != n {
            return contract(format!("expected latents of {n} clients, got {}", latents.len()));
        }
        let aligned = self.alignment.apply_batch_var(tape, &leaves.alignment, latents)?;
        let x = tape.interleave(&aligned)?;
        match self.kind {
            GlobalKind::MeanPool => {
                let pre = tape.matmul(x, leaves.w0)?;
                let pre = match leaves.b0 {
                    Some(b) => tape.add_row_broadcast(pre, b)?,
                    None => pre,
                };
                let act = tape.relu(pre);
                let pooled = tape.block_mean(act, n)?;
                let logits = tape.matmul(pooled, leaves.w1)?;
                let logits = match leaves.b1 {
                    Some(b) => tape.add_row_broadcast(logits, b)?,
                    None => logits,
                };
                Ok(vec![tape.softmax_rows(logits)?])
            }
            GlobalKind::Gcn => {
                let xw0 = tape.matmul(x, leaves.w0)?;
                let xskip = match leaves.skip {
                    Some(s) => Some(tape.matmul(x, s)?),
                    None => None,
                };
                let adjs: Vec<Option<Var>> = match (&self.graph, graph) {
                    (GraphSource::Identity, _) => vec![None],
                    (GraphSource::Fixed { adjacency }, _) => vec![Some(tape.leaf(adjacency.clone()))],
                    (GraphSource::Learned { posterior }, GraphUse::Expected) => {
                        let l = leaves.logits.expect("learned graph has logits");
                        vec![Some(posterior.expected_graph_var(tape, l)?)]
                    }
                    (GraphSource::Learned { posterior }, GraphUse::Sampled { noise, keys }) => {
                        let l = leaves.logits.expect("learned graph has logits");
                        let mut v = Vec::with_capacity(keys.len());
                        for &k in keys {
                            v.push(Some(posterior.sample_graph_var(tape, l, noise, k)?));
                        }
                        v
                    }
                };
                let mut out = Vec::with_capacity(adjs.len());
                for a in adjs {
                    let first = match a {
                        Some(a) => tape.block_left_mul(a, xw0)?,
                        None => xw0,
                    };
                    let mut hidden = tape.relu(first);
                    if let Some(s) = xskip {
                        hidden = tape.add(hidden, s)?;
                    }
                    let second = match a {
                        Some(a) => tape.block_left_mul(a, hidden)?,
                        None => hidden,
                    };
                    let pooled = tape.block_mean(second, n)?;
                    let logits = tape.matmul(pooled, leaves.w1)?;
                    out.push(tape.softmax_rows(logits)?);
                }
                Ok(out)
            }
        }
    }

    /// Mean cross-entropy, averaged over the graph samples.
    pub fn loss_var(
        &self,
        tape: &mut Tape,
        leaves: &GlobalLeaves,
        latents: &[Var],
        labels: &[usize],
        graph: GraphUse,
    ) -> Result<Var> {
        if labels.is_empty() {
            return contract("loss over an empty batch");
        }
        let probs = self.forward_var(tape, leaves, latents, graph)?;
        let s = probs.len();
        let mut total: Option<Var> = None;
        for p in probs {
            let l = tape.cross_entropy(p, labels)?;
            total = Some(match total {
                Some(t) => tape.add(t, l)?,
                None => l,
            });
        }
        let total = total.expect("at least one graph");
        Ok(if s == 1 {
            total
        } else {
            tape.scale(total, 1.0 / s as f64)
        })
    }

    /// Probabilities for a batch with the inference graph.
    pub fn predict(&self, batch: &GlobalBatch) -> Result<Matrix> {
        batch.check()?;
        let mut tape = Tape::new();
        let leaves = self.leaves(&mut tape);
        let hv: Vec<Var> = batch.latents.iter().map(|h| tape.leaf(h.clone())).collect();
        let p = self.forward_var(&mut tape, &leaves, &hv, GraphUse::Expected)?;
        Ok(tape.value(p[0]).clone())
    }

    /// Loss with the inference graph.
    pub fn eval_loss(&self, batch: &GlobalBatch) -> Result<f64> {
        batch.check()?;
        let mut tape = Tape::new();
        let leaves = self.leaves(&mut tape);
        let hv: Vec<Var> = batch.latents.iter().map(|h| tape.leaf(h.clone())).collect();
        let l = self.loss_var(&mut tape, &leaves, &hv, &batch.labels, GraphUse::Expected)?;
        Ok(tape.scalar_value(l))
    }

    /// Normalized adjacency used at inference.
    pub fn inference_adjacency(&self) -> Matrix {
        let n = self.alignment.clients;
        match &self.graph {
            GraphSource::Identity => Matrix::identity(n),
            GraphSource::Fixed { adjacency } => adjacency.clone(),
            GraphSource::Learned { posterior } => posterior.expected_adjacency(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: GlobalModel = serde_json::from_slice(&std::fs::read(path)?)?;
        m.validate()?;
        Ok(m)
    }
}

/// Training objective on a batch: mean cross-entropy of the global model,
/// averaged over one relaxed graph per key in `keys` when the graph is
/// learned.
pub fn f3_loss(model: &GlobalModel, batch: &GlobalBatch, noise: &EdgeNoise, keys: &[u64]) -> Result<f64> {
    batch.check()?;
    let mut tape = Tape::new();
    let leaves = model.leaves(&mut tape);
    let hv: Vec<Var> = batch.latents.iter().map(|h| tape.leaf(h.clone())).collect();
    let l = model.loss_var(
        &mut tape,
        &leaves,
        &hv,
        &batch.labels,
        GraphUse::Sampled { noise, keys },
    )?;
    Ok(tape.scalar_value(l))
}

/// Writes a square matrix as `row,col,value` rows.
pub fn write_matrix_csv<W: Write>(m: &Matrix, value_name: &str, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row", "col", value_name])?;
    for r in 0..m.rows() {
        for c in 0..m.cols() {
            w.serialize((r, c, m.get(r, c)))?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
