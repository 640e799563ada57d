use std::io::Write;

use rand_distr::{Distribution, StandardNormal};

use super::bundle::{Part, RepresentationBundle};
use super::train::{minibatches, TrainConfig, Trainable};
use crate::error::{contract, F3Error, Result};
use crate::graphsampler::normalize_adjacency;
use crate::metrics::{count_entropy, macro_f1};
use crate::numcore::{Adam, AdamConfig, Matrix, Tape};
use crate::rng::{stream_rng, streams};

/// Vote counts of the present clients' local predictions for sample `k`.
fn votes(bundle: &RepresentationBundle, k: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0; bundle.classes];
    let mut any = false;
    for i in 0..bundle.clients() {
        if bundle.present[i][k] {
            counts[bundle.local_probs[i].argmax_row(k)] += 1;
            any = true;
        }
    }
    if !any {
        return Err(F3Error::DegenerateSample(k));
    }
    Ok(counts)
}

fn first_max(counts: &[usize]) -> usize {
    (0..counts.len()).fold(0, |best, c| if counts[c] > counts[best] { c } else { best })
}

/// Modal local prediction per sample in `idx`; ties go to the lowest
/// class. Also returns vote shares as scores.
pub fn majority_vote(bundle: &RepresentationBundle, idx: &[usize]) -> Result<(Vec<usize>, Matrix)> {
    let mut pred = Vec::with_capacity(idx.len());
    let mut shares = Matrix::zeros(idx.len(), bundle.classes);
    for (r, &k) in idx.iter().enumerate() {
        let counts = votes(bundle, k)?;
        let total: usize = counts.iter().sum();
        for (c, &v) in counts.iter().enumerate() {
            shares.set(r, c, v as f64 / total as f64);
        }
        pred.push(first_max(&counts));
    }
    Ok((pred, shares))
}

/// Client with the highest macro-F1 on its present validation samples;
/// ties go to the lowest id.
pub fn best_model_selection(bundle: &RepresentationBundle) -> Result<(usize, Vec<f64>)> {
    let val = bundle.indices(Part::Val);
    if val.is_empty() {
        return contract("validation split is empty");
    }
    let scores: Vec<f64> = (0..bundle.clients())
        .map(|i| {
            let seen: Vec<usize> = val.iter().copied().filter(|&k| bundle.present[i][k]).collect();
            let y: Vec<usize> = seen.iter().map(|&k| bundle.labels[k]).collect();
            let p: Vec<usize> = seen.iter().map(|&k| bundle.local_probs[i].argmax_row(k)).collect();
            if seen.is_empty() {
                0.0
            } else {
                macro_f1(&y, &p, bundle.classes)
            }
        })
        .collect();
    let best = (0..scores.len()).fold(0, |b, i| if scores[i] > scores[b] { i } else { b });
    Ok((best, scores))
}

/// Output of client `chosen` on `idx`. Samples it never saw fall back to
/// the majority vote of the clients that did.
pub fn chosen_client_outputs(bundle: &RepresentationBundle, chosen: usize, idx: &[usize]) -> Result<Matrix> {
    let mut out = Matrix::zeros(idx.len(), bundle.classes);
    for (r, &k) in idx.iter().enumerate() {
        if bundle.present[chosen][k] {
            out.row_mut(r).copy_from_slice(bundle.local_probs[chosen].row(k));
        } else {
            let (_, shares) = majority_vote(bundle, &[k])?;
            out.row_mut(r).copy_from_slice(shares.row(0));
        }
    }
    Ok(out)
}

/// Per-sample entropy (natural log) of the local predicted classes of the
/// present clients.
pub fn entropy_diagnostic(bundle: &RepresentationBundle) -> Result<Vec<f64>> {
    (0..bundle.samples())
        .map(|k| Ok(count_entropy(&votes(bundle, k)?)))
        .collect()
}

/// `bins` equal-width bins over `[0, ln C]` as `(left, right, count)`;
/// the last bin is closed.
pub fn entropy_histogram(entropies: &[f64], classes: usize, bins: usize) -> Vec<(f64, f64, usize)> {
    let top = (classes.max(2) as f64).ln();
    let width = top / bins as f64;
    let mut counts = vec![0; bins];
    for &e in entropies {
        let b = ((e / width).floor() as usize).min(bins - 1);
        counts[b] += 1;
    }
    (0..bins)
        .map(|b| (b as f64 * width, (b + 1) as f64 * width, counts[b]))
        .collect()
}

pub fn write_histogram_csv<W: Write>(hist: &[(f64, f64, usize)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["bin_left", "bin_right", "count"])?;
    for (l, r, c) in hist {
        w.write_record([l.to_string(), r.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Fixed projection applied to node features before the κ-NN search: one
/// tanh hidden layer with Gaussian weights scaled by `1/√fan_in`.
#[derive(Debug, Clone)]
pub struct Projection {
    pub w0: Matrix,
    pub w1: Matrix,
}

impl Projection {
    pub fn random(d: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, streams::KNN_PROJECTION);
        let mut draw = |rows: usize, cols: usize| {
            let s = 1.0 / (rows as f64).sqrt();
            Matrix::from_fn(rows, cols, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                s * z
            })
        };
        let w0 = draw(d, hidden);
        let w1 = draw(hidden, hidden);
        Projection { w0, w1 }
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        Ok(x.matmul(&self.w0)?.map(f64::tanh).matmul(&self.w1)?)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Cosine similarity between projected node features, averaged over the
/// samples in `idx` where both clients are present.
pub fn projected_similarity(bundle: &RepresentationBundle, idx: &[usize], proj: &Projection) -> Result<Matrix> {
    let n = bundle.clients();
    let projected: Vec<Matrix> = bundle
        .latents
        .iter()
        .map(|h| proj.apply(&h.select_rows(idx)))
        .collect::<Result<_>>()?;
    let mut sim = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut total = 0.0;
            let mut count = 0;
            for (r, &k) in idx.iter().enumerate() {
                if bundle.present[i][k] && bundle.present[j][k] {
                    total += cosine(projected[i].row(r), projected[j].row(r));
                    count += 1;
                }
            }
            sim.set(i, j, if count == 0 { 0.0 } else { total / count as f64 });
        }
    }
    Ok(sim)
}

/// 0/1 adjacency linking each node to its `kappa` most similar other
/// nodes (ties to the lower index), symmetrized by elementwise max.
pub fn knn_adjacency(similarity: &Matrix, kappa: usize) -> Result<Matrix> {
    let n = similarity.rows();
    if kappa >= n {
        return contract(format!("κ = {kappa} needs more than {n} nodes"));
    }
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        others.sort_by(|&x, &y| similarity.get(i, y).total_cmp(&similarity.get(i, x)).then(x.cmp(&y)));
        for &j in &others[..kappa] {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
    }
    Ok(a)
}

/// Normalized κ-NN graph over the training samples' projected latents.
pub fn knn_graph(bundle: &RepresentationBundle, kappa: usize, seed: u64) -> Result<Matrix> {
    let n = bundle.clients();
    if kappa >= n {
        return contract(format!("κ = {kappa} needs more than {n} clients"));
    }
    let d = bundle.latent_dim();
    let proj = Projection::random(d, d, seed);
    let sim = projected_similarity(bundle, &bundle.indices(Part::Train), &proj)?;
    normalize_adjacency(&knn_adjacency(&sim, kappa)?)
}

/// Linear-softmax head over the concatenated client latents.
#[derive(Debug, Clone)]
pub struct ConcatHead {
    /// `(n·d) × C`; block `i` reads client `i`.
    pub w: Matrix,
    pub b: Matrix,
}

impl ConcatHead {
    pub fn new(clients: usize, d: usize, classes: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, streams::GLOBAL_INIT);
        let a = 1.0 / ((clients * d) as f64).sqrt();
        ConcatHead {
            w: Matrix::random_uniform(clients * d, classes, -a, a, &mut rng),
            b: Matrix::zeros(1, classes),
        }
    }

    /// Concatenated inputs of the samples in `idx` (absent clients are
    /// zero blocks).
    pub fn inputs(bundle: &RepresentationBundle, idx: &[usize]) -> Matrix {
        let d = bundle.latent_dim();
        let n = bundle.clients();
        Matrix::from_fn(idx.len(), n * d, |r, c| bundle.latents[c / d].get(idx[r], c % d))
    }

    fn probs_var(
        &self,
        tape: &mut Tape,
        x: &Matrix,
    ) -> Result<(crate::numcore::Var, crate::numcore::Var, crate::numcore::Var)> {
        let w = tape.leaf(self.w.clone());
        let b = tape.leaf(self.b.clone());
        let xv = tape.leaf(x.clone());
        let logits = tape.matmul(xv, w)?;
        let logits = tape.add_row_broadcast(logits, b)?;
        Ok((tape.softmax_rows(logits)?, w, b))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let (p, _, _) = self.probs_var(&mut tape, x)?;
        Ok(tape.value(p).clone())
    }

    pub fn loss(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        crate::numcore::cross_entropy(&self.predict(x)?, labels)
    }

    /// Loss and `(∂W, ∂b)`.
    pub fn gradients(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, Matrix, Matrix)> {
        let mut tape = Tape::new();
        let (p, w, b) = self.probs_var(&mut tape, x)?;
        let loss = tape.cross_entropy(p, labels)?;
        let g = tape.backward(loss)?;
        Ok((tape.scalar_value(loss), g.get(w), g.get(b)))
    }
}

#[derive(Clone)]
pub(crate) struct ConcatFit<'a> {
    pub head: ConcatHead,
    pub x_train: &'a Matrix,
    pub y_train: &'a [usize],
    pub x_val: &'a Matrix,
    pub y_val: &'a [usize],
    pub batch_size: usize,
    pub seed: u64,
}

impl Trainable for ConcatFit<'_> {
    type Opt = Adam;

    fn optimizer(&self, lr: f64) -> Adam {
        Adam::new(AdamConfig::with_lr(lr), &[&self.head.w, &self.head.b])
    }

    fn epoch(&mut self, opt: &mut Adam, epoch: usize) -> Result<f64> {
        let batches = minibatches(self.y_train.len(), self.batch_size, self.seed, epoch);
        let mut total = 0.0;
        for idx in &batches {
            let y: Vec<usize> = idx.iter().map(|&k| self.y_train[k]).collect();
            let (loss, gw, gb) = self.head.gradients(&self.x_train.select_rows(idx), &y)?;
            opt.step(&mut [&mut self.head.w, &mut self.head.b], &[gw, gb], None);
            total += loss;
        }
        Ok(total / batches.len() as f64)
    }

    fn val_loss(&self) -> Result<f64> {
        self.head.loss(self.x_val, self.y_val)
    }
}

/// Trains the concatenation head with the global early-stopping protocol.
pub fn concat_baseline(
    bundle: &RepresentationBundle,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(ConcatHead, super::train::FitSummary)> {
    let train = bundle.indices(Part::Train);
    let val = bundle.indices(Part::Val);
    let x_train = ConcatHead::inputs(bundle, &train);
    let x_val = ConcatHead::inputs(bundle, &val);
    let y_train: Vec<usize> = train.iter().map(|&k| bundle.labels[k]).collect();
    let y_val: Vec<usize> = val.iter().map(|&k| bundle.labels[k]).collect();
    let init = ConcatFit {
        head: ConcatHead::new(bundle.clients(), bundle.latent_dim(), bundle.classes, seed),
        x_train: &x_train,
        y_train: &y_train,
        x_val: &x_val,
        y_val: &y_val,
        batch_size: cfg.batch_size,
        seed,
    };
    let (fitted, summary) = super::train::fit(&init, cfg)?;
    Ok((fitted.head, summary))
}
