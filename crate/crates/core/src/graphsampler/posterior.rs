//! Independent Bernoulli posterior over the edges of the consensus graph.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::adjacency::{normalize_adjacency, normalize_adjacency_var};
use super::reference::ReferenceDistribution;
use super::relax::{check_args, gumbel_from_uniform, DrawCounter, EdgeNoise, RelaxMethod};
use crate::error::{contract, Result};
use crate::numcore::{sigmoid, CustomOp, Matrix, Tape, Var};

/// Bernoulli edge probabilities `θ = sigmoid(logits)` with the relaxation
/// used to sample them.
///
/// In symmetric mode only the strict upper triangle of `logits` is read;
/// the lower triangle mirrors it. The diagonal is never sampled: every node
/// keeps a unit self-loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphPosterior {
    pub logits: Matrix,
    pub tau: f64,
    #[serde(default)]
    pub reference: ReferenceDistribution,
    #[serde(default)]
    pub method: RelaxMethod,
    pub symmetric: bool,
    #[serde(skip)]
    counter: Arc<DrawCounter>,
}

impl GraphPosterior {
    /// Uninformative start: logits `0 + U(-0.01, 0.01)`.
    pub fn new<R: Rng + ?Sized>(
        n: usize,
        tau: f64,
        reference: ReferenceDistribution,
        method: RelaxMethod,
        symmetric: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let logits = Matrix::random_uniform(n, n, -0.01, 0.01, rng);
        Self::from_logits(logits, tau, reference, method, symmetric)
    }

    pub fn from_logits(
        mut logits: Matrix,
        tau: f64,
        reference: ReferenceDistribution,
        method: RelaxMethod,
        symmetric: bool,
    ) -> Result<Self> {
        check_args(0.5, tau)?;
        let (n, m) = logits.shape();
        if n != m {
            return contract(format!("edge logits must be square, got {n}x{m}"));
        }
        if !logits.is_finite() {
            return contract("edge logits must be finite");
        }
        if symmetric {
            for i in 0..n {
                for j in 0..i {
                    logits.set(i, j, logits.get(j, i));
                }
            }
        }
        for i in 0..n {
            logits.set(i, i, 0.0);
        }
        Ok(GraphPosterior {
            logits,
            tau,
            reference,
            method,
            symmetric,
            counter: Arc::default(),
        })
    }

    /// Posterior with the given edge probabilities (diagonal ignored).
    pub fn from_probs(
        theta: &Matrix,
        tau: f64,
        reference: ReferenceDistribution,
        method: RelaxMethod,
        symmetric: bool,
    ) -> Result<Self> {
        let (n, _) = theta.shape();
        for i in 0..n {
            for j in 0..theta.cols() {
                let p = theta.get(i, j);
                if i != j && !(p > 0.0 && p < 1.0) {
                    return contract(format!("edge probability ({i}, {j}) = {p} outside (0, 1)"));
                }
            }
        }
        let logits = theta.map(|p| if p > 0.0 && p < 1.0 { (p / (1.0 - p)).ln() } else { 0.0 });
        Self::from_logits(logits, tau, reference, method, symmetric)
    }

    pub fn n(&self) -> usize {
        self.logits.rows()
    }

    /// Edges that are sampled, as `(row, col)` pairs in sampling order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && (!self.symmetric || i < j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Edge probability matrix `θ` with a unit diagonal.
    pub fn probs(&self) -> Matrix {
        let n = self.n();
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { sigmoid(self.logit(i, j)) })
    }

    fn logit(&self, i: usize, j: usize) -> f64 {
        if self.symmetric && i > j {
            self.logits.get(j, i)
        } else {
            self.logits.get(i, j)
        }
    }

    /// Deterministic inference graph: normalized `E[A] = θ`.
    pub fn expected_adjacency(&self) -> Matrix {
        normalize_adjacency(&self.probs()).expect("probabilities lie in [0, 1]")
    }

    /// Total reference/Gumbel draws taken so far by this posterior and its
    /// clones.
    pub fn draws(&self) -> u64 {
        self.counter.get()
    }

    /// Keeps symmetric logits consistent after an external update of the
    /// upper triangle.
    pub fn resymmetrize(&mut self) {
        let n = self.n();
        for i in 0..n {
            self.logits.set(i, i, 0.0);
            if self.symmetric {
                for j in 0..i {
                    let v = self.logits.get(j, i);
                    self.logits.set(i, j, v);
                }
            }
        }
    }

    /// Relaxed edge matrix `A` (unit diagonal) and `dA/dlogit` for each
    /// sampled edge, with uniforms supplied by `uniform(edge, slot)`.
    pub fn relax_with(&self, mut uniform: impl FnMut(u64, u64) -> f64) -> (Matrix, Matrix) {
        let n = self.n();
        let mut a = Matrix::identity(n);
        let mut da = Matrix::zeros(n, n);
        let tau = self.tau;
        let edges = self.edges();
        for (e, &(i, j)) in edges.iter().enumerate() {
            let l = self.logit(i, j);
            let (z, dz) = match self.method {
                RelaxMethod::Icdf => {
                    let s = self.reference.from_uniform(uniform(e as u64, 0));
                    let q = self.reference.inverse_cdf_of_logit(l);
                    let z = sigmoid((q - s) / tau);
                    let theta = sigmoid(l);
                    let dens = self.reference.pdf(q);
                    let dq = if dens > 0.0 { theta * (1.0 - theta) / dens } else { 0.0 };
                    (z, z * (1.0 - z) / tau * dq)
                }
                RelaxMethod::Gumbel => {
                    let g1 = gumbel_from_uniform(uniform(e as u64, 0));
                    let g2 = gumbel_from_uniform(uniform(e as u64, 1));
                    let y = sigmoid((l + g1 - g2) / tau);
                    (y, y * (1.0 - y) / tau)
                }
            };
            a.set(i, j, z);
            da.set(i, j, dz);
            if self.symmetric {
                a.set(j, i, z);
            }
        }
        self.counter.add(edges.len() as u64 * self.method.draws_per_sample());
        (a, da)
    }

    /// Raw relaxed edge matrix for optimization step `step`.
    pub fn relaxed_edges(&self, noise: &EdgeNoise, step: u64) -> Matrix {
        self.relax_with(|e, slot| noise.uniform(step, e, slot)).0
    }

    /// Normalized relaxed adjacency `Â` for optimization step `step`.
    pub fn sample_graph(&self, noise: &EdgeNoise, step: u64) -> Matrix {
        normalize_adjacency(&self.relaxed_edges(noise, step)).expect("relaxed edges lie in [0, 1]")
    }

    /// Records a relaxed sample on the tape as a function of the `logits`
    /// leaf, followed by normalization.
    pub fn sample_graph_var(&self, tape: &mut Tape, logits: Var, noise: &EdgeNoise, step: u64) -> Result<Var> {
        let (a, da) = self.relax_with(|e, slot| noise.uniform(step, e, slot));
        let av = tape.custom(
            &[logits],
            a,
            Box::new(RelaxOp {
                da,
                symmetric: self.symmetric,
            }),
        );
        normalize_adjacency_var(tape, av)
    }

    /// Expected adjacency on the tape, differentiable in `logits`.
    pub fn expected_graph_var(&self, tape: &mut Tape, logits: Var) -> Result<Var> {
        let theta = self.probs();
        let n = self.n();
        let da = Matrix::from_fn(n, n, |i, j| {
            if i == j || (self.symmetric && i > j) {
                0.0
            } else {
                let t = theta.get(i, j);
                t * (1.0 - t)
            }
        });
        let av = tape.custom(
            &[logits],
            theta,
            Box::new(RelaxOp {
                da,
                symmetric: self.symmetric,
            }),
        );
        normalize_adjacency_var(tape, av)
    }
}

struct RelaxOp {
    da: Matrix,
    symmetric: bool,
}

impl CustomOp for RelaxOp {
    fn name(&self) -> &'static str {
        "relaxed_edges"
    }

    fn backward(&self, _inputs: &[&Matrix], _out: &Matrix, g: &Matrix) -> Vec<Matrix> {
        let n = g.rows();
        let gl = Matrix::from_fn(n, n, |i, j| {
            let d = self.da.get(i, j);
            if d == 0.0 {
                0.0
            } else if self.symmetric {
                (g.get(i, j) + g.get(j, i)) * d
            } else {
                g.get(i, j) * d
            }
        });
        vec![gl]
    }
}
