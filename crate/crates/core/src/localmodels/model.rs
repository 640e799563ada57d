use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, F3Error, Result};
use crate::numcore::{check_permutation, Matrix, Tape, Var};

/// `h = relu(U x + c)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FcEmbedding {
    pub u: Matrix,
    pub c: Matrix,
}

/// Gated recurrent unit; the latent is the last hidden state.
///
/// ```text
/// z = σ(W_z x + U_z h + b_z)
/// r = σ(W_r x + U_r h + b_r)
/// n = tanh(W_n x + U_n (r ⊙ h) + b_n)
/// h ← (1 − z) ⊙ h + z ⊙ n
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruEmbedding {
    pub w_z: Matrix,
    pub w_r: Matrix,
    pub w_n: Matrix,
    pub u_z: Matrix,
    pub u_r: Matrix,
    pub u_n: Matrix,
    pub b_z: Matrix,
    pub b_r: Matrix,
    pub b_n: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Embedding {
    Fc(FcEmbedding),
    Gru(GruEmbedding),
}

/// Embedding plus logistic head `softmax(W h + b)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalModel {
    pub embedding: Embedding,
    pub w: Matrix,
    pub b: Matrix,
}

fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Matrix {
    let a = 1.0 / (fan_in.max(1) as f64).sqrt();
    Matrix::random_uniform(rows, cols, -a, a, rng)
}

impl FcEmbedding {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        FcEmbedding {
            u: uniform(hidden, input, input, rng),
            c: uniform(hidden, 1, input, rng),
        }
    }
}

impl GruEmbedding {
    pub fn init<R: Rng + ?Sized>(input: usize, hidden: usize, rng: &mut R) -> Self {
        GruEmbedding {
            w_z: uniform(hidden, input, input, rng),
            w_r: uniform(hidden, input, input, rng),
            w_n: uniform(hidden, input, input, rng),
            u_z: uniform(hidden, hidden, hidden, rng),
            u_r: uniform(hidden, hidden, hidden, rng),
            u_n: uniform(hidden, hidden, hidden, rng),
            b_z: uniform(hidden, 1, hidden, rng),
            b_r: uniform(hidden, 1, hidden, rng),
            b_n: uniform(hidden, 1, hidden, rng),
        }
    }

    /// Per-step input width.
    pub fn input_dim(&self) -> usize {
        self.w_z.cols()
    }

    fn check(&self) -> Result<()> {
        let d = self.w_z.rows();
        let p = self.w_z.cols();
        let expect = [(d, p), (d, p), (d, p), (d, d), (d, d), (d, d), (d, 1), (d, 1), (d, 1)];
        for (m, e) in self.mats().into_iter().zip(expect) {
            if m.shape() != e {
                return Err(F3Error::Shape {
                    op: "gru parameters",
                    left: m.shape(),
                    right: e,
                });
            }
        }
        Ok(())
    }

    fn mats(&self) -> [&Matrix; 9] {
        [
            &self.w_z, &self.w_r, &self.w_n, &self.u_z, &self.u_r, &self.u_n, &self.b_z, &self.b_r, &self.b_n,
        ]
    }

    fn mats_mut(&mut self) -> [&mut Matrix; 9] {
        [
            &mut self.w_z,
            &mut self.w_r,
            &mut self.w_n,
            &mut self.u_z,
            &mut self.u_r,
            &mut self.u_n,
            &mut self.b_z,
            &mut self.b_r,
            &mut self.b_n,
        ]
    }
}

impl Embedding {
    pub fn hidden(&self) -> usize {
        match self {
            Embedding::Fc(e) => e.u.rows(),
            Embedding::Gru(e) => e.w_z.rows(),
        }
    }

    /// Width of one input row: features for FC, `steps × input_dim` for GRU.
    pub fn accepts(&self, width: usize) -> bool {
        match self {
            Embedding::Fc(e) => e.u.cols() == width,
            Embedding::Gru(e) => width > 0 && width % e.input_dim() == 0,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Embedding::Fc(_) => "fc",
            Embedding::Gru(_) => "gru",
        }
    }

    pub fn params(&self) -> Vec<&Matrix> {
        match self {
            Embedding::Fc(e) => vec![&e.u, &e.c],
            Embedding::Gru(e) => e.mats().to_vec(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        match self {
            Embedding::Fc(e) => vec![&mut e.u, &mut e.c],
            Embedding::Gru(e) => e.mats_mut().into_iter().collect(),
        }
    }

    /// Latents for a batch `x` (one sample per row) on the tape, given the
    /// vars of [`Self::params`] in order. Returns `batch × hidden`.
    pub fn forward_var(&self, tape: &mut Tape, params: &[Var], x: &Matrix) -> Result<Var> {
        if !self.accepts(x.cols()) {
            return contract(format!(
                "{} embedding cannot read inputs of width {}",
                self.kind(),
                x.cols()
            ));
        }
        match self {
            Embedding::Fc(_) => {
                let xv = tape.leaf(x.clone());
                let pre = tape.matmul_t(xv, params[0])?;
                let pre = tape.add_row_broadcast(pre, params[1])?;
                Ok(tape.relu(pre))
            }
            Embedding::Gru(e) => {
                e.check()?;
                let p = e.input_dim();
                let steps = x.cols() / p;
                let d = e.w_z.rows();
                let [w_z, w_r, w_n, u_z, u_r, u_n, b_z, b_r, b_n] = params else {
                    return contract("gru embedding needs nine parameter vars");
                };
                let mut h = tape.leaf(Matrix::zeros(x.rows(), d));
                for t in 0..steps {
                    let xt = tape.leaf(Matrix::from_fn(x.rows(), p, |r, c| x.get(r, t * p + c)));
                    let gate = |tape: &mut Tape, w: Var, u: Var, b: Var, hh: Var| -> Result<Var> {
                        let a = tape.matmul_t(xt, w)?;
                        let bb = tape.matmul_t(hh, u)?;
                        let s = tape.add(a, bb)?;
                        tape.add_row_broadcast(s, b)
                    };
                    let zpre = gate(tape, *w_z, *u_z, *b_z, h)?;
                    let z = tape.sigmoid(zpre);
                    let rpre = gate(tape, *w_r, *u_r, *b_r, h)?;
                    let r = tape.sigmoid(rpre);
                    let rh = tape.mul(r, h)?;
                    let npre = gate(tape, *w_n, *u_n, *b_n, rh)?;
                    let n = tape.tanh(npre);
                    let diff = tape.sub(n, h)?;
                    let step = tape.mul(z, diff)?;
                    h = tape.add(h, step)?;
                }
                Ok(h)
            }
        }
    }
}

/// Output of a local forward pass over a batch.
#[derive(Debug, Clone)]
pub struct LocalOutput {
    /// `batch × d` latents.
    pub latents: Matrix,
    /// `batch × classes` probabilities.
    pub probs: Matrix,
}

impl LocalModel {
    pub fn new_fc<R: Rng + ?Sized>(input: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let embedding = Embedding::Fc(FcEmbedding::init(input, hidden, rng));
        Self::with_head(embedding, classes, rng)
    }

    /// GRU model reading `input`-wide steps.
    pub fn new_gru<R: Rng + ?Sized>(input: usize, hidden: usize, classes: usize, rng: &mut R) -> Self {
        let embedding = Embedding::Gru(GruEmbedding::init(input, hidden, rng));
        Self::with_head(embedding, classes, rng)
    }

    fn with_head<R: Rng + ?Sized>(embedding: Embedding, classes: usize, rng: &mut R) -> Self {
        let d = embedding.hidden();
        LocalModel {
            embedding,
            w: uniform(classes, d, d, rng),
            b: uniform(classes, 1, d, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.embedding.hidden()
    }

    pub fn classes(&self) -> usize {
        self.w.rows()
    }

    /// Embedding parameters followed by `W` and `b`.
    pub fn params(&self) -> Vec<&Matrix> {
        let mut out = self.embedding.params();
        out.push(&self.w);
        out.push(&self.b);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = self.embedding.params_mut();
        out.push(&mut self.w);
        out.push(&mut self.b);
        out
    }

    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params().into_iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Latents on the tape; `leaves` as returned by [`Self::leaves`].
    pub fn latents_var(&self, tape: &mut Tape, leaves: &[Var], x: &Matrix) -> Result<Var> {
        let k = leaves.len() - 2;
        self.embedding.forward_var(tape, &leaves[..k], x)
    }

    /// Head probabilities on the tape for given latents.
    pub fn head_var(&self, tape: &mut Tape, leaves: &[Var], latents: Var) -> Result<Var> {
        let k = leaves.len() - 2;
        let logits = tape.matmul_t(latents, leaves[k])?;
        let logits = tape.add_row_broadcast(logits, leaves[k + 1])?;
        tape.softmax_rows(logits)
    }

    /// Latents and class probabilities for each row of `x`.
    pub fn forward(&self, x: &Matrix) -> Result<LocalOutput> {
        let mut tape = Tape::new();
        let leaves = self.leaves(&mut tape);
        let h = self.latents_var(&mut tape, &leaves, x)?;
        let p = self.head_var(&mut tape, &leaves, h)?;
        Ok(LocalOutput {
            latents: tape.value(h).clone(),
            probs: tape.value(p).clone(),
        })
    }

    /// Model with latent coordinates reordered so that `h' = h[p]`; the
    /// class probabilities are unchanged.
    pub fn permuted(&self, p: &[usize]) -> Result<LocalModel> {
        let (embedding, w, b) = match &self.embedding {
            Embedding::Fc(e) => {
                let (e2, w, b) = permute_fc(e, &self.w, &self.b, p)?;
                (Embedding::Fc(e2), w, b)
            }
            Embedding::Gru(e) => {
                let (e2, w, b) = permute_gru(e, &self.w, &self.b, p)?;
                (Embedding::Gru(e2), w, b)
            }
        };
        Ok(LocalModel { embedding, w, b })
    }

    /// Order-sensitive hash of every parameter bit.
    pub fn checksum(&self) -> u64 {
        self.params().iter().fold(0xcbf2_9ce4_8422_2325, |acc, m| {
            (acc ^ m.checksum()).wrapping_mul(0x100_0000_01b3)
        })
    }
}

/// `U[p,:]`, `c[p]`, `W[:,p]`, `b` unchanged.
pub fn permute_fc(e: &FcEmbedding, w: &Matrix, b: &Matrix, p: &[usize]) -> Result<(FcEmbedding, Matrix, Matrix)> {
    check_permutation(p, e.u.rows())?;
    Ok((
        FcEmbedding {
            u: e.u.permute_rows(p),
            c: e.c.permute_rows(p),
        },
        w.permute_cols(p),
        b.clone(),
    ))
}

/// `W_*[p,:]`, `U_*[p,p]`, `b_*[p]`, head `W[:,p]`.
pub fn permute_gru(e: &GruEmbedding, w: &Matrix, b: &Matrix, p: &[usize]) -> Result<(GruEmbedding, Matrix, Matrix)> {
    check_permutation(p, e.w_z.rows())?;
    let both = |m: &Matrix| m.permute_rows(p).permute_cols(p);
    Ok((
        GruEmbedding {
            w_z: e.w_z.permute_rows(p),
            w_r: e.w_r.permute_rows(p),
            w_n: e.w_n.permute_rows(p),
            u_z: both(&e.u_z),
            u_r: both(&e.u_r),
            u_n: both(&e.u_n),
            b_z: e.b_z.permute_rows(p),
            b_r: e.b_r.permute_rows(p),
            b_n: e.b_n.permute_rows(p),
        },
        w.permute_cols(p),
        b.clone(),
    ))
}
