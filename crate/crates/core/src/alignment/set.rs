use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::sinkhorn::{sinkhorn, sinkhorn_exp_var};
use crate::error::{contract, F3Error, Result};
use crate::numcore::{Matrix, Tape, Var};

/// Sinkhorn steps used while training hard alignments.
pub const DEFAULT_HARD_ITERATIONS: usize = 5;

/// Diagonal of the free matrix at initialization in hard mode, so that
/// `exp(free)` starts close to the identity rather than the uniform matrix.
pub const HARD_INIT_DIAG: f64 = 4.0;

const INIT_NOISE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentMode {
    /// Latents are used as delivered.
    #[default]
    None,
    /// One free matrix per client.
    Soft,
    /// One truncated-Sinkhorn matrix per client.
    Hard,
    /// A single free matrix shared by all clients.
    Tied,
}

/// Per-client alignment maps `Pᵢ` (`d_out × d_in`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentSet {
    pub mode: AlignmentMode,
    pub clients: usize,
    pub d_in: usize,
    pub d_out: usize,
    /// Sinkhorn truncation in hard mode.
    pub iterations: usize,
    /// Trainable matrices: one per client (soft, hard), one shared (tied),
    /// none otherwise. In hard mode these are the logs of `K₀`.
    params: Vec<Matrix>,
}

fn rect_identity(rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |i, j| if i == j { 1.0 } else { 0.0 })
}

/// Matrix `P` with `P·h = h[p]`, i.e. `P[i, p[i]] = 1`.
pub fn permutation_matrix(p: &[usize]) -> Result<Matrix> {
    crate::numcore::check_permutation(p, p.len())?;
    let n = p.len();
    Ok(Matrix::from_fn(n, n, |i, j| if p[i] == j { 1.0 } else { 0.0 }))
}

impl AlignmentSet {
    pub fn none(clients: usize, d: usize) -> Self {
        AlignmentSet {
            mode: AlignmentMode::None,
            clients,
            d_in: d,
            d_out: d,
            iterations: DEFAULT_HARD_ITERATIONS,
            params: Vec::new(),
        }
    }

    /// Initial alignment: identity plus `U(0, 0.01)` noise for soft/tied,
    /// `exp(HARD_INIT_DIAG·I + noise)` for hard.
    pub fn new<R: Rng + ?Sized>(
        mode: AlignmentMode,
        clients: usize,
        d_in: usize,
        d_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if mode == AlignmentMode::None && d_in != d_out {
            return contract("alignment mode none cannot change the latent width");
        }
        if mode == AlignmentMode::Hard && d_in != d_out {
            return contract("hard alignment requires square matrices");
        }
        let count = match mode {
            AlignmentMode::None => 0,
            AlignmentMode::Tied => 1,
            AlignmentMode::Soft | AlignmentMode::Hard => clients,
        };
        let scale = if mode == AlignmentMode::Hard {
            HARD_INIT_DIAG
        } else {
            1.0
        };
        let params = (0..count)
            .map(|_| {
                let noise = Matrix::random_uniform(d_out, d_in, 0.0, INIT_NOISE, rng);
                rect_identity(d_out, d_in).scale(scale).add(&noise).expect("same shape")
            })
            .collect();
        Ok(AlignmentSet {
            mode,
            clients,
            d_in,
            d_out,
            iterations: DEFAULT_HARD_ITERATIONS,
            params,
        })
    }

    /// Soft alignment with the given matrices (`tied` uses only the first).
    pub fn from_matrices(mode: AlignmentMode, matrices: Vec<Matrix>) -> Result<Self> {
        let Some(first) = matrices.first() else {
            return contract("at least one alignment matrix is required");
        };
        let (d_out, d_in) = first.shape();
        let clients = matrices.len();
        let mut set = AlignmentSet {
            mode,
            clients,
            d_in,
            d_out,
            iterations: DEFAULT_HARD_ITERATIONS,
            params: Vec::new(),
        };
        set.set_params(match mode {
            AlignmentMode::None => Vec::new(),
            AlignmentMode::Tied => vec![first.clone()],
            _ => matrices,
        })?;
        Ok(set)
    }

    pub fn with_iterations(mut self, iterations: usize) -> Self {
        self.iterations = iterations;
        self
    }

    pub fn params(&self) -> &[Matrix] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Matrix] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: Vec<Matrix>) -> Result<()> {
        let want = match self.mode {
            AlignmentMode::None => 0,
            AlignmentMode::Tied => 1,
            _ => self.clients,
        };
        if params.len() != want {
            return contract(format!("expected {want} alignment matrices, got {}", params.len()));
        }
        for p in &params {
            if p.shape() != (self.d_out, self.d_in) {
                return Err(F3Error::Shape {
                    op: "alignment matrix",
                    left: p.shape(),
                    right: (self.d_out, self.d_in),
                });
            }
        }
        self.params = params;
        Ok(())
    }

    fn param_index(&self, client: usize) -> Result<Option<usize>> {
        if client >= self.clients {
            return Err(F3Error::Index {
                op: "alignment",
                index: client,
                limit: self.clients,
            });
        }
        Ok(match self.mode {
            AlignmentMode::None => None,
            AlignmentMode::Tied => Some(0),
            _ => Some(client),
        })
    }

    /// Effective `Pᵢ`.
    pub fn effective(&self, client: usize) -> Result<Matrix> {
        match self.param_index(client)? {
            None => Ok(Matrix::identity(self.d_in)),
            Some(k) if self.mode == AlignmentMode::Hard => {
                Ok(sinkhorn(&self.params[k].map(f64::exp), self.iterations)?.0)
            }
            Some(k) => Ok(self.params[k].clone()),
        }
    }

    fn check_width(&self, client: usize, width: usize) -> Result<()> {
        if width != self.d_in {
            return Err(F3Error::ClientShape {
                client,
                expected: self.d_in,
                found: width,
            });
        }
        Ok(())
    }

    /// Stacks `(Pᵢ hᵢ)ᵀ` for one sample; each `hᵢ` is a `d×1` or `1×d`
    /// vector.
    pub fn apply(&self, latents: &[Matrix]) -> Result<Matrix> {
        if latents.len() != self.clients {
            return contract(format!(
                "expected {} client latents, got {}",
                self.clients,
                latents.len()
            ));
        }
        let mut out = Matrix::zeros(self.clients, self.d_out);
        for (i, h) in latents.iter().enumerate() {
            if h.rows() != 1 && h.cols() != 1 {
                return Err(F3Error::ClientShape {
                    client: i,
                    expected: self.d_in,
                    found: h.len(),
                });
            }
            self.check_width(i, h.len())?;
            let p = self.effective(i)?;
            let aligned = p.matmul(&Matrix::column(h.data()))?;
            out.row_mut(i).copy_from_slice(aligned.data());
        }
        Ok(out)
    }

    /// Aligns batches of latents, one `batch×d_in` matrix per client,
    /// returning `batch×d_out` matrices `Hᵢ Pᵢᵀ`.
    pub fn apply_batch(&self, latents: &[Matrix]) -> Result<Vec<Matrix>> {
        latents
            .iter()
            .enumerate()
            .map(|(i, h)| {
                self.check_width(i, h.cols())?;
                match self.param_index(i)? {
                    None => Ok(h.clone()),
                    Some(_) => h.matmul_t(&self.effective(i)?),
                }
            })
            .collect()
    }

    /// Places the trainable matrices on the tape.
    pub fn leaves(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.clone())).collect()
    }

    /// Tape version of [`Self::apply_batch`] given the vars returned by
    /// [`Self::leaves`].
    pub fn apply_batch_var(&self, tape: &mut Tape, leaves: &[Var], latents: &[Var]) -> Result<Vec<Var>> {
        let mut effective: Vec<Var> = Vec::with_capacity(leaves.len());
        for &l in leaves {
            effective.push(if self.mode == AlignmentMode::Hard {
                sinkhorn_exp_var(tape, l, self.iterations)?
            } else {
                l
            });
        }
        let mut out = Vec::with_capacity(latents.len());
        for (i, &h) in latents.iter().enumerate() {
            self.check_width(i, tape.value(h).cols())?;
            out.push(match self.param_index(i)? {
                None => h,
                Some(k) => tape.matmul_t(h, effective[k])?,
            });
        }
        Ok(out)
    }

    /// Writes the effective matrices as `client,row,col,value` rows.
    pub fn write_heatmap_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["client", "row", "col", "value"])?;
        for i in 0..self.clients {
            let p = self.effective(i)?;
            for r in 0..p.rows() {
                for c in 0..p.cols() {
                    w.serialize((i, r, c, p.get(r, c)))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}
