use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{contract, F3Error, Result};
use crate::globalmodel::GlobalBatch;
use crate::localmodels::LocalClient;
use crate::numcore::Matrix;
use crate::rng::{stream_rng, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Train,
    Val,
    Test,
}

/// 70/10/20 split drawn separately within each class, so every part keeps
/// the class proportions (up to rounding).
pub fn stratified_split(labels: &[usize], classes: usize, seed: u64) -> Vec<Part> {
    let mut rng = stream_rng(seed, streams::SPLIT);
    let mut parts = vec![Part::Train; labels.len()];
    for c in 0..classes {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&k| labels[k] == c).collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let train = (0.7 * n as f64).round() as usize;
        let val = (0.1 * n as f64).round() as usize;
        for (r, &k) in idx.iter().enumerate() {
            parts[k] = if r < train {
                Part::Train
            } else if r < train + val {
                Part::Val
            } else {
                Part::Test
            };
        }
    }
    parts
}

/// Per-client tallies of client→server (outbound) and server→client
/// (inbound) messages.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct TransferLedger {
    pub outbound: Vec<u64>,
    pub inbound: Vec<u64>,
}

impl TransferLedger {
    pub fn new(clients: usize) -> Self {
        TransferLedger {
            outbound: vec![0; clients],
            inbound: vec![0; clients],
        }
    }

    /// One exchange with every client: latents up and, when `gradients`,
    /// latent gradients back down.
    pub fn round(&mut self, gradients: bool) {
        self.outbound.iter_mut().for_each(|c| *c += 1);
        if gradients {
            self.inbound.iter_mut().for_each(|c| *c += 1);
        }
    }

    pub fn max_outbound(&self) -> u64 {
        self.outbound.iter().copied().max().unwrap_or(0)
    }

    pub fn max_inbound(&self) -> u64 {
        self.inbound.iter().copied().max().unwrap_or(0)
    }
}

/// What the server holds after the single round of sharing: every
/// client's latents and local class probabilities, plus labels and the
/// split.
#[derive(Debug, Clone)]
pub struct RepresentationBundle {
    /// Per client, `m × d`; rows of absent pairs are zero and flagged in
    /// `present`.
    pub latents: Vec<Matrix>,
    /// Per client, `m × C` local head outputs; zero rows when absent.
    pub local_probs: Vec<Matrix>,
    pub present: Vec<Vec<bool>>,
    pub labels: Vec<usize>,
    pub split: Vec<Part>,
    pub classes: usize,
}

impl RepresentationBundle {
    /// Each client evaluates its own model on its own present samples and
    /// sends the result once.
    pub fn collect(
        clients: &[LocalClient],
        labels: Vec<usize>,
        split: Vec<Part>,
        classes: usize,
        ledger: &mut TransferLedger,
    ) -> Result<Self> {
        let m = labels.len();
        if split.len() != m {
            return contract(format!("split covers {} samples, labels {m}", split.len()));
        }
        let mut latents = Vec::with_capacity(clients.len());
        let mut local_probs = Vec::with_capacity(clients.len());
        let mut present = Vec::with_capacity(clients.len());
        for c in clients {
            if c.shard.samples() != m {
                return Err(F3Error::ClientShape {
                    client: c.id,
                    expected: m,
                    found: c.shard.samples(),
                });
            }
            let idx = c.shard.present_indices();
            let (h, p) = c.forward_rows(&idx)?;
            latents.push(scatter_rows(&h, &idx, m));
            local_probs.push(scatter_rows(&p, &idx, m));
            present.push(c.shard.present().to_vec());
        }
        ledger.round(false);
        Ok(RepresentationBundle {
            latents,
            local_probs,
            present,
            labels,
            split,
            classes,
        })
    }

    pub fn clients(&self) -> usize {
        self.latents.len()
    }

    pub fn samples(&self) -> usize {
        self.labels.len()
    }

    pub fn latent_dim(&self) -> usize {
        self.latents.first().map_or(0, |h| h.cols())
    }

    pub fn indices(&self, part: Part) -> Vec<usize> {
        (0..self.samples()).filter(|&k| self.split[k] == part).collect()
    }

    pub fn batch(&self, idx: &[usize]) -> GlobalBatch {
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

    pub fn part(&self, part: Part) -> GlobalBatch {
        self.batch(&self.indices(part))
    }

    /// Local predicted class of client `i` per sample, `None` when absent.
    /// Ties go to the lowest class.
    pub fn local_predictions(&self, i: usize) -> Vec<Option<usize>> {
        (0..self.samples())
            .map(|k| self.present[i][k].then(|| self.local_probs[i].argmax_row(k)))
            .collect()
    }
}

/// `m × cols` matrix with row `idx[r]` taken from row `r` of `rows`.
pub(crate) fn scatter_rows(rows: &Matrix, idx: &[usize], m: usize) -> Matrix {
    let mut out = Matrix::zeros(m, rows.cols());
    for (r, &k) in idx.iter().enumerate() {
        out.row_mut(k).copy_from_slice(rows.row(r));
    }
    out
}
