use serde::{Deserialize, Serialize};

use crate::error::{F3Error, Result};

/// Topology of the planted consensus graph.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphKind {
    /// Each client linked to its two ring neighbors.
    #[default]
    Ring,
    /// Disjoint cliques of `size` consecutive clients.
    Blocks { size: usize },
    /// Independent edges with probability `p`.
    ErdosRenyi { p: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PermutationPlanting {
    Off,
    /// An independent random permutation of the latent coordinates per
    /// client.
    #[default]
    RandomPerClient,
}

/// Parameters of a synthetic vertically partitioned dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub clients: usize,
    pub samples: usize,
    pub classes: usize,
    /// Feature width of FC clients.
    pub input_dim: usize,
    /// Length of the scalar series held by GRU clients.
    pub seq_len: usize,
    /// The last `gru_clients` clients hold series instead of features.
    pub gru_clients: usize,
    /// Width of the latent space the planted permutations act on.
    pub latent_dim: usize,
    pub graph: GraphKind,
    /// In `[0, 1]`: fills decoy slots and washes the class signal out of
    /// clients outside the event.
    pub conflict: f64,
    /// Probability that a (client, sample) pair is absent.
    pub missing: f64,
    /// Standard deviation of the observation noise.
    pub noise: f64,
    pub permutations: PermutationPlanting,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            clients: 12,
            samples: 600,
            classes: 3,
            input_dim: 8,
            seq_len: 12,
            gru_clients: 0,
            latent_dim: 16,
            graph: GraphKind::Ring,
            conflict: 0.6,
            missing: 0.1,
            noise: 0.05,
            permutations: PermutationPlanting::RandomPerClient,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(F3Error::Config(m));
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.samples < 10 * self.classes {
            return bad(format!(
                "too few samples: {} for {} classes (need at least {})",
                self.samples,
                self.classes,
                10 * self.classes
            ));
        }
        if self.clients < 3 {
            return bad(format!("need at least 3 clients, got {}", self.clients));
        }
        if self.gru_clients > self.clients {
            return bad("more GRU clients than clients".into());
        }
        if self.input_dim == 0 || self.seq_len == 0 || self.latent_dim == 0 {
            return bad("input_dim, seq_len and latent_dim must be positive".into());
        }
        for (name, v) in [("conflict", self.conflict), ("missing", self.missing)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1], got {v}"));
            }
        }
        if self.missing >= 1.0 {
            return bad("missing rate 1 leaves no data".into());
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return bad(format!(
                "noise must be a finite non-negative number, got {}",
                self.noise
            ));
        }
        match self.graph {
            GraphKind::Blocks { size } if size < 2 || size > self.clients => {
                bad(format!("block size {size} must lie in [2, {}]", self.clients))
            }
            GraphKind::ErdosRenyi { p } if !(p > 0.0 && p <= 1.0) => {
                bad(format!("edge probability {p} outside (0, 1]"))
            }
            _ => Ok(()),
        }
    }
}
