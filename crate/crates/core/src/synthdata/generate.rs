use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::spec::{GraphKind, PermutationPlanting, SyntheticSpec};
use crate::error::Result;
use crate::graphsampler::normalize_adjacency;
use crate::localmodels::{EmbeddingKind, Shard};
use crate::metrics::macro_f1;
use crate::numcore::Matrix;
use crate::rng::{stream_rng, streams};

/// A generated dataset: one shard per client plus the planted truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SyntheticSpec,
    pub kinds: Vec<EmbeddingKind>,
    pub shards: Vec<Shard>,
    pub labels: Vec<usize>,
    /// Planted 0/1 adjacency without self-loops.
    pub graph: Matrix,
    /// Planted latent permutation per client (identity when planting is
    /// off).
    pub permutations: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn clients(&self) -> usize {
        self.shards.len()
    }

    pub fn samples(&self) -> usize {
        self.labels.len()
    }

    /// Fraction of absent (client, sample) pairs.
    pub fn missing_fraction(&self) -> f64 {
        let absent: usize = self
            .shards
            .iter()
            .map(|s| s.present().iter().filter(|p| !**p).count())
            .sum();
        absent as f64 / (self.clients() * self.samples()) as f64
    }
}

/// Planted 0/1 adjacency for `spec`.
pub fn planted_graph(spec: &SyntheticSpec) -> Matrix {
    let n = spec.clients;
    let mut rng = stream_rng(spec.seed, streams::DATA);
    let mut a = Matrix::zeros(n, n);
    let link = |a: &mut Matrix, i: usize, j: usize| {
        if i != j {
            a.set(i, j, 1.0);
            a.set(j, i, 1.0);
        }
    };
    match spec.graph {
        GraphKind::Ring => {
            for i in 0..n {
                link(&mut a, i, (i + 1) % n);
            }
        }
        GraphKind::Blocks { size } => {
            for i in 0..n {
                for j in i + 1..n {
                    if i / size == j / size {
                        link(&mut a, i, j);
                    }
                }
            }
        }
        GraphKind::ErdosRenyi { p } => {
            for i in 0..n {
                for j in i + 1..n {
                    if rng.random::<f64>() < p {
                        link(&mut a, i, j);
                    }
                }
            }
        }
    }
    a
}

/// Per-sample node states: row `i` of each `n × (C+1)` matrix mixes the
/// class patterns (first `C` columns) and the background pattern (last
/// column) observed by client `i`.
///
/// Every sample has a class `y` and an epicenter `e`. The epicenter and
/// its neighbors show `y`. Decoy slots, an independent set among the other
/// clients, each show one shared decoy class with probability `conflict`.
/// The remaining clients show `y` blended into the background, with the
/// class share shrinking linearly to zero at `conflict = 0.5`.
pub(crate) fn node_states(spec: &SyntheticSpec, graph: &Matrix) -> (Vec<usize>, Vec<Matrix>) {
    let (n, m, c) = (spec.clients, spec.samples, spec.classes);
    let mut rng = stream_rng(spec.seed, streams::DATA + 2);
    let mut labels: Vec<usize> = (0..m).map(|k| k % c).collect();
    labels.shuffle(&mut rng);
    let share = (1.0 - 2.0 * spec.conflict).max(0.0);
    let states = labels
        .iter()
        .map(|&y| {
            let e = rng.random_range(0..n);
            let active: Vec<bool> = (0..n).map(|i| i == e || graph.get(e, i) > 0.0).collect();
            let mut slot = vec![false; n];
            for step in 1..n {
                let j = (e + step) % n;
                if !active[j] && !(0..n).any(|l| slot[l] && graph.get(j, l) > 0.0) {
                    slot[j] = true;
                }
            }
            let decoy = (y + rng.random_range(1..c)) % c;
            let mut s = Matrix::zeros(n, c + 1);
            for i in 0..n {
                if active[i] {
                    s.set(i, y, 1.0);
                } else if slot[i] && rng.random::<f64>() < spec.conflict {
                    s.set(i, decoy, 1.0);
                } else {
                    s.set(i, y, share);
                    s.set(i, c, 1.0 - share);
                }
            }
            s
        })
        .collect();
    (labels, states)
}

/// Generates the dataset described by `spec`.
pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let (n, m, c) = (spec.clients, spec.samples, spec.classes);
    let graph = planted_graph(spec);
    let (labels, states) = node_states(spec, &graph);

    let mut proj_rng = stream_rng(spec.seed, streams::DATA + 1);
    let kinds: Vec<EmbeddingKind> = (0..n)
        .map(|i| {
            if i + spec.gru_clients >= n {
                EmbeddingKind::Gru
            } else {
                EmbeddingKind::Fc
            }
        })
        .collect();
    // observation map of each client: width × (C+1)
    let maps: Vec<Matrix> = kinds
        .iter()
        .map(|kind| match kind {
            EmbeddingKind::Fc => Matrix::from_fn(spec.input_dim, c + 1, |_, _| StandardNormal.sample(&mut proj_rng)),
            EmbeddingKind::Gru => {
                let phase: Vec<f64> = (0..=c).map(|_| proj_rng.random_range(0.0..2.0 * PI)).collect();
                Matrix::from_fn(spec.seq_len, c + 1, |t, j| {
                    (2.0 * PI * (j + 1) as f64 * t as f64 / spec.seq_len as f64 + phase[j]).sin()
                })
            }
        })
        .collect();

    let mut present = vec![vec![true; m]; n];
    let mut miss_rng = stream_rng(spec.seed, streams::DATA + 3);
    for k in 0..m {
        for p in present.iter_mut() {
            p[k] = miss_rng.random::<f64>() >= spec.missing;
        }
        if present.iter().all(|p| !p[k]) {
            present[miss_rng.random_range(0..n)][k] = true;
        }
    }

    let mut noise_rng = stream_rng(spec.seed, streams::DATA + 4);
    let mut shards = Vec::with_capacity(n);
    for i in 0..n {
        let map = &maps[i];
        let width = map.rows();
        let mut data = Matrix::zeros(m, width);
        for (k, s) in states.iter().enumerate() {
            for r in 0..width {
                let clean: f64 = (0..=c).map(|j| map.get(r, j) * s.get(i, j)).sum();
                let eps: f64 = StandardNormal.sample(&mut noise_rng);
                data.set(k, r, clean + spec.noise * eps);
            }
        }
        shards.push(Shard::new(data, present[i].clone())?);
    }

    let permutations = planted_permutations(spec);
    Ok(Dataset {
        spec: spec.clone(),
        kinds,
        shards,
        labels,
        graph,
        permutations,
    })
}

fn planted_permutations(spec: &SyntheticSpec) -> Vec<Vec<usize>> {
    let mut rng: ChaCha8Rng = stream_rng(spec.seed, streams::PLANTED_PERMUTATION);
    (0..spec.clients)
        .map(|_| {
            let mut p: Vec<usize> = (0..spec.latent_dim).collect();
            if spec.permutations == PermutationPlanting::RandomPerClient {
                p.shuffle(&mut rng);
            }
            p
        })
        .collect()
}

/// Macro-F1 of an oracle that reads the noise-free node states through a
/// normalized adjacency: class scores are `Σᵢ relu((Â S)ᵢc − ½)`, falling
/// back to `Σᵢ (Â S)ᵢc` when no score is positive.
pub fn oracle_f1(spec: &SyntheticSpec, adjacency: &Matrix) -> Result<f64> {
    spec.validate()?;
    let graph = planted_graph(spec);
    let (labels, states) = node_states(spec, &graph);
    let c = spec.classes;
    let pred: Vec<usize> = states
        .iter()
        .map(|s| {
            let mixed = adjacency.matmul(s).expect("n×n times n×(C+1)");
            let score = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
                (0..c)
                    .map(|j| (0..mixed.rows()).map(|i| f(mixed.get(i, j))).sum())
                    .collect()
            };
            let mut sc = score(&|v| (v - 0.5).max(0.0));
            if sc.iter().all(|&v| v <= 0.0) {
                sc = score(&|v| v);
            }
            (0..c).fold(0, |best, j| if sc[j] > sc[best] { j } else { best })
        })
        .collect();
    Ok(macro_f1(&labels, &pred, c))
}

/// `(F1 with the planted graph, F1 with Â = I)` for the oracle of
/// [`oracle_f1`].
pub fn graph_informativeness(spec: &SyntheticSpec) -> Result<(f64, f64)> {
    let a = normalize_adjacency(&planted_graph(spec))?;
    let with = oracle_f1(spec, &a)?;
    let without = oracle_f1(spec, &Matrix::identity(spec.clients))?;
    Ok((with, without))
}
