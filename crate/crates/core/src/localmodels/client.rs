use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::LocalModel;
use super::shard::Shard;
use crate::error::{contract, F3Error, Result};
use crate::numcore::{Adam, AdamConfig, Matrix, Tape};
use crate::rng::{stream_rng, streams};

/// Embedding architecture of a client.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingKind {
    Fc,
    /// Sequences of `steps` scalars per sample.
    Gru,
}

/// A data owner: its shard and its local model.
#[derive(Debug, Clone)]
pub struct LocalClient {
    pub id: usize,
    pub model: LocalModel,
    pub shard: Shard,
}

/// Isolated pre-training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub lr: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig { epochs: 200, lr: 0.01 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PretrainHistory {
    /// Training loss before each epoch's update.
    pub losses: Vec<f64>,
    /// The shard held fewer than two distinct labels.
    pub single_class: bool,
}

impl LocalClient {
    /// Client `id` with a freshly initialized model; initialization draws
    /// from a stream keyed by `(seed, id)`.
    pub fn init(
        id: usize,
        kind: EmbeddingKind,
        shard: Shard,
        hidden: usize,
        classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = stream_rng(seed, streams::CLIENT_INIT + id as u64);
        let model = match kind {
            EmbeddingKind::Fc => LocalModel::new_fc(shard.width(), hidden, classes, &mut rng),
            EmbeddingKind::Gru => LocalModel::new_gru(1, hidden, classes, &mut rng),
        };
        if !model.embedding.accepts(shard.width()) {
            return contract(format!(
                "client {id}: model cannot read shard of width {}",
                shard.width()
            ));
        }
        Ok(LocalClient { id, model, shard })
    }

    /// Latents and probabilities for the present samples among `idx`.
    pub fn forward_rows(&self, idx: &[usize]) -> Result<(Matrix, Matrix)> {
        let x = self.shard.rows(self.id, idx)?;
        let out = self.model.forward(&x)?;
        Ok((out.latents, out.probs))
    }
}

/// `(h, probs)` for sample `k`, as `d×1` and `classes×1` columns.
pub fn local_forward(client: &LocalClient, k: usize) -> Result<(Matrix, Matrix)> {
    let (h, p) = client.forward_rows(&[k])?;
    Ok((h.transpose(), p.transpose()))
}

/// Full-batch Adam on the client's present samples. Reads nothing but the
/// client's own shard.
pub fn pretrain_local(client: &mut LocalClient, labels: &[usize], cfg: &PretrainConfig) -> Result<PretrainHistory> {
    let all: Vec<usize> = (0..labels.len()).collect();
    pretrain_local_on(client, labels, &all, cfg)
}

/// [`pretrain_local`] restricted to the samples in `rows` (absent ones are
/// skipped), e.g. a training split.
pub fn pretrain_local_on(
    client: &mut LocalClient,
    labels: &[usize],
    rows: &[usize],
    cfg: &PretrainConfig,
) -> Result<PretrainHistory> {
    if labels.len() != client.shard.samples() {
        return contract(format!(
            "client {}: {} labels for {} samples",
            client.id,
            labels.len(),
            client.shard.samples()
        ));
    }
    let idx: Vec<usize> = rows
        .iter()
        .copied()
        .filter(|&k| k < labels.len() && client.shard.is_present(k))
        .collect();
    if idx.is_empty() {
        return contract(format!("client {} holds no samples", client.id));
    }
    let y: Vec<usize> = idx.iter().map(|&k| labels[k]).collect();
    let distinct: BTreeSet<usize> = y.iter().copied().collect();
    let single_class = distinct.len() < 2;
    if single_class {
        log::warn!(
            "client {}: shard has a single class, head will predict a constant",
            client.id
        );
    }
    let x = client.shard.rows(client.id, &idx)?;
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &client.model.params());
    let mut losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let mut tape = Tape::new();
        let leaves = client.model.leaves(&mut tape);
        let h = client.model.latents_var(&mut tape, &leaves, &x)?;
        let p = client.model.head_var(&mut tape, &leaves, h)?;
        let loss = tape.cross_entropy(p, &y)?;
        losses.push(tape.scalar_value(loss));
        let grads = tape.backward(loss)?;
        let g: Vec<Matrix> = leaves.iter().map(|&v| grads.get(v)).collect();
        adam.step(&mut client.model.params_mut(), &g, None);
    }
    Ok(PretrainHistory { losses, single_class })
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON record of a trained local model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientCheckpoint {
    pub format_version: u32,
    pub id: usize,
    pub kind: String,
    pub d: usize,
    pub classes: usize,
    pub model: LocalModel,
}

impl ClientCheckpoint {
    pub fn of(client: &LocalClient) -> Self {
        ClientCheckpoint {
            format_version: CHECKPOINT_VERSION,
            id: client.id,
            kind: client.model.embedding.kind().to_string(),
            d: client.model.hidden(),
            classes: client.model.classes(),
            model: client.model.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let value: serde_json::Value = serde_json::from_slice(&bytes)?;
        let found = value.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(F3Error::Version {
                found,
                expected: CHECKPOINT_VERSION,
            });
        }
        let ck: ClientCheckpoint = serde_json::from_value(value)?;
        if ck.model.hidden() != ck.d || ck.model.classes() != ck.classes || ck.model.embedding.kind() != ck.kind {
            return contract("checkpoint header disagrees with its parameters");
        }
        Ok(ck)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn separable(seed: u64) -> (Shard, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        let mut y = Vec::new();
        for k in 0..40 {
            let c = k % 2;
            let sign = if c == 0 { -1.0 } else { 1.0 };
            rows.push(sign * 1.5 + rng.random_range(-1.0..1.0));
            rows.push(rng.random_range(-1.0..1.0));
            y.push(c);
        }
        (
            Shard::new(Matrix::from_vec(40, 2, rows).unwrap(), vec![true; 40]).unwrap(),
            y,
        )
    }

    #[test]
    fn learns_separable_toy() {
        let (shard, y) = separable(0);
        let mut c = LocalClient::init(0, EmbeddingKind::Fc, shard, 16, 2, 7).unwrap();
        let hist = pretrain_local(&mut c, &y, &PretrainConfig::default()).unwrap();
        assert!(hist.losses.last().unwrap() < &hist.losses[0]);
        let (_, p) = c.forward_rows(&(0..40).collect::<Vec<_>>()).unwrap();
        let acc = (0..40).filter(|&k| p.argmax_row(k) == y[k]).count() as f64 / 40.0;
        assert!(acc >= 0.95, "{acc}");
    }

    #[test]
    fn zero_epochs_and_determinism() {
        let (shard, y) = separable(1);
        let mut a = LocalClient::init(3, EmbeddingKind::Fc, shard.clone(), 8, 2, 9).unwrap();
        let before = a.model.clone();
        pretrain_local(&mut a, &y, &PretrainConfig { epochs: 0, lr: 0.01 }).unwrap();
        assert_eq!(a.model, before);
        let mut b = LocalClient::init(3, EmbeddingKind::Fc, shard.clone(), 8, 2, 9).unwrap();
        let mut c = LocalClient::init(3, EmbeddingKind::Fc, shard, 8, 2, 9).unwrap();
        let cfg = PretrainConfig { epochs: 20, lr: 0.01 };
        pretrain_local(&mut b, &y, &cfg).unwrap();
        pretrain_local(&mut c, &y, &cfg).unwrap();
        assert_eq!(b.model.checksum(), c.model.checksum());
        assert_ne!(b.model.checksum(), before.checksum());
    }

    #[test]
    fn single_class_trains_with_warning() {
        let (shard, _) = separable(2);
        let mut c = LocalClient::init(0, EmbeddingKind::Fc, shard, 4, 2, 0).unwrap();
        let hist = pretrain_local(&mut c, &[1; 40], &PretrainConfig { epochs: 5, lr: 0.01 }).unwrap();
        assert!(hist.single_class);
    }

    #[test]
    fn missing_samples_signal() {
        let (shard, _) = separable(3);
        let mut present = vec![true; 40];
        present[5] = false;
        let shard = Shard::new(shard.raw_inputs().clone(), present).unwrap();
        let c = LocalClient::init(2, EmbeddingKind::Fc, shard, 4, 2, 0).unwrap();
        assert!(matches!(
            local_forward(&c, 5),
            Err(F3Error::MissingData { client: 2, sample: 5 })
        ));
        let (h, p) = local_forward(&c, 4).unwrap();
        assert_eq!(h.shape(), (4, 1));
        assert_eq!(p.shape(), (2, 1));
    }

    #[test]
    fn checkpoint_round_trip_and_version() {
        let (shard, _) = separable(4);
        let c = LocalClient::init(1, EmbeddingKind::Fc, shard, 4, 2, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        let ck = ClientCheckpoint::of(&c);
        ck.save(&path).unwrap();
        assert_eq!(ClientCheckpoint::load(&path).unwrap(), ck);
        let mut bad = ck.clone();
        bad.format_version = 99;
        bad.save(&path).unwrap();
        assert!(matches!(
            ClientCheckpoint::load(&path),
            Err(F3Error::Version { found: 99, .. })
        ));
    }
}
