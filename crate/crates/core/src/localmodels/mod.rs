//! Client-side models: FC and GRU embeddings with a logistic head,
//! isolated pre-training, and the latent permutations that leave a model's
//! predictions unchanged.

mod client;
mod model;
mod shard;

pub use client::{
    local_forward, pretrain_local, pretrain_local_on, ClientCheckpoint, EmbeddingKind, LocalClient, PretrainConfig,
    PretrainHistory, CHECKPOINT_VERSION,
};
pub use model::{permute_fc, permute_gru, Embedding, FcEmbedding, GruEmbedding, LocalModel, LocalOutput};
pub use shard::Shard;
