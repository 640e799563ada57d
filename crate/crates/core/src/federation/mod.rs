//! The one-round protocol end to end: pre-training, the sharing round,
//! the variant matrix with its baselines, and the disagreement diagnostic.
//!
//! Clients send latents and local predictions once. Every server-side
//! variant trains on that bundle alone, except the two VFL variants, which
//! exchange latents and gradients with the clients on every step and
//! count each exchange.

mod baselines;
mod bundle;
mod pipeline;
mod report;
mod train;
mod variant;
mod vfl;

pub use baselines::{
    best_model_selection, chosen_client_outputs, concat_baseline, entropy_diagnostic, entropy_histogram, knn_adjacency,
    knn_graph, majority_vote, projected_similarity, write_histogram_csv, ConcatHead, Projection,
};
pub use bundle::{stratified_split, Part, RepresentationBundle, TransferLedger};
pub use pipeline::{
    build_global, dataset_for_seed, prepare, pretrain_clients, report_of, run_all, run_pipeline, run_seed, run_variant,
    Prepared, SeedRun, VariantRun,
};
pub use report::{median, MetricsReport, MetricsRow, METRICS_HEADER};
pub use train::{FitSummary, TrainConfig};
pub use variant::{GraphMode, VariantConfig, VariantId, DEFAULT_KAPPA};
