//! Synthetic vertically partitioned datasets with a planted consensus
//! graph, planted latent permutations and missing samples.
//!
//! Labels are only readable from graph neighborhoods: each sample's class
//! lights up a contiguous block of clients, while decoy clients scattered
//! across the graph show a competing class. Counting votes cannot tell the
//! two apart once decoys are as numerous as the block; aggregating over
//! the planted neighborhoods can.

mod generate;
mod io;
mod spec;

pub use generate::{generate, graph_informativeness, oracle_f1, planted_graph, Dataset};
pub use io::{load_dataset, read_dataset, save_dataset, write_dataset, write_dataset_csv, FORMAT_VERSION, MAGIC};
pub use spec::{GraphKind, PermutationPlanting, SyntheticSpec};

#[cfg(test)]
mod tests;
