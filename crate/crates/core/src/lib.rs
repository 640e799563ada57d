pub mod alignment;
pub mod bench;
pub mod config;
pub mod error;
pub mod federation;
pub mod globalmodel;
pub mod graphsampler;
pub mod localmodels;
pub mod metrics;
pub mod numcore;
pub mod rng;
pub mod synthdata;
pub mod verify;

pub use error::{F3Error, Result};
pub use numcore::Matrix;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/relaxed-edges.md")]
    mod relaxed_edges {}
    #[doc = include_str!("../../../book/src/alignment.md")]
    mod alignment {}
    #[doc = include_str!("../../../book/src/consensus-graph.md")]
    mod consensus_graph {}
    #[doc = include_str!("../../../book/src/protocol.md")]
    mod protocol {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
