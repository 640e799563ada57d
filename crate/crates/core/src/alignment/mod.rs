//! Latent alignment across clients: free (soft) maps, shared (tied) maps,
//! and truncated Sinkhorn (hard) maps, with convergence diagnostics.

mod set;
mod sinkhorn;

pub use set::{permutation_matrix, AlignmentMode, AlignmentSet, DEFAULT_HARD_ITERATIONS, HARD_INIT_DIAG};
pub use sinkhorn::{
    doubly_stochastic_residual, fit_decay_rate, second_singular_value, sinkhorn, sinkhorn_exp_var, sinkhorn_var,
    write_residuals_csv, DecayFit, SinkhornDiagnostics, RESIDUAL_FLOOR,
};
