//! Differentiable consensus graphs: a Bernoulli posterior over edges,
//! inverse-CDF and Gumbel-softmax relaxations of its samples, their exact
//! laws, and adjacency normalization.

mod adjacency;
mod laws;
mod posterior;
mod reference;
mod relax;

pub use adjacency::{normalize_adjacency, normalize_adjacency_var};
pub use laws::{
    analytic_bias, draw_relaxed, empirical_bias, empirical_cdf_at, gumbel_cdf, icdf_cdf, ks_distance, ls_slope,
    relaxed_cdf, BiasEstimate,
};
pub use posterior::GraphPosterior;
pub use reference::ReferenceDistribution;
pub use relax::{
    gumbel_from_uniform, gumbel_sample, gumbel_transform, icdf_dz_dtheta, icdf_sample, icdf_transform, open_uniform,
    DrawCounter, EdgeNoise, RelaxMethod,
};
