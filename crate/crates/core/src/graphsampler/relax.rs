use std::sync::atomic::{AtomicU64, Ordering};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::reference::ReferenceDistribution;
use crate::error::{contract, Result};
use crate::numcore::sigmoid;

/// Differentiable relaxation used for Bernoulli edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RelaxMethod {
    /// One reference draw per edge.
    #[default]
    Icdf,
    /// Binary Gumbel-softmax, two Gumbel draws per edge.
    Gumbel,
}

impl RelaxMethod {
    /// Reference/Gumbel draws consumed per relaxed edge.
    pub fn draws_per_sample(self) -> u64 {
        match self {
            RelaxMethod::Icdf => 1,
            RelaxMethod::Gumbel => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RelaxMethod::Icdf => "icdf",
            RelaxMethod::Gumbel => "gumbel",
        }
    }
}

/// Tally of random draws. Shared between workers, so atomic.
#[derive(Debug, Default)]
pub struct DrawCounter(AtomicU64);

impl DrawCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

pub(crate) fn check_args(theta: f64, tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return contract(format!("temperature must be positive, got {tau}"));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return contract(format!("edge probability must lie in (0, 1), got {theta}"));
    }
    Ok(())
}

/// `sigmoid((F⁻¹(θ) − s) / τ)` for a given reference sample `s`.
#[inline]
pub fn icdf_transform(theta: f64, tau: f64, reference: &ReferenceDistribution, s: f64) -> f64 {
    sigmoid((reference.inverse_cdf(theta) - s) / tau)
}

/// Derivative of [`icdf_transform`] with respect to `θ` at fixed `s`.
pub fn icdf_dz_dtheta(theta: f64, tau: f64, reference: &ReferenceDistribution, s: f64) -> f64 {
    let q = reference.inverse_cdf(theta);
    let z = sigmoid((q - s) / tau);
    z * (1.0 - z) / (tau * reference.pdf(q))
}

/// First coordinate of `softmax((log[θ, 1−θ] + [g₁, g₂]) / τ)`.
#[inline]
pub fn gumbel_transform(theta: f64, tau: f64, g1: f64, g2: f64) -> f64 {
    sigmoid(((theta / (1.0 - theta)).ln() + g1 - g2) / tau)
}

/// Standard Gumbel sample from a uniform on `(0, 1)`.
#[inline]
pub fn gumbel_from_uniform(u: f64) -> f64 {
    -(-u.ln()).ln()
}

/// Uniform on the open interval `(0, 1)` with 53 bits of resolution.
#[inline]
pub fn open_uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// One relaxed Bernoulli(θ) sample by the inverse-CDF route; counts one draw.
pub fn icdf_sample<R: RngCore + ?Sized>(
    theta: f64,
    tau: f64,
    reference: &ReferenceDistribution,
    rng: &mut R,
    counter: &DrawCounter,
) -> Result<f64> {
    check_args(theta, tau)?;
    let s = reference.from_uniform(open_uniform(rng));
    counter.add(1);
    Ok(icdf_transform(theta, tau, reference, s))
}

/// One relaxed Bernoulli(θ) sample by the Gumbel-softmax route; counts two
/// draws.
pub fn gumbel_sample<R: RngCore + ?Sized>(theta: f64, tau: f64, rng: &mut R, counter: &DrawCounter) -> Result<f64> {
    check_args(theta, tau)?;
    let g1 = gumbel_from_uniform(open_uniform(rng));
    let g2 = gumbel_from_uniform(open_uniform(rng));
    counter.add(2);
    Ok(gumbel_transform(theta, tau, g1, g2))
}

/// Counter-based uniform noise keyed by `(seed, step, index, slot)`.
///
/// Each key maps to a fixed position of a ChaCha stream, so draws are
/// independent of evaluation order and can be regenerated on demand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeNoise {
    pub seed: u64,
}

impl EdgeNoise {
    pub fn new(seed: u64) -> Self {
        EdgeNoise { seed }
    }

    pub fn uniform(&self, step: u64, index: u64, slot: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(step);
        rng.set_word_pos(((index << 1) | (slot & 1)) as u128 * 2);
        open_uniform(&mut rng)
    }
}
