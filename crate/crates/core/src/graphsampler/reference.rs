use serde::{Deserialize, Serialize};
use statrs::function::erf::{erfc, erfc_inv};

use crate::numcore::sigmoid;

const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Continuous reference distribution whose inverse CDF maps an edge
/// probability to a threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceDistribution {
    /// Zero-mean normal with standard deviation `sigma`.
    Normal { sigma: f64 },
    /// Uniform on `[0, 1]`.
    Uniform01,
    /// Standard logistic.
    Logistic,
}

impl Default for ReferenceDistribution {
    fn default() -> Self {
        ReferenceDistribution::Normal { sigma: 1.0 }
    }
}

impl ReferenceDistribution {
    pub fn standard_normal() -> Self {
        Self::default()
    }

    /// Support bounds `[a, b]`; infinite for unbounded distributions.
    pub fn support(&self) -> (f64, f64) {
        match self {
            ReferenceDistribution::Uniform01 => (0.0, 1.0),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            ReferenceDistribution::Normal { sigma } => 0.5 * erfc(-x / (sigma * SQRT_2)),
            ReferenceDistribution::Uniform01 => x.clamp(0.0, 1.0),
            ReferenceDistribution::Logistic => sigmoid(x),
        }
    }

    pub fn inverse_cdf(&self, p: f64) -> f64 {
        match *self {
            ReferenceDistribution::Normal { sigma } => {
                if p < 0.5 {
                    -sigma * SQRT_2 * erfc_inv(2.0 * p)
                } else {
                    sigma * SQRT_2 * erfc_inv(2.0 * (1.0 - p))
                }
            }
            ReferenceDistribution::Uniform01 => p.clamp(0.0, 1.0),
            ReferenceDistribution::Logistic => (p / (1.0 - p)).ln(),
        }
    }

    /// Inverse CDF of `sigmoid(logit)`, evaluated without forming
    /// `1 - θ` by subtraction.
    pub fn inverse_cdf_of_logit(&self, logit: f64) -> f64 {
        match *self {
            ReferenceDistribution::Normal { sigma } => {
                if logit < 0.0 {
                    -sigma * SQRT_2 * erfc_inv(2.0 * sigmoid(logit))
                } else {
                    sigma * SQRT_2 * erfc_inv(2.0 * sigmoid(-logit))
                }
            }
            ReferenceDistribution::Uniform01 => sigmoid(logit),
            ReferenceDistribution::Logistic => logit,
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match *self {
            ReferenceDistribution::Normal { sigma } => {
                let u = x / sigma;
                (-0.5 * u * u).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            }
            ReferenceDistribution::Uniform01 => {
                if (0.0..=1.0).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
            ReferenceDistribution::Logistic => {
                let f = sigmoid(x);
                f * (1.0 - f)
            }
        }
    }

    /// Second derivative of the CDF (derivative of the density).
    pub fn pdf_derivative(&self, x: f64) -> f64 {
        match *self {
            ReferenceDistribution::Normal { sigma } => -x / (sigma * sigma) * self.pdf(x),
            ReferenceDistribution::Uniform01 => 0.0,
            ReferenceDistribution::Logistic => {
                let f = sigmoid(x);
                f * (1.0 - f) * (1.0 - 2.0 * f)
            }
        }
    }

    /// Maps a uniform draw on `(0, 1)` to a reference sample.
    #[inline]
    pub fn from_uniform(&self, u: f64) -> f64 {
        self.inverse_cdf(u)
    }
}
