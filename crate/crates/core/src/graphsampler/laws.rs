//! Closed-form distribution laws of the relaxed samplers and Monte-Carlo
//! estimators to check them against.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::function::erf::erf_inv;

use super::reference::ReferenceDistribution;
use super::relax::{gumbel_from_uniform, gumbel_transform, icdf_transform, open_uniform, RelaxMethod};
use crate::error::{contract, Result};
use crate::numcore::sigmoid;

/// `Pr(z ≤ t)` for the inverse-CDF relaxation.
///
/// Finite supports produce the flat pieces at 0 and 1; unbounded supports
/// never reach them.
pub fn icdf_cdf(t: f64, theta: f64, tau: f64, reference: &ReferenceDistribution) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let q = reference.inverse_cdf(theta);
    let (a, b) = reference.support();
    if b.is_finite() && t < sigmoid((q - b) / tau) {
        return 0.0;
    }
    if a.is_finite() && t > sigmoid((q - a) / tau) {
        return 1.0;
    }
    1.0 - reference.cdf(q + tau * (1.0 / t - 1.0).ln())
}

/// `Pr(y₁ ≤ t)` for the binary Gumbel-softmax relaxation.
pub fn gumbel_cdf(t: f64, theta: f64, tau: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let num = t.powf(tau) * (1.0 - theta);
    num / (num + (1.0 - t).powf(tau) * theta)
}

/// CDF of the relaxed sample for either method.
pub fn relaxed_cdf(t: f64, theta: f64, tau: f64, method: RelaxMethod, reference: &ReferenceDistribution) -> f64 {
    match method {
        RelaxMethod::Icdf => icdf_cdf(t, theta, tau, reference),
        RelaxMethod::Gumbel => gumbel_cdf(t, theta, tau),
    }
}

/// Leading `O(τ²)` term of `E[sample] − θ`.
///
/// For the inverse-CDF route this is `τ²π²/6 · F″(F⁻¹(θ))`; a normal
/// reference uses the equivalent `erf⁻¹` form directly.
pub fn analytic_bias(theta: f64, tau: f64, method: RelaxMethod, reference: &ReferenceDistribution) -> f64 {
    let tau2 = tau * tau;
    match method {
        RelaxMethod::Gumbel => tau2 * PI * PI * theta * (1.0 - theta) * (1.0 - 2.0 * theta) / 6.0,
        RelaxMethod::Icdf => match *reference {
            ReferenceDistribution::Normal { sigma } => {
                let u = erf_inv(2.0 * theta - 1.0);
                -tau2 * PI.powf(1.5) * u * (-u * u).exp() / (6.0 * sigma * sigma)
            }
            r => tau2 * PI * PI * r.pdf_derivative(r.inverse_cdf(theta)) / 6.0,
        },
    }
}

/// Monte-Carlo bias estimate with standard errors.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BiasEstimate {
    /// `mean(sample − hard) ` where `hard` is the exact Bernoulli(θ) draw
    /// obtained from the same noise; its expectation equals `E[sample] − θ`.
    pub bias: f64,
    pub stderr: f64,
    /// `mean(sample) − θ`.
    pub plain_bias: f64,
    pub plain_stderr: f64,
    /// Draws actually used (the Gumbel grid rounds down to a square per
    /// replicate).
    pub samples: u64,
}

/// Independent replicates of the stratified estimate; their spread gives
/// the standard error.
pub const BIAS_REPLICATES: u64 = 10;

#[derive(Default, Clone, Copy)]
struct Sums {
    n: u64,
    d: f64,
    z: f64,
}

impl Sums {
    fn add(&mut self, z: f64, hard: f64) {
        self.n += 1;
        self.d += z - hard;
        self.z += z;
    }
}

/// One replicate: `per` draws with the uniforms stratified on a jittered
/// grid (one axis for the inverse-CDF route, two for Gumbel).
fn replicate(
    theta: f64,
    tau: f64,
    method: RelaxMethod,
    reference: &ReferenceDistribution,
    per: u64,
    seed: u64,
    r: u64,
) -> Sums {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r);
    let mut sums = Sums::default();
    match method {
        RelaxMethod::Icdf => {
            let q = reference.inverse_cdf(theta);
            let m = per as f64;
            for k in 0..per {
                let s = reference.from_uniform((k as f64 + open_uniform(&mut rng)) / m);
                let z = sigmoid((q - s) / tau);
                sums.add(z, if s < q { 1.0 } else { 0.0 });
            }
        }
        RelaxMethod::Gumbel => {
            let logit = (theta / (1.0 - theta)).ln();
            let side = (per as f64).sqrt().floor() as u64;
            let m = side as f64;
            for a in 0..side {
                for b in 0..side {
                    let g1 = gumbel_from_uniform((a as f64 + open_uniform(&mut rng)) / m);
                    let g2 = gumbel_from_uniform((b as f64 + open_uniform(&mut rng)) / m);
                    let x = logit + g1 - g2;
                    let z = sigmoid(x / tau);
                    sums.add(z, if x > 0.0 { 1.0 } else { 0.0 });
                }
            }
        }
    }
    sums
}

/// Estimates `E[sample] − θ` from about `samples` relaxed draws.
///
/// The draws are split into [`BIAS_REPLICATES`] independent replicates,
/// each stratifying its uniforms; every single draw keeps the sampler's
/// exact law, only the estimator variance drops. Replicates run in
/// parallel and are reduced in a fixed order, so the result depends only
/// on the arguments.
pub fn empirical_bias(
    theta: f64,
    tau: f64,
    method: RelaxMethod,
    reference: &ReferenceDistribution,
    samples: u64,
    seed: u64,
) -> Result<BiasEstimate> {
    super::relax::check_args(theta, tau)?;
    if samples < 10_000 {
        return contract(format!("bias estimation needs at least 10^4 samples, got {samples}"));
    }
    let per = samples / BIAS_REPLICATES;
    let reps: Vec<Sums> = (0..BIAS_REPLICATES)
        .into_par_iter()
        .map(|r| replicate(theta, tau, method, reference, per, seed, r))
        .collect();
    let stats = |f: &dyn Fn(&Sums) -> f64| {
        let means: Vec<f64> = reps.iter().map(|s| f(s) / s.n as f64).collect();
        let k = means.len() as f64;
        let mean = means.iter().sum::<f64>() / k;
        let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (k - 1.0);
        (mean, (var / k).sqrt())
    };
    let (bias, stderr) = stats(&|s| s.d);
    let (zmean, plain_stderr) = stats(&|s| s.z);
    Ok(BiasEstimate {
        bias,
        stderr,
        plain_bias: zmean - theta,
        plain_stderr,
        samples: reps.iter().map(|s| s.n).sum(),
    })
}

/// Draws `n` relaxed samples, deterministic in `seed`.
pub fn draw_relaxed(
    theta: f64,
    tau: f64,
    method: RelaxMethod,
    reference: &ReferenceDistribution,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    super::relax::check_args(theta, tau)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let v = match method {
            RelaxMethod::Icdf => icdf_transform(theta, tau, reference, reference.from_uniform(open_uniform(&mut rng))),
            RelaxMethod::Gumbel => {
                let g1 = gumbel_from_uniform(open_uniform(&mut rng));
                let g2 = gumbel_from_uniform(open_uniform(&mut rng));
                gumbel_transform(theta, tau, g1, g2)
            }
        };
        out.push(v);
    }
    Ok(out)
}

/// Kolmogorov–Smirnov distance between the empirical CDF of `samples` and
/// `cdf`. Sorts `samples` in place.
///
/// The distance is taken over representable points: just below a sample
/// the empirical CDF is compared with `cdf` at the next smaller double.
/// This matters at low temperature, where a visible fraction of the mass
/// lies within one ulp of 1 and every such draw rounds to exactly 1.
pub fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut worst = 0.0_f64;
    for (i, &x) in samples.iter().enumerate() {
        let above = (i + 1) as f64 / n - cdf(x);
        let below = cdf(next_below(x)) - i as f64 / n;
        worst = worst.max(above).max(below);
    }
    worst
}

fn next_below(x: f64) -> f64 {
    if x > 0.0 {
        f64::from_bits(x.to_bits() - 1)
    } else {
        x
    }
}

/// Empirical CDF of sorted `samples` evaluated at `t`.
pub fn empirical_cdf_at(sorted: &[f64], t: f64) -> f64 {
    sorted.partition_point(|&x| x <= t) as f64 / sorted.len() as f64
}

/// Least-squares slope of `ys` against `xs`.
pub fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn normal() -> ReferenceDistribution {
        ReferenceDistribution::standard_normal()
    }

    #[test]
    fn cdfs_at_one_half_equal_one_minus_theta() {
        for theta in [0.1, 0.3, 0.5, 0.77] {
            for tau in [0.05, 0.5, 2.0] {
                for r in [
                    normal(),
                    ReferenceDistribution::Uniform01,
                    ReferenceDistribution::Logistic,
                ] {
                    assert!((icdf_cdf(0.5, theta, tau, &r) - (1.0 - theta)).abs() < 1e-10);
                }
                assert!((gumbel_cdf(0.5, theta, tau) - (1.0 - theta)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_reference_boundary_branch() {
        // sigmoid((0.5 - 1) / 0.1) = sigmoid(-5) ≈ 0.00669
        let r = ReferenceDistribution::Uniform01;
        assert_eq!(icdf_cdf(0.005, 0.5, 0.1, &r), 0.0);
        assert_eq!(icdf_cdf(0.995, 0.5, 0.1, &r), 1.0);
        assert!(icdf_cdf(0.0067, 0.5, 0.1, &r) < 1e-3);
    }

    #[test]
    fn gumbel_cdf_symmetric_reduction() {
        for t in [0.1f64, 0.3, 0.8] {
            let tau: f64 = 0.7;
            let expect = t.powf(tau) / (t.powf(tau) + (1.0 - t).powf(tau));
            assert!((gumbel_cdf(t, 0.5, tau) - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn cdfs_are_monotone() {
        for (theta, tau) in [(0.2, 0.1), (0.5, 1.0), (0.9, 0.3)] {
            let mut prev = (0.0, 0.0, 0.0);
            for k in 0..=1000 {
                let t = k as f64 / 1000.0;
                let cur = (
                    icdf_cdf(t, theta, tau, &normal()),
                    icdf_cdf(t, theta, tau, &ReferenceDistribution::Uniform01),
                    gumbel_cdf(t, theta, tau),
                );
                assert!(cur.0 >= prev.0 && cur.1 >= prev.1 && cur.2 >= prev.2, "t={t}");
                prev = cur;
            }
        }
    }

    #[test]
    fn analytic_bias_examples() {
        let r = normal();
        assert_eq!(analytic_bias(0.5, 0.3, RelaxMethod::Gumbel, &r), 0.0);
        assert!(analytic_bias(0.5, 0.3, RelaxMethod::Icdf, &r).abs() < 1e-17);
        let g = analytic_bias(0.25, 0.1, RelaxMethod::Gumbel, &r);
        let by_hand = (1.0 / 6.0) * 0.01 * PI * PI * 0.25 * 0.75 * 0.5;
        assert!((g - by_hand).abs() < 1e-18);
        assert!((g - 1.542e-3).abs() < 1e-6);
    }

    #[test]
    fn normal_closed_form_matches_general_form() {
        for sigma in [1.0, 2.5] {
            let r = ReferenceDistribution::Normal { sigma };
            for theta in [0.05, 0.2, 0.35, 0.6, 0.93] {
                let closed = analytic_bias(theta, 0.1, RelaxMethod::Icdf, &r);
                let general = 0.01 * PI * PI * r.pdf_derivative(r.inverse_cdf(theta)) / 6.0;
                assert!(
                    (closed - general).abs() < 1e-12 * general.abs().max(1e-12),
                    "{closed} {general}"
                );
            }
        }
    }

    /// Quadrature oracle: bias = ∫₀¹ (1 − CDF(t)) dt − θ, independent of
    /// the sampler code.
    fn quadrature_bias(cdf: impl Fn(f64) -> f64, theta: f64) -> f64 {
        let n = 200_000;
        let h = 1.0 / n as f64;
        let mut acc = 0.0;
        for k in 0..n {
            let t = (k as f64 + 0.5) * h;
            acc += 1.0 - cdf(t);
        }
        acc * h - theta
    }

    #[test]
    fn bias_leading_term_matches_quadrature_at_small_tau() {
        let r = normal();
        for theta in [0.2, 0.35] {
            let tau = 0.05;
            let qg = quadrature_bias(|t| gumbel_cdf(t, theta, tau), theta);
            let ag = analytic_bias(theta, tau, RelaxMethod::Gumbel, &r);
            assert!((qg / ag - 1.0).abs() < 0.05, "gumbel {qg} vs {ag}");
            let qi = quadrature_bias(|t| icdf_cdf(t, theta, tau, &r), theta);
            let ai = analytic_bias(theta, tau, RelaxMethod::Icdf, &r);
            assert!((qi / ai - 1.0).abs() < 0.05, "icdf {qi} vs {ai}");
        }
    }

    #[test]
    fn empirical_bias_is_reproducible_and_requires_samples() {
        let r = normal();
        let a = empirical_bias(0.3, 0.2, RelaxMethod::Icdf, &r, 200_000, 9).unwrap();
        let b = empirical_bias(0.3, 0.2, RelaxMethod::Icdf, &r, 200_000, 9).unwrap();
        assert_eq!(a.bias.to_bits(), b.bias.to_bits());
        assert!(empirical_bias(0.3, 0.2, RelaxMethod::Icdf, &r, 9_999, 9).is_err());
        // paired and plain estimators agree within their errors
        assert!((a.bias - a.plain_bias).abs() < 4.0 * (a.stderr + a.plain_stderr));
    }

    #[test]
    fn icdf_sample_mean_at_low_temperature() {
        let xs = draw_relaxed(0.9, 0.01, RelaxMethod::Icdf, &normal(), 100_000, 3).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 0.9).abs() < 0.01, "{mean}");
    }

    #[test]
    fn gumbel_samples_symmetric_and_concentrated() {
        let xs = draw_relaxed(0.5, 0.5, RelaxMethod::Gumbel, &normal(), 100_000, 4).unwrap();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 0.5).abs() < 0.005, "{mean}");
        let xs = draw_relaxed(0.8, 0.01, RelaxMethod::Gumbel, &normal(), 100_000, 5).unwrap();
        let frac = xs.iter().filter(|&&x| x > 0.5).count() as f64 / xs.len() as f64;
        assert!((frac - 0.8).abs() < 0.012, "{frac}");
    }

    #[test]
    fn ks_matches_analytic_cdf() {
        let r = normal();
        let mut xs = draw_relaxed(0.3, 0.5, RelaxMethod::Icdf, &r, 100_000, 6).unwrap();
        assert!(ks_distance(&mut xs, |t| icdf_cdf(t, 0.3, 0.5, &r)) < 0.01);
        let mut ys = draw_relaxed(0.3, 0.5, RelaxMethod::Gumbel, &r, 100_000, 7).unwrap();
        assert!(ks_distance(&mut ys, |t| gumbel_cdf(t, 0.3, 0.5)) < 0.01);
        // and a wrong CDF is detected
        assert!(ks_distance(&mut ys, |t| gumbel_cdf(t, 0.4, 0.5)) > 0.05);
    }

    #[test]
    fn slope_of_exact_power_law() {
        let xs: Vec<f64> = [0.2f64, 0.1, 0.05].iter().map(|v| v.ln()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((ls_slope(&xs, &ys) - 2.0).abs() < 1e-12);
    }
}
