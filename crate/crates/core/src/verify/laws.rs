//! Distribution laws of the relaxed edge samplers: CDFs against empirical
//! CDFs, and the bias against its leading term.

use std::time::Instant;

use super::{evidence, Check, Suite, SuiteOptions, SuiteReport};
use crate::error::Result;
use crate::graphsampler::{
    analytic_bias, draw_relaxed, empirical_bias, empirical_cdf_at, ks_distance, ls_slope, relaxed_cdf, BiasEstimate,
    ReferenceDistribution, RelaxMethod,
};
use crate::numcore::sigmoid;

pub const CDF_THETAS: [f64; 3] = [0.25, 0.5, 0.75];
pub const CDF_TAUS: [f64; 3] = [0.1, 0.5, 1.0];
pub const CDF_TOLERANCE: f64 = 0.012;

pub const RATE_THETAS: [f64; 2] = [0.2, 0.35];
pub const RATE_TAUS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];
pub const RATE_SLOPE: (f64, f64) = (1.8, 2.2);
pub const RATIO_TAU: f64 = 0.05;
pub const RATIO_BOUNDS: (f64, f64) = (0.85, 1.15);

pub const SIGN_THETAS: [f64; 3] = [0.2, 0.5, 0.8];
pub const SIGN_TAUS: [f64; 3] = [0.1, 0.5, 1.0];

/// A sampler under test and its label in reports.
#[derive(Debug, Clone, Copy)]
struct Sampler {
    label: &'static str,
    method: RelaxMethod,
    reference: ReferenceDistribution,
}

const CDF_SAMPLERS: [Sampler; 3] = [
    Sampler {
        label: "icdf_normal",
        method: RelaxMethod::Icdf,
        reference: ReferenceDistribution::Normal { sigma: 1.0 },
    },
    Sampler {
        label: "icdf_uniform",
        method: RelaxMethod::Icdf,
        reference: ReferenceDistribution::Uniform01,
    },
    Sampler {
        label: "gumbel",
        method: RelaxMethod::Gumbel,
        reference: ReferenceDistribution::Normal { sigma: 1.0 },
    },
];

const BIAS_SAMPLERS: [Sampler; 2] = [CDF_SAMPLERS[0], CDF_SAMPLERS[2]];

/// Points at which the evidence table reports both CDFs.
fn evidence_grid() -> Vec<f64> {
    let mut t = vec![0.001, 0.01];
    t.extend((1..20).map(|k| k as f64 * 0.05));
    t.extend([0.99, 0.999]);
    t
}

/// Sup distance between each analytic CDF and the empirical CDF of its
/// samples over the θ × τ grid.
pub fn cdf_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    let mut ks_rows = Vec::new();
    let grid = evidence_grid();
    for (si, s) in CDF_SAMPLERS.iter().enumerate() {
        for (ti, &theta) in CDF_THETAS.iter().enumerate() {
            for (ui, &tau) in CDF_TAUS.iter().enumerate() {
                let seed = opts.seed.wrapping_add((si * 100 + ti * 10 + ui) as u64);
                let mut xs = draw_relaxed(theta, tau, s.method, &s.reference, opts.cdf_samples, seed)?;
                let cdf = |t: f64| relaxed_cdf(t, theta, tau, s.method, &s.reference);
                let ks = ks_distance(&mut xs, cdf);
                checks.push(Check::below(
                    format!("ks {} theta={theta} tau={tau}", s.label),
                    ks,
                    CDF_TOLERANCE,
                ));
                ks_rows.push((s.label, theta, tau, ks));
                for &t in &grid {
                    rows.push((s.label, theta, tau, t, cdf(t), empirical_cdf_at(&xs, t)));
                }
                if s.reference == ReferenceDistribution::Uniform01 {
                    // outside [σ((q−1)/τ), σ(q/τ)] the law is flat at 0 and 1
                    let q = s.reference.inverse_cdf(theta);
                    let lo = 0.5 * sigmoid((q - 1.0) / tau);
                    let hi = 0.5 * (1.0 + sigmoid(q / tau));
                    let flat = cdf(lo) == 0.0
                        && empirical_cdf_at(&xs, lo) == 0.0
                        && cdf(hi) == 1.0
                        && empirical_cdf_at(&xs, hi) == 1.0;
                    checks.push(Check::holds(
                        format!("flat tails {} theta={theta} tau={tau}", s.label),
                        flat,
                        lo,
                        "analytic and empirical CDF are 0 below and 1 above the support",
                    ));
                    rows.push((s.label, theta, tau, lo, cdf(lo), empirical_cdf_at(&xs, lo)));
                    rows.push((s.label, theta, tau, hi, cdf(hi), empirical_cdf_at(&xs, hi)));
                }
            }
        }
    }
    let ev = vec![
        evidence(
            "cdf.csv",
            &["method", "theta", "tau", "t", "analytic_cdf", "empirical_cdf"],
            rows,
        )?,
        evidence("cdf_ks.csv", &["method", "theta", "tau", "ks_distance"], ks_rows)?,
    ];
    Ok(SuiteReport::new(Suite::Cdf, opts.seed, start, checks, ev))
}

fn estimate(s: &Sampler, theta: f64, tau: f64, samples: u64, seed: u64) -> Result<(f64, BiasEstimate)> {
    let analytic = analytic_bias(theta, tau, s.method, &s.reference);
    Ok((
        analytic,
        empirical_bias(theta, tau, s.method, &s.reference, samples, seed)?,
    ))
}

/// Bias rate and sign laws.
///
/// Each (method, θ) curve reuses one noise stream across τ, which keeps
/// the fitted slope from picking up independent noise at every point.
pub fn bias_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    for (si, s) in BIAS_SAMPLERS.iter().enumerate() {
        for (ti, &theta) in RATE_THETAS.iter().enumerate() {
            let seed = opts.seed.wrapping_add((si * 10 + ti) as u64);
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for &tau in &RATE_TAUS {
                let (analytic, e) = estimate(s, theta, tau, opts.bias_samples, seed)?;
                rows.push((s.label, theta, tau, analytic, e.bias, e.stderr));
                xs.push(tau.ln());
                ys.push(e.bias.abs().ln());
                if tau == RATIO_TAU {
                    checks.push(Check::within(
                        format!("ratio {} theta={theta} tau={tau}", s.label),
                        e.bias / analytic,
                        RATIO_BOUNDS.0,
                        RATIO_BOUNDS.1,
                    ));
                }
            }
            let slope = ls_slope(&xs, &ys);
            slopes.push((s.label, theta, slope));
            checks.push(Check::within(
                format!("slope {} theta={theta}", s.label),
                slope,
                RATE_SLOPE.0,
                RATE_SLOPE.1,
            ));
        }
        for (ti, &theta) in SIGN_THETAS.iter().enumerate() {
            for (ui, &tau) in SIGN_TAUS.iter().enumerate() {
                let seed = opts.seed.wrapping_add(1000 + (si * 100 + ti * 10 + ui) as u64);
                let (analytic, e) = estimate(s, theta, tau, opts.sign_samples, seed)?;
                rows.push((s.label, theta, tau, analytic, e.bias, e.stderr));
                let z = e.bias / e.stderr;
                let name = format!("sign {} theta={theta} tau={tau}", s.label);
                checks.push(if theta == 0.5 {
                    Check::holds(name, z.abs() <= 3.0, z, "|bias/stderr| <= 3")
                } else {
                    let want = (0.5 - theta).signum();
                    Check::holds(
                        name,
                        z * want > 3.0,
                        z,
                        format!("bias/stderr {} 3", if want > 0.0 { "> " } else { "< -" }),
                    )
                });
            }
        }
    }
    let ev = vec![
        evidence(
            "bias.csv",
            &["method", "theta", "tau", "analytic_bias", "empirical_bias", "stderr"],
            rows,
        )?,
        evidence("bias_slopes.csv", &["method", "theta", "slope"], slopes)?,
    ];
    Ok(SuiteReport::new(Suite::Bias, opts.seed, start, checks, ev))
}
