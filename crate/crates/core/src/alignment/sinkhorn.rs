//! Truncated Sinkhorn–Knopp scaling and its convergence diagnostics.

use std::io::Write;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{F3Error, Result};
use crate::numcore::{Matrix, Tape, Unary, Var};

/// Residuals below this are treated as converged when fitting a rate.
pub const RESIDUAL_FLOOR: f64 = 1e-13;

/// Convergence record of one [`sinkhorn`] run.
#[derive(Debug, Clone, Serialize)]
pub struct SinkhornDiagnostics {
    /// `‖[Kⱼᵀ1; Kⱼ1] − [1; 1]‖₂` for `j = 0..=T`, with `K₀` the input.
    pub residuals: Vec<f64>,
    /// Second-largest singular value of the final iterate.
    pub sigma2: f64,
}

/// Outcome of [`fit_decay_rate`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum DecayFit {
    /// Least-squares slope of `ln residual` per iteration, next to the
    /// reference rate `2 ln σ₂`.
    Fitted {
        slope: f64,
        two_log_sigma2: f64,
        points: usize,
    },
    /// Fewer than ten usable residuals after burn-in.
    InsufficientSignal { points: usize },
}

fn check_positive(k0: &Matrix) -> Result<()> {
    let (n, m) = k0.shape();
    if n != m {
        return Err(F3Error::Shape {
            op: "sinkhorn",
            left: (n, m),
            right: (n, n),
        });
    }
    for i in 0..n {
        for j in 0..n {
            let v = k0.get(i, j);
            if !(v > 0.0) || !v.is_finite() {
                return Err(F3Error::Domain {
                    op: "sinkhorn",
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    Ok(())
}

/// `‖[Kᵀ1; K1] − [1; 1]‖₂`.
pub fn doubly_stochastic_residual(k: &Matrix) -> f64 {
    let rows = k.row_sums();
    let cols = k.col_sums();
    rows.iter()
        .chain(&cols)
        .map(|s| (s - 1.0) * (s - 1.0))
        .sum::<f64>()
        .sqrt()
}

fn scaled(k0: &Matrix, r: &[f64], c: &[f64]) -> Matrix {
    Matrix::from_fn(k0.rows(), k0.cols(), |i, j| r[i] * k0.get(i, j) * c[j])
}

/// Second-largest singular value.
pub fn second_singular_value(k: &Matrix) -> f64 {
    let m = DMatrix::from_row_slice(k.rows(), k.cols(), k.data());
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.get(1).copied().unwrap_or(0.0)
}

/// `T` alternating scalings `r ← 1 ⊘ (K₀c)`, `c ← 1 ⊘ (K₀ᵀr)` from
/// `c = 1`, returning `diag(r)·K₀·diag(c)`.
pub fn sinkhorn(k0: &Matrix, iterations: usize) -> Result<(Matrix, SinkhornDiagnostics)> {
    check_positive(k0)?;
    let n = k0.rows();
    let mut r = vec![1.0; n];
    let mut c = vec![1.0; n];
    let mut residuals = vec![doubly_stochastic_residual(k0)];
    for j in 1..=iterations {
        for i in 0..n {
            let s: f64 = k0.row(i).iter().zip(&c).map(|(k, c)| k * c).sum();
            r[i] = 1.0 / s;
        }
        for (jj, cj) in c.iter_mut().enumerate() {
            let s: f64 = (0..n).map(|i| k0.get(i, jj) * r[i]).sum();
            *cj = 1.0 / s;
        }
        if r.iter().chain(&c).any(|v| !v.is_finite() || *v == 0.0) {
            return Err(F3Error::Numeric(format!(
                "sinkhorn scaling left the finite range at iteration {j}"
            )));
        }
        residuals.push(doubly_stochastic_residual(&scaled(k0, &r, &c)));
    }
    let k = scaled(k0, &r, &c);
    let sigma2 = second_singular_value(&k);
    Ok((k, SinkhornDiagnostics { residuals, sigma2 }))
}

/// Fits the per-iteration log-decay of residuals after `burn_in`
/// iterations, keeping only residuals above [`RESIDUAL_FLOOR`].
pub fn fit_decay_rate(diag: &SinkhornDiagnostics, burn_in: usize) -> DecayFit {
    let pts: Vec<(f64, f64)> = diag
        .residuals
        .iter()
        .enumerate()
        .skip(burn_in)
        .take_while(|(_, r)| **r > RESIDUAL_FLOOR)
        .map(|(j, r)| (j as f64, r.ln()))
        .collect();
    if pts.len() < 10 {
        return DecayFit::InsufficientSignal { points: pts.len() };
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = pts.iter().copied().unzip();
    DecayFit::Fitted {
        slope: crate::graphsampler::ls_slope(&xs, &ys),
        two_log_sigma2: 2.0 * diag.sigma2.ln(),
        points: pts.len(),
    }
}

/// Writes `iteration,residual` rows.
pub fn write_residuals_csv<W: Write>(diag: &SinkhornDiagnostics, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "residual"])?;
    for (j, r) in diag.residuals.iter().enumerate() {
        w.serialize((j, r))?;
    }
    w.flush()?;
    Ok(())
}

/// Differentiable truncated Sinkhorn of `exp(free)` on the tape.
pub fn sinkhorn_exp_var(tape: &mut Tape, free: Var, iterations: usize) -> Result<Var> {
    let k0 = tape.unary(Unary::Exp, free)?;
    sinkhorn_var(tape, k0, iterations)
}

/// Differentiable truncated Sinkhorn of a positive `k0` on the tape.
pub fn sinkhorn_var(tape: &mut Tape, k0: Var, iterations: usize) -> Result<Var> {
    check_positive(tape.value(k0))?;
    let n = tape.value(k0).rows();
    let k0t = tape.transpose(k0);
    let mut c = tape.leaf(Matrix::ones(n, 1));
    let mut r = c;
    for _ in 0..iterations {
        let kc = tape.matmul(k0, c)?;
        r = tape.unary(Unary::Recip, kc)?;
        let ktr = tape.matmul(k0t, r)?;
        c = tape.unary(Unary::Recip, ktr)?;
    }
    let rows = tape.scale_rows(k0, r)?;
    tape.scale_cols(rows, c)
}
