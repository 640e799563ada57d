//! Central finite-difference check of tape gradients.

use serde::Serialize;

use super::matrix::Matrix;
use super::tape::{Tape, Var};
use crate::error::{contract, Result};

/// Step used for central differences.
pub const FD_STEP: f64 = 1e-6;

/// Denominator floor for relative errors; gradients smaller than this are
/// compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    /// Max relative error per parameter, in input order.
    pub max_rel_err: Vec<f64>,
    pub tol: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn evaluate<F>(f: &F, params: &[Matrix]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    Ok(tape.scalar_value(out))
}

/// Compares the tape gradient of the scalar built by `f` against central
/// differences for every entry of every parameter.
///
/// `f` receives one leaf per parameter and must return a `1×1` node. It is
/// evaluated twice at the base point first; any difference between the two
/// runs is reported as a contract error, since finite differences of a
/// non-deterministic function are meaningless.
pub fn grad_check<F>(f: F, params: &[Matrix], tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let base = tape.scalar_value(out);
    let again = evaluate(&f, params)?;
    if base.to_bits() != again.to_bits() {
        return contract(format!(
            "function is not deterministic: {base} then {again} at the same point"
        ));
    }
    let grads = tape.backward(out)?;

    let mut max_rel_err = Vec::with_capacity(params.len());
    let mut work: Vec<Matrix> = params.to_vec();
    for (pi, &var) in vars.iter().enumerate() {
        let analytic = grads.get(var);
        let mut worst = 0.0_f64;
        for e in 0..params[pi].len() {
            let orig = params[pi].data()[e];
            work[pi].data_mut()[e] = orig + FD_STEP;
            let plus = evaluate(&f, &work)?;
            work[pi].data_mut()[e] = orig - FD_STEP;
            let minus = evaluate(&f, &work)?;
            work[pi].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic.data()[e], numeric));
        }
        max_rel_err.push(worst);
    }
    let passed = max_rel_err.iter().all(|&e| e <= tol);
    Ok(GradCheckReport {
        max_rel_err,
        tol,
        passed,
    })
}
