//! Symmetric degree normalization with unit self-loops.
//!
//! The diagonal of the input is ignored and replaced by 1, so that an
//! all-ones adjacency and the identity are both fixed points of the
//! self-loop step: `M = offdiag(A) + I`, `Â = D^{-1/2} M D^{-1/2}` with
//! `D = diag(M·1)`.

use crate::error::{F3Error, Result};
use crate::numcore::{CustomOp, Matrix, Tape, Var};

fn with_self_loops(a: &Matrix) -> Result<Matrix> {
    let (n, m) = a.shape();
    if n != m {
        return Err(F3Error::Shape {
            op: "normalize_adjacency",
            left: (n, m),
            right: (n, n),
        });
    }
    let mut out = a.clone();
    for i in 0..n {
        for j in 0..n {
            let v = a.get(i, j);
            if i == j {
                out.set(i, i, 1.0);
            } else if !(0.0..=1.0).contains(&v) {
                return Err(F3Error::Domain {
                    op: "normalize_adjacency",
                    row: i,
                    col: j,
                    value: v,
                });
            }
        }
    }
    Ok(out)
}

fn normalize_parts(a: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let m = with_self_loops(a)?;
    let n = m.rows();
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / m.row(i).iter().sum::<f64>().sqrt()).collect();
    let out = Matrix::from_fn(n, n, |i, j| m.get(i, j) * inv_sqrt[i] * inv_sqrt[j]);
    Ok((out, inv_sqrt))
}

/// Normalized adjacency `Â` of an `n×n` matrix with entries in `[0, 1]`.
pub fn normalize_adjacency(a: &Matrix) -> Result<Matrix> {
    Ok(normalize_parts(a)?.0)
}

struct NormalizeOp {
    inv_sqrt: Vec<f64>,
}

impl CustomOp for NormalizeOp {
    fn name(&self) -> &'static str {
        "normalize_adjacency"
    }

    fn backward(&self, _inputs: &[&Matrix], out: &Matrix, g: &Matrix) -> Vec<Matrix> {
        let n = out.rows();
        let s = &self.inv_sqrt;
        // gradient w.r.t. each degree d_i, with 1/d_i = s_i²
        let gd: Vec<f64> = (0..n)
            .map(|i| {
                let mut acc = 0.0;
                for l in 0..n {
                    acc += g.get(i, l) * out.get(i, l) + g.get(l, i) * out.get(l, i);
                }
                -0.5 * s[i] * s[i] * acc
            })
            .collect();
        let ga = Matrix::from_fn(
            n,
            n,
            |i, j| if i == j { 0.0 } else { g.get(i, j) * s[i] * s[j] + gd[i] },
        );
        vec![ga]
    }
}

/// Records [`normalize_adjacency`] on the tape.
pub fn normalize_adjacency_var(tape: &mut Tape, a: Var) -> Result<Var> {
    let (value, inv_sqrt) = normalize_parts(tape.value(a))?;
    Ok(tape.custom(&[a], value, Box::new(NormalizeOp { inv_sqrt })))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fixed_points() {
        let z = normalize_adjacency(&Matrix::zeros(4, 4)).unwrap();
        assert_eq!(z, Matrix::identity(4));
        let i = normalize_adjacency(&Matrix::identity(4)).unwrap();
        assert_eq!(i, Matrix::identity(4));
    }

    #[test]
    fn all_ones_gives_uniform_rows() {
        let a = normalize_adjacency(&Matrix::ones(3, 3)).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert!((a.get(i, j) - 1.0 / 3.0).abs() < 1e-15);
            }
            assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_computed_path() {
        // path 0-1-2: degrees with self-loops are 2, 3, 2
        let a = Matrix::from_rows(&[&[0.0, 1.0, 0.0], &[1.0, 0.0, 1.0], &[0.0, 1.0, 0.0]]);
        let n = normalize_adjacency(&a).unwrap();
        assert!((n.get(0, 0) - 0.5).abs() < 1e-15);
        assert!((n.get(0, 1) - 1.0 / 6f64.sqrt()).abs() < 1e-15);
        assert!((n.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(n.get(0, 2), 0.0);
    }

    #[test]
    fn rejects_out_of_range() {
        let mut a = Matrix::zeros(2, 2);
        a.set(0, 1, 1.5);
        assert!(normalize_adjacency(&a).is_err());
        assert!(normalize_adjacency(&Matrix::zeros(2, 3)).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let a = Matrix::random_uniform(5, 5, 0.1, 0.9, &mut rng);
            let w = Matrix::random_uniform(5, 5, -1.0, 1.0, &mut rng);
            let report = grad_check(
                |t, p| {
                    let n = normalize_adjacency_var(t, p[0])?;
                    let wv = t.leaf(w.clone());
                    let prod = t.mul(n, wv)?;
                    Ok(t.sum(prod))
                },
                &[a],
                1e-5,
            )
            .unwrap();
            assert!(report.passed, "{:?}", report.max_rel_err);
        }
    }
}
