//! Dense matrices, a reverse-mode tape, finite-difference checking and the
//! Adam optimizer.

mod gradcheck;
mod matrix;
mod optim;
mod tape;

pub use gradcheck::{grad_check, relative_error, GradCheckReport, FD_STEP, REL_FLOOR};
pub use matrix::Matrix;
pub use optim::{Adam, AdamConfig};
pub use tape::{cross_entropy, elementwise, sigmoid, softmax_rows, CustomOp, Gradients, Tape, Unary, Var, PROB_FLOOR};

/// Checks that `p` is a permutation of `0..n`.
pub fn check_permutation(p: &[usize], n: usize) -> crate::Result<()> {
    let mut seen = vec![false; n];
    if p.len() != n {
        return crate::error::contract(format!("permutation has length {}, expected {n}", p.len()));
    }
    for &i in p {
        if i >= n || std::mem::replace(&mut seen[i], true) {
            return crate::error::contract(format!("{p:?} is not a permutation of 0..{n}"));
        }
    }
    Ok(())
}

/// Inverse permutation: `inv[p[i]] = i`.
pub fn invert_permutation(p: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; p.len()];
    for (i, &pi) in p.iter().enumerate() {
        inv[pi] = i;
    }
    inv
}
