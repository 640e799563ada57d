use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{contract, F3Error, Result};
use crate::numcore::Matrix;

/// One client's view of the samples: an input row per sample and a
/// presence flag. Every read is tallied in bytes so tests can audit which
/// shards a computation touched.
#[derive(Debug)]
pub struct Shard {
    inputs: Matrix,
    present: Vec<bool>,
    bytes_read: AtomicU64,
}

impl Clone for Shard {
    fn clone(&self) -> Self {
        Shard {
            inputs: self.inputs.clone(),
            present: self.present.clone(),
            bytes_read: AtomicU64::new(0),
        }
    }
}

impl PartialEq for Shard {
    fn eq(&self, other: &Self) -> bool {
        self.inputs == other.inputs && self.present == other.present
    }
}

impl Shard {
    /// Rows of absent samples are stored as zeros and are never handed out.
    pub fn new(mut inputs: Matrix, present: Vec<bool>) -> Result<Self> {
        if inputs.rows() != present.len() {
            return contract(format!(
                "shard has {} input rows but {} presence flags",
                inputs.rows(),
                present.len()
            ));
        }
        for (k, &p) in present.iter().enumerate() {
            if !p {
                inputs.row_mut(k).fill(0.0);
            }
        }
        Ok(Shard {
            inputs,
            present,
            bytes_read: AtomicU64::new(0),
        })
    }

    pub fn samples(&self) -> usize {
        self.present.len()
    }

    pub fn width(&self) -> usize {
        self.inputs.cols()
    }

    pub fn present(&self) -> &[bool] {
        &self.present
    }

    pub fn is_present(&self, k: usize) -> bool {
        self.present.get(k).copied().unwrap_or(false)
    }

    pub fn present_indices(&self) -> Vec<usize> {
        (0..self.samples()).filter(|&k| self.present[k]).collect()
    }

    /// Input rows for samples `idx`, all of which must be present.
    pub fn rows(&self, client: usize, idx: &[usize]) -> Result<Matrix> {
        for &k in idx {
            if k >= self.samples() {
                return Err(F3Error::Index {
                    op: "shard rows",
                    index: k,
                    limit: self.samples(),
                });
            }
            if !self.present[k] {
                return Err(F3Error::MissingData { client, sample: k });
            }
        }
        self.bytes_read.fetch_add(
            (idx.len() * self.width() * std::mem::size_of::<f64>()) as u64,
            Ordering::Relaxed,
        );
        Ok(self.inputs.select_rows(idx))
    }

    /// Bytes handed out by [`Self::rows`] so far.
    pub fn bytes_read(&self) -> u64 {
        self.bytes_read.load(Ordering::Relaxed)
    }

    /// Full input matrix without audit, for serialization.
    pub(crate) fn raw_inputs(&self) -> &Matrix {
        &self.inputs
    }
}
