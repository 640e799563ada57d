use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// One evaluated variant on one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub variant: String,
    pub graph_mode: String,
    pub seed: u64,
    pub f1: f64,
    pub auc: f64,
    pub epochs_run: usize,
    /// Largest per-client count of client→server messages.
    pub transfers_out: u64,
    /// Largest per-client count of server→client messages.
    pub transfers_in: u64,
    pub wall_clock_s: f64,
}

impl MetricsRow {
    /// Everything except the wall clock, which no rerun reproduces.
    pub fn reproducible_eq(&self, other: &MetricsRow) -> bool {
        self.variant == other.variant
            && self.graph_mode == other.graph_mode
            && self.seed == other.seed
            && self.f1.to_bits() == other.f1.to_bits()
            && self.auc.to_bits() == other.auc.to_bits()
            && self.epochs_run == other.epochs_run
            && self.transfers_out == other.transfers_out
            && self.transfers_in == other.transfers_in
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricsRow>,
}

pub const METRICS_HEADER: [&str; 9] = [
    "variant",
    "graph_mode",
    "seed",
    "f1",
    "auc",
    "epochs_run",
    "transfers_out",
    "transfers_in",
    "wall_clock_s",
];

impl MetricsReport {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
        w.write_record(METRICS_HEADER)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// F1 values of one (variant, graph mode) across seeds, in row order.
    pub fn f1s(&self, variant: &str, graph_mode: &str) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.variant == variant && r.graph_mode == graph_mode)
            .map(|r| r.f1)
            .collect()
    }

    /// Median F1 (mean of the middle pair for even counts); `None` when
    /// the combination never ran.
    pub fn median_f1(&self, variant: &str, graph_mode: &str) -> Option<f64> {
        median(self.f1s(variant, graph_mode))
    }

    pub fn reproducible_eq(&self, other: &MetricsReport) -> bool {
        self.rows.len() == other.rows.len() && self.rows.iter().zip(&other.rows).all(|(a, b)| a.reproducible_eq(b))
    }
}

pub fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}
