//! Property suites that check the implementation against closed forms and
//! exact symmetries, each producing a pass/fail report and CSV evidence.
//!
//! Every suite is deterministic in its seed. Sample sizes are options so
//! tests can run reduced versions; the defaults are the full sizes.

mod laws;
mod structure;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::error::{F3Error, Result};

pub use laws::{bias_suite, cdf_suite};
pub use structure::{gradcheck_suite, permutation_suite, sinkhorn_suite};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Cdf,
    Bias,
    Sinkhorn,
    Permutation,
    Gradcheck,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Cdf,
        Suite::Bias,
        Suite::Sinkhorn,
        Suite::Permutation,
        Suite::Gradcheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Cdf => "cdf",
            Suite::Bias => "bias",
            Suite::Sinkhorn => "sinkhorn",
            Suite::Permutation => "permutation",
            Suite::Gradcheck => "gradcheck",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = F3Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| F3Error::Config(format!("unknown suite {s:?}")))
    }
}

/// Sample sizes and seed shared by the suites.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Draws per (method, θ, τ) in the CDF suite.
    pub cdf_samples: usize,
    /// Draws per point of the bias-rate grid.
    pub bias_samples: u64,
    /// Draws per point of the bias-sign grid.
    pub sign_samples: u64,
    /// Random permutations in the permutation suite.
    pub permutations: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 0,
            cdf_samples: 100_000,
            bias_samples: 10_000_000,
            sign_samples: 1_000_000,
            permutations: 100,
        }
    }
}

/// One named property with the measured value and the bound it must meet.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub bound: String,
}

impl Check {
    pub fn below(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            passed: value < limit,
            value,
            bound: format!("< {limit}"),
        }
    }

    pub fn within(name: impl Into<String>, value: f64, lo: f64, hi: f64) -> Self {
        Check {
            name: name.into(),
            passed: (lo..=hi).contains(&value),
            value,
            bound: format!("in [{lo}, {hi}]"),
        }
    }

    pub fn holds(name: impl Into<String>, passed: bool, value: f64, bound: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            passed,
            value,
            bound: bound.into(),
        }
    }
}

/// A CSV file backing a report.
#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    pub file: String,
    pub csv: String,
}

pub(crate) fn evidence<R: Serialize>(
    file: &str,
    header: &[&str],
    rows: impl IntoIterator<Item = R>,
) -> Result<Evidence> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| F3Error::Io(e.into_error()))?;
    Ok(Evidence {
        file: file.to_string(),
        csv: String::from_utf8(bytes).expect("csv output is UTF-8"),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub suite: Suite,
    pub passed: bool,
    pub seed: u64,
    pub elapsed_s: f64,
    pub checks: Vec<Check>,
    /// Names of the CSV files written next to the JSON report.
    pub evidence_files: Vec<String>,
    #[serde(skip)]
    pub evidence: Vec<Evidence>,
}

impl SuiteReport {
    pub(crate) fn new(suite: Suite, seed: u64, start: Instant, checks: Vec<Check>, evidence: Vec<Evidence>) -> Self {
        SuiteReport {
            suite,
            passed: checks.iter().all(|c| c.passed),
            seed,
            elapsed_s: start.elapsed().as_secs_f64(),
            checks,
            evidence_files: evidence.iter().map(|e| e.file.clone()).collect(),
            evidence,
        }
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Writes `<suite>.json` and the evidence files into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join(format!("{}.json", self.suite)),
            serde_json::to_vec_pretty(self)?,
        )?;
        for e in &self.evidence {
            std::fs::write(dir.join(&e.file), &e.csv)?;
        }
        Ok(())
    }
}

pub fn run_suite(suite: Suite, opts: &SuiteOptions) -> Result<SuiteReport> {
    match suite {
        Suite::Cdf => cdf_suite(opts),
        Suite::Bias => bias_suite(opts),
        Suite::Sinkhorn => sinkhorn_suite(opts),
        Suite::Permutation => permutation_suite(opts),
        Suite::Gradcheck => gradcheck_suite(opts),
    }
}
