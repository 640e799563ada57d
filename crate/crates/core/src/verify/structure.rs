//! Exact structural properties: Sinkhorn convergence, invariance of local
//! models under latent permutations, and gradient integrity.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{evidence, Check, Suite, SuiteOptions, SuiteReport};
use crate::alignment::{fit_decay_rate, permutation_matrix, sinkhorn, AlignmentMode, AlignmentSet, DecayFit};
use crate::error::Result;
use crate::globalmodel::{f3_loss, GlobalBatch, GlobalKind, GlobalLeaves, GlobalModel, GraphSource, GraphUse};
use crate::graphsampler::{EdgeNoise, GraphPosterior, ReferenceDistribution, RelaxMethod};
use crate::localmodels::LocalModel;
use crate::numcore::{grad_check, invert_permutation, Matrix, Tape, Var};

pub const SINKHORN_SIZE: usize = 16;
pub const SINKHORN_ITERATIONS: usize = 50;
pub const SINKHORN_TARGET: f64 = 1e-8;
pub const DECAY_SLACK: f64 = 0.1;
pub const SLOW_RATIO: f64 = 0.99;
/// Off-permutation mass of the slow case.
pub const NEAR_PERMUTATION_EPS: f64 = 1e-4;
pub const PERMUTATION_TOLERANCE: f64 = 1e-10;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Residual decay is fitted after this many iterations.
const BURN_IN: usize = 2;

/// `exp(spread · z)` with standard normal `z`: strictly positive, with
/// `spread` controlling how far from balanced the matrix starts.
pub fn lognormal_matrix(n: usize, spread: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(n, n, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        (spread * z).exp()
    })
}

/// A permutation matrix plus `eps` times uniform noise.
pub fn near_permutation(n: usize, eps: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    Matrix::from_fn(
        n,
        n,
        |i, j| if p[i] == j { 1.0 } else { 0.0 } + eps * rng.random::<f64>(),
    )
}

pub fn sinkhorn_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut checks = Vec::new();
    let mut residual_rows = Vec::new();
    let mut table = Vec::new();

    let k0 = lognormal_matrix(SINKHORN_SIZE, 1.0, &mut rng);
    let (_, diag) = sinkhorn(&k0, SINKHORN_ITERATIONS)?;
    let last = *diag.residuals.last().expect("initial residual is recorded");
    checks.push(Check::below(
        "random 16x16 residual after 50 iterations",
        last,
        SINKHORN_TARGET,
    ));
    let first_below = diag
        .residuals
        .iter()
        .position(|&r| r < SINKHORN_TARGET)
        .unwrap_or(usize::MAX);
    checks.push(Check::holds(
        "random 16x16 iterations to 1e-8",
        first_below <= SINKHORN_ITERATIONS,
        first_below as f64,
        "<= 50",
    ));
    residual_rows.extend(diag.residuals.iter().enumerate().map(|(j, r)| ("random_16", j, *r)));

    // decay table: the main matrix first, then other sizes and spreads
    let mut cases = vec![("random_16".to_string(), k0)];
    for (n, spread) in [(8, 1.0), (16, 1.5), (16, 2.0), (32, 1.0), (32, 2.0)] {
        cases.push((
            format!("lognormal_n{n}_s{spread}"),
            lognormal_matrix(n, spread, &mut rng),
        ));
    }
    for (i, (name, k)) in cases.iter().enumerate() {
        let (_, d) = sinkhorn(k, 400)?;
        match fit_decay_rate(&d, BURN_IN) {
            DecayFit::Fitted {
                slope,
                two_log_sigma2,
                points,
            } => {
                table.push((name.clone(), k.rows(), d.sigma2, two_log_sigma2, Some(slope), points));
                checks.push(Check::holds(
                    format!("decay {name}"),
                    slope <= two_log_sigma2 + DECAY_SLACK,
                    slope,
                    format!("<= 2 ln sigma2 + {DECAY_SLACK} = {}", two_log_sigma2 + DECAY_SLACK),
                ));
            }
            DecayFit::InsufficientSignal { points } => {
                table.push((name.clone(), k.rows(), d.sigma2, 2.0 * d.sigma2.ln(), None, points));
                if i == 0 {
                    checks.push(Check::holds(
                        format!("decay {name}"),
                        false,
                        points as f64,
                        ">= 10 fitted points",
                    ));
                }
            }
        }
    }

    let slow = near_permutation(SINKHORN_SIZE, NEAR_PERMUTATION_EPS, &mut rng);
    let (_, d) = sinkhorn(&slow, SINKHORN_ITERATIONS)?;
    let ratios: Vec<f64> = d.residuals.windows(2).skip(1).map(|w| w[1] / w[0]).collect();
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    checks.push(Check::holds(
        "near-permutation per-step residual ratio",
        min_ratio > SLOW_RATIO,
        min_ratio,
        format!("> {SLOW_RATIO} at every step after the first"),
    ));
    residual_rows.extend(
        d.residuals
            .iter()
            .enumerate()
            .map(|(j, r)| ("near_permutation_16", j, *r)),
    );

    let ev = vec![
        evidence(
            "sinkhorn_residuals.csv",
            &["case", "iteration", "residual"],
            residual_rows,
        )?,
        evidence(
            "sinkhorn_decay.csv",
            &["case", "n", "sigma2", "two_log_sigma2", "fitted_slope", "points"],
            table,
        )?,
    ];
    Ok(SuiteReport::new(Suite::Sinkhorn, opts.seed, start, checks, ev))
}

/// Random FC and GRU models evaluated before and after reordering their
/// latent coordinates.
pub fn permutation_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for trial in 0..opts.permutations {
        let gru = trial % 2 == 1;
        let hidden = rng.random_range(2..=16);
        let classes = rng.random_range(2..=5);
        let (model, x) = if gru {
            let steps = rng.random_range(1..=12);
            (
                LocalModel::new_gru(1, hidden, classes, &mut rng),
                Matrix::random_uniform(20, steps, -2.0, 2.0, &mut rng),
            )
        } else {
            let width = rng.random_range(1..=10);
            (
                LocalModel::new_fc(width, hidden, classes, &mut rng),
                Matrix::random_uniform(20, width, -2.0, 2.0, &mut rng),
            )
        };
        let mut p: Vec<usize> = (0..hidden).collect();
        p.shuffle(&mut rng);
        let a = model.forward(&x)?;
        let b = model.permuted(&p)?.forward(&x)?;
        let dp = a.probs.max_abs_diff(&b.probs);
        let dh = a.latents.permute_cols(&p).max_abs_diff(&b.latents);
        worst = worst.max(dp).max(dh);
        rows.push((trial, if gru { "gru" } else { "fc" }, hidden, dp, dh));
    }
    let mut checks = vec![Check::below(
        format!("{} permuted local models", opts.permutations),
        worst,
        PERMUTATION_TOLERANCE,
    )];

    // the same ambiguity seen from the server: alignment by the inverse
    // permutations restores the objective bit for bit
    let (n, d) = (4, 6);
    let posterior = GraphPosterior::new(
        n,
        0.5,
        ReferenceDistribution::default(),
        RelaxMethod::Icdf,
        true,
        &mut rng,
    )?;
    let base = GlobalModel::new(
        GlobalKind::Gcn,
        AlignmentSet::none(n, d),
        GraphSource::Learned { posterior },
        8,
        3,
        true,
        &mut rng,
    )?;
    let batch = GlobalBatch {
        latents: (0..n)
            .map(|_| Matrix::random_uniform(10, d, 0.0, 1.0, &mut rng))
            .collect(),
        present: vec![vec![true; 10]; n],
        labels: (0..10).map(|k| k % 3).collect(),
    };
    let mut shuffled = batch.clone();
    let mut mats = Vec::new();
    for i in 0..n {
        let mut p: Vec<usize> = (0..d).collect();
        p.shuffle(&mut rng);
        shuffled.latents[i] = batch.latents[i].permute_cols(&p);
        mats.push(permutation_matrix(&invert_permutation(&p))?);
    }
    let mut repaired = base.clone();
    repaired.alignment = AlignmentSet::from_matrices(AlignmentMode::Soft, mats)?;
    let noise = EdgeNoise::new(opts.seed);
    let want = f3_loss(&base, &batch, &noise, &[0])?;
    let got = f3_loss(&repaired, &shuffled, &noise, &[0])?;
    checks.push(Check::holds(
        "alignment by inverse permutations",
        want.to_bits() == got.to_bits(),
        (want - got).abs(),
        "bit-identical objective",
    ));
    let ev = vec![evidence(
        "permutation.csv",
        &["trial", "kind", "hidden", "max_prob_diff", "max_latent_diff"],
        rows,
    )?];
    Ok(SuiteReport::new(Suite::Permutation, opts.seed, start, checks, ev))
}

/// Graph handling in a gradient-check case.
#[derive(Debug, Clone, Copy)]
enum Edges {
    Icdf,
    Gumbel,
    Expected,
}

fn objective_case(alignment: AlignmentMode, edges: Edges, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n, b, d, classes) = (4, 8, 3, 2);
    let method = if matches!(edges, Edges::Gumbel) {
        RelaxMethod::Gumbel
    } else {
        RelaxMethod::Icdf
    };
    let posterior = GraphPosterior::new(n, 0.5, ReferenceDistribution::default(), method, true, &mut rng)?;
    let align = AlignmentSet::new(alignment, n, d, d, &mut rng)?;
    let model = GlobalModel::new(
        GlobalKind::Gcn,
        align,
        GraphSource::Learned { posterior },
        4,
        classes,
        true,
        &mut rng,
    )?;
    let latents: Vec<Matrix> = (0..n)
        .map(|_| Matrix::random_uniform(b, d, -1.0, 1.0, &mut rng))
        .collect();
    let labels: Vec<usize> = (0..b).map(|k| k % classes).collect();
    let noise = EdgeNoise::new(seed);
    let keys = [0u64, 1];
    let params: Vec<Matrix> = model.params().into_iter().cloned().collect();
    let report = grad_check(
        |t: &mut Tape, p: &[Var]| {
            // the model reads some parameters directly (e.g. edge logits
            // for the noise transform), so it must see the perturbed values
            let mut m = model.clone();
            for (dst, v) in m.params_mut().into_iter().zip(p) {
                *dst = t.value(*v).clone();
            }
            let leaves = GlobalLeaves::from_vars(&m, p)?;
            let hv: Vec<Var> = latents.iter().map(|h| t.leaf(h.clone())).collect();
            let graph = match edges {
                Edges::Expected => GraphUse::Expected,
                _ => GraphUse::Sampled {
                    noise: &noise,
                    keys: &keys,
                },
            };
            m.loss_var(t, &leaves, &hv, &labels, graph)
        },
        &params,
        GRADCHECK_TOLERANCE,
    )?;
    Ok(report.max_rel_err.iter().copied().fold(0.0, f64::max))
}

fn local_case(gru: bool, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (model, x) = if gru {
        (
            LocalModel::new_gru(1, 4, 3, &mut rng),
            Matrix::random_uniform(6, 5, -1.0, 1.0, &mut rng),
        )
    } else {
        (
            LocalModel::new_fc(3, 4, 3, &mut rng),
            Matrix::random_uniform(6, 3, -1.0, 1.0, &mut rng),
        )
    };
    let labels: Vec<usize> = (0..6).map(|k| k % 3).collect();
    let params: Vec<Matrix> = model.params().into_iter().cloned().collect();
    let report = grad_check(
        |t: &mut Tape, p: &[Var]| {
            let h = model.latents_var(t, p, &x)?;
            let probs = model.head_var(t, p, h)?;
            t.cross_entropy(probs, &labels)
        },
        &params,
        GRADCHECK_TOLERANCE,
    )?;
    Ok(report.max_rel_err.iter().copied().fold(0.0, f64::max))
}

/// Central differences against the tape on small instances of every
/// trainable objective; the first case is the full fusion objective with
/// soft alignment and inverse-CDF edges under fixed noise.
pub fn gradcheck_suite(opts: &SuiteOptions) -> Result<SuiteReport> {
    let start = Instant::now();
    let s = opts.seed;
    let cases = [
        (
            "objective soft icdf",
            objective_case(AlignmentMode::Soft, Edges::Icdf, s)?,
        ),
        (
            "objective hard icdf",
            objective_case(AlignmentMode::Hard, Edges::Icdf, s + 1)?,
        ),
        (
            "objective tied gumbel",
            objective_case(AlignmentMode::Tied, Edges::Gumbel, s + 2)?,
        ),
        (
            "objective soft expected graph",
            objective_case(AlignmentMode::Soft, Edges::Expected, s + 3)?,
        ),
        ("local fc", local_case(false, s + 4)?),
        ("local gru", local_case(true, s + 5)?),
    ];
    let checks = cases
        .iter()
        .map(|(name, err)| Check::below(*name, *err, GRADCHECK_TOLERANCE))
        .collect();
    let ev = vec![evidence("gradcheck.csv", &["case", "max_rel_err"], cases)?];
    Ok(SuiteReport::new(Suite::Gradcheck, opts.seed, start, checks, ev))
}
