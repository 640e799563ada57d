use super::*;
use crate::alignment::{permutation_matrix, AlignmentMode};
use crate::graphsampler::{ReferenceDistribution, RelaxMethod};
use crate::numcore::{grad_check, invert_permutation, softmax_rows};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn batch(n: usize, b: usize, d: usize, classes: usize, seed: u64) -> GlobalBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GlobalBatch {
        latents: (0..n)
            .map(|_| Matrix::random_uniform(b, d, 0.0, 1.0, &mut rng))
            .collect(),
        present: vec![vec![true; b]; n],
        labels: (0..b).map(|k| k % classes).collect(),
    }
}

fn learned(n: usize, seed: u64) -> GraphSource {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let posterior = GraphPosterior::new(
        n,
        0.5,
        ReferenceDistribution::default(),
        RelaxMethod::Icdf,
        true,
        &mut rng,
    )
    .unwrap();
    GraphSource::Learned { posterior }
}

#[test]
fn single_client_mean_pool_is_softmax_of_latent() {
    let d = 4;
    let model = GlobalModel {
        kind: GlobalKind::MeanPool,
        w0: Matrix::identity(d),
        w1: Matrix::identity(d),
        b0: Some(Matrix::zeros(1, d)),
        b1: Some(Matrix::zeros(1, d)),
        skip: None,
        alignment: AlignmentSet::none(1, d),
        graph: GraphSource::Identity,
    };
    let bt = batch(1, 3, d, 2, 0);
    let p = model.predict(&bt).unwrap();
    assert!(p.max_abs_diff(&softmax_rows(&bt.latents[0])) < 1e-15);
}

#[test]
fn gcn_with_identity_graph_matches_mean_pool() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gcn = GlobalModel::new(
        GlobalKind::Gcn,
        AlignmentSet::none(3, 5),
        GraphSource::Identity,
        8,
        3,
        false,
        &mut rng,
    )
    .unwrap();
    let mut pool = GlobalModel::new(
        GlobalKind::MeanPool,
        AlignmentSet::none(3, 5),
        GraphSource::Identity,
        8,
        3,
        false,
        &mut rng,
    )
    .unwrap();
    pool.w0 = gcn.w0.clone();
    pool.w1 = gcn.w1.clone();
    let bt = batch(3, 6, 5, 3, 2);
    assert!(gcn.predict(&bt).unwrap().max_abs_diff(&pool.predict(&bt).unwrap()) < 1e-12);
    // a fixed identity adjacency takes the same path as no graph
    let mut fixed = gcn.clone();
    fixed.graph = GraphSource::Fixed {
        adjacency: Matrix::identity(3),
    };
    assert!(fixed.predict(&bt).unwrap().max_abs_diff(&gcn.predict(&bt).unwrap()) < 1e-15);
}

#[test]
fn gcn_matches_scalar_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (n, d, hid, c) = (3, 2, 2, 2);
    let a = Matrix::from_rows(&[&[0.5, 0.3, 0.2], &[0.3, 0.4, 0.3], &[0.2, 0.3, 0.5]]);
    for skip in [false, true] {
        let mut model = GlobalModel::new(
            GlobalKind::Gcn,
            AlignmentSet::none(n, d),
            GraphSource::Fixed { adjacency: a.clone() },
            hid,
            c,
            skip,
            &mut rng,
        )
        .unwrap();
        model.w0 = model.w0.scale(0.1);
        let bt = batch(n, 2, d, c, 4);
        let probs = model.predict(&bt).unwrap();
        for k in 0..2 {
            let h = |i: usize, j: usize| bt.latents[i].get(k, j);
            // first layer: relu(Â H W0) (+ H W_skip)
            let mut first = vec![vec![0.0; hid]; n];
            for i in 0..n {
                for q in 0..hid {
                    let mut s = 0.0;
                    for l in 0..n {
                        for j in 0..d {
                            s += a.get(i, l) * h(l, j) * model.w0.get(j, q);
                        }
                    }
                    first[i][q] = s.max(0.0);
                    if let Some(w) = &model.skip {
                        for j in 0..d {
                            first[i][q] += h(i, j) * w.get(j, q);
                        }
                    }
                }
            }
            let mut logits = vec![0.0; c];
            for (cls, lg) in logits.iter_mut().enumerate() {
                for q in 0..hid {
                    let mut pooled = 0.0;
                    for i in 0..n {
                        for l in 0..n {
                            pooled += a.get(i, l) * first[l][q];
                        }
                    }
                    *lg += pooled / n as f64 * model.w1.get(q, cls);
                }
            }
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for cls in 0..c {
                assert!((probs.get(k, cls) - logits[cls].exp() / z).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn uniform_and_perfect_losses() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = GlobalModel::new(
        GlobalKind::MeanPool,
        AlignmentSet::none(2, 3),
        GraphSource::Identity,
        4,
        3,
        false,
        &mut rng,
    )
    .unwrap();
    model.w1 = Matrix::zeros(4, 3);
    let bt = batch(2, 9, 3, 3, 6);
    assert!((model.eval_loss(&bt).unwrap() - 3f64.ln()).abs() < 1e-12);
    let mut one = bt.clone();
    one.labels = vec![1; 9];
    model.b1 = Some(Matrix::row_vector(&[0.0, 40.0, 0.0]));
    assert!(model.eval_loss(&one).unwrap() <= 1e-6);
}

#[test]
fn empty_and_degenerate_batches_fail() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = GlobalModel::new(
        GlobalKind::Gcn,
        AlignmentSet::none(2, 3),
        learned(2, 1),
        4,
        2,
        true,
        &mut rng,
    )
    .unwrap();
    let mut bt = batch(2, 4, 3, 2, 8);
    bt.present[0][2] = false;
    bt.present[1][2] = false;
    assert!(matches!(model.predict(&bt), Err(F3Error::DegenerateSample(2))));
    let empty = GlobalBatch {
        latents: vec![Matrix::zeros(0, 3); 2],
        present: vec![vec![]; 2],
        labels: vec![],
    };
    assert!(f3_loss(&model, &empty, &EdgeNoise::new(0), &[0]).is_err());
}

#[test]
fn gradient_of_full_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = 3;
    let alignment = AlignmentSet::new(AlignmentMode::Soft, n, 4, 4, &mut rng).unwrap();
    let model = GlobalModel::new(GlobalKind::Gcn, alignment, learned(n, 2), 5, 2, true, &mut rng).unwrap();
    let bt = batch(n, 8, 4, 2, 10);
    let noise = EdgeNoise::new(3);
    let params: Vec<Matrix> = model.params().into_iter().cloned().collect();
    let report = grad_check(
        |t, p| {
            let mut m = model.clone();
            for (dst, src) in m.params_mut().into_iter().zip(p) {
                *dst = t.value(*src).clone();
            }
            let leaves = GlobalLeaves {
                w0: p[0],
                w1: p[1],
                b0: None,
                b1: None,
                skip: Some(p[2]),
                alignment: p[3..3 + n].to_vec(),
                logits: Some(p[3 + n]),
            };
            let hv: Vec<Var> = bt.latents.iter().map(|h| t.leaf(h.clone())).collect();
            m.loss_var(
                t,
                &leaves,
                &hv,
                &bt.labels,
                GraphUse::Sampled {
                    noise: &noise,
                    keys: &[0, 1],
                },
            )
        },
        &params,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{:?}", report.max_rel_err);
}

#[test]
fn known_permutations_are_repaired_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (n, d) = (4, 6);
    let base = GlobalModel::new(
        GlobalKind::Gcn,
        AlignmentSet::none(n, d),
        learned(n, 4),
        8,
        3,
        true,
        &mut rng,
    )
    .unwrap();
    let bt = batch(n, 10, d, 3, 12);
    let mut perms = Vec::new();
    let mut shuffled = bt.clone();
    for i in 0..n {
        let mut p: Vec<usize> = (0..d).collect();
        p.shuffle(&mut rng);
        shuffled.latents[i] = bt.latents[i].permute_cols(&p);
        perms.push(p);
    }
    // P·h[p] = h when row j of P selects coordinate p⁻¹[j]
    let mats: Vec<Matrix> = perms
        .iter()
        .map(|p| permutation_matrix(&invert_permutation(p)).unwrap())
        .collect();
    let mut repaired = base.clone();
    repaired.alignment = AlignmentSet::from_matrices(AlignmentMode::Soft, mats).unwrap();
    let noise = EdgeNoise::new(5);
    let want = f3_loss(&base, &bt, &noise, &[7]).unwrap();
    let got = f3_loss(&repaired, &shuffled, &noise, &[7]).unwrap();
    assert_eq!(want.to_bits(), got.to_bits());
}

#[test]
fn sample_average_and_expected_graph() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let model = GlobalModel::new(
        GlobalKind::Gcn,
        AlignmentSet::none(3, 4),
        learned(3, 6),
        8,
        2,
        true,
        &mut rng,
    )
    .unwrap();
    let bt = batch(3, 5, 4, 2, 14);
    let noise = EdgeNoise::new(8);
    let l1 = f3_loss(&model, &bt, &noise, &[1]).unwrap();
    let l2 = f3_loss(&model, &bt, &noise, &[2]).unwrap();
    let both = f3_loss(&model, &bt, &noise, &[1, 2]).unwrap();
    assert!((both - 0.5 * (l1 + l2)).abs() < 1e-14);
    assert_ne!(l1, l2);
    // inference is deterministic
    assert_eq!(model.predict(&bt).unwrap(), model.predict(&bt).unwrap());
}

#[test]
fn checkpoint_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let alignment = AlignmentSet::new(AlignmentMode::Hard, 3, 4, 4, &mut rng).unwrap();
    let model = GlobalModel::new(GlobalKind::Gcn, alignment, learned(3, 7), 8, 2, true, &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.json");
    model.save(&path).unwrap();
    let back = GlobalModel::load(&path).unwrap();
    let bt = batch(3, 4, 4, 2, 16);
    assert_eq!(back.predict(&bt).unwrap(), model.predict(&bt).unwrap());
    let mut buf = Vec::new();
    write_matrix_csv(&model.posterior().unwrap().probs(), "theta", &mut buf).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 10);
}
