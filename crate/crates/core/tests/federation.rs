use f3::config::{DataSource, ExperimentConfig};
use f3::federation::{
    best_model_selection, concat_baseline, entropy_diagnostic, entropy_histogram, knn_adjacency, majority_vote,
    prepare, run_pipeline, run_variant, ConcatHead, GraphMode, Part, RepresentationBundle, VariantConfig, VariantId,
};
use f3::metrics::argmax_rows;
use f3::synthdata::SyntheticSpec;
use f3::Matrix;

fn small(variants: Vec<VariantConfig>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::with_variants(variants);
    cfg.data = DataSource::Synthetic(SyntheticSpec {
        clients: 5,
        samples: 150,
        classes: 3,
        ..SyntheticSpec::default()
    });
    cfg.pretrain.epochs = 40;
    cfg.training.max_epochs = 15;
    cfg.training.patience = 5;
    cfg
}

/// Bundle with one-hot local predictions `votes[i][k]` (`None` = absent).
fn voting_bundle(
    votes: &[Vec<Option<usize>>],
    labels: Vec<usize>,
    split: Vec<Part>,
    classes: usize,
) -> RepresentationBundle {
    let m = labels.len();
    let local_probs = votes
        .iter()
        .map(|v| Matrix::from_fn(m, classes, |k, c| if v[k] == Some(c) { 1.0 } else { 0.0 }))
        .collect();
    RepresentationBundle {
        latents: votes.iter().map(|_| Matrix::zeros(m, 2)).collect(),
        local_probs,
        present: votes.iter().map(|v| v.iter().map(|x| x.is_some()).collect()).collect(),
        labels,
        split,
        classes,
    }
}

// Straightforward reference implementations.

fn oracle_f1(y: &[usize], p: &[usize], classes: usize) -> f64 {
    let mut total = 0.0;
    let mut counted = 0;
    for c in 0..classes {
        let tp = (0..y.len()).filter(|&k| y[k] == c && p[k] == c).count() as f64;
        let fp = (0..y.len()).filter(|&k| y[k] != c && p[k] == c).count() as f64;
        let fneg = (0..y.len()).filter(|&k| y[k] == c && p[k] != c).count() as f64;
        if tp + fp + fneg == 0.0 {
            continue;
        }
        total += 2.0 * tp / (2.0 * tp + fp + fneg);
        counted += 1;
    }
    total / counted as f64
}

/// AUC as the fraction of (positive, negative) pairs ranked correctly,
/// ties counting one half.
fn oracle_auc(y: &[usize], probs: &Matrix) -> f64 {
    let mut total = 0.0;
    let mut counted = 0;
    for c in 0..probs.cols() {
        let pos: Vec<f64> = (0..y.len()).filter(|&k| y[k] == c).map(|k| probs.get(k, c)).collect();
        let neg: Vec<f64> = (0..y.len()).filter(|&k| y[k] != c).map(|k| probs.get(k, c)).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let mut s = 0.0;
        for a in &pos {
            for b in &neg {
                s += if a > b {
                    1.0
                } else if a == b {
                    0.5
                } else {
                    0.0
                };
            }
        }
        total += s / (pos.len() * neg.len()) as f64;
        counted += 1;
    }
    total / counted as f64
}

#[test]
fn reported_metrics_match_reference_implementations() {
    let cfg = small(vec![
        VariantConfig::new(VariantId::Majority),
        VariantConfig::new(VariantId::MeanPool),
        VariantConfig::with_graph(VariantId::Align, GraphMode::Icdf),
    ]);
    let prep = prepare(&cfg, 3).unwrap();
    let test = prep.bundle.indices(Part::Test);
    let y: Vec<usize> = test.iter().map(|&k| prep.bundle.labels[k]).collect();
    for v in &cfg.variants {
        let run = run_variant(&cfg, &prep, v).unwrap();
        let pred = argmax_rows(&run.test_probs);
        assert!((run.row.f1 - oracle_f1(&y, &pred, 3)).abs() < 1e-10, "{}", v.id);
        assert!(
            (run.row.auc - oracle_auc(&y, &run.test_probs)).abs() < 1e-10,
            "{}",
            v.id
        );
    }
}

#[test]
fn majority_ties_go_to_lowest_class() {
    let votes = vec![vec![Some(2), Some(1)], vec![Some(1), None], vec![Some(0), None]];
    let b = voting_bundle(&votes, vec![0, 1], vec![Part::Test; 2], 3);
    let (pred, shares) = majority_vote(&b, &[0, 1]).unwrap();
    assert_eq!(pred, vec![0, 1]);
    assert_eq!(shares.row(0), &[1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]);
    assert_eq!(shares.row(1), &[0.0, 1.0, 0.0]);
}

#[test]
fn best_model_ties_go_to_lowest_id() {
    // clients 1 and 2 are both perfect on validation
    let votes = vec![
        vec![Some(1), Some(1), Some(0)],
        vec![Some(0), Some(1), Some(0)],
        vec![Some(0), Some(1), Some(1)],
    ];
    let b = voting_bundle(&votes, vec![0, 1, 1], vec![Part::Val, Part::Val, Part::Test], 2);
    let (best, scores) = best_model_selection(&b).unwrap();
    assert_eq!(best, 1);
    assert_eq!(scores[1], scores[2]);
    assert!(scores[0] < 1.0);
}

#[test]
fn entropy_of_agreement_and_even_split() {
    let votes = vec![vec![Some(1), Some(0)], vec![Some(1), Some(1)]];
    let b = voting_bundle(&votes, vec![0, 0], vec![Part::Train; 2], 2);
    let e = entropy_diagnostic(&b).unwrap();
    assert_eq!(e[0], 0.0);
    assert!((e[1] - 2f64.ln()).abs() < 1e-15);
    let hist = entropy_histogram(&e, 2, 4);
    assert_eq!(hist.iter().map(|h| h.2).collect::<Vec<_>>(), vec![1, 0, 0, 1]);
    assert!((hist[3].1 - 2f64.ln()).abs() < 1e-15);
}

#[test]
fn knn_edge_cases() {
    let n = 6;
    let sim = Matrix::from_fn(
        n,
        n,
        |i, j| if i / 3 == j / 3 { 1.0 } else { 0.0 } - 0.01 * (i as f64 - j as f64).abs(),
    );
    // κ = n−1 links everyone
    let full = knn_adjacency(&sim, n - 1).unwrap();
    assert_eq!(full, Matrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }));
    // two clusters and κ = 2 give two triangles
    let blocks = knn_adjacency(&sim, 2).unwrap();
    assert_eq!(
        blocks,
        Matrix::from_fn(n, n, |i, j| if i != j && i / 3 == j / 3 { 1.0 } else { 0.0 })
    );
    assert_eq!(blocks, blocks.transpose());
    assert!(knn_adjacency(&sim, n).is_err());
    // κ = 1 with ties: node 0 picks the lowest tied index
    let flat = Matrix::from_fn(3, 3, |_, _| 0.5);
    let a = knn_adjacency(&flat, 1).unwrap();
    assert_eq!(a.get(0, 1), 1.0);
    assert_eq!(a.get(0, 2), 1.0); // node 2 picked 0
}

#[test]
fn knn_variant_rejects_large_kappa() {
    let mut cfg = small(vec![VariantConfig::with_graph(VariantId::Align, GraphMode::Knn)]);
    cfg.variants[0].kappa = 5;
    assert!(cfg.validate().is_err());
    cfg.variants[0].kappa = 2;
    cfg.validate().unwrap();
}

#[test]
fn concat_head_shapes_and_absent_clients() {
    let votes = vec![vec![Some(0), Some(1), Some(0), Some(1)]];
    let mut one = voting_bundle(
        &votes,
        vec![0, 1, 0, 1],
        vec![Part::Train, Part::Train, Part::Val, Part::Val],
        2,
    );
    one.latents[0] = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 0.0], &[0.0, 1.0]]);
    let cfg = f3::federation::TrainConfig {
        max_epochs: 50,
        ..Default::default()
    };
    let (head, _) = concat_baseline(&one, &cfg, 0).unwrap();
    assert_eq!(head.w.shape(), (2, 2));
    let p = head.predict(&ConcatHead::inputs(&one, &[0, 1])).unwrap();
    assert_eq!(argmax_rows(&p), vec![0, 1]);

    // a client absent from every sample of the batch gets no gradient
    let votes = vec![vec![Some(0), Some(1)], vec![None, None]];
    let mut two = voting_bundle(&votes, vec![0, 1], vec![Part::Train; 2], 2);
    two.latents[0] = Matrix::from_rows(&[&[0.3, -0.2], &[0.5, 0.1]]);
    let head = ConcatHead::new(2, 2, 2, 1);
    let (_, gw, _) = head.gradients(&ConcatHead::inputs(&two, &[0, 1]), &[0, 1]).unwrap();
    assert!(gw.row(0).iter().chain(gw.row(1)).any(|g| *g != 0.0));
    assert!(gw.row(2).iter().chain(gw.row(3)).all(|g| *g == 0.0));
}

#[test]
fn vfl_with_frozen_clients_matches_server_training() {
    let mut cfg = small(vec![
        VariantConfig::new(VariantId::Align),
        VariantConfig::new(VariantId::VflGraphAlign),
    ]);
    cfg.training.local_lr_scale = 0.0;
    let prep = prepare(&cfg, 1).unwrap();
    let k = run_variant(&cfg, &prep, &cfg.variants[0]).unwrap();
    let l = run_variant(&cfg, &prep, &cfg.variants[1]).unwrap();
    assert!(k.test_probs.max_abs_diff(&l.test_probs) < 1e-10);
    assert_eq!(k.row.f1, l.row.f1);
    for (before, after) in prep.clients.iter().zip(l.clients.unwrap()) {
        assert_eq!(before.model.checksum(), after.model.checksum());
    }
}

#[test]
fn transfer_counts_and_frozen_clients() {
    let cfg = small(
        [
            VariantId::Majority,
            VariantId::BestModel,
            VariantId::MeanPool,
            VariantId::Concat,
            VariantId::NoAlign,
            VariantId::Tied,
            VariantId::Align,
            VariantId::VflGraphAlign,
            VariantId::VflScratch,
        ]
        .into_iter()
        .map(VariantConfig::new)
        .collect(),
    );
    let prep = prepare(&cfg, 0).unwrap();
    let sums: Vec<u64> = prep.clients.iter().map(|c| c.model.checksum()).collect();
    for v in &cfg.variants {
        let run = run_variant(&cfg, &prep, v).unwrap();
        if v.id.is_vfl() {
            assert!(run.row.transfers_in >= run.row.epochs_run as u64, "{}", v.id);
            assert!(run.row.transfers_out >= run.row.transfers_in);
            assert!(run.clients.is_some());
        } else {
            assert_eq!((run.row.transfers_out, run.row.transfers_in), (1, 0), "{}", v.id);
        }
    }
    let after: Vec<u64> = prep.clients.iter().map(|c| c.model.checksum()).collect();
    assert_eq!(sums, after);
}

#[test]
fn zero_epochs_keep_the_initial_model() {
    let mut cfg = small(vec![VariantConfig::new(VariantId::Align)]);
    cfg.training.max_epochs = 0;
    let prep = prepare(&cfg, 2).unwrap();
    let run = run_variant(&cfg, &prep, &cfg.variants[0]).unwrap();
    assert_eq!(run.row.epochs_run, 0);
    let init = f3::federation::build_global(&cfg, &prep, &cfg.variants[0]).unwrap();
    assert_eq!(run.model.unwrap().params(), init.params());
}

#[test]
fn reruns_are_bit_identical() {
    let mut cfg = small(vec![
        VariantConfig::new(VariantId::Concat),
        VariantConfig::new(VariantId::Align),
        VariantConfig::new(VariantId::VflScratch),
    ]);
    cfg.seeds = vec![0, 1];
    let a = run_pipeline(&cfg).unwrap();
    let b = run_pipeline(&cfg).unwrap();
    assert!(a.reproducible_eq(&b));
    assert_eq!(a.rows.len(), 6);
}

#[test]
fn training_reduces_the_objective() {
    let mut drops = Vec::new();
    for seed in 0..5 {
        let mut cfg = small(vec![VariantConfig::new(VariantId::Align)]);
        cfg.training.max_epochs = 200;
        cfg.training.patience = usize::MAX;
        cfg.training.batch_size = 0;
        cfg.training.learning_rates = vec![0.01];
        let prep = prepare(&cfg, seed).unwrap();
        let fit = run_variant(&cfg, &prep, &cfg.variants[0]).unwrap().fit.unwrap();
        assert_eq!(fit.train_losses.len(), 200);
        drops.push(1.0 - fit.train_losses[199] / fit.train_losses[0]);
    }
    let median = f3::federation::median(drops.clone()).unwrap();
    assert!(median >= 0.3, "{drops:?}");
}
