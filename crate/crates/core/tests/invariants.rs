//! Property tests of structural invariants over random inputs.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use f3::alignment::{doubly_stochastic_residual, sinkhorn};
use f3::graphsampler::{
    analytic_bias, normalize_adjacency, relaxed_cdf, EdgeNoise, ReferenceDistribution, RelaxMethod,
};
use f3::localmodels::LocalModel;
use f3::metrics::{binary_auc, count_entropy, macro_f1};
use f3::synthdata::{generate, read_dataset, write_dataset, SyntheticSpec};
use f3::Matrix;

fn matrix(n: usize, lo: f64, hi: f64, seed: u64) -> Matrix {
    Matrix::random_uniform(n, n, lo, hi, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn symmetric(n: usize, seed: u64) -> Matrix {
    let a = matrix(n, 0.0, 1.0, seed);
    Matrix::from_fn(n, n, |i, j| if i <= j { a.get(i, j) } else { a.get(j, i) })
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    p
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn normalized_adjacency_fixes_root_degrees(n in 1usize..9, seed in any::<u64>()) {
        let a = symmetric(n, seed);
        let norm = normalize_adjacency(&a).unwrap();
        // with M = offdiag(A) + I and d = M·1, the vector √d is fixed
        let d: Vec<f64> = (0..n).map(|i| 1.0 + (0..n).filter(|&j| j != i).map(|j| a.get(i, j)).sum::<f64>()).collect();
        for i in 0..n {
            let lhs: f64 = (0..n).map(|j| norm.get(i, j) * d[j].sqrt()).sum();
            prop_assert!((lhs - d[i].sqrt()).abs() < 1e-12);
            for j in 0..n {
                prop_assert!((norm.get(i, j) - norm.get(j, i)).abs() <= 1e-15);
                prop_assert!((0.0..=1.0).contains(&norm.get(i, j)));
            }
        }
    }

    #[test]
    fn normalized_adjacency_ignores_the_diagonal(n in 1usize..9, seed in any::<u64>(), v in 0.0f64..1.0) {
        let a = symmetric(n, seed);
        let mut b = a.clone();
        for i in 0..n {
            b.set(i, i, v);
        }
        prop_assert_eq!(normalize_adjacency(&a).unwrap(), normalize_adjacency(&b).unwrap());
    }

    #[test]
    fn sinkhorn_is_a_diagonal_scaling_to_doubly_stochastic(n in 2usize..9, seed in any::<u64>(), c in 0.1f64..10.0) {
        let k0 = matrix(n, 0.5, 2.0, seed);
        let (k, diag) = sinkhorn(&k0, 200).unwrap();
        prop_assert!(doubly_stochastic_residual(&k) < 1e-9);
        prop_assert_eq!(diag.residuals.len(), 201);
        // cross ratios survive any row/column scaling
        let cross = |m: &Matrix| m.get(0, 0) * m.get(1, 1) / (m.get(0, 1) * m.get(1, 0));
        prop_assert!((cross(&k) / cross(&k0) - 1.0).abs() < 1e-10);
        // and a global factor changes nothing
        let (kc, _) = sinkhorn(&k0.scale(c), 200).unwrap();
        prop_assert!(kc.max_abs_diff(&k) < 1e-10);
    }

    #[test]
    fn permuting_a_local_model_and_back_is_exact(hidden in 2usize..9, gru in any::<bool>(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (model, width) = if gru {
            (LocalModel::new_gru(1, hidden, 3, &mut rng), 6)
        } else {
            (LocalModel::new_fc(5, hidden, 3, &mut rng), 5)
        };
        let x = Matrix::random_uniform(7, width, -1.0, 1.0, &mut rng);
        let p = permutation(hidden, seed ^ 1);
        let mut inv = vec![0; hidden];
        for (a, &b) in p.iter().enumerate() {
            inv[b] = a;
        }
        let there = model.permuted(&p).unwrap();
        let back = there.permuted(&inv).unwrap();
        prop_assert_eq!(back.checksum(), model.checksum());
        let (a, b) = (model.forward(&x).unwrap(), there.forward(&x).unwrap());
        prop_assert!(a.probs.max_abs_diff(&b.probs) < 1e-12);
        prop_assert!(a.latents.permute_cols(&p).max_abs_diff(&b.latents) < 1e-12);
    }

    #[test]
    fn macro_f1_is_bounded_and_label_blind(
        pairs in prop::collection::vec((0usize..4, 0usize..4), 1..60),
        seed in any::<u64>(),
    ) {
        let (y, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let f = macro_f1(&y, &p, 4);
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert_eq!(macro_f1(&y, &y, 4), 1.0);
        let r = permutation(4, seed);
        let ry: Vec<usize> = y.iter().map(|&c| r[c]).collect();
        let rp: Vec<usize> = p.iter().map(|&c| r[c]).collect();
        prop_assert!((macro_f1(&ry, &rp, 4) - f).abs() < 1e-12);
    }

    #[test]
    fn auc_flips_with_the_scores(
        pairs in prop::collection::vec((-3.0f64..3.0, any::<bool>()), 2..60),
    ) {
        let (s, pos): (Vec<f64>, Vec<bool>) = pairs.into_iter().unzip();
        if let Some(a) = binary_auc(&s, &pos) {
            prop_assert!((0.0..=1.0).contains(&a));
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            prop_assert!((binary_auc(&neg, &pos).unwrap() - (1.0 - a)).abs() < 1e-12);
            prop_assert_eq!(binary_auc(&vec![0.0; s.len()], &pos), Some(0.5));
        }
    }

    #[test]
    fn entropy_is_between_zero_and_log_support(counts in prop::collection::vec(0usize..20, 1..8)) {
        let h = count_entropy(&counts);
        let support = counts.iter().filter(|&&c| c > 0).count().max(1);
        prop_assert!(h >= 0.0 && h <= (support as f64).ln() + 1e-12);
        let mut rev = counts.clone();
        rev.reverse();
        prop_assert!((count_entropy(&rev) - h).abs() < 1e-12);
    }

    #[test]
    fn relaxed_cdfs_are_monotone_laws(theta in 0.01f64..0.99, tau in 0.05f64..2.0, gumbel in any::<bool>()) {
        let method = if gumbel { RelaxMethod::Gumbel } else { RelaxMethod::Icdf };
        let reference = ReferenceDistribution::default();
        let mut last = 0.0;
        for k in 1..100 {
            let c = relaxed_cdf(k as f64 / 100.0, theta, tau, method, &reference);
            prop_assert!((0.0..=1.0).contains(&c) && c >= last - 1e-15);
            last = c;
        }
        // the relaxed sample exceeds 1/2 exactly when the hard edge is on
        let half = relaxed_cdf(0.5, theta, tau, method, &reference);
        prop_assert!((half - (1.0 - theta)).abs() < 1e-9);
        let bias = analytic_bias(theta, tau, method, &reference);
        if (theta - 0.5).abs() > 1e-6 {
            prop_assert_eq!(bias.signum(), (0.5 - theta).signum());
        }
    }

    #[test]
    fn edge_noise_is_a_pure_function_of_its_key(seed in any::<u64>(), step in any::<u64>(), index in 0u64..1 << 40, slot in 0u64..2) {
        let noise = EdgeNoise::new(seed);
        let u = noise.uniform(step, index, slot);
        prop_assert!(u > 0.0 && u < 1.0);
        prop_assert_eq!(u.to_bits(), EdgeNoise::new(seed).uniform(step, index, slot).to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn datasets_survive_a_file_round_trip(
        clients in 3usize..6,
        samples in 20usize..50,
        missing in 0.0f64..0.3,
        gru in 0usize..2,
        seed in any::<u64>(),
    ) {
        let spec = SyntheticSpec { clients, samples, classes: 2, latent_dim: 4, missing, gru_clients: gru, seed, ..SyntheticSpec::default() };
        let d = generate(&spec).unwrap();
        let mut bytes = Vec::new();
        write_dataset(&d, &mut bytes).unwrap();
        let back = read_dataset(bytes.as_slice()).unwrap();
        let mut again = Vec::new();
        write_dataset(&back, &mut again).unwrap();
        prop_assert_eq!(bytes, again);
        prop_assert_eq!(back.labels, d.labels);
        prop_assert_eq!(back.permutations, d.permutations);
    }
}
