use super::*;
use crate::error::F3Error;
use crate::localmodels::{pretrain_local, EmbeddingKind, LocalClient, PretrainConfig};
use crate::metrics::count_entropy;

fn small(seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        clients: 6,
        samples: 120,
        seed,
        ..SyntheticSpec::default()
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn too_few_samples_rejected() {
    let spec = SyntheticSpec {
        samples: 29,
        classes: 3,
        ..SyntheticSpec::default()
    };
    match generate(&spec) {
        Err(F3Error::Config(msg)) => assert!(msg.contains("too few samples"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn deterministic_and_seed_sensitive() {
    let a = generate(&small(3)).unwrap();
    let b = generate(&small(3)).unwrap();
    assert_eq!(a, b);
    let mut x = Vec::new();
    let mut y = Vec::new();
    write_dataset(&a, &mut x).unwrap();
    write_dataset(&b, &mut y).unwrap();
    assert_eq!(x, y);
    let mut z = Vec::new();
    write_dataset(&generate(&small(4)).unwrap(), &mut z).unwrap();
    assert_ne!(x, z);
}

#[test]
fn ring_graph_and_shapes() {
    let d = generate(&SyntheticSpec {
        gru_clients: 2,
        ..small(1)
    })
    .unwrap();
    for i in 0..6 {
        assert_eq!(d.graph.row(i).iter().sum::<f64>(), 2.0);
        assert_eq!(d.graph.get(i, (i + 1) % 6), 1.0);
    }
    assert_eq!(d.kinds[3], EmbeddingKind::Fc);
    assert_eq!(d.kinds[4], EmbeddingKind::Gru);
    assert_eq!(d.shards[0].width(), 8);
    assert_eq!(d.shards[5].width(), 12);
    for p in &d.permutations {
        assert_eq!(p.len(), 16);
    }
    assert_ne!(d.permutations[0], (0..16).collect::<Vec<_>>());
    let counts: Vec<usize> = (0..3).map(|c| d.labels.iter().filter(|&&y| y == c).count()).collect();
    assert_eq!(counts, vec![40, 40, 40]);
    let off = generate(&SyntheticSpec {
        permutations: PermutationPlanting::Off,
        ..small(1)
    })
    .unwrap();
    assert!(off.permutations.iter().all(|p| *p == (0..16).collect::<Vec<_>>()));
}

#[test]
fn missing_rate_is_honored() {
    let spec = SyntheticSpec {
        missing: 0.3,
        ..SyntheticSpec::default()
    };
    let d = generate(&spec).unwrap();
    assert!((d.missing_fraction() - 0.3).abs() <= 0.02, "{}", d.missing_fraction());
    for k in 0..d.samples() {
        assert!(d.shards.iter().any(|s| s.is_present(k)));
    }
}

#[test]
fn binary_round_trip_and_errors() {
    let d = generate(&SyntheticSpec {
        gru_clients: 1,
        missing: 0.2,
        ..small(5)
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.f3ds");
    save_dataset(&d, &path).unwrap();
    assert_eq!(load_dataset(&path).unwrap(), d);

    let bytes = std::fs::read(&path).unwrap();
    let cut = bytes.len() - 13;
    match read_dataset(&bytes[..cut]) {
        Err(F3Error::Format { offset, message }) => {
            assert!(offset <= cut as u64 && offset > 0, "{offset}");
            assert!(message.contains("end of file"), "{message}");
        }
        other => panic!("{other:?}"),
    }
    let mut wrong = bytes.clone();
    wrong[4] = 9;
    assert!(matches!(
        read_dataset(&wrong[..]),
        Err(F3Error::Version { found: 9, expected: 1 })
    ));
    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(matches!(
        read_dataset(&bad_magic[..]),
        Err(F3Error::Format { offset: 0, .. })
    ));
}

#[test]
fn csv_export_lists_present_entries() {
    let d = generate(&small(2)).unwrap();
    let mut buf = Vec::new();
    write_dataset_csv(&d, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let present: usize = d.shards.iter().map(|s| s.present_indices().len() * s.width()).sum();
    assert_eq!(text.lines().count(), present + 1);
    assert!(text.starts_with("sample,label,client,feature,value"));
}

#[test]
fn planted_graph_is_informative() {
    let gains: Vec<f64> = (0..5)
        .map(|seed| {
            let (with, without) = graph_informativeness(&SyntheticSpec {
                seed,
                ..SyntheticSpec::default()
            })
            .unwrap();
            with - without
        })
        .collect();
    assert!(median(gains.clone()) >= 0.05, "{gains:?}");
}

fn pretrained(spec: &SyntheticSpec, clients: usize) -> (Dataset, Vec<LocalClient>) {
    let d = generate(spec).unwrap();
    let cs = (0..clients)
        .map(|i| {
            let mut c = LocalClient::init(i, d.kinds[i], d.shards[i].clone(), 8, spec.classes, spec.seed).unwrap();
            pretrain_local(&mut c, &d.labels, &PretrainConfig::default()).unwrap();
            c
        })
        .collect();
    (d, cs)
}

#[test]
fn no_conflict_means_separable_clients() {
    let spec = SyntheticSpec {
        clients: 4,
        samples: 300,
        conflict: 0.0,
        missing: 0.0,
        ..SyntheticSpec::default()
    };
    let (d, cs) = pretrained(&spec, 4);
    let all: Vec<usize> = (0..d.samples()).collect();
    for c in &cs {
        let (_, p) = c.forward_rows(&all).unwrap();
        let acc = all.iter().filter(|&&k| p.argmax_row(k) == d.labels[k]).count() as f64 / all.len() as f64;
        assert!(acc >= 0.9, "client {} accuracy {acc}", c.id);
    }
}

#[test]
fn full_conflict_plants_disagreement() {
    let spec = SyntheticSpec {
        samples: 300,
        conflict: 1.0,
        missing: 0.0,
        ..SyntheticSpec::default()
    };
    let (d, cs) = pretrained(&spec, spec.clients);
    let all: Vec<usize> = (0..d.samples()).collect();
    let preds: Vec<Vec<usize>> = cs
        .iter()
        .map(|c| {
            let (_, p) = c.forward_rows(&all).unwrap();
            (0..all.len()).map(|k| p.argmax_row(k)).collect()
        })
        .collect();
    let entropies: Vec<f64> = all
        .iter()
        .map(|&k| {
            let mut counts = vec![0; spec.classes];
            for p in &preds {
                counts[p[k]] += 1;
            }
            count_entropy(&counts)
        })
        .collect();
    assert!(median(entropies) > 0.2);
}
