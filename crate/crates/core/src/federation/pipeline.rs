use std::time::Instant;

use rayon::prelude::*;

use super::baselines::{
    best_model_selection, chosen_client_outputs, concat_baseline, entropy_diagnostic, entropy_histogram, knn_graph,
    majority_vote, ConcatHead,
};
use super::bundle::{stratified_split, Part, RepresentationBundle, TransferLedger};
use super::report::{MetricsReport, MetricsRow};
use super::train::{fit, minibatches, FitSummary, GlobalFit};
use super::variant::{GraphMode, VariantConfig, VariantId};
use super::vfl::{VflBatch, VflFit};
use crate::alignment::{AlignmentMode, AlignmentSet};
use crate::config::{DataSource, ExperimentConfig};
use crate::error::Result;
use crate::globalmodel::{GlobalKind, GlobalModel, GraphSource};
use crate::graphsampler::{normalize_adjacency, EdgeNoise, GraphPosterior, RelaxMethod};
use crate::localmodels::{pretrain_local_on, LocalClient};
use crate::metrics::{argmax_rows, macro_auc, macro_f1};
use crate::numcore::Matrix;
use crate::rng::{stream_rng, streams};
use crate::synthdata::{generate, load_dataset, Dataset};

/// Dataset of one seed: synthetic data are regenerated with the run seed.
pub fn dataset_for_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Synthetic(spec) => generate(&crate::synthdata::SyntheticSpec { seed, ..spec.clone() }),
        DataSource::File(path) => load_dataset(path),
    }
}

/// Clients initialized and, when `train` is given, pre-trained on their
/// own shards restricted to those samples, in parallel; then re-expressed
/// in their planted latent order.
pub fn pretrain_clients(
    cfg: &ExperimentConfig,
    data: &Dataset,
    seed: u64,
    train: Option<&[usize]>,
) -> Result<Vec<LocalClient>> {
    let d = data.spec.latent_dim;
    let classes = data.spec.classes;
    (0..data.clients())
        .into_par_iter()
        .map(|i| {
            let mut c = LocalClient::init(i, data.kinds[i], data.shards[i].clone(), d, classes, seed)?;
            if let Some(rows) = train {
                pretrain_local_on(&mut c, &data.labels, rows, &cfg.pretrain)?;
            }
            c.model = c.model.permuted(&data.permutations[i])?;
            Ok(c)
        })
        .collect()
}

/// Everything shared by the variants of one seed.
pub struct Prepared {
    pub seed: u64,
    pub data: Dataset,
    pub clients: Vec<LocalClient>,
    pub bundle: RepresentationBundle,
    /// Transfers of the one sharing round.
    pub ledger: TransferLedger,
}

pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let data = dataset_for_seed(cfg, seed)?;
    for v in &cfg.variants {
        v.validate(data.clients())?;
    }
    let split = stratified_split(&data.labels, data.spec.classes, seed);
    let train: Vec<usize> = (0..split.len()).filter(|&k| split[k] == Part::Train).collect();
    let clients = pretrain_clients(cfg, &data, seed, Some(&train))?;
    let mut ledger = TransferLedger::new(clients.len());
    let bundle = RepresentationBundle::collect(&clients, data.labels.clone(), split, data.spec.classes, &mut ledger)?;
    Ok(Prepared {
        seed,
        data,
        clients,
        bundle,
        ledger,
    })
}

/// Untrained global model of a graph variant, drawn from the seed's
/// global-init stream.
pub fn build_global(cfg: &ExperimentConfig, prep: &Prepared, variant: &VariantConfig) -> Result<GlobalModel> {
    let n = prep.bundle.clients();
    let d = prep.bundle.latent_dim();
    let classes = prep.bundle.classes;
    let mut rng = stream_rng(prep.seed, streams::GLOBAL_INIT);
    let alignment = match variant.id {
        VariantId::Tied => AlignmentSet::new(AlignmentMode::Tied, n, d, d, &mut rng)?,
        VariantId::Align | VariantId::VflGraphAlign | VariantId::VflScratch => {
            AlignmentSet::new(cfg.alignment, n, d, d, &mut rng)?
        }
        _ => AlignmentSet::none(n, d),
    };
    let s = &cfg.sampler;
    let graph = match variant.graph_mode() {
        GraphMode::None => GraphSource::Identity,
        GraphMode::Given => GraphSource::Fixed {
            adjacency: normalize_adjacency(&prep.data.graph)?,
        },
        GraphMode::Knn => GraphSource::Fixed {
            adjacency: knn_graph(&prep.bundle, variant.kappa, prep.seed)?,
        },
        mode @ (GraphMode::Icdf | GraphMode::Gumbel) => {
            let method = if mode == GraphMode::Icdf {
                RelaxMethod::Icdf
            } else {
                RelaxMethod::Gumbel
            };
            GraphSource::Learned {
                posterior: GraphPosterior::new(n, s.tau, s.reference.clone(), method, s.symmetric, &mut rng)?,
            }
        }
    };
    let kind = if variant.id == VariantId::MeanPool {
        GlobalKind::MeanPool
    } else {
        GlobalKind::Gcn
    };
    let skip = cfg.training.skip && kind == GlobalKind::Gcn;
    GlobalModel::new(kind, alignment, graph, cfg.training.hidden, classes, skip, &mut rng)
}

fn edge_noise(seed: u64) -> EdgeNoise {
    EdgeNoise::new(seed ^ streams::EDGE_NOISE)
}

/// Result of one variant on one seed.
#[derive(Debug, Clone)]
pub struct VariantRun {
    pub row: MetricsRow,
    /// Test-split class probabilities.
    pub test_probs: Matrix,
    pub model: Option<GlobalModel>,
    pub fit: Option<FitSummary>,
    /// Client models after training (VFL variants only).
    pub clients: Option<Vec<LocalClient>>,
}

pub fn run_variant(cfg: &ExperimentConfig, prep: &Prepared, variant: &VariantConfig) -> Result<VariantRun> {
    let start = Instant::now();
    let bundle = &prep.bundle;
    let test = bundle.indices(Part::Test);
    let mut ledger = prep.ledger.clone();
    let mut epochs_run = 0;
    let mut model = None;
    let mut summary = None;
    let mut trained_clients = None;
    let probs = match variant.id {
        VariantId::Majority => majority_vote(bundle, &test)?.1,
        VariantId::BestModel => {
            let (chosen, _) = best_model_selection(bundle)?;
            chosen_client_outputs(bundle, chosen, &test)?
        }
        VariantId::Concat => {
            let (head, s) = concat_baseline(bundle, &cfg.training, prep.seed)?;
            epochs_run = s.epochs_run;
            summary = Some(s);
            head.predict(&ConcatHead::inputs(bundle, &test))?
        }
        VariantId::MeanPool | VariantId::NoAlign | VariantId::Tied | VariantId::Align => {
            let train = bundle.part(Part::Train);
            let val = bundle.part(Part::Val);
            let init = GlobalFit {
                model: build_global(cfg, prep, variant)?,
                train: &train,
                val: &val,
                noise: edge_noise(prep.seed),
                graph_samples: cfg.sampler.samples_per_step,
                edge_lr_scale: cfg.training.edge_lr_scale,
                batch_size: cfg.training.batch_size,
                seed: prep.seed,
                steps: 0,
            };
            let (fitted, s) = fit(&init, &cfg.training)?;
            epochs_run = s.epochs_run;
            summary = Some(s);
            let p = fitted.model.predict(&bundle.part(Part::Test))?;
            model = Some(fitted.model);
            p
        }
        VariantId::VflGraphAlign | VariantId::VflScratch => {
            let clients = if variant.id == VariantId::VflScratch {
                pretrain_clients(cfg, &prep.data, prep.seed, None)?
            } else {
                prep.clients.clone()
            };
            let labels = &bundle.labels;
            let train = VflBatch::gather(&clients, labels, &bundle.indices(Part::Train))?;
            let val = VflBatch::gather(&clients, labels, &bundle.indices(Part::Val))?;
            let testb = VflBatch::gather(&clients, labels, &test)?;
            let init = VflFit {
                global: build_global(cfg, prep, variant)?,
                locals: clients.iter().map(|c| c.model.clone()).collect(),
                train: &train,
                val: &val,
                noise: edge_noise(prep.seed),
                graph_samples: cfg.sampler.samples_per_step,
                edge_lr_scale: cfg.training.edge_lr_scale,
                local_lr_scale: cfg.training.local_lr_scale,
                batch_size: cfg.training.batch_size,
                seed: prep.seed,
                steps: 0,
            };
            let (fitted, s) = fit(&init, &cfg.training)?;
            if variant.id == VariantId::VflScratch {
                // no sharing round happened before joint training
                ledger = TransferLedger::new(clients.len());
            }
            // one exchange per minibatch step
            let steps_per_epoch = minibatches(train.len(), cfg.training.batch_size, prep.seed, 0).len();
            for _ in 0..s.total_epochs * steps_per_epoch {
                ledger.round(true);
            }
            epochs_run = s.epochs_run;
            summary = Some(s);
            let p = fitted.global.predict(&testb.global_batch(&fitted.locals)?)?;
            let mut out = clients;
            for (c, m) in out.iter_mut().zip(fitted.locals) {
                c.model = m;
            }
            trained_clients = Some(out);
            model = Some(fitted.global);
            p
        }
    };
    let y: Vec<usize> = test.iter().map(|&k| bundle.labels[k]).collect();
    let row = MetricsRow {
        variant: variant.id.name().to_string(),
        graph_mode: variant.graph_mode().name().to_string(),
        seed: prep.seed,
        f1: macro_f1(&y, &argmax_rows(&probs), bundle.classes),
        auc: macro_auc(&y, &probs),
        epochs_run,
        transfers_out: ledger.max_outbound(),
        transfers_in: ledger.max_inbound(),
        wall_clock_s: start.elapsed().as_secs_f64(),
    };
    Ok(VariantRun {
        row,
        test_probs: probs,
        model,
        fit: summary,
        clients: trained_clients,
    })
}

/// All variants of one seed plus the disagreement diagnostic.
pub struct SeedRun {
    pub prepared: Prepared,
    pub variants: Vec<(VariantConfig, VariantRun)>,
    pub entropies: Vec<f64>,
    pub histogram: Vec<(f64, f64, usize)>,
}

pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedRun> {
    let prepared = prepare(cfg, seed)?;
    let variants = cfg
        .variants
        .iter()
        .map(|v| {
            log::info!("seed {seed}: {} ({})", v.id, v.graph_mode().name());
            Ok((*v, run_variant(cfg, &prepared, v)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let entropies = entropy_diagnostic(&prepared.bundle)?;
    let histogram = entropy_histogram(&entropies, prepared.bundle.classes, cfg.entropy_bins);
    Ok(SeedRun {
        prepared,
        variants,
        entropies,
        histogram,
    })
}

/// Seeds run in parallel; results come back in seed order.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Vec<SeedRun>> {
    cfg.validate()?;
    cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect()
}

pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    Ok(report_of(&run_all(cfg)?))
}

pub fn report_of(runs: &[SeedRun]) -> MetricsReport {
    MetricsReport {
        rows: runs
            .iter()
            .flat_map(|r| r.variants.iter().map(|(_, v)| v.row.clone()))
            .collect(),
    }
}
