//! Subcommand bodies. Each returns `Ok` or a [`CliError`] whose class
//! decides the exit code.

use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};

use f3::bench::{bench_samplers, write_bench_csv};
use f3::config::{DataSource, ExperimentConfig};
use f3::federation::{
    dataset_for_seed, prepare, report_of, run_all, run_variant, write_histogram_csv, MetricsReport, VariantConfig,
};
use f3::globalmodel::{write_matrix_csv, GlobalModel};
use f3::graphsampler::RelaxMethod;
use f3::localmodels::ClientCheckpoint;
use f3::synthdata::{save_dataset, write_dataset_csv};
use f3::verify::{run_suite, Suite, SuiteOptions};

use crate::CliError;

const DEFAULT_RUN_DIR: &str = "f3-run";

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Failed(format!("cannot create {}: {e}", path.display())))
}

/// Loads a config and applies the command-line seed, making a dataset
/// path absolute so the copy written into a run directory still resolves.
fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    if let DataSource::File(p) = &mut cfg.data {
        *p = fs::canonicalize(&*p).map_err(|e| CliError::Usage(format!("dataset file {}: {e}", p.display())))?;
    }
    Ok(cfg)
}

fn variant_label(v: &VariantConfig) -> String {
    format!("{}-{}", v.id, v.graph_mode().name())
}

pub fn run(config: &Path, seed: Option<u64>, out: Option<&Path>, dry_run: bool) -> Result<(), CliError> {
    let mut cfg = load_config(config, seed)?;
    let dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_RUN_DIR));
    cfg.output = Some(dir.clone());
    cfg.validate()?;
    if dry_run {
        println!(
            "config ok: {} variants, seeds {:?}, output {}",
            cfg.variants.len(),
            cfg.seeds,
            dir.display()
        );
        return Ok(());
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;
    let runs = run_all(&cfg)?;
    let report = report_of(&runs);
    report.write_json(create(&dir.join("metrics.json"))?)?;
    report.write_csv(create(&dir.join("metrics.csv"))?)?;
    for run in &runs {
        let seed_dir = dir.join(format!("seed-{}", run.prepared.seed));
        let clients = seed_dir.join("clients");
        let models = seed_dir.join("models");
        fs::create_dir_all(&clients)?;
        fs::create_dir_all(&models)?;
        write_histogram_csv(&run.histogram, create(&seed_dir.join("entropy_histogram.csv"))?)?;
        for c in &run.prepared.clients {
            ClientCheckpoint::of(c).save(&clients.join(format!("client-{}.json", c.id)))?;
        }
        for (v, vr) in &run.variants {
            let label = variant_label(v);
            if let Some(m) = &vr.model {
                m.save(&models.join(format!("{label}.json")))?;
            }
            for c in vr.clients.iter().flatten() {
                ClientCheckpoint::of(c).save(&models.join(format!("{label}-client-{}.json", c.id)))?;
            }
        }
    }
    print_summary(&cfg, &report);
    println!("wrote {}", dir.display());
    Ok(())
}

fn print_summary(cfg: &ExperimentConfig, report: &MetricsReport) {
    println!("{:<22} {:<7} {:>9}", "variant", "graph", "median_f1");
    for v in &cfg.variants {
        let graph = v.graph_mode().name();
        if let Some(f1) = report.median_f1(v.id.name(), graph) {
            println!("{:<22} {:<7} {:>9.4}", v.id.name(), graph, f1);
        }
    }
}

pub fn verify(suite: &str, seed: u64, out: &Path) -> Result<(), CliError> {
    let suites = if suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![suite.parse::<Suite>()?]
    };
    let opts = SuiteOptions {
        seed,
        ..SuiteOptions::default()
    };
    let mut failed = Vec::new();
    for s in suites {
        let report = run_suite(s, &opts)?;
        report.write(out)?;
        println!(
            "{:<12} {} ({} checks, {:.1} s)",
            s.name(),
            if report.passed { "pass" } else { "FAIL" },
            report.checks.len(),
            report.elapsed_s
        );
        for c in report.failures() {
            eprintln!("  failed: {}: {} (want {})", c.name, c.value, c.bound);
            failed.push(format!("{s}: {}", c.name));
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!(
            "{} properties failed: {}",
            failed.len(),
            failed.join("; ")
        )))
    }
}

pub fn bench(sizes: &[usize], edges: u64, tau: f64, seed: u64, out: Option<&Path>) -> Result<(), CliError> {
    if let Some(&n) = sizes.iter().find(|&&n| n < 2) {
        return Err(CliError::Usage(format!("benchmark sizes must be at least 2, got {n}")));
    }
    if !(tau > 0.0 && tau.is_finite()) || edges == 0 {
        return Err(CliError::Usage("tau and edges must be positive".into()));
    }
    let rows = bench_samplers(sizes, edges, tau, seed)?;
    match out {
        Some(p) => write_bench_csv(&rows, create(p)?)?,
        None => write_bench_csv(&rows, io::stdout().lock())?,
    }
    for pair in rows.chunks(2) {
        let (icdf, gumbel) = (&pair[0], &pair[1]);
        debug_assert_eq!(icdf.method, RelaxMethod::Icdf.name());
        if icdf.wall_clock_s > gumbel.wall_clock_s {
            log::warn!("n = {}: the inverse-CDF sampler was slower this time", icdf.nodes);
        }
    }
    Ok(())
}

pub fn gen_data(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let cfg = match config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::with_variants(Vec::new()),
    };
    let DataSource::Synthetic(spec) = &cfg.data else {
        return Err(CliError::Usage("gen-data needs a synthetic data source".into()));
    };
    spec.validate()?;
    let seed = seed.or(cfg.seeds.first().copied()).unwrap_or(0);
    let data = dataset_for_seed(&cfg, seed)?;
    fs::create_dir_all(out)?;
    save_dataset(&data, &out.join("dataset.f3d"))?;
    fs::write(
        out.join("spec.json"),
        serde_json::to_vec_pretty(&data.spec).map_err(f3::F3Error::from)?,
    )?;
    write_dataset_csv(&data, create(&out.join("samples.csv"))?)?;
    write_matrix_csv(&data.graph, "weight", create(&out.join("planted_graph.csv"))?)?;
    write_planted_alignment(&data.permutations, &out.join("planted_alignment.csv"))?;
    println!(
        "wrote {} ({} clients, {} samples, {:.3} missing)",
        out.display(),
        data.clients(),
        data.samples(),
        data.missing_fraction()
    );
    Ok(())
}

/// The alignment that undoes each planted permutation, in the heatmap
/// layout `client,row,col,value`.
fn write_planted_alignment(perms: &[Vec<usize>], path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut rows = || -> csv::Result<()> {
        w.write_record(["client", "row", "col", "value"])?;
        for (i, p) in perms.iter().enumerate() {
            let d = p.len();
            let mut inv = vec![0; d];
            for (a, &b) in p.iter().enumerate() {
                inv[b] = a;
            }
            for r in 0..d {
                for c in 0..d {
                    w.serialize((i, r, c, if inv[r] == c { 1.0 } else { 0.0 }))?;
                }
            }
        }
        w.flush()?;
        Ok(())
    };
    rows().map_err(|e| CliError::Failed(e.to_string()))
}

fn write_model_heatmaps(model: &GlobalModel, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    write_matrix_csv(
        &model.inference_adjacency(),
        "value",
        create(&dir.join("adjacency.csv"))?,
    )?;
    if let Some(p) = model.posterior() {
        write_matrix_csv(&p.probs(), "theta", create(&dir.join("theta.csv"))?)?;
    }
    model.alignment.write_heatmap_csv(create(&dir.join("alignment.csv"))?)?;
    Ok(())
}

pub fn export_model(model: &Path, out: &Path) -> Result<(), CliError> {
    let m = GlobalModel::load(model).map_err(|e| CliError::Usage(format!("{}: {e}", model.display())))?;
    write_model_heatmaps(&m, out)?;
    println!("wrote {}", out.display());
    Ok(())
}

pub fn export_config(config: &Path, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let mut cfg = load_config(config, None)?;
    let seed = seed.or(cfg.seeds.first().copied()).unwrap_or(0);
    cfg.seeds = vec![seed];
    cfg.variants.retain(|v| v.id.uses_graph());
    if cfg.variants.is_empty() {
        return Err(CliError::Usage("the config has no graph variants to export".into()));
    }
    cfg.validate()?;
    let prep = prepare(&cfg, seed)?;
    fs::create_dir_all(out)?;
    write_matrix_csv(&prep.data.graph, "weight", create(&out.join("planted_graph.csv"))?)?;
    write_planted_alignment(&prep.data.permutations, &out.join("planted_alignment.csv"))?;
    for v in &cfg.variants {
        let run = run_variant(&cfg, &prep, v)?;
        if let Some(m) = &run.model {
            write_model_heatmaps(m, &out.join(variant_label(v)))?;
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
