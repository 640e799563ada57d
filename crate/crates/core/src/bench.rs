//! Draw counts and wall-clock time of the two edge relaxations on the
//! sampling path used in training.

use std::io::Write;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{contract, Result};
use crate::graphsampler::{EdgeNoise, GraphPosterior, ReferenceDistribution, RelaxMethod};

pub const BENCH_HEADER: [&str; 8] = [
    "method",
    "nodes",
    "graphs",
    "edges",
    "draws",
    "draws_per_edge",
    "wall_clock_s",
    "seconds_per_million_edges",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub method: String,
    pub nodes: usize,
    pub graphs: u64,
    pub edges: u64,
    pub draws: u64,
    pub draws_per_edge: f64,
    pub wall_clock_s: f64,
    pub seconds_per_million_edges: f64,
}

/// Samples relaxed graphs on `nodes` clients until at least `edges` edge
/// samples are drawn, with noise keyed exactly as in training.
pub fn bench_sampler(method: RelaxMethod, nodes: usize, edges: u64, tau: f64, seed: u64) -> Result<BenchRow> {
    if nodes < 2 {
        return contract("benchmark graphs need at least two nodes");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let posterior = GraphPosterior::new(nodes, tau, ReferenceDistribution::default(), method, true, &mut rng)?;
    let noise = EdgeNoise::new(seed);
    let per_graph = posterior.edges().len() as u64;
    let graphs = edges.div_ceil(per_graph);
    let start = Instant::now();
    let mut sink = 0.0;
    for step in 0..graphs {
        let (a, _) = posterior.relax_with(|e, slot| noise.uniform(step, e, slot));
        sink += a.get(0, 1);
    }
    let wall = start.elapsed().as_secs_f64();
    std::hint::black_box(sink);
    let total = graphs * per_graph;
    Ok(BenchRow {
        method: method.name().to_string(),
        nodes,
        graphs,
        edges: total,
        draws: posterior.draws(),
        draws_per_edge: posterior.draws() as f64 / total as f64,
        wall_clock_s: wall,
        seconds_per_million_edges: wall * 1e6 / total as f64,
    })
}

/// Both methods on every size, alternating so drift in machine load hits
/// both alike.
pub fn bench_samplers(sizes: &[usize], edges: u64, tau: f64, seed: u64) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &n in sizes {
        for method in [RelaxMethod::Icdf, RelaxMethod::Gumbel] {
            rows.push(bench_sampler(method, n, edges, tau, seed)?);
        }
    }
    Ok(rows)
}

pub fn write_bench_csv<W: Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(BENCH_HEADER)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
