//! Weighted graph cuts over the factor graph, over-partitioning, and the
//! cut-quality metrics used to compare uninformed and informed cuts.
//!
//! Vertex weight is per-update work times the (estimated) update count.
//! Edge weight is the summed update counts of both ends times the message
//! size plus a fixed per-message overhead.

mod multilevel;

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::{FactorGraph, VertexId};
use multilevel::Csr;

/// Default per-message overhead, in scalar-value units.
pub const DEFAULT_C_COMM: f64 = 8.0;
/// Default balance coefficient.
pub const DEFAULT_GAMMA: f64 = 1.1;
/// Upper bound returned by [`sanders_k`].
pub const SANDERS_K_MAX: usize = 64;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("partitioning does not match the graph: {0}")]
    Mismatch(String),
    #[error("ratio undefined: {0}")]
    UndefinedRatio(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Weighted cut objective over the vertices of a factor graph.
#[derive(Debug, Clone)]
pub struct WeightedCutProblem {
    csr: Csr,
    pub gamma: f64,
    pub blocks: usize,
}

impl WeightedCutProblem {
    /// Builds weights from update-count estimates (`None` means all ones).
    pub fn new(
        graph: &FactorGraph,
        update_counts: Option<&[f64]>,
        c_comm: f64,
        gamma: f64,
        blocks: usize,
    ) -> Result<Self, PartitionError> {
        let n = graph.num_vertices();
        if gamma.is_nan() || gamma < 1.0 {
            return Err(PartitionError::Argument(format!("gamma must be >= 1, got {gamma}")));
        }
        if c_comm.is_nan() || c_comm < 0.0 {
            return Err(PartitionError::Argument(format!("C_comm must be >= 0, got {c_comm}")));
        }
        if blocks == 0 {
            return Err(PartitionError::Argument("block count must be positive".into()));
        }
        let ones;
        let u = match update_counts {
            Some(u) => {
                if u.len() != n {
                    return Err(PartitionError::Mismatch(format!(
                        "{} update counts for {n} vertices",
                        u.len()
                    )));
                }
                u
            }
            None => {
                ones = vec![1.0; n];
                &ones
            }
        };
        // Vertices that never updated still carry a little weight so every
        // weight stays positive.
        let u: Vec<f64> = u.iter().map(|&x| x.max(1e-3)).collect();
        let mut csr = Csr {
            vwgt: (0..n).map(|v| u[v] * graph.vertex_work(v)).collect(),
            xadj: vec![0],
            adj: Vec::with_capacity(2 * graph.num_edges()),
            ewgt: Vec::with_capacity(2 * graph.num_edges()),
        };
        for v in 0..n {
            for &w in graph.neighbors(v) {
                csr.adj.push(w);
                csr.ewgt.push((u[v] + u[w]) * (graph.message_len(v, w) as f64 + c_comm));
            }
            csr.xadj.push(csr.adj.len());
        }
        Ok(Self { csr, gamma, blocks })
    }

    /// Uniform update counts, as used before any inference has run.
    pub fn uninformed(graph: &FactorGraph, c_comm: f64, gamma: f64, blocks: usize) -> Result<Self, PartitionError> {
        Self::new(graph, None, c_comm, gamma, blocks)
    }

    pub fn num_vertices(&self) -> usize {
        self.csr.n()
    }

    pub fn vertex_weight(&self, v: VertexId) -> f64 {
        self.csr.vwgt[v]
    }

    pub fn total_weight(&self) -> f64 {
        self.csr.total_weight()
    }

    /// Weight of edge `(v, u)`, if present.
    pub fn edge_weight(&self, v: VertexId, u: VertexId) -> Option<f64> {
        self.csr.nbrs(v).find(|&(x, _)| x == u).map(|(_, w)| w)
    }

    pub fn total_edge_weight(&self) -> f64 {
        self.csr.ewgt.iter().sum::<f64>() / 2.0
    }

    pub fn with_blocks(&self, blocks: usize) -> Self {
        Self { blocks, ..self.clone() }
    }
}

/// Vertex-to-block and block-to-worker assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partitioning {
    pub block_of: Vec<usize>,
    pub worker_of_block: Vec<usize>,
    pub workers: usize,
    /// Set when the balance constraint could not be met.
    pub violated: bool,
}

impl Partitioning {
    /// Every vertex in block 0 on worker 0.
    pub fn single(n_vertices: usize) -> Self {
        Self {
            block_of: vec![0; n_vertices],
            worker_of_block: vec![0],
            workers: 1,
            violated: false,
        }
    }

    /// One block per worker from an explicit vertex-to-worker map.
    pub fn from_workers(worker_of_vertex: Vec<usize>, workers: usize) -> Self {
        Self {
            block_of: worker_of_vertex,
            worker_of_block: (0..workers).collect(),
            workers,
            violated: false,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.block_of.len()
    }

    pub fn num_blocks(&self) -> usize {
        self.worker_of_block.len()
    }

    pub fn worker_of(&self, v: VertexId) -> usize {
        self.worker_of_block[self.block_of[v]]
    }

    /// Vertices owned by each worker, ascending.
    pub fn owned_by_worker(&self) -> Vec<Vec<VertexId>> {
        let mut out = vec![Vec::new(); self.workers];
        for v in 0..self.num_vertices() {
            out[self.worker_of(v)].push(v);
        }
        out
    }

    /// Checks internal consistency and that it covers `n_vertices`.
    pub fn validate(&self, n_vertices: usize) -> Result<(), PartitionError> {
        if self.block_of.len() != n_vertices {
            return Err(PartitionError::Mismatch(format!(
                "partition covers {} vertices, graph has {n_vertices}",
                self.block_of.len()
            )));
        }
        if let Some(b) = self.block_of.iter().find(|&&b| b >= self.num_blocks()) {
            return Err(PartitionError::Mismatch(format!("block {b} out of range")));
        }
        if let Some(w) = self.worker_of_block.iter().find(|&&w| w >= self.workers) {
            return Err(PartitionError::Mismatch(format!("worker {w} out of range")));
        }
        Ok(())
    }
}

/// Splits the vertices into `problem.blocks` blocks of balanced weight with a
/// small weighted cut. Each block is its own worker. Deterministic given `seed`.
pub fn partition(problem: &WeightedCutProblem, seed: u64) -> Result<Partitioning, PartitionError> {
    let n = problem.num_vertices();
    let m = problem.blocks;
    if m == 0 || m > n {
        return Err(PartitionError::Argument(format!(
            "cannot cut {n} vertices into {m} blocks"
        )));
    }
    let limit = problem.gamma * problem.total_weight() / m as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let block_of = if m == 1 {
        vec![0; n]
    } else if m == n {
        (0..n).collect()
    } else {
        let levels = (m as f64).log2().ceil().max(1.0);
        let tolerance = problem.gamma.powf(1.0 / levels);
        let mut blocks = multilevel::recursive_bisection(&problem.csr, m, tolerance, &mut rng);
        multilevel::kway_refine(&problem.csr, &mut blocks, m, limit, &mut rng);
        blocks
    };
    let mut weights = vec![0.0; m];
    for (v, &b) in block_of.iter().enumerate() {
        weights[b] += problem.vertex_weight(v);
    }
    let violated = weights.iter().any(|&w| w > limit * (1.0 + 1e-12));
    if violated {
        log::warn!(
            "balance constraint violated: heaviest block {:.1} > limit {limit:.1}",
            weights.iter().copied().fold(0.0, f64::max)
        );
    }
    Ok(Partitioning {
        block_of,
        worker_of_block: (0..m).collect(),
        workers: m,
        violated,
    })
}

/// Cuts into `k · workers` blocks and deals exactly `k` blocks to each
/// worker in a seeded random order.
pub fn over_partition_and_assign(
    problem: &WeightedCutProblem,
    workers: usize,
    k: usize,
    seed: u64,
) -> Result<Partitioning, PartitionError> {
    if workers == 0 || k == 0 {
        return Err(PartitionError::Argument("workers and k must be positive".into()));
    }
    let mut part = partition(&problem.with_blocks(workers * k), seed)?;
    let mut perm: Vec<usize> = (0..workers * k).collect();
    // separate stream so the cut itself matches a plain partition call
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    perm.shuffle(&mut rng);
    let mut worker_of_block = vec![0; workers * k];
    for (i, &b) in perm.iter().enumerate() {
        worker_of_block[b] = i / k;
    }
    part.worker_of_block = worker_of_block;
    part.workers = workers;
    Ok(part)
}

/// Total weight of edges whose endpoints live on different workers.
pub fn communication_cost(problem: &WeightedCutProblem, part: &Partitioning) -> f64 {
    let g = &problem.csr;
    let mut c = 0.0;
    for v in 0..g.n() {
        let wv = part.worker_of(v);
        for (u, w) in g.nbrs(v) {
            if u > v && part.worker_of(u) != wv {
                c += w;
            }
        }
    }
    c
}

/// Weight assigned to each worker.
pub fn worker_weights(problem: &WeightedCutProblem, part: &Partitioning) -> Vec<f64> {
    let mut w = vec![0.0; part.workers];
    for v in 0..problem.num_vertices() {
        w[part.worker_of(v)] += problem.vertex_weight(v);
    }
    w
}

/// `p · (heaviest worker) / total`; 1.0 is perfect balance.
pub fn work_balance(problem: &WeightedCutProblem, part: &Partitioning) -> f64 {
    let w = worker_weights(problem, part);
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        return 1.0;
    }
    part.workers as f64 * w.iter().copied().fold(0.0, f64::max) / total
}

/// `(relative communication cost, relative work balance)` of an uninformed
/// cut against an informed one, both scored with the measured update counts.
pub fn relative_metrics(
    graph: &FactorGraph,
    uninformed: &Partitioning,
    informed: &Partitioning,
    true_counts: &[f64],
    c_comm: f64,
) -> Result<(f64, f64), PartitionError> {
    uninformed.validate(graph.num_vertices())?;
    informed.validate(graph.num_vertices())?;
    let truth = WeightedCutProblem::new(graph, Some(true_counts), c_comm, 1.0, 1)?;
    let ci = communication_cost(&truth, informed);
    if ci == 0.0 {
        return Err(PartitionError::UndefinedRatio("informed cut cost is 0".into()));
    }
    let cu = communication_cost(&truth, uninformed);
    Ok((cu / ci, work_balance(&truth, uninformed)))
}

/// Over-partitioning factor suggested by the Sanders balance bound:
/// `ceil(p^(1 / log2(1 / (σ + 1/2))))`, at least 1 and at most [`SANDERS_K_MAX`].
/// A heuristic only; the bound hides constant factors.
pub fn sanders_k(p: usize, sigma: f64) -> Result<usize, PartitionError> {
    if !(sigma > 0.0 && sigma <= 0.5) {
        return Err(PartitionError::Argument(format!(
            "sigma must lie in (0, 1/2], got {sigma}"
        )));
    }
    if p == 0 {
        return Err(PartitionError::Argument("p must be positive".into()));
    }
    let denom = (1.0 / (sigma + 0.5)).log2();
    if denom <= 0.0 {
        return Ok(SANDERS_K_MAX);
    }
    let k = (p as f64).powf(1.0 / denom).ceil();
    Ok(if k.is_finite() {
        (k as usize).clamp(1, SANDERS_K_MAX)
    } else {
        SANDERS_K_MAX
    })
}

pub fn write_partition(part: &Partitioning) -> String {
    let mut out = format!(
        "DBRSPART 1 {} {} {}\n",
        part.num_vertices(),
        part.num_blocks(),
        part.workers
    );
    for (v, &b) in part.block_of.iter().enumerate() {
        let _ = writeln!(out, "{v} {b} {}", part.worker_of_block[b]);
    }
    out
}

pub fn read_partition(text: &str) -> Result<Partitioning, PartitionError> {
    let err = |line: usize, message: String| PartitionError::Parse { line, message };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (i, header) = lines.next().ok_or_else(|| err(1, "empty partition file".into()))?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 5 || h[0] != "DBRSPART" || h[1] != "1" {
        return Err(err(i + 1, format!("bad header {header:?}")));
    }
    let num = |s: &str, line: usize| s.parse::<usize>().map_err(|_| err(line, format!("bad number {s:?}")));
    let (n, m, p) = (num(h[2], i + 1)?, num(h[3], i + 1)?, num(h[4], i + 1)?);
    let mut block_of = vec![usize::MAX; n];
    let mut worker_of_block = vec![usize::MAX; m];
    for (i, line) in lines {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(err(i + 1, "expected `<vertex> <block> <worker>`".into()));
        }
        let (v, b, w) = (num(f[0], i + 1)?, num(f[1], i + 1)?, num(f[2], i + 1)?);
        if v >= n || b >= m || w >= p {
            return Err(err(i + 1, format!("entry {v} {b} {w} out of range")));
        }
        if block_of[v] != usize::MAX {
            return Err(err(i + 1, format!("vertex {v} listed twice")));
        }
        if worker_of_block[b] != usize::MAX && worker_of_block[b] != w {
            return Err(err(i + 1, format!("block {b} assigned to two workers")));
        }
        block_of[v] = b;
        worker_of_block[b] = w;
    }
    if let Some(v) = block_of.iter().position(|&b| b == usize::MAX) {
        return Err(PartitionError::Mismatch(format!("vertex {v} not assigned")));
    }
    // empty blocks may be left unassigned; park them on worker 0
    for w in worker_of_block.iter_mut().filter(|w| **w == usize::MAX) {
        *w = 0;
    }
    Ok(Partitioning {
        block_of,
        worker_of_block,
        workers: p,
        violated: false,
    })
}

pub fn save_partition(part: &Partitioning, path: impl AsRef<Path>) -> Result<(), PartitionError> {
    std::fs::write(path, write_partition(part))?;
    Ok(())
}

pub fn load_partition(path: impl AsRef<Path>) -> Result<Partitioning, PartitionError> {
    read_partition(&std::fs::read_to_string(path)?)
}

pub fn write_update_counts(counts: &[u64]) -> String {
    let mut out = String::new();
    for (v, c) in counts.iter().enumerate() {
        let _ = writeln!(out, "{v} {c}");
    }
    out
}

/// Parses `<vertex> <U>` lines into a dense vector of `n_vertices` counts.
pub fn read_update_counts(text: &str, n_vertices: usize) -> Result<Vec<f64>, PartitionError> {
    let mut out = vec![f64::NAN; n_vertices];
    for (i, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.is_empty() {
            continue;
        }
        let bad = || PartitionError::Parse {
            line: i + 1,
            message: format!("expected `<vertex> <count>`, got {line:?}"),
        };
        if f.len() != 2 {
            return Err(bad());
        }
        let v: usize = f[0].parse().map_err(|_| bad())?;
        let u: f64 = f[1].parse().map_err(|_| bad())?;
        if v >= n_vertices || u.is_nan() || u < 0.0 {
            return Err(bad());
        }
        out[v] = u;
    }
    if let Some(v) = out.iter().position(|x| x.is_nan()) {
        return Err(PartitionError::Mismatch(format!("no update count for vertex {v}")));
    }
    Ok(out)
}
