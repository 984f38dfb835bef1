//! Distributed residual Splash: isolated workers exchanging serialized
//! envelopes over FIFO channels, with token-ring termination detection.
//!
//! Two schedulers drive the same [`Worker`](worker) code: a single-threaded
//! round-robin loop over in-memory mailboxes (reproducible, used by tests)
//! and one OS thread per worker over std channels.

pub mod token;
pub mod transport;
pub mod wire;
mod worker;

use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::graph::{FactorGraph, GraphError, VertexId};
use crate::partition::Partitioning;
use crate::scheduler::default_w_max;
use crate::state::{global_convergence_test, ResidualMode, Shard};

use transport::{thread_endpoints, Mailboxes};
use wire::{decode_packet, Kind};
use worker::{Status, Worker};

pub use token::{TokenAction, TokenAgent, TokenState};

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("partitioning does not match the graph: {0}")]
    Mismatch(String),
    #[error("malformed envelope: {0}")]
    Wire(String),
    #[error("channel {from} -> {to}: expected sequence {expected}, got {found}")]
    Sequence {
        from: usize,
        to: usize,
        expected: u64,
        found: u64,
    },
    #[error("consistency violation: {0}")]
    Consistency(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheduler {
    /// Round-robin stepping of all workers on the calling thread.
    #[default]
    Deterministic,
    /// One thread per worker.
    Threaded,
}

/// Run-wide settings; each worker gets a [`WorkerConfig`] derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct RuntimeConfig {
    pub beta: f64,
    /// Splash work bound; `None` picks [`default_w_max`].
    pub w_max: Option<f64>,
    pub damping: f64,
    /// Splash loops between external sends.
    pub flush_interval: u64,
    pub mode: ResidualMode,
    /// Total vertex-update budget, split evenly across workers.
    pub max_updates: u64,
    pub scheduler: Scheduler,
    /// Belief snapshot every this many updates (deterministic scheduler only).
    pub trace_every: Option<u64>,
}

impl Default for RuntimeConfig {
    fn default() -> Self {
        Self {
            beta: 1e-5,
            w_max: None,
            damping: 0.6,
            flush_interval: 10,
            mode: ResidualMode::Belief,
            max_updates: u64::MAX,
            scheduler: Scheduler::Deterministic,
            trace_every: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkerConfig {
    pub id: usize,
    pub owned: Vec<VertexId>,
    pub beta: f64,
    pub w_max: f64,
    pub damping: f64,
    pub flush_interval: u64,
    pub mode: ResidualMode,
    pub max_updates: u64,
}

impl WorkerConfig {
    pub fn validate(&self) -> Result<(), RuntimeError> {
        if self.flush_interval == 0 {
            return Err(RuntimeError::Config("flush interval must be at least 1".into()));
        }
        if self.beta.is_nan() || self.beta < 0.0 {
            return Err(RuntimeError::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        if self.w_max.is_nan() || self.w_max <= 0.0 {
            return Err(RuntimeError::Config(format!(
                "splash work must be > 0, got {}",
                self.w_max
            )));
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(RuntimeError::Config(format!(
                "damping must be in [0, 1), got {}",
                self.damping
            )));
        }
        if self.mode == ResidualMode::NaiveBelief {
            return Err(RuntimeError::Config(
                "the naive belief residual is not a valid schedule".into(),
            ));
        }
        Ok(())
    }
}

impl RuntimeConfig {
    pub fn worker_configs(&self, graph: &FactorGraph, part: &Partitioning) -> Vec<WorkerConfig> {
        let p = part.workers;
        let w_max = self.w_max.unwrap_or_else(|| default_w_max(graph, p));
        let share = self.max_updates.div_ceil(p as u64);
        part.owned_by_worker()
            .into_iter()
            .enumerate()
            .map(|(id, owned)| WorkerConfig {
                id,
                owned,
                beta: self.beta,
                w_max,
                damping: self.damping,
                flush_interval: self.flush_interval,
                mode: self.mode,
                max_updates: share,
            })
            .collect()
    }
}

/// One line of the metrics stream, emitted after every Splash loop.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRecord {
    pub worker: usize,
    pub r#loop: u64,
    pub updates: u64,
    pub splash_work: f64,
    pub msgs_sent: u64,
    pub msgs_recv: u64,
    pub bytes_sent: u64,
    /// Top of the worker's queue after the loop; `null` while infinite.
    pub max_residual: Option<f64>,
    pub wall_ns: u64,
}

/// Per-worker counters at the end of a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct WorkerReport {
    pub id: usize,
    pub owned: usize,
    pub loops: u64,
    pub splashes: u64,
    /// Splashes whose plan contained every owned vertex.
    pub full_coverage_splashes: u64,
    pub updates: u64,
    pub edge_updates: u64,
    /// External messages produced before coalescing.
    pub external_messages: u64,
    pub msgs_sent: u64,
    pub msgs_recv: u64,
    pub bytes_sent: u64,
    /// Largest number of BP messages sent by one flush.
    pub max_flush_messages: u64,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    pub updates: u64,
    pub beliefs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub beliefs: Vec<Vec<f64>>,
    /// Updates per vertex.
    pub update_counts: Vec<u64>,
    /// Token-ring termination, no exhausted budget, and every residual `<= beta`.
    pub converged: bool,
    pub terminated_by_token: bool,
    pub total_updates: u64,
    pub msgs_sent: u64,
    pub msgs_received: u64,
    /// No BP envelope left in any channel after the run.
    pub channels_empty: bool,
    /// Largest scheduling residual over all vertices after the run.
    pub max_residual: f64,
    pub metrics: Vec<MetricsRecord>,
    pub workers: Vec<WorkerReport>,
    pub trace: Vec<TracePoint>,
}

/// Runs distributed residual Splash until the token ring declares
/// termination, then gathers all beliefs at worker 0.
pub fn run_inference(
    graph: &FactorGraph,
    part: &Partitioning,
    config: &RuntimeConfig,
) -> Result<InferenceResult, RuntimeError> {
    part.validate(graph.num_vertices())
        .map_err(|e| RuntimeError::Mismatch(e.to_string()))?;
    if part.workers == 0 {
        return Err(RuntimeError::Config("at least one worker is required".into()));
    }
    let cfgs = config.worker_configs(graph, part);
    for c in &cfgs {
        c.validate()?;
    }
    let owner: Vec<usize> = (0..graph.num_vertices()).map(|v| part.worker_of(v)).collect();
    match config.scheduler {
        Scheduler::Deterministic => run_deterministic(graph, owner, cfgs, config),
        Scheduler::Threaded => run_threaded(graph, owner, cfgs, config),
    }
}

fn snapshot(graph: &FactorGraph, owner: &[usize], workers: &[Worker<'_>]) -> Result<Vec<Vec<f64>>, RuntimeError> {
    (0..graph.num_variables())
        .map(|v| Ok(workers[owner[v]].shard().belief(v)?))
        .collect()
}

fn run_deterministic(
    graph: &FactorGraph,
    owner: Vec<usize>,
    cfgs: Vec<WorkerConfig>,
    config: &RuntimeConfig,
) -> Result<InferenceResult, RuntimeError> {
    let p = cfgs.len();
    let mut mail = Mailboxes::new(p);
    let mut workers: Vec<Worker<'_>> = cfgs
        .into_iter()
        .map(|c| Worker::new(graph, owner.clone(), p, c, None))
        .collect();
    let mut done = vec![false; p];
    let mut trace = Vec::new();
    let mut next_trace = config.trace_every.filter(|&n| n > 0);
    if next_trace.is_some() {
        trace.push(TracePoint {
            updates: 0,
            beliefs: snapshot(graph, &owner, &workers)?,
        });
    }
    let mut idle_rounds = 0u64;
    while done.iter().any(|d| !d) {
        let mut progressed = false;
        for i in 0..p {
            if done[i] {
                continue;
            }
            let before = mail.pending().count();
            let status = workers[i].step(&mut mail.endpoint(i))?;
            progressed |= status != Status::Idle || mail.pending().count() != before;
            if status == Status::Done {
                done[i] = true;
            }
            if let Some(every) = config.trace_every.filter(|&n| n > 0) {
                let total: u64 = workers.iter().map(|w| w.report().updates).sum();
                while next_trace.is_some_and(|t| total >= t) {
                    trace.push(TracePoint {
                        updates: total,
                        beliefs: snapshot(graph, &owner, &workers)?,
                    });
                    next_trace = next_trace.map(|t| t + every);
                }
            }
        }
        // A quiet ring still moves the token every round, so a long run of
        // rounds where nothing at all changes means the protocol is stuck.
        idle_rounds = if progressed { 0 } else { idle_rounds + 1 };
        if idle_rounds > 4 * p as u64 + 16 {
            return Err(RuntimeError::Consistency("workers stalled without terminating".into()));
        }
    }
    let channels_empty = mail
        .pending()
        .all(|(_, _, pk)| decode_packet(pk).is_ok_and(|es| es.iter().all(|e| e.kind != Kind::Bp)));
    let terminated = workers[0].terminated_by_token();
    finish(graph, workers, channels_empty, terminated, config, trace)
}

fn run_threaded(
    graph: &FactorGraph,
    owner: Vec<usize>,
    cfgs: Vec<WorkerConfig>,
    config: &RuntimeConfig,
) -> Result<InferenceResult, RuntimeError> {
    let p = cfgs.len();
    let started = Instant::now();
    let abort = AtomicBool::new(false);
    let endpoints = thread_endpoints(p);
    let outcomes: Vec<Result<(Worker<'_>, transport::ThreadEndpoint), RuntimeError>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfgs
            .into_iter()
            .zip(endpoints)
            .map(|(c, mut ep)| {
                let owner = owner.clone();
                let abort = &abort;
                s.spawn(move || {
                    let mut w = Worker::new(graph, owner, p, c, Some(started));
                    loop {
                        if abort.load(Ordering::Relaxed) {
                            return Err(RuntimeError::Transport(
                                "aborted after a failure on another worker".into(),
                            ));
                        }
                        match w.step(&mut ep) {
                            Ok(Status::Done) => return Ok((w, ep)),
                            Ok(Status::Worked) => {}
                            Ok(Status::Idle) => {
                                use transport::Endpoint;
                                if let Err(e) = ep.wait(Duration::from_millis(2)) {
                                    abort.store(true, Ordering::Relaxed);
                                    return Err(e);
                                }
                            }
                            Err(e) => {
                                abort.store(true, Ordering::Relaxed);
                                return Err(e);
                            }
                        }
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(RuntimeError::Transport("worker thread panicked".into())))
            })
            .collect()
    });
    let mut workers = Vec::with_capacity(p);
    let mut eps = Vec::with_capacity(p);
    let mut first_err = None;
    for o in outcomes {
        match o {
            Ok((w, ep)) => {
                workers.push(w);
                eps.push(ep);
            }
            // prefer the root cause over the abort notices it triggered
            Err(e) => {
                if first_err.is_none() || matches!(first_err, Some(RuntimeError::Transport(_))) {
                    first_err = Some(e);
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    let channels_empty = eps.iter_mut().all(|ep| {
        ep.drain()
            .iter()
            .all(|(_, pk)| decode_packet(pk).is_ok_and(|es| es.iter().all(|e| e.kind != Kind::Bp)))
    });
    let terminated = workers[0].terminated_by_token();
    finish(graph, workers, channels_empty, terminated, config, Vec::new())
}

fn finish(
    graph: &FactorGraph,
    workers: Vec<Worker<'_>>,
    channels_empty: bool,
    terminated_by_token: bool,
    config: &RuntimeConfig,
    trace: Vec<TracePoint>,
) -> Result<InferenceResult, RuntimeError> {
    let mut shards: Vec<Shard> = Vec::with_capacity(workers.len());
    let mut reports = Vec::with_capacity(workers.len());
    let mut metrics = Vec::new();
    let mut collected = Vec::new();
    for (i, w) in workers.into_iter().enumerate() {
        let (shard, report, m, c) = w.into_parts();
        if i == 0 {
            collected = c;
        }
        shards.push(shard);
        reports.push(report);
        metrics.extend(m);
    }
    let beliefs = collected
        .into_iter()
        .enumerate()
        .map(|(v, b)| b.ok_or_else(|| RuntimeError::Consistency(format!("no belief collected for variable {v}"))))
        .collect::<Result<Vec<_>, _>>()?;

    let mut update_counts = vec![0u64; graph.num_vertices()];
    for s in &shards {
        for (v, st) in s.iter() {
            update_counts[v] = st.update_count();
        }
    }
    let max_residual = shards.iter().map(|s| s.max_residual(config.mode)).fold(0.0, f64::max);
    let exhausted = reports.iter().any(|r| r.budget_exhausted);
    let converged =
        terminated_by_token && !exhausted && global_convergence_test(shards.iter(), config.mode, config.beta);
    metrics.sort_by_key(|m| (m.worker, m.r#loop));
    Ok(InferenceResult {
        beliefs,
        update_counts,
        converged,
        terminated_by_token,
        total_updates: reports.iter().map(|r| r.updates).sum(),
        msgs_sent: reports.iter().map(|r| r.msgs_sent).sum(),
        msgs_received: reports.iter().map(|r| r.msgs_recv).sum(),
        channels_empty,
        max_residual,
        metrics,
        workers: reports,
        trace,
    })
}

/// Serializes metrics as JSON lines.
pub fn metrics_jsonl(metrics: &[MetricsRecord]) -> String {
    let mut out = String::new();
    for m in metrics {
        out.push_str(&serde_json::to_string(m).expect("metrics serialize"));
        out.push('\n');
    }
    out
}
