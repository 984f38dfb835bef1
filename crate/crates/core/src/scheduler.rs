//! Per-worker residual queue and the work-bounded Splash.
//!
//! A Splash builds a pruned breadth-first ordering around a root, then updates
//! the ordering from the leaves to the root and back out again. On a tree this
//! is one forward-backward pass over the region.

use std::cmp::Ordering;
use std::collections::{BTreeSet, VecDeque};

use crate::graph::{FactorGraph, GraphError, VertexId};
use crate::state::{OutgoingMessage, ResidualMode, Shard};

/// Per-update cost of `v`: `|Γ_v| × A_v` for variables, `|Γ_v| × table size` for factors.
pub fn vertex_work(graph: &FactorGraph, v: VertexId) -> f64 {
    graph.vertex_work(v)
}

/// Default Splash budget: `max(2 · total_work / p, largest single vertex work)`.
pub fn default_w_max(graph: &FactorGraph, workers: usize) -> f64 {
    let largest = (0..graph.num_vertices())
        .map(|v| graph.vertex_work(v))
        .fold(0.0, f64::max);
    (2.0 * graph.total_work() / workers.max(1) as f64).max(largest)
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    priority: f64,
    vertex: VertexId,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // Larger priority sorts later; on ties the smaller vertex id sorts later,
    // so the last element is always the one to pop.
    fn cmp(&self, other: &Self) -> Ordering {
        self.priority
            .total_cmp(&other.priority)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

/// Max-priority queue over vertices with an indexed priority per vertex.
#[derive(Debug, Clone, Default)]
pub struct ResidualQueue {
    set: BTreeSet<Entry>,
    priority: Vec<Option<f64>>,
}

impl ResidualQueue {
    pub fn new(num_vertices: usize) -> Self {
        Self {
            set: BTreeSet::new(),
            priority: vec![None; num_vertices],
        }
    }

    /// Queue seeded with every owned vertex at its current residual.
    pub fn from_shard(graph: &FactorGraph, shard: &Shard, mode: ResidualMode) -> Self {
        let mut q = Self::new(graph.num_vertices());
        for (v, st) in shard.iter() {
            q.push(v, st.residual(mode));
        }
        q
    }

    pub fn len(&self) -> usize {
        self.set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.set.is_empty()
    }

    pub fn contains(&self, v: VertexId) -> bool {
        self.priority.get(v).is_some_and(Option::is_some)
    }

    pub fn priority(&self, v: VertexId) -> Option<f64> {
        self.priority.get(v).copied().flatten()
    }

    /// Inserts `v`, replacing any previous priority.
    pub fn push(&mut self, v: VertexId, priority: f64) {
        if v >= self.priority.len() {
            self.priority.resize(v + 1, None);
        }
        if let Some(old) = self.priority[v].replace(priority) {
            self.set.remove(&Entry {
                priority: old,
                vertex: v,
            });
        }
        self.set.insert(Entry { priority, vertex: v });
    }

    /// Raises the priority of `v` (inserting it if absent); never lowers it.
    pub fn promote(&mut self, v: VertexId, priority: f64) {
        match self.priority(v) {
            Some(p) if p >= priority => {}
            _ => self.push(v, priority),
        }
    }

    pub fn remove(&mut self, v: VertexId) -> Option<f64> {
        let p = self.priority.get_mut(v)?.take()?;
        self.set.remove(&Entry { priority: p, vertex: v });
        Some(p)
    }

    /// Highest priority entry without removing it.
    pub fn peek(&self) -> Option<(VertexId, f64)> {
        self.set.last().map(|e| (e.vertex, e.priority))
    }

    /// Removes the vertex with maximum priority (smallest id on ties).
    pub fn pop_max(&mut self) -> Option<(VertexId, f64)> {
        let e = self.set.pop_last()?;
        self.priority[e.vertex] = None;
        Some((e.vertex, e.priority))
    }

    /// Top priority, or 0 when empty.
    pub fn top_priority(&self) -> f64 {
        self.peek().map_or(0.0, |(_, p)| p)
    }
}

/// An ordered vertex-update sequence around a root.
#[derive(Debug, Clone, PartialEq)]
pub struct SplashPlan {
    pub root: VertexId,
    pub bfs_order: Vec<VertexId>,
    /// Reverse BFS order followed by the BFS order without the root.
    pub update_sequence: Vec<VertexId>,
    /// Sum of per-update work of the planned vertices, each counted once.
    pub planned_work: f64,
}

impl SplashPlan {
    pub fn len(&self) -> usize {
        self.bfs_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bfs_order.is_empty()
    }
}

/// Breadth-first ordering from `root` over owned vertices, bounded by `w_max`
/// work units and pruned at vertices whose residual is below `beta`.
///
/// Neighbors are explored in ascending id order. The root is always included,
/// even when its own work exceeds the budget.
pub fn build_splash(
    graph: &FactorGraph,
    shard: &Shard,
    root: VertexId,
    w_max: f64,
    beta: f64,
    mode: ResidualMode,
) -> SplashPlan {
    let mut visited = vec![false; graph.num_vertices()];
    let mut bfs_order = vec![root];
    let mut planned_work = graph.vertex_work(root);
    visited[root] = true;
    let mut frontier = VecDeque::from([root]);
    while let Some(v) = frontier.pop_front() {
        for &u in graph.neighbors(v) {
            if visited[u] || !shard.owns(u) {
                continue;
            }
            visited[u] = true;
            let residual = shard.residual(u, mode).unwrap_or(0.0);
            if residual < beta {
                continue;
            }
            let w = graph.vertex_work(u);
            if planned_work + w > w_max {
                continue;
            }
            planned_work += w;
            bfs_order.push(u);
            frontier.push_back(u);
        }
    }
    let mut update_sequence: Vec<VertexId> = bfs_order.iter().rev().copied().collect();
    update_sequence.extend_from_slice(&bfs_order[1..]);
    SplashPlan {
        root,
        bfs_order,
        update_sequence,
        planned_work,
    }
}

/// Receives messages whose destination is owned by another worker.
pub trait MessageSink {
    fn send_external(&mut self, msg: OutgoingMessage);
}

impl MessageSink for Vec<OutgoingMessage> {
    fn send_external(&mut self, msg: OutgoingMessage) {
        self.push(msg);
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplashStats {
    pub updates: u64,
    pub messages: u64,
    pub external_messages: u64,
    pub work: f64,
    /// Sum of degrees of the updated vertices (one edge update per outbound message).
    pub edge_updates: u64,
    /// Vertices updated by the Splash, in update order (with repeats).
    pub updated: Vec<VertexId>,
    /// Local vertices whose belief changed, with the belief change.
    pub changed: Vec<(VertexId, f64)>,
}

/// Runs the plan's update sequence. Locally destined messages are applied
/// immediately; the rest go to `sink`.
pub fn execute_splash(
    graph: &FactorGraph,
    shard: &mut Shard,
    plan: &SplashPlan,
    damping: f64,
    sink: &mut impl MessageSink,
) -> Result<SplashStats, GraphError> {
    let mut stats = SplashStats::default();
    for &v in &plan.update_sequence {
        let out = shard.update_vertex(graph, v, damping)?;
        stats.updates += 1;
        stats.work += graph.vertex_work(v);
        stats.edge_updates += out.len() as u64;
        stats.updated.push(v);
        for m in out {
            stats.messages += 1;
            if shard.owns(m.dst) {
                let delta = shard.apply_inbound_message(graph, m.dst, m.src, &m.message)?;
                if delta > 0.0 {
                    stats.changed.push((m.dst, delta));
                }
            } else {
                stats.external_messages += 1;
                sink.send_external(m);
            }
        }
    }
    Ok(stats)
}

/// Brings queue priorities up to date after a Splash or message delivery.
///
/// Updated vertices are re-keyed to their (reset) residual; vertices whose
/// belief changed are promoted to their current residual; `root`, if given,
/// is pushed back with its current residual.
pub fn promote_and_reschedule(
    queue: &mut ResidualQueue,
    shard: &Shard,
    mode: ResidualMode,
    updated: &[VertexId],
    changed: &[(VertexId, f64)],
    root: Option<VertexId>,
) {
    for &v in updated {
        if let Some(st) = shard.state(v) {
            queue.push(v, st.residual(mode));
        }
    }
    for &(v, delta) in changed {
        if mode == ResidualMode::Belief && delta == 0.0 {
            continue;
        }
        if let Some(st) = shard.state(v) {
            queue.promote(v, st.residual(mode));
        }
    }
    if let Some(r) = root {
        if let Some(st) = shard.state(r) {
            queue.push(r, st.residual(mode));
        }
    }
}

/// Settings for the sequential residual-Splash loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplashConfig {
    pub beta: f64,
    pub w_max: f64,
    pub damping: f64,
    pub mode: ResidualMode,
    pub max_updates: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequentialOutcome {
    pub converged: bool,
    pub updates: u64,
    pub splashes: u64,
    pub edge_updates: u64,
}

/// Single-worker residual Splash on a shard that owns the whole graph:
/// repeatedly splashes the highest-residual vertex until the top residual
/// is at most `beta` or the update budget runs out.
pub fn run_residual_splash(
    graph: &FactorGraph,
    shard: &mut Shard,
    config: &SplashConfig,
) -> Result<SequentialOutcome, GraphError> {
    let mut queue = ResidualQueue::from_shard(graph, shard, config.mode);
    let mut outcome = SequentialOutcome::default();
    let mut dropped: Vec<OutgoingMessage> = Vec::new();
    loop {
        if queue.top_priority() <= config.beta {
            outcome.converged = true;
            break;
        }
        if outcome.updates >= config.max_updates {
            break;
        }
        let (root, _) = queue.pop_max().expect("non-empty queue");
        let plan = build_splash(graph, shard, root, config.w_max, config.beta, config.mode);
        let stats = execute_splash(graph, shard, &plan, config.damping, &mut dropped)?;
        debug_assert!(dropped.is_empty(), "sequential Splash needs a full shard");
        outcome.updates += stats.updates;
        outcome.edge_updates += stats.edge_updates;
        outcome.splashes += 1;
        promote_and_reschedule(
            &mut queue,
            shard,
            config.mode,
            &stats.updated,
            &stats.changed,
            Some(root),
        );
    }
    Ok(outcome)
}
