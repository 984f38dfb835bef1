//! Mutable inference state: inbound messages, beliefs and residuals.
//!
//! A [`Shard`] holds the state of the vertices one worker owns. Every message
//! is stored at its destination vertex, so updating an owned vertex only reads
//! local data. Each vertex also keeps a copy of the messages it last sent,
//! which is what damping mixes against and what message residuals compare to.

use crate::graph::{FactorGraph, GraphError, VertexId};
use crate::message::{l1_log, normalize_log, LogAccumulator, Message};

/// Incremental belief updates between two full recomputations.
pub const RESYNC_INTERVAL: u32 = 256;

/// Belief differences below this are treated as rounding noise by the naive
/// residual.
pub const NAIVE_NOISE_FLOOR: f64 = 1e-12;

/// Which residual drives scheduling and convergence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResidualMode {
    /// Accumulated L1 belief change since the vertex was last updated.
    #[default]
    Belief,
    /// Largest L1 change of any inbound message since the last update.
    Message,
    /// L1 distance between the current belief and the belief at the last
    /// update. Kept only to reproduce the premature-convergence failure; it
    /// must not be used for real inference.
    NaiveBelief,
}

/// A message produced by [`Shard::update_vertex`].
#[derive(Debug, Clone, PartialEq)]
pub struct OutgoingMessage {
    pub src: VertexId,
    pub dst: VertexId,
    pub message: Message,
    /// L1 change relative to the previous message on this directed edge.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VertexState {
    inbound: Vec<f64>,
    outbound: Vec<f64>,
    belief: Vec<f64>,
    anchor: Vec<f64>,
    accumulated_residual: f64,
    message_residual: f64,
    update_count: u64,
    since_resync: u32,
}

impl VertexState {
    pub fn accumulated_residual(&self) -> f64 {
        self.accumulated_residual
    }

    pub fn message_residual(&self) -> f64 {
        self.message_residual
    }

    pub fn update_count(&self) -> u64 {
        self.update_count
    }

    /// Cached belief as linear probabilities.
    pub fn belief(&self) -> Vec<f64> {
        self.belief.iter().map(|l| l.exp()).collect()
    }

    pub fn log_belief(&self) -> &[f64] {
        &self.belief
    }

    fn naive_residual(&self) -> f64 {
        if self.update_count == 0 {
            return f64::INFINITY;
        }
        let d = l1_log(&self.belief, &self.anchor);
        if d < NAIVE_NOISE_FLOOR {
            0.0
        } else {
            d
        }
    }

    pub fn residual(&self, mode: ResidualMode) -> f64 {
        match mode {
            ResidualMode::Belief => self.accumulated_residual,
            ResidualMode::Message => self.message_residual,
            ResidualMode::NaiveBelief => self.naive_residual(),
        }
    }
}

const NOT_OWNED: u32 = u32::MAX;

/// State for a subset of vertices.
#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    local: Vec<u32>,
    owned: Vec<VertexId>,
    states: Vec<VertexState>,
}

impl Shard {
    /// Fresh state for `owned` vertices: uniform messages except the constant
    /// messages of unary factors, and infinite residuals.
    pub fn new(graph: &FactorGraph, owned: impl IntoIterator<Item = VertexId>) -> Self {
        let mut owned: Vec<VertexId> = owned.into_iter().collect();
        owned.sort_unstable();
        owned.dedup();
        let mut local = vec![NOT_OWNED; graph.num_vertices()];
        let mut states = Vec::with_capacity(owned.len());
        for (i, &v) in owned.iter().enumerate() {
            local[v] = i as u32;
            states.push(initial_state(graph, v));
        }
        Self { local, owned, states }
    }

    /// A shard owning every vertex of the graph.
    pub fn full(graph: &FactorGraph) -> Self {
        Self::new(graph, 0..graph.num_vertices())
    }

    pub fn owns(&self, v: VertexId) -> bool {
        self.local.get(v).is_some_and(|&i| i != NOT_OWNED)
    }

    /// Owned vertices in ascending id order.
    pub fn owned(&self) -> &[VertexId] {
        &self.owned
    }

    pub fn state(&self, v: VertexId) -> Option<&VertexState> {
        self.index(v).map(|i| &self.states[i])
    }

    fn index(&self, v: VertexId) -> Option<usize> {
        match self.local.get(v) {
            Some(&i) if i != NOT_OWNED => Some(i as usize),
            _ => None,
        }
    }

    fn state_ref(&self, v: VertexId) -> Result<&VertexState, GraphError> {
        self.state(v).ok_or(GraphError::NotOwned(v))
    }

    /// The message currently stored on edge `src -> dst` (`dst` must be owned).
    pub fn inbound_message(&self, graph: &FactorGraph, dst: VertexId, src: VertexId) -> Result<Message, GraphError> {
        let slot = graph.neighbor_slot(dst, src)?;
        let offs = graph.slot_offsets(dst);
        let st = self.state_ref(dst)?;
        Ok(Message::from_log(st.inbound[offs[slot]..offs[slot + 1]].to_vec()))
    }

    /// Product of the inbound messages at `var` except the one from `target`.
    pub fn compute_variable_message(
        &self,
        graph: &FactorGraph,
        var: VertexId,
        target: VertexId,
    ) -> Result<Message, GraphError> {
        if !graph.is_variable(var) {
            return Err(GraphError::NotVariable(var));
        }
        let slot = graph.neighbor_slot(var, target)?;
        let st = self.state_ref(var)?;
        Ok(Message::from_log(variable_message(graph, var, &st.inbound, slot)))
    }

    /// Marginal of the factor table times all inbound messages except the
    /// one from `target`, projected onto `target`.
    pub fn compute_factor_message(
        &self,
        graph: &FactorGraph,
        factor: VertexId,
        target: VertexId,
    ) -> Result<Message, GraphError> {
        if graph.factor_at(factor).is_none() {
            return Err(GraphError::NotFactor(factor));
        }
        let slot = graph.neighbor_slot(factor, target)?;
        let st = self.state_ref(factor)?;
        Ok(Message::from_log(factor_message(graph, factor, &st.inbound, slot)))
    }

    /// Recomputes every outbound message of `v`, damped against the previous
    /// outbound message with weight `damping` on the old one.
    ///
    /// Resets the vertex residuals, bumps its update count and recomputes its
    /// belief from scratch. Delivering the returned messages is the caller's job.
    pub fn update_vertex(
        &mut self,
        graph: &FactorGraph,
        v: VertexId,
        damping: f64,
    ) -> Result<Vec<OutgoingMessage>, GraphError> {
        debug_assert!((0.0..1.0).contains(&damping));
        let i = self.index(v).ok_or(GraphError::NotOwned(v))?;
        let nbrs = graph.neighbors(v);
        let offs = graph.slot_offsets(v);
        let st = &mut self.states[i];

        let mut out = Vec::with_capacity(nbrs.len());
        for (slot, &u) in nbrs.iter().enumerate() {
            let mut fresh = if graph.is_variable(v) {
                variable_message(graph, v, &st.inbound, slot)
            } else {
                factor_message(graph, v, &st.inbound, slot)
            };
            let old = &mut st.outbound[offs[slot]..offs[slot + 1]];
            if damping > 0.0 {
                for (f, o) in fresh.iter_mut().zip(old.iter()) {
                    *f = damping * o + (1.0 - damping) * *f;
                }
                normalize_log(&mut fresh);
            }
            let residual = l1_log(&fresh, old);
            old.copy_from_slice(&fresh);
            out.push(OutgoingMessage {
                src: v,
                dst: u,
                message: Message::from_log_unchecked(fresh),
                residual,
            });
        }

        st.update_count += 1;
        st.accumulated_residual = 0.0;
        st.message_residual = 0.0;
        st.belief = belief_from_scratch(graph, v, &st.inbound);
        st.anchor.clone_from(&st.belief);
        st.since_resync = 0;
        Ok(out)
    }

    /// Stores `msg` on edge `src -> dst` and folds it into the cached belief
    /// of `dst` by dividing out the old message. Returns the L1 belief change,
    /// which is also added to the accumulated residual of `dst`.
    pub fn apply_inbound_message(
        &mut self,
        graph: &FactorGraph,
        dst: VertexId,
        src: VertexId,
        msg: &Message,
    ) -> Result<f64, GraphError> {
        let slot = graph.neighbor_slot(dst, src)?;
        let offs = graph.slot_offsets(dst);
        let (lo, hi) = (offs[slot], offs[slot + 1]);
        if msg.len() != hi - lo {
            return Err(GraphError::MessageLength {
                from: src,
                to: dst,
                expected: hi - lo,
                found: msg.len(),
            });
        }
        let i = self.index(dst).ok_or(GraphError::NotOwned(dst))?;
        let st = &mut self.states[i];
        let new = msg.log_values();
        if st.inbound[lo..hi] == *new {
            return Ok(0.0);
        }
        let msg_change = l1_log(&st.inbound[lo..hi], new);
        st.message_residual = st.message_residual.max(msg_change);

        let old_belief = st.belief.clone();
        st.since_resync += 1;
        if st.since_resync >= RESYNC_INTERVAL {
            st.inbound[lo..hi].copy_from_slice(new);
            st.belief = belief_from_scratch(graph, dst, &st.inbound);
            st.since_resync = 0;
        } else {
            match graph.factor_at(dst) {
                None => {
                    for (b, (n, o)) in st.belief.iter_mut().zip(new.iter().zip(&st.inbound[lo..hi])) {
                        *b += n - o;
                    }
                }
                Some(f) => {
                    let sp = graph.slot_scope(dst)[slot];
                    let stride = f.strides()[sp];
                    let card = hi - lo;
                    for (idx, b) in st.belief.iter_mut().enumerate() {
                        let x = (idx / stride) % card;
                        *b += new[x] - st.inbound[lo + x];
                    }
                }
            }
            normalize_log(&mut st.belief);
            st.inbound[lo..hi].copy_from_slice(new);
        }

        let delta = l1_log(&st.belief, &old_belief);
        st.accumulated_residual += delta;
        Ok(delta)
    }

    /// Belief of `v` recomputed from its inbound messages, as linear probabilities.
    pub fn compute_belief(&self, graph: &FactorGraph, v: VertexId) -> Result<Vec<f64>, GraphError> {
        let st = self.state_ref(v)?;
        Ok(belief_from_scratch(graph, v, &st.inbound)
            .into_iter()
            .map(f64::exp)
            .collect())
    }

    /// Cached belief of `v` as linear probabilities.
    pub fn belief(&self, v: VertexId) -> Result<Vec<f64>, GraphError> {
        Ok(self.state_ref(v)?.belief())
    }

    pub fn residual(&self, v: VertexId, mode: ResidualMode) -> Result<f64, GraphError> {
        Ok(self.state_ref(v)?.residual(mode))
    }

    /// Largest scheduling residual among owned vertices (0 for an empty shard).
    pub fn max_residual(&self, mode: ResidualMode) -> f64 {
        self.states.iter().map(|s| s.residual(mode)).fold(0.0, f64::max)
    }

    pub fn update_count(&self, v: VertexId) -> Result<u64, GraphError> {
        Ok(self.state_ref(v)?.update_count)
    }

    /// Owned vertices with their state, in id order.
    pub fn iter(&self) -> impl Iterator<Item = (VertexId, &VertexState)> {
        self.owned.iter().copied().zip(self.states.iter())
    }
}

/// True iff every vertex in every shard has scheduling residual `<= beta`.
pub fn global_convergence_test<'a>(shards: impl IntoIterator<Item = &'a Shard>, mode: ResidualMode, beta: f64) -> bool {
    shards.into_iter().all(|s| s.max_residual(mode) <= beta)
}

fn initial_state(graph: &FactorGraph, v: VertexId) -> VertexState {
    let offs = graph.slot_offsets(v);
    let total = *offs.last().unwrap_or(&0);
    let mut inbound = vec![0.0; total];
    let mut outbound = vec![0.0; total];
    for (slot, &u) in graph.neighbors(v).iter().enumerate() {
        let (lo, hi) = (offs[slot], offs[slot + 1]);
        let uniform = -((hi - lo) as f64).ln();
        inbound[lo..hi].fill(uniform);
        outbound[lo..hi].fill(uniform);
        // Unary factor messages do not depend on any state, so they start at
        // their final value on both ends of the edge.
        if graph.is_variable(v) && graph.degree(u) == 1 {
            let own = graph.slot_offsets(u);
            let m = factor_message(graph, u, &vec![0.0; own[1]], 0);
            inbound[lo..hi].copy_from_slice(&m);
        } else if !graph.is_variable(v) && graph.degree(v) == 1 {
            let m = factor_message(graph, v, &inbound, 0);
            outbound[lo..hi].copy_from_slice(&m);
        }
    }
    let belief = belief_from_scratch(graph, v, &inbound);
    VertexState {
        inbound,
        outbound,
        anchor: belief.clone(),
        belief,
        accumulated_residual: f64::INFINITY,
        message_residual: f64::INFINITY,
        update_count: 0,
        since_resync: 0,
    }
}

/// Normalized log message from variable `v` to its neighbor in `target_slot`.
fn variable_message(graph: &FactorGraph, v: VertexId, inbound: &[f64], target_slot: usize) -> Vec<f64> {
    let offs = graph.slot_offsets(v);
    let card = graph.cardinality(v);
    let mut out = vec![0.0; card];
    for k in 0..graph.degree(v) {
        if k == target_slot {
            continue;
        }
        for (o, m) in out.iter_mut().zip(&inbound[offs[k]..offs[k + 1]]) {
            *o += m;
        }
    }
    normalize_log(&mut out);
    out
}

/// Normalized log message from factor vertex `v` to its neighbor in `target_slot`.
fn factor_message(graph: &FactorGraph, v: VertexId, inbound: &[f64], target_slot: usize) -> Vec<f64> {
    let f = graph.factor_at(v).expect("factor vertex");
    let offs = graph.slot_offsets(v);
    let slot_scope = graph.slot_scope(v);
    let scope = f.scope();
    let cards: Vec<usize> = scope.iter().map(|&s| graph.cardinality(s)).collect();
    let target_pos = slot_scope[target_slot];
    let mut acc = vec![LogAccumulator::new(); cards[target_pos]];
    let mut digits = vec![0usize; scope.len()];
    for &t in f.log_table() {
        let mut term = t;
        for (k, &sp) in slot_scope.iter().enumerate() {
            if k != target_slot {
                term += inbound[offs[k] + digits[sp]];
            }
        }
        acc[digits[target_pos]].add(term);
        advance(&mut digits, &cards);
    }
    let mut out: Vec<f64> = acc.iter().map(LogAccumulator::value).collect();
    normalize_log(&mut out);
    out
}

/// Belief of `v` from scratch: product of inbound messages (times the table for factors).
fn belief_from_scratch(graph: &FactorGraph, v: VertexId, inbound: &[f64]) -> Vec<f64> {
    let offs = graph.slot_offsets(v);
    let mut out = match graph.factor_at(v) {
        None => {
            let mut b = vec![0.0; graph.cardinality(v)];
            for k in 0..graph.degree(v) {
                for (o, m) in b.iter_mut().zip(&inbound[offs[k]..offs[k + 1]]) {
                    *o += m;
                }
            }
            b
        }
        Some(f) => {
            let slot_scope = graph.slot_scope(v);
            let cards: Vec<usize> = f.scope().iter().map(|&s| graph.cardinality(s)).collect();
            let mut digits = vec![0usize; cards.len()];
            let mut b = Vec::with_capacity(f.len());
            for &t in f.log_table() {
                let mut term = t;
                for (k, &sp) in slot_scope.iter().enumerate() {
                    term += inbound[offs[k] + digits[sp]];
                }
                b.push(term);
                advance(&mut digits, &cards);
            }
            b
        }
    };
    normalize_log(&mut out);
    out
}

/// Row-major odometer: the last position varies fastest.
#[inline]
pub(crate) fn advance(digits: &mut [usize], cards: &[usize]) {
    for k in (0..digits.len()).rev() {
        digits[k] += 1;
        if digits[k] < cards[k] {
            return;
        }
        digits[k] = 0;
    }
}
