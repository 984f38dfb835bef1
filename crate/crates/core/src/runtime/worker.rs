//! One worker of the distributed Splash loop.

use std::collections::BTreeMap;
use std::time::Instant;

use super::token::{TokenAction, TokenAgent};
use super::transport::Endpoint;
use super::wire::{decode_packet, Envelope, Kind};
use super::{MetricsRecord, RuntimeError, WorkerConfig, WorkerReport};
use crate::graph::{FactorGraph, VertexId};
use crate::message::Message;
use crate::scheduler::{build_splash, execute_splash, promote_and_reschedule, MessageSink, ResidualQueue};
use crate::state::{OutgoingMessage, Shard};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Status {
    Worked,
    Idle,
    Done,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    Running,
    /// Worker 0 after termination, waiting for belief reports.
    Collecting,
    Done,
}

/// Pending external messages, one slot per directed edge (latest wins).
#[derive(Debug, Default)]
pub(crate) struct Outbox {
    owner: Vec<usize>,
    pending: Vec<BTreeMap<(VertexId, VertexId), Message>>,
}

impl Outbox {
    fn new(owner: Vec<usize>, workers: usize) -> Self {
        Self {
            owner,
            pending: (0..workers).map(|_| BTreeMap::new()).collect(),
        }
    }

    fn is_empty(&self) -> bool {
        self.pending.iter().all(BTreeMap::is_empty)
    }
}

impl MessageSink for Outbox {
    fn send_external(&mut self, msg: OutgoingMessage) {
        let w = self.owner[msg.dst];
        self.pending[w].insert((msg.src, msg.dst), msg.message);
    }
}

pub(crate) struct Worker<'g> {
    graph: &'g FactorGraph,
    cfg: WorkerConfig,
    workers: usize,
    shard: Shard,
    queue: ResidualQueue,
    outbox: Outbox,
    seq_out: Vec<u64>,
    seq_in: Vec<u64>,
    agent: TokenAgent,
    phase: Phase,
    /// Worker 0 only: collected variable beliefs.
    collected: Vec<Option<Vec<f64>>>,
    missing: usize,
    loops_since_flush: u64,
    report: WorkerReport,
    metrics: Vec<MetricsRecord>,
    started: Option<Instant>,
}

impl<'g> Worker<'g> {
    /// `started` is `None` for the deterministic scheduler, which records
    /// zero wall time.
    pub fn new(
        graph: &'g FactorGraph,
        owner: Vec<usize>,
        workers: usize,
        cfg: WorkerConfig,
        started: Option<Instant>,
    ) -> Self {
        let shard = Shard::new(graph, cfg.owned.iter().copied());
        let queue = ResidualQueue::from_shard(graph, &shard, cfg.mode);
        let n_vars = graph.num_variables();
        let report = WorkerReport {
            id: cfg.id,
            owned: cfg.owned.len(),
            ..WorkerReport::default()
        };
        Self {
            graph,
            workers,
            shard,
            queue,
            outbox: Outbox::new(owner, workers),
            seq_out: vec![0; workers],
            seq_in: vec![0; workers],
            agent: TokenAgent::new(cfg.id, workers),
            phase: Phase::Running,
            collected: if cfg.id == 0 { vec![None; n_vars] } else { Vec::new() },
            missing: if cfg.id == 0 { n_vars } else { 0 },
            loops_since_flush: 0,
            report,
            metrics: Vec::new(),
            started,
            cfg,
        }
    }

    pub fn shard(&self) -> &Shard {
        &self.shard
    }

    pub fn report(&self) -> &WorkerReport {
        &self.report
    }

    pub fn terminated_by_token(&self) -> bool {
        self.agent.terminated()
    }

    pub fn into_parts(self) -> (Shard, WorkerReport, Vec<MetricsRecord>, Vec<Option<Vec<f64>>>) {
        (self.shard, self.report, self.metrics, self.collected)
    }

    fn can_work(&self) -> bool {
        self.queue.top_priority() > self.cfg.beta && self.report.updates < self.cfg.max_updates
    }

    /// One scheduling quantum: drain the inbox, then run one Splash loop or,
    /// when passive, flush and advance the token protocol.
    pub fn step(&mut self, ep: &mut dyn Endpoint) -> Result<Status, RuntimeError> {
        if self.phase == Phase::Done {
            return Ok(Status::Done);
        }
        self.deliver_inbound(ep)?;
        match self.phase {
            Phase::Done => return Ok(Status::Done),
            Phase::Collecting => {
                if self.missing == 0 {
                    self.phase = Phase::Done;
                    return Ok(Status::Done);
                }
                return Ok(Status::Idle);
            }
            Phase::Running => {}
        }

        if self.can_work() {
            self.splash_loop(ep)?;
            return Ok(Status::Worked);
        }
        if self.report.updates >= self.cfg.max_updates && self.queue.top_priority() > self.cfg.beta {
            self.report.budget_exhausted = true;
        }

        self.flush_outbound(ep)?;
        match self.agent.step(true) {
            TokenAction::Hold => {}
            TokenAction::Forward { to, token } => {
                self.send_control(ep, to, Envelope::token(token))?;
            }
            TokenAction::Terminate => {
                for w in 1..self.workers {
                    self.send_control(ep, w, Envelope::shutdown())?;
                }
                let own: Vec<_> = self.owned_beliefs()?;
                for (v, b) in own {
                    self.store_report(v, b)?;
                }
                self.phase = Phase::Collecting;
                if self.missing == 0 {
                    self.phase = Phase::Done;
                    return Ok(Status::Done);
                }
            }
        }
        Ok(Status::Idle)
    }

    fn splash_loop(&mut self, ep: &mut dyn Endpoint) -> Result<(), RuntimeError> {
        let (root, _) = self.queue.pop_max().expect("can_work implies a non-empty queue");
        let plan = build_splash(
            self.graph,
            &self.shard,
            root,
            self.cfg.w_max,
            self.cfg.beta,
            self.cfg.mode,
        );
        let stats = execute_splash(self.graph, &mut self.shard, &plan, self.cfg.damping, &mut self.outbox)?;
        promote_and_reschedule(
            &mut self.queue,
            &self.shard,
            self.cfg.mode,
            &stats.updated,
            &stats.changed,
            Some(root),
        );
        self.agent.record_activity();

        let r = &mut self.report;
        r.loops += 1;
        r.splashes += 1;
        r.updates += stats.updates;
        r.edge_updates += stats.edge_updates;
        r.external_messages += stats.external_messages;
        if plan.len() == self.shard.owned().len() {
            r.full_coverage_splashes += 1;
        }

        self.loops_since_flush += 1;
        if self.loops_since_flush >= self.cfg.flush_interval {
            self.flush_outbound(ep)?;
        }
        self.push_metrics(stats.work);
        Ok(())
    }

    fn push_metrics(&mut self, splash_work: f64) {
        let r = &self.report;
        let top = self.queue.top_priority();
        self.metrics.push(MetricsRecord {
            worker: self.cfg.id,
            r#loop: r.loops,
            updates: r.updates,
            splash_work,
            msgs_sent: r.msgs_sent,
            msgs_recv: r.msgs_recv,
            bytes_sent: r.bytes_sent,
            max_residual: top.is_finite().then_some(top),
            wall_ns: self
                .started
                .map_or(0, |t| t.elapsed().as_nanos().min(u64::MAX as u128) as u64),
        });
    }

    /// Sends one batch per destination with the coalesced pending messages.
    /// Returns the number of BP messages sent.
    pub fn flush_outbound(&mut self, ep: &mut dyn Endpoint) -> Result<u64, RuntimeError> {
        self.loops_since_flush = 0;
        if self.outbox.is_empty() {
            return Ok(0);
        }
        let mut total = 0u64;
        for to in 0..self.workers {
            let batch = std::mem::take(&mut self.outbox.pending[to]);
            if batch.is_empty() {
                continue;
            }
            let mut buf = Vec::new();
            for ((src, dst), msg) in batch {
                let mut e = Envelope::bp(src as u32, dst as u32, msg.to_linear());
                e.seq = self.next_seq(to);
                e.encode_into(&mut buf);
                total += 1;
            }
            self.report.bytes_sent += buf.len() as u64;
            ep.send(to, buf)?;
        }
        self.agent.record_sent(total);
        self.report.msgs_sent += total;
        self.report.max_flush_messages = self.report.max_flush_messages.max(total);
        Ok(total)
    }

    fn next_seq(&mut self, to: usize) -> u64 {
        let s = self.seq_out[to];
        self.seq_out[to] += 1;
        s
    }

    fn send_control(&mut self, ep: &mut dyn Endpoint, to: usize, mut e: Envelope) -> Result<(), RuntimeError> {
        e.seq = self.next_seq(to);
        let buf = e.encode();
        self.report.bytes_sent += buf.len() as u64;
        ep.send(to, buf)
    }

    fn owned_beliefs(&self) -> Result<Vec<(VertexId, Vec<f64>)>, RuntimeError> {
        self.shard
            .owned()
            .iter()
            .filter(|&&v| self.graph.is_variable(v))
            .map(|&v| Ok((v, self.shard.belief(v)?)))
            .collect()
    }

    fn store_report(&mut self, var: VertexId, belief: Vec<f64>) -> Result<(), RuntimeError> {
        let slot = self
            .collected
            .get_mut(var)
            .ok_or_else(|| RuntimeError::Consistency(format!("belief report for unknown variable {var}")))?;
        if slot.replace(belief).is_some() {
            return Err(RuntimeError::Consistency(format!(
                "duplicate belief report for variable {var}"
            )));
        }
        self.missing -= 1;
        Ok(())
    }

    /// Drains the inbox, applying BP messages and promoting the vertices
    /// whose belief changed. Returns those promotions.
    pub fn deliver_inbound(&mut self, ep: &mut dyn Endpoint) -> Result<Vec<(VertexId, f64)>, RuntimeError> {
        let mut promotions = Vec::new();
        while let Some((from, packet)) = ep.try_recv()? {
            for e in decode_packet(&packet)? {
                if e.seq != self.seq_in[from] {
                    return Err(RuntimeError::Sequence {
                        from,
                        to: self.cfg.id,
                        expected: self.seq_in[from],
                        found: e.seq,
                    });
                }
                self.seq_in[from] += 1;
                match e.kind {
                    Kind::Bp => promotions.push(self.apply_bp(&e)?),
                    Kind::Token => {
                        let t = e
                            .token
                            .ok_or_else(|| RuntimeError::Wire("token envelope without body".into()))?;
                        self.agent.receive_token(t);
                    }
                    Kind::Shutdown => {
                        if self.cfg.id == 0 {
                            return Err(RuntimeError::Consistency("worker 0 received a shutdown".into()));
                        }
                        let mut buf = Vec::new();
                        for (v, b) in self.owned_beliefs()? {
                            let mut r = Envelope::belief_report(v as u32, b);
                            r.seq = self.next_seq(0);
                            r.encode_into(&mut buf);
                        }
                        self.report.bytes_sent += buf.len() as u64;
                        if !buf.is_empty() {
                            ep.send(0, buf)?;
                        }
                        self.phase = Phase::Done;
                    }
                    Kind::BeliefReport => {
                        if self.cfg.id != 0 {
                            return Err(RuntimeError::Consistency(
                                "belief report sent to a worker other than 0".into(),
                            ));
                        }
                        self.store_report(e.src as VertexId, e.payload)?;
                    }
                }
            }
        }
        let n = promotions.len() as u64;
        self.agent.record_received(n);
        self.report.msgs_recv += n;
        Ok(promotions)
    }

    fn apply_bp(&mut self, e: &Envelope) -> Result<(VertexId, f64), RuntimeError> {
        let (src, dst) = (e.src as VertexId, e.dst as VertexId);
        if !self.shard.owns(dst) {
            return Err(RuntimeError::Consistency(format!(
                "worker {} received a message for vertex {dst}, which it does not own",
                self.cfg.id
            )));
        }
        if e.payload.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(RuntimeError::Wire(format!("invalid payload on edge {src} -> {dst}")));
        }
        let msg = Message::from_linear(&e.payload);
        let delta = self.shard.apply_inbound_message(self.graph, dst, src, &msg)?;
        promote_and_reschedule(&mut self.queue, &self.shard, self.cfg.mode, &[], &[(dst, delta)], None);
        Ok((dst, delta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::transport::Mailboxes;
    use crate::state::ResidualMode;

    /// X0 - f(3) - X1 - f(4) - X2, one vertex group per worker.
    fn setup() -> (FactorGraph, Vec<usize>) {
        let g = FactorGraph::new(
            vec![2; 3],
            vec![
                (vec![0, 1], vec![1.0, 2.0, 2.0, 1.0]),
                (vec![1, 2], vec![3.0, 1.0, 1.0, 3.0]),
            ],
        )
        .unwrap();
        // worker 0: X0, f3; worker 1: X1; worker 2: X2, f4
        (g, vec![0, 1, 2, 0, 2])
    }

    fn worker<'g>(g: &'g FactorGraph, owner: &[usize], id: usize) -> Worker<'g> {
        let owned = (0..owner.len()).filter(|&v| owner[v] == id).collect();
        let cfg = WorkerConfig {
            id,
            owned,
            beta: 1e-5,
            w_max: 100.0,
            damping: 0.0,
            flush_interval: 10,
            mode: ResidualMode::Belief,
            max_updates: u64::MAX,
        };
        Worker::new(g, owner.to_vec(), 3, cfg, None)
    }

    fn msg(src: VertexId, dst: VertexId, p: f64) -> OutgoingMessage {
        OutgoingMessage {
            src,
            dst,
            message: Message::from_linear(&[p, 1.0 - p]),
            residual: 0.0,
        }
    }

    #[test]
    fn empty_flush_sends_nothing() {
        let (g, owner) = setup();
        let mut w = worker(&g, &owner, 0);
        let mut mail = Mailboxes::new(3);
        assert_eq!(w.flush_outbound(&mut mail.endpoint(0)).unwrap(), 0);
        assert!(mail.is_empty());
        assert!(w.deliver_inbound(&mut mail.endpoint(0)).unwrap().is_empty());
    }

    #[test]
    fn latest_message_per_edge_wins() {
        let (g, owner) = setup();
        let mut w = worker(&g, &owner, 0);
        w.outbox.send_external(msg(3, 1, 0.2));
        w.outbox.send_external(msg(3, 1, 0.7));
        let mut mail = Mailboxes::new(3);
        assert_eq!(w.flush_outbound(&mut mail.endpoint(0)).unwrap(), 1);
        let packets: Vec<_> = mail.pending().collect();
        assert_eq!(packets.len(), 1);
        let es = decode_packet(packets[0].2).unwrap();
        assert_eq!(es.len(), 1);
        assert!((es[0].payload[0] - 0.7).abs() < 1e-12);
        assert_eq!(w.agent.sent(), 1);
    }

    #[test]
    fn one_batch_per_destination() {
        let (g, owner) = setup();
        let mut w = worker(&g, &owner, 1);
        w.outbox.send_external(msg(1, 3, 0.3));
        w.outbox.send_external(msg(1, 4, 0.4));
        w.outbox.send_external(msg(1, 0, 0.5));
        let mut mail = Mailboxes::new(3);
        assert_eq!(w.flush_outbound(&mut mail.endpoint(1)).unwrap(), 3);
        let batches: Vec<_> = mail
            .pending()
            .map(|(f, t, pk)| (f, t, decode_packet(pk).unwrap().len()))
            .collect();
        assert_eq!(batches, vec![(1, 0, 2), (1, 2, 1)]);
        let seqs: Vec<u64> = mail
            .pending()
            .filter(|(_, t, _)| *t == 0)
            .flat_map(|(_, _, pk)| decode_packet(pk).unwrap())
            .map(|e| e.seq)
            .collect();
        assert_eq!(seqs, vec![0, 1]);
    }

    #[test]
    fn delivery_counts_duplicates_and_reports_large_flips() {
        let (g, owner) = setup();
        let mut w1 = worker(&g, &owner, 1);
        let mut w0 = worker(&g, &owner, 0);
        let mut mail = Mailboxes::new(3);

        w1.outbox.send_external(msg(1, 3, 1.0 - 1e-12));
        w1.flush_outbound(&mut mail.endpoint(1)).unwrap();
        let first = w0.deliver_inbound(&mut mail.endpoint(0)).unwrap();
        assert_eq!(first.len(), 1);

        w1.outbox.send_external(msg(1, 3, 1.0 - 1e-12));
        w1.flush_outbound(&mut mail.endpoint(1)).unwrap();
        let dup = w0.deliver_inbound(&mut mail.endpoint(0)).unwrap();
        assert_eq!(dup, vec![(3, 0.0)]);
        assert_eq!(w0.agent.received(), 2);

        // factor 3 belief over (X0, X1) is dominated by X1 = 0; flip it
        w1.outbox.send_external(msg(1, 3, 1e-12));
        w1.flush_outbound(&mut mail.endpoint(1)).unwrap();
        let flip = w0.deliver_inbound(&mut mail.endpoint(0)).unwrap();
        assert!((flip[0].1 - 2.0).abs() < 1e-6, "{flip:?}");
    }

    #[test]
    fn foreign_vertex_is_a_consistency_error() {
        let (g, owner) = setup();
        let mut w1 = worker(&g, &owner, 1);
        let mut w0 = worker(&g, &owner, 0);
        let mut mail = Mailboxes::new(3);
        // X2 lives on worker 2, but the batch goes to worker 0
        w1.outbox.pending[0].insert((4, 2), Message::uniform(2));
        w1.flush_outbound(&mut mail.endpoint(1)).unwrap();
        assert!(matches!(
            w0.deliver_inbound(&mut mail.endpoint(0)),
            Err(RuntimeError::Consistency(_))
        ));
    }

    #[test]
    fn out_of_order_sequence_is_rejected() {
        let (g, owner) = setup();
        let mut w0 = worker(&g, &owner, 0);
        let mut mail = Mailboxes::new(3);
        let mut e = Envelope::bp(1, 3, vec![0.5, 0.5]);
        e.seq = 1;
        mail.endpoint(1).send(0, e.encode()).unwrap();
        assert!(matches!(
            w0.deliver_inbound(&mut mail.endpoint(0)),
            Err(RuntimeError::Sequence {
                expected: 0,
                found: 1,
                ..
            })
        ));
    }
}
