//! Exhaustive interleaving check of the token-ring termination protocol.
//!
//! Workers are abstract: each holds a queue of pending work steps, and a
//! work step sends BP messages to the listed workers. Receiving a BP message
//! queues the next scripted reaction (or an empty step), i.e. the message
//! pushed some residual above threshold. A worker with no pending steps is
//! passive. Channels are FIFO per ordered pair. The token logic is the
//! library's own `TokenAgent`.

use std::collections::{HashMap, VecDeque};

use dbrsplash::runtime::{TokenAction, TokenAgent, TokenState};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum Packet {
    Bp,
    Token(TokenState),
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: &'static str,
    /// Initial work steps per worker; each step lists BP destinations.
    pub initial: Vec<Vec<Vec<usize>>>,
    /// Steps queued, in order, when a worker receives BP messages.
    pub reactions: Vec<Vec<Vec<usize>>>,
}

impl Scenario {
    pub fn bp_events(&self) -> usize {
        self.initial.iter().chain(&self.reactions).flatten().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct State {
    agents: Vec<TokenAgent>,
    work: Vec<VecDeque<Vec<usize>>>,
    /// Index of the next unused reaction per worker.
    reacted: Vec<usize>,
    channels: Vec<VecDeque<Packet>>,
    hops: u32,
    terminated: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Report {
    /// Maximal schedules (complete interleavings), saturating.
    pub schedules: u128,
    pub states: usize,
    /// Schedules ending in a declared termination.
    pub terminating: u128,
    pub violations: Vec<String>,
}

struct Checker<'a> {
    sc: &'a Scenario,
    p: usize,
    hop_cap: u32,
    memo: HashMap<State, (u128, u128)>,
    violations: Vec<String>,
}

impl Checker<'_> {
    fn successors(&self, s: &State) -> Vec<State> {
        let p = self.p;
        let mut out = Vec::new();
        if s.terminated {
            return out;
        }
        for i in 0..p {
            // work step
            if let Some(step) = s.work[i].front() {
                let mut n = s.clone();
                let step = step.clone();
                n.work[i].pop_front();
                for &d in &step {
                    n.channels[i * p + d].push_back(Packet::Bp);
                }
                n.agents[i].record_activity();
                n.agents[i].record_sent(step.len() as u64);
                out.push(n);
            }
            // token move, only while passive
            if s.work[i].is_empty() && s.agents[i].holds_token() && s.hops < self.hop_cap {
                let mut n = s.clone();
                match n.agents[i].step(true) {
                    TokenAction::Forward { to, token } => {
                        n.channels[i * p + to].push_back(Packet::Token(token));
                        n.hops += 1;
                        out.push(n);
                    }
                    TokenAction::Terminate => {
                        n.terminated = true;
                        out.push(n);
                    }
                    TokenAction::Hold => {}
                }
            }
            // deliveries into i
            for from in 0..p {
                let ch = from * p + i;
                if let Some(pk) = s.channels[ch].front() {
                    let mut n = s.clone();
                    let pk = pk.clone();
                    n.channels[ch].pop_front();
                    match pk {
                        Packet::Bp => {
                            n.agents[i].record_received(1);
                            let step = self.sc.reactions[i].get(n.reacted[i]).cloned().unwrap_or_default();
                            n.reacted[i] += 1;
                            n.work[i].push_back(step);
                        }
                        Packet::Token(t) => n.agents[i].receive_token(t),
                    }
                    out.push(n);
                }
            }
        }
        out
    }

    fn check_terminal(&mut self, s: &State) {
        if s.terminated {
            if let Some(c) = s.channels.iter().position(|c| !c.is_empty()) {
                self.violations.push(format!(
                    "{}: termination with channel {}->{} non-empty",
                    self.sc.name,
                    c / self.p,
                    c % self.p
                ));
            }
            if let Some(w) = s.work.iter().position(|w| !w.is_empty()) {
                self.violations
                    .push(format!("{}: termination while worker {w} is active", self.sc.name));
            }
        } else if s.hops < self.hop_cap {
            self.violations.push(format!("{}: deadlock at {:?}", self.sc.name, s));
        }
    }

    /// (schedules, terminating schedules) below `s`. The hop counter and
    /// the finite event budget make the state graph acyclic.
    fn count(&mut self, s: State, depth: usize) -> (u128, u128) {
        if let Some(&c) = self.memo.get(&s) {
            return c;
        }
        assert!(depth < 10_000, "state graph has a cycle");
        let succ = self.successors(&s);
        let c = if succ.is_empty() {
            self.check_terminal(&s);
            (1, u128::from(s.terminated))
        } else {
            succ.into_iter().fold((0u128, 0u128), |acc, n| {
                let (a, b) = self.count(n, depth + 1);
                (acc.0.saturating_add(a), acc.1.saturating_add(b))
            })
        };
        self.memo.insert(s, c);
        c
    }
}

/// Explores every interleaving of `sc`, bounding token hops at `hop_cap`.
pub fn check(sc: &Scenario, hop_cap: u32) -> Report {
    let p = sc.initial.len();
    assert_eq!(sc.reactions.len(), p);
    let init = State {
        agents: (0..p).map(|i| TokenAgent::new(i, p)).collect(),
        work: sc.initial.iter().map(|w| w.iter().cloned().collect()).collect(),
        reacted: vec![0; p],
        channels: vec![VecDeque::new(); p * p],
        hops: 0,
        terminated: false,
    };
    let mut ck = Checker {
        sc,
        p,
        hop_cap,
        memo: HashMap::new(),
        violations: Vec::new(),
    };
    let (schedules, terminating) = ck.count(init, 0);
    Report {
        schedules,
        states: ck.memo.len(),
        terminating,
        violations: ck.violations,
    }
}

/// Three-worker scenarios with at most six BP events each.
pub fn scenarios() -> Vec<Scenario> {
    vec![
        Scenario {
            name: "quiet",
            initial: vec![vec![], vec![], vec![]],
            reactions: vec![vec![], vec![], vec![]],
        },
        Scenario {
            name: "relay",
            initial: vec![vec![], vec![], vec![vec![0]]],
            reactions: vec![vec![vec![1]], vec![vec![2]], vec![]],
        },
        Scenario {
            name: "ping-pong",
            initial: vec![vec![vec![1]], vec![], vec![]],
            reactions: vec![vec![vec![1]], vec![vec![0], vec![0]], vec![]],
        },
        Scenario {
            name: "backwards",
            initial: vec![vec![], vec![vec![0]], vec![vec![1]]],
            reactions: vec![vec![vec![2]], vec![], vec![vec![0]]],
        },
        Scenario {
            name: "fan-out",
            initial: vec![vec![vec![1, 2]], vec![], vec![]],
            reactions: vec![vec![], vec![vec![2]], vec![vec![0], vec![0]]],
        },
        Scenario {
            name: "late-sender",
            initial: vec![vec![], vec![vec![], vec![2]], vec![]],
            reactions: vec![vec![], vec![], vec![vec![0, 1]]],
        },
    ]
}
