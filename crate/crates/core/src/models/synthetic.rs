//! Small synthetic graphs: the premature-convergence chain, random trees,
//! chains and hub graphs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{FactorGraph, GraphError, VertexId};
use crate::state::Shard;

/// Log-strength of the soft identity factor on the premature-convergence chain.
pub const IDENTITY_STRENGTH: f64 = 30.0;

/// Unary tables of the five-variable chain, left to right.
pub const CHAIN_UNARIES: [[f64; 2]; 5] = [
    [1.0 / 9.0, 9.0],
    [9.0 / 10.0, 1.0 / 10.0],
    [0.5, 0.5],
    [1.0 / 10.0, 9.0 / 10.0],
    [9.0, 1.0 / 9.0],
];

/// An update schedule split into named stages.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub stages: Vec<(String, Vec<VertexId>)>,
}

impl Schedule {
    pub fn flatten(&self) -> Vec<VertexId> {
        self.stages.iter().flat_map(|(_, s)| s.iter().copied()).collect()
    }
}

/// The five-variable binary chain with soft identity couplings, and a stage
/// schedule under which the naive belief residual reaches zero everywhere
/// before the evidence at the two ends has met.
///
/// Variables `X1..X5` are vertices `0..5`, unary factors `U1..U5` are
/// vertices `5..10` and the couplings `F12..F45` are vertices `10..14`.
pub fn premature_convergence_chain() -> (FactorGraph, Schedule) {
    let same = IDENTITY_STRENGTH.exp();
    let mut factors: Vec<(Vec<usize>, Vec<f64>)> = CHAIN_UNARIES
        .iter()
        .enumerate()
        .map(|(i, t)| (vec![i], t.to_vec()))
        .collect();
    for i in 0..4 {
        factors.push((vec![i, i + 1], vec![same, 1.0, 1.0, same]));
    }
    let graph = FactorGraph::new(vec![2; 5], factors).expect("fixed chain is valid");

    let x = |i: usize| i - 1;
    let u = |i: usize| 4 + i;
    let f = |i: usize| 9 + i;
    let stage = |name: &str, vs: Vec<VertexId>| (name.to_string(), vs);
    let stages = vec![
        stage(
            "a",
            vec![u(1), u(2), u(3), u(4), u(5), x(2), x(4), f(1), f(2), f(3), f(4)],
        ),
        stage("b", vec![x(3), f(2), f(3)]),
        stage("c", vec![x(1), x(5), f(1), f(4)]),
        stage("d", vec![x(2), x(4), f(2), f(3), f(1), f(4)]),
        stage("e", vec![x(1), x(5), u(1), u(2), u(3), u(4), u(5)]),
    ];
    (graph, Schedule { stages })
}

/// Updates the listed vertices in order, delivering every message at once.
/// `shard` must own every vertex involved.
pub fn replay(graph: &FactorGraph, shard: &mut Shard, order: &[VertexId], damping: f64) -> Result<(), GraphError> {
    for &v in order {
        for m in shard.update_vertex(graph, v, damping)? {
            shard.apply_inbound_message(graph, m.dst, m.src, &m.message)?;
        }
    }
    Ok(())
}

fn random_table(rng: &mut ChaCha8Rng, len: usize, spread: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-spread..spread).exp()).collect()
}

/// Random tree-structured factor graph. Each new variable hangs off an
/// earlier one through a pairwise factor, or joins a fresh variable and an
/// earlier one through a ternary factor; about half the variables get a
/// unary factor.
pub fn random_tree_graph(n_vars: usize, max_card: usize, seed: u64) -> FactorGraph {
    assert!(n_vars >= 1 && max_card >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cards: Vec<usize> = (0..n_vars).map(|_| rng.gen_range(2..=max_card)).collect();
    let mut factors = Vec::new();
    let mut v = 1;
    while v < n_vars {
        let parent = rng.gen_range(0..v);
        if v + 1 < n_vars && rng.gen_bool(0.25) {
            let scope = vec![v, parent, v + 1];
            let len = scope.iter().map(|&s| cards[s]).product();
            factors.push((scope, random_table(&mut rng, len, 1.5)));
            v += 2;
        } else {
            let scope = vec![parent, v];
            let len = cards[parent] * cards[v];
            factors.push((scope, random_table(&mut rng, len, 1.5)));
            v += 1;
        }
    }
    for (i, &c) in cards.iter().enumerate() {
        if rng.gen_bool(0.5) {
            factors.push((vec![i], random_table(&mut rng, c, 1.5)));
        }
    }
    FactorGraph::new(cards, factors).expect("generated tree is valid")
}

/// Chain `X0 - f0 - X1 - ... - X{n-1}` of pairwise factors with random
/// entries in `[e^-spread, e^spread]`, and no unary factors.
pub fn chain_graph(n_vars: usize, card: usize, spread: f64, seed: u64) -> FactorGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let factors = (0..n_vars.saturating_sub(1))
        .map(|i| (vec![i, i + 1], random_table(&mut rng, card * card, spread)))
        .collect();
    FactorGraph::new(vec![card; n_vars], factors).expect("generated chain is valid")
}

#[derive(Debug, Clone, PartialEq)]
pub struct HubSpec {
    pub hubs: usize,
    pub leaves: usize,
    /// Hubs each leaf connects to: drawn uniformly from this inclusive range.
    pub links: (usize, usize),
    /// Pairwise couplings are Potts-like: `exp(±coupling)`.
    pub coupling: f64,
    /// Probability that a coupling is repulsive.
    pub repulsive: f64,
    /// Leaf evidence log-odds, drawn uniformly from this range.
    pub evidence: (f64, f64),
    pub seed: u64,
}

impl Default for HubSpec {
    fn default() -> Self {
        Self {
            hubs: 3,
            leaves: 100,
            links: (2, 3),
            coupling: 0.5,
            repulsive: 0.0,
            evidence: (-0.5, 1.0),
            seed: 0,
        }
    }
}

/// Binary graph of a few high-degree hub variables (ids `0..hubs`) and many
/// leaves with unary evidence, each leaf coupled to several hubs.
pub fn hub_graph(spec: &HubSpec) -> FactorGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.hubs + spec.leaves;
    let mut factors = Vec::new();
    for leaf in spec.hubs..n {
        let e = rng.gen_range(spec.evidence.0..=spec.evidence.1);
        factors.push((vec![leaf], vec![(-e / 2.0).exp(), (e / 2.0).exp()]));
        let count = rng.gen_range(spec.links.0..=spec.links.1).min(spec.hubs);
        let mut hubs: Vec<usize> = (0..spec.hubs).collect();
        for i in 0..count {
            let j = rng.gen_range(i..hubs.len());
            hubs.swap(i, j);
        }
        let mut chosen = hubs[..count].to_vec();
        chosen.sort_unstable();
        for h in chosen {
            let s = if rng.gen_bool(spec.repulsive) {
                -spec.coupling
            } else {
                spec.coupling
            };
            let (a, b) = (s.exp(), (-s).exp());
            factors.push((vec![h, leaf], vec![a, b, b, a]));
        }
    }
    FactorGraph::new(vec![2; n], factors).expect("generated hub graph is valid")
}
