use dbrsplash::graph::FactorGraph;
use dbrsplash::models::{chain_graph, premature_convergence_chain, random_tree_graph};
use dbrsplash::oracle::{accuracy, enumerate_marginals, exact_marginals};
use dbrsplash::partition::Partitioning;
use dbrsplash::runtime::{metrics_jsonl, run_inference, RuntimeConfig, RuntimeError, Scheduler};
use dbrsplash::state::ResidualMode;

fn contiguous(g: &FactorGraph, p: usize) -> Partitioning {
    let n = g.num_vertices();
    Partitioning::from_workers((0..n).map(|v| v * p / n).collect(), p)
}

/// Variables in blocks, each factor with its first variable.
fn by_variable(g: &FactorGraph, p: usize) -> Partitioning {
    let nv = g.num_variables();
    let w: Vec<usize> = (0..g.num_vertices())
        .map(|v| {
            let var = if g.is_variable(v) { v } else { g.neighbors(v)[0] };
            var * p / nv
        })
        .collect();
    Partitioning::from_workers(w, p)
}

#[test]
fn single_worker_chain_matches_enumeration() {
    let (g, _) = premature_convergence_chain();
    let cfg = RuntimeConfig {
        damping: 0.0,
        ..RuntimeConfig::default()
    };
    let r = run_inference(&g, &Partitioning::single(g.num_vertices()), &cfg).unwrap();
    assert!(r.converged && r.terminated_by_token);
    assert_eq!(r.msgs_sent, 0);
    let exact = enumerate_marginals(&g).unwrap();
    assert!(accuracy(&r.beliefs, &exact).unwrap() < 1e-3);
}

#[test]
fn distributed_trees_are_exact() {
    for seed in 0..6 {
        let g = random_tree_graph(10, 3, seed);
        let exact = exact_marginals(&g).unwrap();
        for p in [2, 3] {
            for scheduler in [Scheduler::Deterministic, Scheduler::Threaded] {
                let cfg = RuntimeConfig {
                    beta: 1e-9,
                    damping: 0.0,
                    flush_interval: 2,
                    scheduler,
                    ..RuntimeConfig::default()
                };
                let r = run_inference(&g, &by_variable(&g, p), &cfg).unwrap();
                assert!(r.converged, "seed {seed} p {p} {scheduler:?}");
                assert!(r.channels_empty);
                assert_eq!(r.msgs_sent, r.msgs_received);
                assert!(r.max_residual <= 1e-9);
                let acc = accuracy(&r.beliefs, &exact).unwrap();
                assert!(acc < 1e-6, "seed {seed} p {p} {scheduler:?}: {acc}");
            }
        }
    }
}

#[test]
fn message_mode_also_converges() {
    let g = random_tree_graph(12, 4, 42);
    let exact = exact_marginals(&g).unwrap();
    let cfg = RuntimeConfig {
        beta: 1e-9,
        damping: 0.0,
        mode: ResidualMode::Message,
        ..RuntimeConfig::default()
    };
    let r = run_inference(&g, &contiguous(&g, 3), &cfg).unwrap();
    assert!(r.converged);
    assert!(accuracy(&r.beliefs, &exact).unwrap() < 1e-6);
}

#[test]
fn deterministic_runs_repeat_exactly() {
    let g = chain_graph(60, 3, 1.0, 7);
    let part = contiguous(&g, 4);
    let cfg = RuntimeConfig {
        trace_every: Some(50),
        ..RuntimeConfig::default()
    };
    let a = run_inference(&g, &part, &cfg).unwrap();
    let b = run_inference(&g, &part, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(metrics_jsonl(&a.metrics), metrics_jsonl(&b.metrics));
    assert!(a.trace.len() >= 2);
    assert!(a.metrics.iter().all(|m| m.wall_ns == 0));
}

#[test]
fn zero_budget_returns_priors() {
    let (g, _) = premature_convergence_chain();
    let cfg = RuntimeConfig {
        max_updates: 0,
        ..RuntimeConfig::default()
    };
    let r = run_inference(&g, &contiguous(&g, 2), &cfg).unwrap();
    assert!(!r.converged);
    assert!(r.terminated_by_token);
    assert_eq!(r.total_updates, 0);
    for (v, b) in r.beliefs.iter().enumerate() {
        let f = &g.factors()[v];
        assert_eq!(f.scope(), &[v]);
        let z: f64 = f.table().iter().sum();
        for (p, t) in b.iter().zip(f.table()) {
            assert!((p - t / z).abs() < 1e-12);
        }
    }
}

#[test]
fn metrics_lines_are_json() {
    let g = chain_graph(30, 2, 1.0, 1);
    let r = run_inference(&g, &contiguous(&g, 2), &RuntimeConfig::default()).unwrap();
    let text = metrics_jsonl(&r.metrics);
    let keys = [
        "loop",
        "updates",
        "splash_work",
        "msgs_sent",
        "msgs_recv",
        "bytes_sent",
        "max_residual",
        "wall_ns",
    ];
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        for k in keys {
            assert!(v.get(k).is_some(), "{k} missing in {line}");
        }
    }
}

#[test]
fn bad_inputs_are_rejected() {
    let g = chain_graph(5, 2, 1.0, 1);
    let short = Partitioning::single(3);
    assert!(matches!(
        run_inference(&g, &short, &RuntimeConfig::default()),
        Err(RuntimeError::Mismatch(_))
    ));
    let cfg = RuntimeConfig {
        flush_interval: 0,
        ..RuntimeConfig::default()
    };
    let part = Partitioning::single(g.num_vertices());
    assert!(matches!(run_inference(&g, &part, &cfg), Err(RuntimeError::Config(_))));
    let cfg = RuntimeConfig {
        mode: ResidualMode::NaiveBelief,
        ..RuntimeConfig::default()
    };
    assert!(matches!(run_inference(&g, &part, &cfg), Err(RuntimeError::Config(_))));
}
