use dbrsplash::graph::FactorGraph;
use dbrsplash::models::{premature_convergence_chain, replay};
use dbrsplash::oracle::enumerate_marginals;
use dbrsplash::scheduler::{run_residual_splash, SplashConfig};
use dbrsplash::state::{global_convergence_test, ResidualMode, Shard};

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn after_schedule() -> (FactorGraph, Shard) {
    let (g, sched) = premature_convergence_chain();
    let mut shard = Shard::full(&g);
    replay(&g, &mut shard, &sched.flatten(), 0.0).unwrap();
    (g, shard)
}

#[test]
fn naive_residual_converges_to_a_wrong_answer() {
    let (g, shard) = after_schedule();
    for v in 0..g.num_vertices() {
        assert_eq!(shard.residual(v, ResidualMode::NaiveBelief).unwrap(), 0.0, "vertex {v}");
    }
    assert!(global_convergence_test([&shard], ResidualMode::NaiveBelief, 0.0));
    let exact = enumerate_marginals(&g).unwrap();
    let x1 = shard.belief(0).unwrap();
    assert!((x1[0] - 1.0 / 82.0).abs() < 1e-9, "{x1:?}");
    assert!(l1(&x1, &exact[0]) > 0.1);
}

#[test]
fn accumulated_residual_keeps_going_and_reaches_exact() {
    let (g, mut shard) = after_schedule();
    assert!(shard.residual(2, ResidualMode::Belief).unwrap() > 0.0);
    assert!(!global_convergence_test([&shard], ResidualMode::Belief, 0.0));
    let cfg = SplashConfig {
        beta: 1e-5,
        w_max: f64::INFINITY,
        damping: 0.0,
        mode: ResidualMode::Belief,
        max_updates: 10_000,
    };
    let out = run_residual_splash(&g, &mut shard, &cfg).unwrap();
    assert!(out.converged);
    let exact = enumerate_marginals(&g).unwrap();
    for (v, e) in exact.iter().enumerate() {
        assert!(l1(&shard.belief(v).unwrap(), e) < 1e-3, "X{}", v + 1);
    }
}
