//! Independent reference marginals.

use dbrsplash::graph::FactorGraph;

/// Marginals by summing the full joint in linear space. Only for tiny graphs.
pub fn brute_force(g: &FactorGraph) -> Vec<Vec<f64>> {
    let cards = g.cardinalities();
    let total: usize = cards.iter().product();
    assert!(total <= 1 << 22, "joint too large for brute force");
    let mut marg: Vec<Vec<f64>> = cards.iter().map(|&c| vec![0.0; c]).collect();
    let mut x = vec![0usize; cards.len()];
    for _ in 0..total {
        let mut w = 1.0;
        for f in g.factors() {
            // first scope variable varies slowest
            let mut idx = 0;
            for &v in f.scope() {
                idx = idx * cards[v] + x[v];
            }
            w *= f.table()[idx];
        }
        for (v, &xv) in x.iter().enumerate() {
            marg[v][xv] += w;
        }
        for v in (0..x.len()).rev() {
            x[v] += 1;
            if x[v] < cards[v] {
                break;
            }
            x[v] = 0;
        }
    }
    for m in &mut marg {
        let z: f64 = m.iter().sum();
        m.iter_mut().for_each(|p| *p /= z);
    }
    marg
}

/// Exact marginals of a pairwise chain `X0 - X1 - ... ` whose only factors
/// are `(i, i+1)` tables, by forward-backward with per-step rescaling.
pub fn chain_marginals(g: &FactorGraph) -> Vec<Vec<f64>> {
    let n = g.num_variables();
    let c = g.cardinality(0);
    let mut pair: Vec<&[f64]> = vec![&[]; n.saturating_sub(1)];
    for f in g.factors() {
        let s = f.scope();
        assert!(s.len() == 2 && s[1] == s[0] + 1, "not a simple chain");
        pair[s[0]] = f.table();
    }
    let norm = |v: &mut Vec<f64>| {
        let z: f64 = v.iter().sum();
        v.iter_mut().for_each(|p| *p /= z);
    };
    let mut fwd = vec![vec![1.0; c]; n];
    for i in 1..n {
        let mut m = vec![0.0; c];
        for (b, mb) in m.iter_mut().enumerate() {
            for a in 0..c {
                *mb += fwd[i - 1][a] * pair[i - 1][a * c + b];
            }
        }
        norm(&mut m);
        fwd[i] = m;
    }
    let mut bwd = vec![vec![1.0; c]; n];
    for i in (0..n.saturating_sub(1)).rev() {
        let mut m = vec![0.0; c];
        for (a, ma) in m.iter_mut().enumerate() {
            for b in 0..c {
                *ma += bwd[i + 1][b] * pair[i][a * c + b];
            }
        }
        norm(&mut m);
        bwd[i] = m;
    }
    (0..n)
        .map(|i| {
            let mut m: Vec<f64> = fwd[i].iter().zip(&bwd[i]).map(|(a, b)| a * b).collect();
            norm(&mut m);
            m
        })
        .collect()
}

pub fn mean_l1(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum::<f64>())
        .sum();
    s / a.len() as f64
}
