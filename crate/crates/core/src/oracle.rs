//! Reference marginals: enumeration, variable elimination and Gibbs sampling.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::FactorGraph;
use crate::message::{log_sum_exp, normalize_log, LogAccumulator, LOG_FLOOR};
use crate::state::advance;

/// Largest joint state space [`enumerate_marginals`] accepts.
pub const MAX_ENUMERATION_STATES: u128 = 1 << 25;
/// Largest cluster (variables minus one) the elimination oracle accepts.
pub const MAX_INDUCED_WIDTH: usize = 12;
/// Largest intermediate table, in entries, the elimination oracle builds.
pub const MAX_TABLE_ENTRIES: u128 = 1 << 25;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle capacity exceeded: {0}")]
    Capacity(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-variable marginals, indexed by variable id.
pub type Beliefs = Vec<Vec<f64>>;

fn finish(accs: &[Vec<LogAccumulator>]) -> Beliefs {
    accs.iter()
        .map(|a| {
            let mut l: Vec<f64> = a.iter().map(LogAccumulator::value).collect();
            normalize_log(&mut l);
            l.into_iter().map(f64::exp).collect()
        })
        .collect()
}

/// Exact marginals by summing the joint over every assignment.
pub fn enumerate_marginals(graph: &FactorGraph) -> Result<Beliefs, OracleError> {
    let cards = graph.cardinalities();
    let states = cards.iter().try_fold(1u128, |acc, &c| acc.checked_mul(c as u128));
    match states {
        Some(s) if s <= MAX_ENUMERATION_STATES => {}
        _ => {
            return Err(OracleError::Capacity(format!(
                "joint state space of {} variables exceeds {MAX_ENUMERATION_STATES}",
                cards.len()
            )))
        }
    }
    let mut accs: Vec<Vec<LogAccumulator>> = cards.iter().map(|&c| vec![LogAccumulator::new(); c]).collect();
    let mut x = vec![0usize; cards.len()];
    let total = states.unwrap_or(1) as usize;
    for _ in 0..total {
        let mut lp = 0.0;
        for f in graph.factors() {
            let idx: usize = f.scope().iter().zip(f.strides()).map(|(&v, &s)| x[v] * s).sum();
            lp += f.log_table()[idx];
        }
        for (v, &xv) in x.iter().enumerate() {
            accs[v][xv].add(lp);
        }
        advance(&mut x, cards);
    }
    Ok(finish(&accs))
}

/// A log-space table over sorted variables; the last variable varies fastest.
#[derive(Debug, Clone)]
struct Table {
    vars: Vec<usize>,
    values: Vec<f64>,
}

fn strides_for(vars: &[usize], cards: &[usize]) -> Vec<usize> {
    let mut s = vec![1; vars.len()];
    for i in (0..vars.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * cards[vars[i + 1]];
    }
    s
}

/// Strides of `t` laid out over `target` (0 where `t` lacks a variable).
fn embed(t: &Table, target: &[usize], cards: &[usize]) -> Vec<usize> {
    let own = strides_for(&t.vars, cards);
    target
        .iter()
        .map(|v| t.vars.binary_search(v).map_or(0, |i| own[i]))
        .collect()
}

/// Product of `tables` laid out over the sorted variable list `vars`.
fn product(vars: &[usize], tables: &[&Table], cards: &[usize]) -> Table {
    let dims: Vec<usize> = vars.iter().map(|&v| cards[v]).collect();
    let size: usize = dims.iter().product();
    let maps: Vec<Vec<usize>> = tables.iter().map(|t| embed(t, vars, cards)).collect();
    let mut idx = vec![0usize; tables.len()];
    let mut digits = vec![0usize; vars.len()];
    let mut values = Vec::with_capacity(size);
    for _ in 0..size {
        values.push(tables.iter().zip(&idx).map(|(t, &i)| t.values[i]).sum());
        // odometer step, keeping every table index in sync
        for k in (0..digits.len()).rev() {
            digits[k] += 1;
            for (i, m) in idx.iter_mut().zip(&maps) {
                *i += m[k];
            }
            if digits[k] < dims[k] {
                break;
            }
            for (i, m) in idx.iter_mut().zip(&maps) {
                *i -= m[k] * dims[k];
            }
            digits[k] = 0;
        }
    }
    Table {
        vars: vars.to_vec(),
        values,
    }
}

/// Sums `t` down onto `keep` (a sorted subset of its variables).
fn marginalize(t: &Table, keep: &[usize], cards: &[usize]) -> Table {
    let out_strides = strides_for(keep, cards);
    let map: Vec<usize> = t
        .vars
        .iter()
        .map(|v| keep.binary_search(v).map_or(0, |i| out_strides[i]))
        .collect();
    let dims: Vec<usize> = t.vars.iter().map(|&v| cards[v]).collect();
    let size: usize = keep.iter().map(|&v| cards[v]).product();
    let mut acc = vec![LogAccumulator::new(); size];
    let mut digits = vec![0usize; dims.len()];
    let mut o = 0usize;
    for &val in &t.values {
        acc[o].add(val);
        for k in (0..digits.len()).rev() {
            digits[k] += 1;
            o += map[k];
            if digits[k] < dims[k] {
                break;
            }
            o -= map[k] * dims[k];
            digits[k] = 0;
        }
    }
    Table {
        vars: keep.to_vec(),
        values: acc.iter().map(LogAccumulator::value).collect(),
    }
}

/// Greedy min-degree elimination order over the variable interaction graph.
/// Ties go to the smallest variable id.
pub fn min_degree_order(graph: &FactorGraph) -> Vec<usize> {
    let n = graph.num_variables();
    let mut adj: Vec<std::collections::BTreeSet<usize>> = vec![Default::default(); n];
    for f in graph.factors() {
        for &a in f.scope() {
            for &b in f.scope() {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
    }
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for _ in 0..n {
        let v = (0..n)
            .filter(|&v| !done[v])
            .min_by_key(|&v| (adj[v].len(), v))
            .expect("remaining variable");
        done[v] = true;
        order.push(v);
        let nbrs: Vec<usize> = adj[v].iter().copied().collect();
        for &a in &nbrs {
            adj[a].remove(&v);
            for &b in &nbrs {
                if a != b {
                    adj[a].insert(b);
                }
            }
        }
    }
    order
}

/// Row-by-row order for a `width × height` grid whose variables are numbered
/// row-major; keeps the elimination frontier at one row.
pub fn grid_band_order(width: usize, height: usize) -> Vec<usize> {
    (0..width * height).collect()
}

/// Exact marginals of every variable by bucket elimination along `order`,
/// followed by a backward pass over the resulting cluster tree.
pub fn eliminate_marginals(graph: &FactorGraph, order: &[usize]) -> Result<Beliefs, OracleError> {
    let n = graph.num_variables();
    let cards = graph.cardinalities();
    let mut pos = vec![usize::MAX; n];
    for (i, &v) in order.iter().enumerate() {
        if v >= n || pos[v] != usize::MAX {
            return Err(OracleError::Argument(format!("order is not a permutation (at {v})")));
        }
        pos[v] = i;
    }
    if order.len() != n {
        return Err(OracleError::Argument(format!(
            "order has {} variables, graph has {n}",
            order.len()
        )));
    }

    // Original factors go to the bucket of their first-eliminated variable.
    let mut own: Vec<Vec<Table>> = vec![Vec::new(); n];
    for f in graph.factors() {
        let mut idx: Vec<usize> = (0..f.scope().len()).collect();
        idx.sort_by_key(|&i| f.scope()[i]);
        let vars: Vec<usize> = idx.iter().map(|&i| f.scope()[i]).collect();
        let t = if idx.iter().enumerate().all(|(a, &b)| a == b) {
            Table {
                vars,
                values: f.log_table().to_vec(),
            }
        } else {
            let src = Table {
                vars: f.scope().to_vec(),
                values: f.log_table().to_vec(),
            };
            reorder(&src, &vars, cards)
        };
        let first = *t.vars.iter().min_by_key(|&&v| pos[v]).expect("non-empty scope");
        own[first].push(t);
    }

    // Upward pass.
    let mut clusters: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut parent = vec![usize::MAX; n];
    let mut up: Vec<Option<Table>> = vec![None; n];
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &v in order {
        let mut vars: Vec<usize> = vec![v];
        for t in &own[v] {
            vars.extend(&t.vars);
        }
        for &c in &children[v] {
            vars.extend(&up[c].as_ref().expect("child message").vars);
        }
        vars.sort_unstable();
        vars.dedup();
        check_capacity(&vars, cards)?;
        let tables: Vec<&Table> = own[v]
            .iter()
            .chain(children[v].iter().map(|&c| up[c].as_ref().expect("child message")))
            .collect();
        let joint = product(&vars, &tables, cards);
        let sep: Vec<usize> = vars.iter().copied().filter(|&u| u != v).collect();
        if let Some(&p) = sep.iter().min_by_key(|&&u| pos[u]) {
            up[v] = Some(marginalize(&joint, &sep, cards));
            parent[v] = p;
            children[p].push(v);
        }
        clusters[v] = vars;
    }

    // Downward pass: parents are eliminated after their children.
    let mut down: Vec<Option<Table>> = vec![None; n];
    let mut out = vec![Vec::new(); n];
    for &v in order.iter().rev() {
        let vars = &clusters[v];
        let tables: Vec<&Table> = own[v]
            .iter()
            .chain(children[v].iter().map(|&c| up[c].as_ref().expect("child message")))
            .chain(down[v].iter())
            .collect();
        let mut belief = product(vars, &tables, cards);
        let mut m = marginalize(&belief, &[v], cards).values;
        normalize_log(&mut m);
        out[v] = m.into_iter().map(f64::exp).collect();
        for &c in &children[v] {
            let msg = up[c].as_ref().expect("child message");
            let map = embed(msg, vars, cards);
            let dims: Vec<usize> = vars.iter().map(|&u| cards[u]).collect();
            let mut digits = vec![0usize; vars.len()];
            let mut i = 0usize;
            let saved = belief.values.clone();
            for val in belief.values.iter_mut() {
                *val -= msg.values[i];
                for k in (0..digits.len()).rev() {
                    digits[k] += 1;
                    i += map[k];
                    if digits[k] < dims[k] {
                        break;
                    }
                    i -= map[k] * dims[k];
                    digits[k] = 0;
                }
            }
            let sep = &msg.vars;
            let mut d = marginalize(&belief, sep, cards);
            // keep magnitudes bounded
            let z = log_sum_exp(&d.values);
            d.values.iter_mut().for_each(|x| *x -= z);
            down[c] = Some(d);
            belief.values = saved;
        }
    }
    Ok(out)
}

fn reorder(t: &Table, sorted: &[usize], cards: &[usize]) -> Table {
    // Reading `t` through strides laid out over `sorted` transposes it.
    let own = strides_for(&t.vars, cards);
    let map: Vec<usize> = sorted
        .iter()
        .map(|v| own[t.vars.iter().position(|u| u == v).expect("same variables")])
        .collect();
    let dims: Vec<usize> = sorted.iter().map(|&v| cards[v]).collect();
    let size: usize = dims.iter().product();
    let mut digits = vec![0usize; sorted.len()];
    let mut values = Vec::with_capacity(size);
    for _ in 0..size {
        let i: usize = digits.iter().zip(&map).map(|(d, m)| d * m).sum();
        values.push(t.values[i]);
        advance(&mut digits, &dims);
    }
    Table {
        vars: sorted.to_vec(),
        values,
    }
}

fn check_capacity(vars: &[usize], cards: &[usize]) -> Result<(), OracleError> {
    if vars.len() > MAX_INDUCED_WIDTH + 1 {
        return Err(OracleError::Capacity(format!(
            "induced width {} exceeds {MAX_INDUCED_WIDTH}",
            vars.len() - 1
        )));
    }
    let entries = vars.iter().try_fold(1u128, |a, &v| a.checked_mul(cards[v] as u128));
    match entries {
        Some(e) if e <= MAX_TABLE_ENTRIES => Ok(()),
        _ => Err(OracleError::Capacity(format!(
            "intermediate table over {} variables exceeds {MAX_TABLE_ENTRIES} entries",
            vars.len()
        ))),
    }
}

/// Exact marginals: variable elimination along a min-degree order, then along
/// id order, falling back to enumeration when both exceed the caps.
pub fn exact_marginals(graph: &FactorGraph) -> Result<Beliefs, OracleError> {
    let by_degree = eliminate_marginals(graph, &min_degree_order(graph));
    // id order is a row band on row-major grids, where min-degree tends to lose
    let by_id = || eliminate_marginals(graph, &(0..graph.num_variables()).collect::<Vec<_>>());
    match by_degree.or_else(|e| {
        if matches!(e, OracleError::Capacity(_)) {
            by_id()
        } else {
            Err(e)
        }
    }) {
        Err(OracleError::Capacity(msg)) => {
            enumerate_marginals(graph).map_err(|e| OracleError::Capacity(format!("{msg}; {e}")))
        }
        other => other,
    }
}

/// Single-site Gibbs sampling. Runs `samples` sweeps in variable-id order from
/// a seeded random state and averages the last `samples - burn_in`.
pub fn gibbs_marginals(graph: &FactorGraph, samples: usize, burn_in: usize, seed: u64) -> Result<Beliefs, OracleError> {
    if samples <= burn_in {
        return Err(OracleError::Argument(format!(
            "samples ({samples}) must exceed burn-in ({burn_in})"
        )));
    }
    let n = graph.num_variables();
    let cards = graph.cardinalities();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<usize> = cards.iter().map(|&c| rng.gen_range(0..c)).collect();
    // (factor index, stride of v in that factor) per variable
    let blanket: Vec<Vec<(usize, usize)>> = (0..n)
        .map(|v| {
            graph
                .neighbors(v)
                .iter()
                .map(|&fv| {
                    let fi = fv - n;
                    let f = &graph.factors()[fi];
                    let k = f.scope().iter().position(|&s| s == v).expect("v in scope");
                    (fi, f.strides()[k])
                })
                .collect()
        })
        .collect();
    let mut counts: Vec<Vec<u64>> = cards.iter().map(|&c| vec![0; c]).collect();
    let mut logp = Vec::new();
    for sweep in 0..samples {
        for v in 0..n {
            logp.clear();
            logp.resize(cards[v], 0.0);
            for &(fi, stride) in &blanket[v] {
                let f = &graph.factors()[fi];
                let base: usize = f
                    .scope()
                    .iter()
                    .zip(f.strides())
                    .map(|(&s, &st)| if s == v { 0 } else { x[s] * st })
                    .sum();
                for (xv, lp) in logp.iter_mut().enumerate() {
                    *lp += f.log_table()[base + xv * stride];
                }
            }
            let z = log_sum_exp(&logp);
            let mut u: f64 = rng.gen();
            let mut pick = cards[v] - 1;
            for (xv, lp) in logp.iter().enumerate() {
                let p = (lp - z).max(LOG_FLOOR).exp();
                if u < p {
                    pick = xv;
                    break;
                }
                u -= p;
            }
            x[v] = pick;
        }
        if sweep >= burn_in {
            for (v, &xv) in x.iter().enumerate() {
                counts[v][xv] += 1;
            }
        }
    }
    let kept = (samples - burn_in) as f64;
    Ok(counts
        .into_iter()
        .map(|c| c.into_iter().map(|k| k as f64 / kept).collect())
        .collect())
}

/// L1 distance per variable.
pub fn per_variable_l1(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<f64>, OracleError> {
    if a.len() != b.len() {
        return Err(OracleError::Shape(format!("{} vs {} variables", a.len(), b.len())));
    }
    a.iter()
        .zip(b)
        .enumerate()
        .map(|(v, (x, y))| {
            if x.len() != y.len() {
                return Err(OracleError::Shape(format!(
                    "variable {v} has {} vs {} states",
                    x.len(),
                    y.len()
                )));
            }
            Ok(x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum())
        })
        .collect()
}

/// Mean over variables of the L1 distance between two belief sets.
pub fn accuracy(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, OracleError> {
    let d = per_variable_l1(a, b)?;
    if d.is_empty() {
        return Ok(0.0);
    }
    Ok(d.iter().sum::<f64>() / d.len() as f64)
}

pub fn write_beliefs(beliefs: &[Vec<f64>]) -> String {
    let mut out = String::new();
    for (v, b) in beliefs.iter().enumerate() {
        let _ = write!(out, "{v}");
        for p in b {
            let _ = write!(out, " {p}");
        }
        out.push('\n');
    }
    out
}

/// Parses a beliefs file. Variables must appear once each, in any order.
pub fn read_beliefs(text: &str) -> Result<Beliefs, OracleError> {
    let mut rows: Vec<Option<Vec<f64>>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let ln = i + 1;
        let mut toks = line.split_whitespace();
        let Some(first) = toks.next() else { continue };
        let err = |message: String| OracleError::Parse { line: ln, message };
        let v: usize = first.parse().map_err(|_| err(format!("bad variable id {first:?}")))?;
        let p: Vec<f64> = toks
            .map(|t| t.parse().map_err(|_| err(format!("bad probability {t:?}"))))
            .collect::<Result<_, _>>()?;
        if p.is_empty() {
            return Err(err(format!("variable {v} has no probabilities")));
        }
        let s: f64 = p.iter().sum();
        if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (s - 1.0).abs() > 1e-9 {
            return Err(err(format!("variable {v}: probabilities sum to {s}")));
        }
        if v >= rows.len() {
            rows.resize(v + 1, None);
        }
        if rows[v].replace(p).is_some() {
            return Err(err(format!("variable {v} listed twice")));
        }
    }
    rows.into_iter()
        .enumerate()
        .map(|(v, r)| r.ok_or_else(|| OracleError::Shape(format!("variable {v} missing"))))
        .collect()
}

pub fn save_beliefs(beliefs: &[Vec<f64>], path: impl AsRef<Path>) -> Result<(), OracleError> {
    std::fs::write(path, write_beliefs(beliefs))?;
    Ok(())
}

pub fn load_beliefs(path: impl AsRef<Path>) -> Result<Beliefs, OracleError> {
    read_beliefs(&std::fs::read_to_string(path)?)
}
