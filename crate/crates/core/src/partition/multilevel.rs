//! Multilevel recursive bisection with heavy-edge matching and FM refinement.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Undirected weighted graph in compressed adjacency form.
#[derive(Debug, Clone)]
pub(crate) struct Csr {
    pub vwgt: Vec<f64>,
    pub xadj: Vec<usize>,
    pub adj: Vec<usize>,
    pub ewgt: Vec<f64>,
}

impl Csr {
    pub fn n(&self) -> usize {
        self.vwgt.len()
    }

    pub fn nbrs(&self, v: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.xadj[v]..self.xadj[v + 1];
        self.adj[r.clone()].iter().copied().zip(self.ewgt[r].iter().copied())
    }

    pub fn total_weight(&self) -> f64 {
        self.vwgt.iter().sum()
    }

    /// Subgraph induced by `keep` (in the given order), with the map back.
    fn induced(&self, keep: &[usize]) -> Csr {
        let mut local = vec![usize::MAX; self.n()];
        for (i, &v) in keep.iter().enumerate() {
            local[v] = i;
        }
        let mut out = Csr {
            vwgt: keep.iter().map(|&v| self.vwgt[v]).collect(),
            xadj: vec![0],
            adj: Vec::new(),
            ewgt: Vec::new(),
        };
        for &v in keep {
            for (u, w) in self.nbrs(v) {
                if local[u] != usize::MAX {
                    out.adj.push(local[u]);
                    out.ewgt.push(w);
                }
            }
            out.xadj.push(out.adj.len());
        }
        out
    }
}

/// Vertices below which coarsening stops.
const COARSEST: usize = 60;
/// Initial bisections tried on the coarsest graph.
const INITIAL_TRIES: usize = 8;
const FM_PASSES: usize = 6;

/// Splits `g` into `m` blocks by recursive bisection. Each bisection may
/// exceed its target share by a factor of `tolerance`.
pub(crate) fn recursive_bisection(g: &Csr, m: usize, tolerance: f64, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut blocks = vec![0usize; g.n()];
    let ids: Vec<usize> = (0..g.n()).collect();
    split(g, &ids, m, 0, tolerance, rng, &mut blocks);
    blocks
}

fn split(
    g: &Csr,
    ids: &[usize],
    m: usize,
    first_block: usize,
    tolerance: f64,
    rng: &mut ChaCha8Rng,
    out: &mut [usize],
) {
    if m <= 1 || ids.len() <= 1 {
        for &v in ids {
            out[v] = first_block;
        }
        return;
    }
    let m_left = m / 2;
    let sub = g.induced(ids);
    let side = if ids.len() <= m {
        // Not enough vertices to bisect by weight; split by count.
        let mut s = vec![false; ids.len()];
        s[ids.len() * m_left / m..].iter_mut().for_each(|x| *x = true);
        s
    } else {
        bisect(&sub, m_left as f64 / m as f64, tolerance, rng)
    };
    let mut left: Vec<usize> = Vec::new();
    let mut right: Vec<usize> = Vec::new();
    for (i, &v) in ids.iter().enumerate() {
        if side[i] {
            right.push(v);
        } else {
            left.push(v);
        }
    }
    // Guarantee each half can host its blocks.
    while left.len() < m_left {
        left.push(right.pop().expect("enough vertices"));
    }
    while right.len() < m - m_left {
        right.push(left.pop().expect("enough vertices"));
    }
    split(g, &left, m_left, first_block, tolerance, rng, out);
    split(g, &right, m - m_left, first_block + m_left, tolerance, rng, out);
}

/// Side limits: the left side holds about `frac` of the weight.
#[derive(Debug, Clone, Copy)]
struct Limits {
    max: [f64; 2],
}

impl Limits {
    fn new(total: f64, frac: f64, tolerance: f64, max_vertex: f64) -> Self {
        let t = [total * frac, total * (1.0 - frac)];
        // allow at least one vertex of slack so coarse levels can move
        Self {
            max: [
                (t[0] * tolerance).max(t[0] + max_vertex.min(t[0])),
                (t[1] * tolerance).max(t[1] + max_vertex.min(t[1])),
            ],
        }
    }

    fn overflow(&self, w: [f64; 2]) -> f64 {
        (w[0] - self.max[0]).max(0.0) + (w[1] - self.max[1]).max(0.0)
    }
}

/// Two-way split of `g`; `true` marks the right side. The left side gets about `frac` of the weight.
pub(crate) fn bisect(g: &Csr, frac: f64, tolerance: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let total = g.total_weight();
    // Coarsen.
    let mut levels: Vec<(Csr, Vec<usize>)> = Vec::new();
    let mut cur = g.clone();
    let cap = (total / COARSEST as f64).max(cur.vwgt.iter().copied().fold(0.0, f64::max));
    while cur.n() > COARSEST {
        let (coarse, map) = coarsen(&cur, cap, rng);
        if coarse.n() as f64 > 0.95 * cur.n() as f64 {
            break;
        }
        levels.push((cur, map));
        cur = coarse;
    }

    // Initial split on the coarsest graph.
    let mut side = initial_bisection(&cur, frac, tolerance, rng);

    // Uncoarsen with refinement at every level.
    while let Some((fine, map)) = levels.pop() {
        side = map.iter().map(|&c| side[c]).collect();
        let lim = Limits::new(total, frac, tolerance, fine.vwgt.iter().copied().fold(0.0, f64::max));
        fm_refine(&fine, &mut side, lim);
        cur = fine;
    }
    let _ = cur;
    side
}

/// Heavy-edge matching; returns the coarse graph and the fine-to-coarse map.
fn coarsen(g: &Csr, cap: f64, rng: &mut ChaCha8Rng) -> (Csr, Vec<usize>) {
    let n = g.n();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut mate = vec![usize::MAX; n];
    for &v in &order {
        if mate[v] != usize::MAX {
            continue;
        }
        let mut best: Option<(usize, f64)> = None;
        for (u, w) in g.nbrs(v) {
            if u == v || mate[u] != usize::MAX || g.vwgt[u] + g.vwgt[v] > cap {
                continue;
            }
            if best.is_none_or(|(_, bw)| w > bw) {
                best = Some((u, w));
            }
        }
        match best {
            Some((u, _)) => {
                mate[v] = u;
                mate[u] = v;
            }
            None => mate[v] = v,
        }
    }
    let mut map = vec![usize::MAX; n];
    let mut cn = 0;
    for v in 0..n {
        if map[v] == usize::MAX {
            map[v] = cn;
            map[mate[v]] = cn;
            cn += 1;
        }
    }
    let mut vwgt = vec![0.0; cn];
    for v in 0..n {
        vwgt[map[v]] += g.vwgt[v];
    }
    // Merge parallel edges with a dense scratch row.
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); cn];
    for v in 0..n {
        members[map[v]].push(v);
    }
    let mut slot = vec![usize::MAX; cn];
    let mut out = Csr {
        vwgt,
        xadj: vec![0],
        adj: Vec::new(),
        ewgt: Vec::new(),
    };
    for (c, mem) in members.iter().enumerate() {
        let start = out.adj.len();
        for &v in mem {
            for (u, w) in g.nbrs(v) {
                let cu = map[u];
                if cu == c {
                    continue;
                }
                if slot[cu] == usize::MAX || slot[cu] < start {
                    slot[cu] = out.adj.len();
                    out.adj.push(cu);
                    out.ewgt.push(w);
                } else {
                    out.ewgt[slot[cu]] += w;
                }
            }
        }
        out.xadj.push(out.adj.len());
    }
    (out, map)
}

fn cut(g: &Csr, side: &[bool]) -> f64 {
    let mut c = 0.0;
    for v in 0..g.n() {
        for (u, w) in g.nbrs(v) {
            if u > v && side[u] != side[v] {
                c += w;
            }
        }
    }
    c
}

fn side_weights(g: &Csr, side: &[bool]) -> [f64; 2] {
    let mut w = [0.0; 2];
    for (v, &s) in side.iter().enumerate() {
        w[s as usize] += g.vwgt[v];
    }
    w
}

/// Greedy graph growing from random seeds, each refined by FM; keeps the best.
fn initial_bisection(g: &Csr, frac: f64, tolerance: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let total = g.total_weight();
    let target = total * frac;
    let lim = Limits::new(total, frac, tolerance, g.vwgt.iter().copied().fold(0.0, f64::max));
    let mut best: Option<(f64, f64, Vec<bool>)> = None;
    for _ in 0..INITIAL_TRIES {
        // everything starts on the right; grow the left region
        let mut side = vec![true; g.n()];
        let mut left_w = 0.0;
        let mut gain = vec![0.0f64; g.n()];
        let mut in_frontier = vec![false; g.n()];
        let mut frontier: Vec<usize> = Vec::new();
        while left_w < target {
            let pick = if frontier.is_empty() {
                let rest: Vec<usize> = (0..g.n()).filter(|&v| side[v]).collect();
                match rest.get(rng.gen_range(0..rest.len().max(1))) {
                    Some(&v) => v,
                    None => break,
                }
            } else {
                let (i, _) = frontier
                    .iter()
                    .enumerate()
                    .max_by(|a, b| gain[*a.1].total_cmp(&gain[*b.1]).then(b.1.cmp(a.1)))
                    .expect("non-empty frontier");
                frontier.swap_remove(i)
            };
            if !side[pick] {
                continue;
            }
            if left_w + g.vwgt[pick] > lim.max[0] && left_w > 0.0 {
                break;
            }
            side[pick] = false;
            left_w += g.vwgt[pick];
            for (u, w) in g.nbrs(pick) {
                if side[u] {
                    gain[u] += 2.0 * w;
                    if !in_frontier[u] {
                        in_frontier[u] = true;
                        frontier.push(u);
                    }
                }
            }
        }
        fm_refine(g, &mut side, lim);
        let c = cut(g, &side);
        let over = lim.overflow(side_weights(g, &side));
        let better = match &best {
            None => true,
            Some((bo, bc, _)) => (over, c).partial_cmp(&(*bo, *bc)) == Some(Ordering::Less),
        };
        if better {
            best = Some((over, c, side));
        }
    }
    best.expect("at least one try").2
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct HeapItem {
    gain: f64,
    v: usize,
}

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.gain.total_cmp(&other.gain).then(other.v.cmp(&self.v))
    }
}

/// Fiduccia-Mattheyses passes with rollback to the best prefix of moves.
fn fm_refine(g: &Csr, side: &mut [bool], lim: Limits) {
    let n = g.n();
    if n < 2 {
        return;
    }
    let max_stall = 64.max(n / 50);
    for _ in 0..FM_PASSES {
        let mut gain = vec![0.0; n];
        for v in 0..n {
            for (u, w) in g.nbrs(v) {
                gain[v] += if side[u] != side[v] { w } else { -w };
            }
        }
        let mut heaps = [BinaryHeap::new(), BinaryHeap::new()];
        for v in 0..n {
            let boundary = g.nbrs(v).any(|(u, _)| side[u] != side[v]);
            if boundary {
                heaps[side[v] as usize].push(HeapItem { gain: gain[v], v });
            }
        }
        let mut locked = vec![false; n];
        let mut weights = side_weights(g, side);
        let start_key = (lim.overflow(weights), 0.0);
        let mut best_key = start_key;
        let mut best_len = 0;
        let mut moves: Vec<usize> = Vec::new();
        let mut delta_cut = 0.0;
        let mut stall = 0;
        loop {
            // candidate from each side, skipping stale entries
            let mut cand: [Option<HeapItem>; 2] = [None, None];
            for s in 0..2 {
                while let Some(top) = heaps[s].peek().copied() {
                    if locked[top.v] || side[top.v] as usize != s || top.gain != gain[top.v] {
                        heaps[s].pop();
                    } else {
                        cand[s] = Some(top);
                        break;
                    }
                }
            }
            let feasible = |s: usize, it: &HeapItem| {
                let mut w = weights;
                w[s] -= g.vwgt[it.v];
                w[1 - s] += g.vwgt[it.v];
                let before = lim.overflow(weights);
                let after = lim.overflow(w);
                after <= before && (after == 0.0 || after < before)
            };
            let options: Vec<(usize, HeapItem)> = (0..2)
                .filter_map(|s| cand[s].map(|c| (s, c)))
                .filter(|(s, c)| feasible(*s, c))
                .collect();
            let Some(&(s, item)) = options.iter().max_by(|a, b| {
                a.1.gain
                    .total_cmp(&b.1.gain)
                    .then_with(|| weights[a.0].total_cmp(&weights[b.0]))
            }) else {
                break;
            };
            heaps[s].pop();
            let v = item.v;
            locked[v] = true;
            side[v] = !side[v];
            weights[s] -= g.vwgt[v];
            weights[1 - s] += g.vwgt[v];
            delta_cut -= gain[v];
            gain[v] = -gain[v];
            moves.push(v);
            for (u, w) in g.nbrs(v) {
                if locked[u] {
                    continue;
                }
                // v moved to u's side or away from it
                gain[u] += if side[u] == side[v] { -2.0 * w } else { 2.0 * w };
                heaps[side[u] as usize].push(HeapItem { gain: gain[u], v: u });
            }
            let key = (lim.overflow(weights), delta_cut);
            if key.partial_cmp(&best_key) == Some(Ordering::Less) {
                best_key = key;
                best_len = moves.len();
                stall = 0;
            } else {
                stall += 1;
                if stall > max_stall {
                    break;
                }
            }
        }
        for &v in &moves[best_len..] {
            side[v] = !side[v];
        }
        if best_len == 0 {
            break;
        }
    }
}

/// Greedy k-way boundary refinement and balancing. Returns true when every
/// block ends within `limit`.
pub(crate) fn kway_refine(g: &Csr, blocks: &mut [usize], m: usize, limit: f64, rng: &mut ChaCha8Rng) -> bool {
    let n = g.n();
    let mut bw = vec![0.0; m];
    for v in 0..n {
        bw[blocks[v]] += g.vwgt[v];
    }
    let mut conn = vec![0.0; m];
    let mut touched: Vec<usize> = Vec::new();
    let mut order: Vec<usize> = (0..n).collect();

    // Balancing first: drain overweight blocks into adjacent blocks with room.
    for _ in 0..16 {
        if bw.iter().all(|&w| w <= limit) {
            break;
        }
        order.shuffle(rng);
        for &v in &order {
            let b = blocks[v];
            if bw[b] <= limit {
                continue;
            }
            let own = gather(g, blocks, v, &mut conn, &mut touched);
            let mut best: Option<(usize, f64)> = None;
            for &t in &touched {
                if t == b || bw[t] + g.vwgt[v] > limit {
                    continue;
                }
                let gain = conn[t] - own;
                if best.is_none_or(|(bt, bg)| gain > bg || (gain == bg && bw[t] < bw[bt])) {
                    best = Some((t, gain));
                }
            }
            for &t in &touched {
                conn[t] = 0.0;
            }
            if let Some((t, _)) = best {
                bw[b] -= g.vwgt[v];
                bw[t] += g.vwgt[v];
                blocks[v] = t;
            }
        }
    }
    // Last resort: move arbitrary vertices to the lightest block.
    if bw.iter().any(|&w| w > limit) {
        let mut by_block: Vec<Vec<usize>> = vec![Vec::new(); m];
        for v in 0..n {
            by_block[blocks[v]].push(v);
        }
        for b in 0..m {
            while bw[b] > limit {
                let light = (0..m).min_by(|&x, &y| bw[x].total_cmp(&bw[y])).expect("m >= 1");
                let pos = by_block[b]
                    .iter()
                    .position(|&v| bw[light] + g.vwgt[v] <= limit && by_block[b].len() > 1);
                let Some(i) = pos else { break };
                let v = by_block[b].swap_remove(i);
                bw[b] -= g.vwgt[v];
                bw[light] += g.vwgt[v];
                blocks[v] = light;
                by_block[light].push(v);
            }
        }
    }

    // Cut refinement: positive-gain boundary moves that keep the balance.
    for _ in 0..8 {
        let mut improved = false;
        order.shuffle(rng);
        for &v in &order {
            let b = blocks[v];
            let own = gather(g, blocks, v, &mut conn, &mut touched);
            let mut best: Option<(usize, f64)> = None;
            for &t in &touched {
                if t == b || bw[t] + g.vwgt[v] > limit || bw[b] - g.vwgt[v] <= 0.0 {
                    continue;
                }
                let gain = conn[t] - own;
                if gain > 1e-12 && best.is_none_or(|(_, bg)| gain > bg) {
                    best = Some((t, gain));
                }
            }
            for &t in &touched {
                conn[t] = 0.0;
            }
            if let Some((t, _)) = best {
                bw[b] -= g.vwgt[v];
                bw[t] += g.vwgt[v];
                blocks[v] = t;
                improved = true;
            }
        }
        if !improved {
            break;
        }
    }
    bw.iter().all(|&w| w <= limit * (1.0 + 1e-12))
}

/// Fills `conn` with v's edge weight into each neighboring block; returns the
/// weight into v's own block. `touched` lists the other blocks seen.
fn gather(g: &Csr, blocks: &[usize], v: usize, conn: &mut [f64], touched: &mut Vec<usize>) -> f64 {
    touched.clear();
    let mut own = 0.0;
    for (u, w) in g.nbrs(v) {
        let b = blocks[u];
        if b == blocks[v] {
            own += w;
        } else {
            if conn[b] == 0.0 {
                touched.push(b);
            }
            conn[b] += w;
        }
    }
    own
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn path(n: usize) -> Csr {
        let mut g = Csr {
            vwgt: vec![1.0; n],
            xadj: vec![0],
            adj: vec![],
            ewgt: vec![],
        };
        for v in 0..n {
            if v > 0 {
                g.adj.push(v - 1);
                g.ewgt.push(1.0);
            }
            if v + 1 < n {
                g.adj.push(v + 1);
                g.ewgt.push(1.0);
            }
            g.xadj.push(g.adj.len());
        }
        g
    }

    #[test]
    fn path_bisection_cuts_one_edge() {
        let g = path(200);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let side = bisect(&g, 0.5, 1.05, &mut rng);
        assert_eq!(cut(&g, &side), 1.0);
        let w = side_weights(&g, &side);
        assert!(w[0] <= 105.0 && w[1] <= 105.0);
    }

    #[test]
    fn coarsening_preserves_weight() {
        let g = path(101);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (c, map) = coarsen(&g, 2.0, &mut rng);
        assert!(c.n() < g.n());
        assert_eq!(c.total_weight(), g.total_weight());
        assert_eq!(map.len(), 101);
        // the coarse edge weight plus the contracted weight is the fine total
        let coarse_edges: f64 = c.ewgt.iter().sum::<f64>() / 2.0;
        let internal = (0..100).filter(|&v| map[v] == map[v + 1]).count() as f64;
        assert_eq!(coarse_edges + internal, 100.0);
    }
}
