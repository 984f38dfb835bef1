//! Discrete factor graphs.
//!
//! Vertices share one id space: variables occupy `0..num_variables()` and
//! factor `f` is vertex `num_variables() + f`. Every neighbor list is sorted
//! by vertex id, and all products and sums over neighbors iterate in that
//! order so results are reproducible bit for bit.

use thiserror::Error;

/// Unified vertex id (variables first, then factors).
pub type VertexId = usize;

/// Errors raised while building a graph or when a graph and its state disagree.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GraphError {
    #[error("variable {var} has cardinality 0")]
    ZeroCardinality { var: usize },
    #[error("factor {factor} has an empty scope")]
    EmptyScope { factor: usize },
    #[error("factor {factor} lists variable {var} more than once")]
    DuplicateScopeVariable { factor: usize, var: usize },
    #[error("factor {factor} references variable {var}, but only {n_vars} variables exist")]
    VariableOutOfRange { factor: usize, var: usize, n_vars: usize },
    #[error("factor {factor} table has {found} entries, expected {expected}")]
    TableSize {
        factor: usize,
        expected: usize,
        found: usize,
    },
    #[error("factor {factor} table entry {index} is {value}; entries must be finite and > 0")]
    NonPositiveEntry { factor: usize, index: usize, value: f64 },
    #[error("vertex {0} does not exist")]
    UnknownVertex(VertexId),
    #[error("no edge between vertices {from} and {to}")]
    UnknownEdge { from: VertexId, to: VertexId },
    #[error("vertex {0} is not a variable")]
    NotVariable(VertexId),
    #[error("vertex {0} is not a factor")]
    NotFactor(VertexId),
    #[error("vertex {0} is not owned by this shard")]
    NotOwned(VertexId),
    #[error("message on edge {from}->{to} has length {found}, expected {expected}")]
    MessageLength {
        from: VertexId,
        to: VertexId,
        expected: usize,
        found: usize,
    },
}

/// Whether a vertex is a variable or a factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexKind {
    Variable(usize),
    Factor(usize),
}

/// A positive table over an ordered scope. The last scope variable varies fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Factor {
    scope: Vec<usize>,
    table: Vec<f64>,
    log_table: Vec<f64>,
    strides: Vec<usize>,
}

impl Factor {
    pub fn scope(&self) -> &[usize] {
        &self.scope
    }

    /// Linear-space table as supplied.
    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn log_table(&self) -> &[f64] {
        &self.log_table
    }

    /// Stride of each scope position in the flattened table.
    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

/// Immutable bipartite graph of discrete variables and positive factor tables.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorGraph {
    cardinalities: Vec<usize>,
    factors: Vec<Factor>,
    adjacency: Vec<Vec<VertexId>>,
    /// Per vertex: start offset of each neighbor's message slot, plus the total length.
    slot_offsets: Vec<Vec<usize>>,
    /// Per factor: scope position of each neighbor slot.
    slot_scope: Vec<Vec<usize>>,
}

impl FactorGraph {
    /// Builds a graph from variable cardinalities and `(scope, linear table)` pairs.
    pub fn new(cardinalities: Vec<usize>, factors: Vec<(Vec<usize>, Vec<f64>)>) -> Result<Self, GraphError> {
        let n_vars = cardinalities.len();
        if let Some(var) = cardinalities.iter().position(|&c| c == 0) {
            return Err(GraphError::ZeroCardinality { var });
        }

        let mut built = Vec::with_capacity(factors.len());
        for (fi, (scope, table)) in factors.into_iter().enumerate() {
            if scope.is_empty() {
                return Err(GraphError::EmptyScope { factor: fi });
            }
            let mut seen = scope.clone();
            seen.sort_unstable();
            for w in seen.windows(2) {
                if w[0] == w[1] {
                    return Err(GraphError::DuplicateScopeVariable { factor: fi, var: w[0] });
                }
            }
            if let Some(&var) = scope.iter().find(|&&v| v >= n_vars) {
                return Err(GraphError::VariableOutOfRange {
                    factor: fi,
                    var,
                    n_vars,
                });
            }
            let expected: usize = scope.iter().map(|&v| cardinalities[v]).product();
            if table.len() != expected {
                return Err(GraphError::TableSize {
                    factor: fi,
                    expected,
                    found: table.len(),
                });
            }
            if let Some((index, &value)) = table.iter().enumerate().find(|(_, &t)| !(t.is_finite() && t > 0.0)) {
                return Err(GraphError::NonPositiveEntry {
                    factor: fi,
                    index,
                    value,
                });
            }
            let mut strides = vec![1usize; scope.len()];
            for k in (0..scope.len().saturating_sub(1)).rev() {
                strides[k] = strides[k + 1] * cardinalities[scope[k + 1]];
            }
            let log_table = table.iter().map(|t| t.ln()).collect();
            built.push(Factor {
                scope,
                table,
                log_table,
                strides,
            });
        }

        let n_vertices = n_vars + built.len();
        let mut adjacency: Vec<Vec<VertexId>> = vec![Vec::new(); n_vertices];
        for (fi, f) in built.iter().enumerate() {
            let fv = n_vars + fi;
            for &v in &f.scope {
                adjacency[v].push(fv);
                adjacency[fv].push(v);
            }
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }

        let mut slot_offsets = Vec::with_capacity(n_vertices);
        for (v, nbrs) in adjacency.iter().enumerate() {
            let mut offs = Vec::with_capacity(nbrs.len() + 1);
            let mut acc = 0;
            offs.push(0);
            for &u in nbrs {
                // Every edge carries a message over its variable endpoint.
                acc += if v < n_vars { cardinalities[v] } else { cardinalities[u] };
                offs.push(acc);
            }
            slot_offsets.push(offs);
        }

        let slot_scope = built
            .iter()
            .enumerate()
            .map(|(fi, f)| {
                adjacency[n_vars + fi]
                    .iter()
                    .map(|&u| f.scope.iter().position(|&s| s == u).expect("scope member"))
                    .collect()
            })
            .collect();

        Ok(Self {
            cardinalities,
            factors: built,
            adjacency,
            slot_offsets,
            slot_scope,
        })
    }

    pub fn num_variables(&self) -> usize {
        self.cardinalities.len()
    }

    pub fn num_factors(&self) -> usize {
        self.factors.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.adjacency.len()
    }

    /// Number of (undirected) variable-factor edges.
    pub fn num_edges(&self) -> usize {
        self.factors.iter().map(|f| f.scope.len()).sum()
    }

    pub fn cardinalities(&self) -> &[usize] {
        &self.cardinalities
    }

    pub fn cardinality(&self, var: usize) -> usize {
        self.cardinalities[var]
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn is_variable(&self, v: VertexId) -> bool {
        v < self.cardinalities.len()
    }

    pub fn kind(&self, v: VertexId) -> Result<VertexKind, GraphError> {
        let n = self.num_variables();
        if v < n {
            Ok(VertexKind::Variable(v))
        } else if v < self.num_vertices() {
            Ok(VertexKind::Factor(v - n))
        } else {
            Err(GraphError::UnknownVertex(v))
        }
    }

    /// Vertex id of factor `f`.
    pub fn factor_vertex(&self, f: usize) -> VertexId {
        self.num_variables() + f
    }

    /// The factor stored at vertex `v`, if `v` is a factor.
    pub fn factor_at(&self, v: VertexId) -> Option<&Factor> {
        v.checked_sub(self.num_variables()).and_then(|f| self.factors.get(f))
    }

    /// Sorted neighbor list of `v`.
    pub fn neighbors(&self, v: VertexId) -> &[VertexId] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: VertexId) -> usize {
        self.adjacency[v].len()
    }

    /// Position of `u` in the neighbor list of `v`.
    pub fn neighbor_slot(&self, v: VertexId, u: VertexId) -> Result<usize, GraphError> {
        self.adjacency
            .get(v)
            .ok_or(GraphError::UnknownVertex(v))?
            .binary_search(&u)
            .map_err(|_| GraphError::UnknownEdge { from: u, to: v })
    }

    /// Message slot offsets of `v` (one per neighbor, plus the total length).
    pub fn slot_offsets(&self, v: VertexId) -> &[usize] {
        &self.slot_offsets[v]
    }

    /// Scope position of each neighbor slot of factor vertex `v`.
    pub(crate) fn slot_scope(&self, v: VertexId) -> &[usize] {
        &self.slot_scope[v - self.num_variables()]
    }

    /// Length of messages travelling on the edge `{a, b}`.
    pub fn message_len(&self, a: VertexId, b: VertexId) -> usize {
        if self.is_variable(a) {
            self.cardinalities[a]
        } else {
            self.cardinalities[b]
        }
    }

    /// Size of the belief vector kept at `v`: `A_i` for variables, the table size for factors.
    pub fn belief_len(&self, v: VertexId) -> usize {
        match self.factor_at(v) {
            Some(f) => f.len(),
            None => self.cardinalities[v],
        }
    }

    /// Per-update cost of `v`: neighbors times variable or table size.
    pub fn vertex_work(&self, v: VertexId) -> f64 {
        (self.degree(v) * self.belief_len(v)) as f64
    }

    /// Sum of [`vertex_work`](Self::vertex_work) over every vertex.
    pub fn total_work(&self) -> f64 {
        (0..self.num_vertices()).map(|v| self.vertex_work(v)).sum()
    }

    /// True if the graph has no cycles (each connected component is a tree).
    pub fn is_forest(&self) -> bool {
        // A forest has |E| = |V| - components.
        let n = self.num_vertices();
        let mut seen = vec![false; n];
        let mut components = 0;
        let mut stack = Vec::new();
        for s in 0..n {
            if seen[s] {
                continue;
            }
            components += 1;
            seen[s] = true;
            stack.push(s);
            while let Some(v) = stack.pop() {
                for &u in &self.adjacency[v] {
                    if !seen[u] {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
        }
        self.num_edges() + components == n
    }
}
