//! Undirected graphs: the problem graphs of the combinatorial tasks and the
//! constraint graph the model passes messages over.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("edge ({0}, {1}) out of range for {2} nodes")]
    EdgeOutOfRange(usize, usize, usize),
    #[error("self-loop at node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("unsupported Sudoku side {0}, expected 4 or 9")]
    UnsupportedSide(usize),
    #[error("graph file malformed: {0}")]
    Malformed(String),
}

/// A simple undirected graph held as a node count plus a deduplicated edge set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_count: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    pub fn new(node_count: usize) -> Self {
        Graph { node_count, edges: BTreeSet::new() }
    }

    pub fn with_edges(node_count: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut g = Graph::new(node_count);
        for &(u, v) in edges {
            g.add_edge(u, v)?;
        }
        Ok(g)
    }

    pub fn add_edge(&mut self, u: usize, v: usize) -> Result<(), GraphError> {
        if u >= self.node_count || v >= self.node_count {
            return Err(GraphError::EdgeOutOfRange(u, v, self.node_count));
        }
        if u == v {
            return Err(GraphError::SelfLoop(u));
        }
        let key = (u.min(v), u.max(v));
        if !self.edges.insert(key) {
            return Err(GraphError::DuplicateEdge(key.0, key.1));
        }
        Ok(())
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u.min(v), u.max(v)))
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn degree(&self, u: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == u || b == u).count()
    }

    /// Complement graph over the same node set.
    pub fn complement(&self) -> Graph {
        let mut g = Graph::new(self.node_count);
        for u in 0..self.node_count {
            for v in u + 1..self.node_count {
                if !self.has_edge(u, v) {
                    g.edges.insert((u, v));
                }
            }
        }
        g
    }

    /// Serialize in the exchange format: first line `n m`, then `m` lines
    /// `u v` with 0-indexed endpoints.
    pub fn to_edge_list(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {}", self.node_count, self.edges.len());
        for (u, v) in &self.edges {
            let _ = writeln!(s, "{u} {v}");
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| GraphError::Malformed("empty file".into()))?;
        let mut it = header.split_whitespace();
        let n: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| GraphError::Malformed(format!("bad header {header:?}")))?;
        let m: usize = it
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| GraphError::Malformed(format!("bad header {header:?}")))?;
        let mut g = Graph::new(n);
        let mut seen = 0usize;
        for line in lines {
            let mut it = line.split_whitespace();
            let u: usize = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| GraphError::Malformed(format!("bad edge line {line:?}")))?;
            let v: usize = it
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| GraphError::Malformed(format!("bad edge line {line:?}")))?;
            g.add_edge(u, v)?;
            seen += 1;
        }
        if seen != m {
            return Err(GraphError::Malformed(format!(
                "header promised {m} edges, found {seen}"
            )));
        }
        Ok(g)
    }
}

/// Adjacency-list view used for message passing. Symmetric, no self-loops,
/// neighbor lists sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintGraph {
    adjacency: Vec<Vec<usize>>,
}

impl ConstraintGraph {
    pub fn from_graph(g: &Graph) -> Self {
        let mut adjacency = vec![Vec::new(); g.node_count()];
        for (u, v) in g.edges() {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for list in &mut adjacency {
            list.sort_unstable();
        }
        ConstraintGraph { adjacency }
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.adjacency[u]
    }

    pub fn degree(&self, u: usize) -> usize {
        self.adjacency[u].len()
    }
}

/// Build the Sudoku constraint graph for a `side x side` board: one node per
/// cell, an edge between two cells iff they share a row, a column, or a
/// `sqrt(side) x sqrt(side)` subgrid.
pub fn build_sudoku_graph(side: usize) -> Result<ConstraintGraph, GraphError> {
    let block = match side {
        4 => 2,
        9 => 3,
        _ => return Err(GraphError::UnsupportedSide(side)),
    };
    let n = side * side;
    let mut adjacency = vec![BTreeSet::new(); n];
    for a in 0..n {
        let (ra, ca) = (a / side, a % side);
        for b in 0..n {
            if a == b {
                continue;
            }
            let (rb, cb) = (b / side, b % side);
            let same_row = ra == rb;
            let same_col = ca == cb;
            let same_box = ra / block == rb / block && ca / block == cb / block;
            if same_row || same_col || same_box {
                adjacency[a].insert(b);
            }
        }
    }
    Ok(ConstraintGraph {
        adjacency: adjacency
            .into_iter()
            .map(|s| s.into_iter().collect())
            .collect(),
    })
}
