//! Measurement graphs and the derived update matrices.
//!
//! Nodes are indexed from zero. Basic nodes (those estimating their own
//! variable) come first, reference nodes occupy the tail of the index range.
//! Removing the reference rows and columns from a full matrix therefore
//! leaves the leading principal block.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Split of the node set into basic and reference nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodePartition {
    n_basic: usize,
    n_reference: usize,
}

impl NodePartition {
    pub fn new(n_basic: usize, n_reference: usize) -> Result<Self> {
        if n_basic == 0 {
            return Err(Error::Partition("at least one basic node is required".into()));
        }
        if n_reference == 0 {
            return Err(Error::Partition(
                "at least one reference node is required, estimation is indeterminate otherwise".into(),
            ));
        }
        Ok(Self { n_basic, n_reference })
    }

    pub fn n_basic(&self) -> usize {
        self.n_basic
    }

    pub fn n_reference(&self) -> usize {
        self.n_reference
    }

    /// Total node count.
    pub fn len(&self) -> usize {
        self.n_basic + self.n_reference
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_reference(&self, u: usize) -> bool {
        u >= self.n_basic
    }

    pub fn basic_nodes(&self) -> std::ops::Range<usize> {
        0..self.n_basic
    }

    pub fn reference_nodes(&self) -> std::ops::Range<usize> {
        self.n_basic..self.len()
    }

    /// Length of the stacked per-edge noise vector, `n_b (n - 1)`.
    pub fn noise_dim(&self) -> usize {
        self.n_basic * (self.len() - 1)
    }

    /// Position of `eps_{u,v}` in the stacked noise vector. Blocks are ordered
    /// by basic node `u`; inside a block, `v` runs over all nodes except `u`.
    pub fn noise_index(&self, u: usize, v: usize) -> usize {
        debug_assert!(u < self.n_basic && v < self.len() && u != v);
        let n = self.len();
        u * (n - 1) + if v < u { v } else { v - 1 }
    }
}

/// An undirected graph over a partitioned node set.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MeasurementGraph {
    partition: NodePartition,
    // Each edge stored once as (lower, higher).
    edges: BTreeSet<(usize, usize)>,
}

impl MeasurementGraph {
    pub fn new<I>(partition: NodePartition, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let n = partition.len();
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u == v {
                return Err(Error::Graph(format!("self-loop at node {u}")));
            }
            if u >= n || v >= n {
                return Err(Error::Graph(format!("edge ({u}, {v}) outside node range 0..{n}")));
            }
            set.insert((u.min(v), u.max(v)));
        }
        Ok(Self { partition, edges: set })
    }

    pub fn edgeless(partition: NodePartition) -> Self {
        Self { partition, edges: BTreeSet::new() }
    }

    pub fn complete(partition: NodePartition) -> Self {
        let n = partition.len();
        let edges = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        Self { partition, edges }
    }

    pub fn partition(&self) -> NodePartition {
        self.partition
    }

    pub fn node_count(&self) -> usize {
        self.partition.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Edges as `(lower, higher)` pairs in sorted order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u.min(v), u.max(v)))
    }

    /// Adjacency lists, one sorted list per node.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.node_count()];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    pub fn neighbors(&self, u: usize) -> Vec<usize> {
        self.edges
            .iter()
            .filter_map(|&(a, b)| {
                if a == u {
                    Some(b)
                } else if b == u {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    /// True iff every node is reachable from node 0.
    pub fn is_connected(&self) -> bool {
        self.reached_from(&[0]) == self.node_count()
    }

    /// True iff every node shares a component with some reference node.
    /// Coincides with [`is_connected`](Self::is_connected) when there is a
    /// single reference.
    pub fn references_reach_all(&self) -> bool {
        let refs: Vec<usize> = self.partition.reference_nodes().collect();
        self.reached_from(&refs) == self.node_count()
    }

    fn reached_from(&self, sources: &[usize]) -> usize {
        let n = self.node_count();
        let adj = self.adjacency();
        let mut seen = vec![false; n];
        let mut queue: VecDeque<usize> = sources.iter().copied().collect();
        for &s in sources {
            seen[s] = true;
        }
        let mut count = sources.len();
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count
    }

    /// Drops every edge with an inactive endpoint. Models nodes that gathered
    /// no fresh measurements during a global tick.
    pub fn masked(&self, active: &[bool]) -> Self {
        assert_eq!(active.len(), self.node_count(), "activity mask length");
        let edges = self.edges.iter().copied().filter(|&(u, v)| active[u] && active[v]).collect();
        Self { partition: self.partition, edges }
    }

    /// Canonical identity: the sorted edge list.
    pub fn canonical_key(&self) -> Vec<(usize, usize)> {
        self.edges.iter().copied().collect()
    }
}

/// Union of a set of graphs over one partition.
pub fn union_graph(graphs: &[MeasurementGraph]) -> Result<MeasurementGraph> {
    let first = graphs
        .first()
        .ok_or_else(|| Error::Graph("union of an empty graph sequence".into()))?;
    let mut edges = BTreeSet::new();
    for g in graphs {
        if g.partition != first.partition {
            return Err(Error::PartitionMismatch);
        }
        edges.extend(g.edges.iter().copied());
    }
    Ok(MeasurementGraph { partition: first.partition, edges })
}

/// Read access to the weights a node applies in the update law.
///
/// `weight(u, v)` is the weight receiving node `u` places on information from
/// neighbor `v` (the matrix entry `W_uv`); `weight(u, u)` is the self-weight.
pub trait EdgeWeights {
    fn weight(&self, u: usize, v: usize) -> f64;
}

/// Unit weight on every self-loop and every edge.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UnitWeights;

impl EdgeWeights for UnitWeights {
    fn weight(&self, _u: usize, _v: usize) -> f64 {
        1.0
    }
}

/// Dense weight matrix `W`, bound to a graph by its sparsity pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightAssignment {
    w: DMatrix<f64>,
}

impl WeightAssignment {
    /// Unit self-weights and unit weights on the edges of `g`.
    pub fn unit(g: &MeasurementGraph) -> Self {
        let n = g.node_count();
        let mut w = DMatrix::identity(n, n);
        for (u, v) in g.edges() {
            w[(u, v)] = 1.0;
            w[(v, u)] = 1.0;
        }
        Self { w }
    }

    /// Wraps an explicit matrix after checking it against `g`.
    pub fn from_matrix(g: &MeasurementGraph, w: DMatrix<f64>) -> Result<Self> {
        let out = Self { w };
        out.check_bound(g)?;
        Ok(out)
    }

    /// Takes the entries of `full` on the diagonal and on the edges of `g`,
    /// zero elsewhere. `full` must be positive at every kept position.
    pub fn restricted(g: &MeasurementGraph, full: &DMatrix<f64>) -> Result<Self> {
        let n = g.node_count();
        if full.nrows() != n || full.ncols() != n {
            return Err(Error::Dimension(format!(
                "weight matrix is {}x{}, graph has {n} nodes",
                full.nrows(),
                full.ncols()
            )));
        }
        let mut w = DMatrix::zeros(n, n);
        for u in 0..n {
            w[(u, u)] = full[(u, u)];
        }
        for (u, v) in g.edges() {
            w[(u, v)] = full[(u, v)];
            w[(v, u)] = full[(v, u)];
        }
        Self::from_matrix(g, w)
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Checks the sparsity invariant: positive diagonal, positive exactly on edges.
    pub fn check_bound(&self, g: &MeasurementGraph) -> Result<()> {
        let n = g.node_count();
        if self.w.nrows() != n || self.w.ncols() != n {
            return Err(Error::Dimension(format!(
                "weight matrix is {}x{}, graph has {n} nodes",
                self.w.nrows(),
                self.w.ncols()
            )));
        }
        for u in 0..n {
            for v in 0..n {
                let x = self.w[(u, v)];
                if !x.is_finite() || x < 0.0 {
                    return Err(Error::WeightSparsity { row: u, col: v, reason: "negative or non-finite" });
                }
                if u == v {
                    if x <= 0.0 {
                        return Err(Error::WeightSparsity { row: u, col: v, reason: "self-weight must be positive" });
                    }
                } else if g.has_edge(u, v) != (x > 0.0) {
                    let reason = if x > 0.0 { "positive weight on a non-edge" } else { "zero weight on an edge" };
                    return Err(Error::WeightSparsity { row: u, col: v, reason });
                }
            }
        }
        Ok(())
    }
}

impl EdgeWeights for WeightAssignment {
    fn weight(&self, u: usize, v: usize) -> f64 {
        self.w[(u, v)]
    }
}

/// The matrices `D, N, M`, their basic blocks, and the error-dynamics pair
/// `J_b = (M_b + D_b)^-1 (N_b + D_b)`, `B_b = (M_b + D_b)^-1 A_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedMatrices {
    pub d: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub d_b: DMatrix<f64>,
    pub n_b: DMatrix<f64>,
    pub m_b: DMatrix<f64>,
    pub a_b: DMatrix<f64>,
    pub j_b: DMatrix<f64>,
    pub b_b: DMatrix<f64>,
}

pub fn derive_matrices(g: &MeasurementGraph, w: &WeightAssignment) -> Result<DerivedMatrices> {
    w.check_bound(g)?;
    let p = g.partition();
    let n = p.len();
    let nb = p.n_basic();
    let wm = w.matrix();

    let d = DMatrix::from_diagonal(&wm.diagonal());
    let off = wm - &d;
    let m = DMatrix::from_diagonal(&DVector::from_fn(n, |u, _| off.row(u).sum()));

    let d_b = d.view((0, 0), (nb, nb)).into_owned();
    let n_b = off.view((0, 0), (nb, nb)).into_owned();
    let m_b = m.view((0, 0), (nb, nb)).into_owned();

    // Row block u of A_b holds N_uv for v != u, in the noise-vector layout.
    let mut a_b = DMatrix::zeros(nb, p.noise_dim());
    for u in 0..nb {
        for v in (0..n).filter(|&v| v != u) {
            a_b[(u, p.noise_index(u, v))] = off[(u, v)];
        }
    }

    let scale = DVector::from_fn(nb, |u, _| 1.0 / (m_b[(u, u)] + d_b[(u, u)]));
    let mut j_b = &n_b + &d_b;
    let mut b_b = a_b.clone();
    for u in 0..nb {
        j_b.row_mut(u).scale_mut(scale[u]);
        b_b.row_mut(u).scale_mut(scale[u]);
    }

    Ok(DerivedMatrices { d, n: off, m, d_b, n_b, m_b, a_b, j_b, b_b })
}

/// Full update matrix `J = (M + D)^-1 (N + D)`, row-stochastic by construction.
pub fn full_update_matrix(g: &MeasurementGraph, w: &WeightAssignment) -> Result<DMatrix<f64>> {
    w.check_bound(g)?;
    let mut j = w.matrix().clone();
    for u in 0..j.nrows() {
        let total = j.row(u).sum();
        j.row_mut(u).scale_mut(1.0 / total);
    }
    Ok(j)
}
