//! Sparse weighted graphs and their discrete differential operators.
//!
//! # Conventions
//!
//! A [`Graph`] is undirected: each edge `{i, j}` carries one strictly
//! positive weight `w_ij = w_ji`, stored once under the canonical key
//! `(min(i,j), max(i,j))`. Operators act on *ordered* pairs: every canonical
//! edge contributes the two directions `(i, j)` and `(j, i)`.
//!
//! * gradient: `(∇x)_ij = w_ij (x_i − x_j)`, an antisymmetric [`EdgeField`];
//! * divergence: `(div q)_i = −Σ_{j∈N_i} w_ij (q_ij − q_ji)`, the negative
//!   adjoint of the gradient under the plain inner products below, so that
//!   `⟨∇x, q⟩ + ⟨x, div q⟩ = 0` exactly (up to rounding);
//! * Laplacian: `Δ = div ∘ ∇`. With these conventions `Δ = −2 L` where `L`
//!   is the combinatorial Laplacian with weights `w_ij²`; the factor 2 is a
//!   documented consequence of summing over ordered pairs, and every step
//!   size and majorizer bound downstream accounts for it via
//!   [`operator_norm`].
//!
//! Inner products are unweighted sums: `⟨x, y⟩ = Σ_i Σ_c x_ic y_ic` over
//! nodes and channels, and `⟨q, r⟩ = Σ over all ordered edges and channels`.
//! The evolution `∂x/∂t = div(∇x)` therefore dissipates the Dirichlet energy
//! `⟨∇x, ∇x⟩`, matching the sign convention of heat diffusion.
//!
//! Isolated nodes are legal; every operator treats them as zero rows.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// One undirected edge with its canonical endpoints `i < j`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// Entry of the per-node adjacency list.
#[derive(Debug, Clone, Copy)]
struct Adjacent {
    /// Neighbor node id.
    node: usize,
    /// Index into the canonical edge list.
    edge: usize,
    /// True when the owning node is the canonical `i` of the edge, i.e. the
    /// ordered direction (owner → neighbor) is the edge's forward slot.
    forward: bool,
}

/// Immutable sparse weighted graph.
///
/// Construction validates everything once; afterwards the graph is plain
/// read-only data, safe to share across threads.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    offsets: Vec<usize>,
    adjacency: Vec<Adjacent>,
}

impl Graph {
    /// Builds a validated graph from `(i, j, w)` triples.
    ///
    /// Edges are canonicalized to `i < j`; duplicates (in either order),
    /// self-loops, out-of-range indices and non-positive or non-finite
    /// weights are each rejected with a distinct error.
    pub fn build(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut canon: Vec<Edge> = Vec::with_capacity(edges.len());
        for &(i, j, w) in edges {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, n });
            }
            if j >= n {
                return Err(Error::IndexOutOfRange { index: j, n });
            }
            if i == j {
                return Err(Error::SelfLoop { node: i });
            }
            if !w.is_finite() || w <= 0.0 {
                return Err(Error::InvalidWeight { i, j, w });
            }
            let (a, b) = if i < j { (i, j) } else { (j, i) };
            canon.push(Edge { i: a, j: b, w });
        }
        canon.sort_by(|a, b| (a.i, a.j).cmp(&(b.i, b.j)));
        for pair in canon.windows(2) {
            if pair[0].i == pair[1].i && pair[0].j == pair[1].j {
                return Err(Error::DuplicateEdge {
                    i: pair[0].i,
                    j: pair[0].j,
                });
            }
        }

        let mut degree = vec![0usize; n];
        for e in &canon {
            degree[e.i] += 1;
            degree[e.j] += 1;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        for d in &degree {
            offsets.push(offsets.last().unwrap() + d);
        }
        let mut adjacency = vec![
            Adjacent {
                node: 0,
                edge: 0,
                forward: false
            };
            offsets[n]
        ];
        let mut cursor = offsets.clone();
        for (idx, e) in canon.iter().enumerate() {
            adjacency[cursor[e.i]] = Adjacent {
                node: e.j,
                edge: idx,
                forward: true,
            };
            cursor[e.i] += 1;
            adjacency[cursor[e.j]] = Adjacent {
                node: e.i,
                edge: idx,
                forward: false,
            };
            cursor[e.j] += 1;
        }

        Ok(Graph {
            n,
            edges: canon,
            offsets,
            adjacency,
        })
    }

    /// Number of nodes.
    pub fn node_count(&self) -> usize {
        self.n
    }

    /// Number of undirected edges.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Canonical edge list, sorted by `(i, j)`.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Degree of `node` (number of incident edges).
    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    /// Weight of the edge between `i` and `j`, if present.
    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.ordered_slot(i, j).map(|s| self.edges[s / 2].w)
    }

    /// Index of the ordered direction `(from, to)` into an [`EdgeField`]'s
    /// slot array, if the edge exists.
    pub fn ordered_slot(&self, from: usize, to: usize) -> Option<usize> {
        if from >= self.n || to >= self.n {
            return None;
        }
        self.adjacency[self.offsets[from]..self.offsets[from + 1]]
            .iter()
            .find(|a| a.node == to)
            .map(|a| 2 * a.edge + usize::from(!a.forward))
    }

    fn neighbors(&self, node: usize) -> &[Adjacent] {
        &self.adjacency[self.offsets[node]..self.offsets[node + 1]]
    }

    /// True when every node is reachable from node 0 (vacuously true for
    /// empty and single-node graphs).
    pub fn is_connected(&self) -> bool {
        if self.n <= 1 {
            return true;
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for a in self.neighbors(u) {
                if !seen[a.node] {
                    seen[a.node] = true;
                    count += 1;
                    stack.push(a.node);
                }
            }
        }
        count == self.n
    }
}

/// Dense per-node data: an `n × m` matrix of finite reals, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    n: usize,
    channels: usize,
    values: Vec<f64>,
}

impl NodeField {
    /// All-zero field.
    pub fn zeros(n: usize, channels: usize) -> Self {
        NodeField {
            n,
            channels,
            values: vec![0.0; n * channels],
        }
    }

    /// Constant field.
    pub fn constant(n: usize, channels: usize, value: f64) -> Self {
        NodeField {
            n,
            channels,
            values: vec![value; n * channels],
        }
    }

    /// Builds a field from row-major values, validating shape and finiteness.
    pub fn from_values(n: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidParameter {
                name: "channels",
                value: 0.0,
            });
        }
        if values.len() != n * channels {
            return Err(Error::DimensionMismatch {
                context: "node field values",
                got: values.len(),
                expected: n * channels,
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "node field",
            });
        }
        Ok(NodeField {
            n,
            channels,
            values,
        })
    }

    /// Single-channel convenience constructor.
    pub fn from_column(values: Vec<f64>) -> Result<Self> {
        let n = values.len();
        Self::from_values(n, 1, values)
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn get(&self, node: usize, channel: usize) -> f64 {
        self.values[node * self.channels + channel]
    }

    pub fn set(&mut self, node: usize, channel: usize, value: f64) {
        self.values[node * self.channels + channel] = value;
    }

    pub fn row(&self, node: usize) -> &[f64] {
        &self.values[node * self.channels..(node + 1) * self.channels]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Errors unless the field has one row per graph node.
    pub fn conforms(&self, g: &Graph, context: &'static str) -> Result<()> {
        if self.n != g.node_count() {
            return Err(Error::DimensionMismatch {
                context,
                got: self.n,
                expected: g.node_count(),
            });
        }
        Ok(())
    }

    /// True if any entry is NaN or infinite.
    pub fn has_non_finite(&self) -> bool {
        self.values.iter().any(|v| !v.is_finite())
    }
}

/// Per-ordered-edge data: one value per direction `(i→j)` and `(j→i)` of
/// every edge, per channel.
///
/// Slot `2e` holds the forward direction (canonical `i → j`) of edge `e`,
/// slot `2e + 1` the reverse. Gradient-like fields are antisymmetric
/// (`value(i,j) = −value(j,i)`); dual fields such as the clip iterate `z` are
/// stored in the same layout but are not required to be antisymmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField {
    edge_count: usize,
    channels: usize,
    /// `2 * edge_count * channels` values, slot-major.
    values: Vec<f64>,
}

impl EdgeField {
    /// All-zero field over the graph's edges.
    pub fn zeros(g: &Graph, channels: usize) -> Self {
        EdgeField {
            edge_count: g.edge_count(),
            channels,
            values: vec![0.0; 2 * g.edge_count() * channels],
        }
    }

    /// Builds an antisymmetric field from per-canonical-edge values for the
    /// forward direction; the reverse direction is set to the negation.
    ///
    /// `forward` is row-major `edge_count × channels`.
    pub fn antisymmetric(g: &Graph, channels: usize, forward: &[f64]) -> Result<Self> {
        if forward.len() != g.edge_count() * channels {
            return Err(Error::DimensionMismatch {
                context: "edge field forward values",
                got: forward.len(),
                expected: g.edge_count() * channels,
            });
        }
        let mut field = EdgeField::zeros(g, channels);
        for e in 0..g.edge_count() {
            for c in 0..channels {
                let v = forward[e * channels + c];
                field.values[(2 * e) * channels + c] = v;
                field.values[(2 * e + 1) * channels + c] = -v;
            }
        }
        Ok(field)
    }

    /// Builds a symmetric field (same value in both directions), as used for
    /// per-edge conductivities.
    pub fn symmetric(g: &Graph, channels: usize, per_edge: &[f64]) -> Result<Self> {
        if per_edge.len() != g.edge_count() * channels {
            return Err(Error::DimensionMismatch {
                context: "edge field per-edge values",
                got: per_edge.len(),
                expected: g.edge_count() * channels,
            });
        }
        let mut field = EdgeField::zeros(g, channels);
        for e in 0..g.edge_count() {
            for c in 0..channels {
                let v = per_edge[e * channels + c];
                field.values[(2 * e) * channels + c] = v;
                field.values[(2 * e + 1) * channels + c] = v;
            }
        }
        Ok(field)
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Value at an ordered slot (see [`Graph::ordered_slot`]).
    pub fn slot(&self, slot: usize, channel: usize) -> f64 {
        self.values[slot * self.channels + channel]
    }

    pub fn set_slot(&mut self, slot: usize, channel: usize, value: f64) {
        self.values[slot * self.channels + channel] = value;
    }

    /// Value on the ordered pair `(from, to)`, if the edge exists.
    pub fn value(&self, g: &Graph, from: usize, to: usize, channel: usize) -> Option<f64> {
        g.ordered_slot(from, to).map(|s| self.slot(s, channel))
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn conforms(&self, g: &Graph, context: &'static str) -> Result<()> {
        if self.edge_count != g.edge_count() {
            return Err(Error::DimensionMismatch {
                context,
                got: self.edge_count,
                expected: g.edge_count(),
            });
        }
        Ok(())
    }

    /// Largest deviation from antisymmetry, `max |q_ij + q_ji|`.
    pub fn antisymmetry_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for e in 0..self.edge_count {
            for c in 0..self.channels {
                let s = self.values[(2 * e) * self.channels + c]
                    + self.values[(2 * e + 1) * self.channels + c];
                worst = worst.max(libm::fabs(s));
            }
        }
        worst
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .fold(0.0f64, |acc, v| acc.max(libm::fabs(*v)))
    }
}

/// Graph gradient: `(∇x)_ij = w_ij (x_i − x_j)` per channel.
///
/// The result is antisymmetric by construction.
pub fn gradient(g: &Graph, x: &NodeField) -> Result<EdgeField> {
    x.conforms(g, "gradient input")?;
    let m = x.channels();
    let mut out = EdgeField::zeros(g, m);
    for (e, edge) in g.edges().iter().enumerate() {
        for c in 0..m {
            let d = edge.w * (x.get(edge.i, c) - x.get(edge.j, c));
            out.set_slot(2 * e, c, d);
            out.set_slot(2 * e + 1, c, -d);
        }
    }
    Ok(out)
}

/// Graph divergence: `(div q)_i = −Σ_{j∈N_i} w_ij (q_ij − q_ji)`.
///
/// This is the negative adjoint of [`gradient`] under the plain node and
/// ordered-edge inner products, so `⟨∇x, q⟩ = −⟨x, div q⟩` for every
/// conforming pair. Row sums vanish for antisymmetric `q`.
pub fn divergence(g: &Graph, q: &EdgeField) -> Result<NodeField> {
    q.conforms(g, "divergence input")?;
    let m = q.channels();
    let mut out = NodeField::zeros(g.node_count(), m);
    for (e, edge) in g.edges().iter().enumerate() {
        for c in 0..m {
            let forward = q.slot(2 * e, c);
            let reverse = q.slot(2 * e + 1, c);
            let flux = edge.w * (forward - reverse);
            // −w (q_ij − q_ji) at i; the roles of the directions swap at j.
            *out.values_mut()
                .get_mut(edge.i * m + c)
                .expect("in range") -= flux;
            *out.values_mut()
                .get_mut(edge.j * m + c)
                .expect("in range") += flux;
        }
    }
    Ok(out)
}

/// Graph Laplacian `Δx = div(∇x)`.
///
/// Equals `−2 L x` where `L` is the combinatorial Laplacian with weights
/// `w_ij²`; in particular `⟨x, Δx⟩ = −⟨∇x, ∇x⟩ ≤ 0` and constants are in the
/// kernel.
pub fn laplacian(g: &Graph, x: &NodeField) -> Result<NodeField> {
    divergence(g, &gradient(g, x)?)
}

/// Plain inner product of two node fields.
pub fn node_inner(a: &NodeField, b: &NodeField) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| x * y)
        .sum()
}

/// Inner product of two edge fields over all ordered directions.
pub fn edge_inner(a: &EdgeField, b: &EdgeField) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| x * y)
        .sum()
}

/// Dirichlet energy `⟨∇x, ∇x⟩` (summed over ordered pairs and channels).
pub fn dirichlet_energy(g: &Graph, x: &NodeField) -> Result<f64> {
    let grad = gradient(g, x)?;
    Ok(edge_inner(&grad, &grad))
}

/// Largest eigenvalue of `∇ᵀ∇ = −Δ` by power iteration.
///
/// Deterministic (fixed internal seed). Stops when the Rayleigh-quotient
/// estimate changes by less than `tol` relatively, or after `iters` steps.
/// Returns 0 for graphs without edges. The estimate approaches the true
/// value from below, so callers needing an upper bound (majorizer constants,
/// step-size limits) multiply by a safety factor.
pub fn operator_norm(g: &Graph, iters: usize, tol: f64) -> f64 {
    if g.edge_count() == 0 {
        return 0.0;
    }
    let n = g.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e3779b97f4a7c15);
    let mut v = NodeField::zeros(n, 1);
    for i in 0..n {
        v.set(i, 0, rng.random_range(-1.0..1.0));
    }
    let mut estimate = 0.0f64;
    for _ in 0..iters.max(1) {
        // b = ∇ᵀ∇ v = −Δv
        let mut b = laplacian(g, &v).expect("conforming by construction");
        for val in b.values_mut() {
            *val = -*val;
        }
        let vb = node_inner(&v, &b);
        let vv = node_inner(&v, &v);
        if vv == 0.0 {
            return 0.0;
        }
        let next = vb / vv;
        let norm = libm::sqrt(node_inner(&b, &b));
        if norm == 0.0 {
            // v landed in the kernel; restart from a fresh direction.
            for i in 0..n {
                v.set(i, 0, rng.random_range(-1.0..1.0));
            }
            continue;
        }
        for val in b.values_mut() {
            *val /= norm;
        }
        v = b;
        if libm::fabs(next - estimate) <= tol * libm::fabs(next) {
            return next;
        }
        estimate = next;
    }
    estimate
}
