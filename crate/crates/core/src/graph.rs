//! Weighted undirected graphs over robot positions.
//!
//! Graphs are stored as dense symmetric adjacency matrices. Team sizes are
//! small (tens of robots), and the spectral routines downstream want dense
//! matrices anyway.
//!
//! Communication follows the R-disk model with Gaussian-decaying weights:
//!
//! ```text
//! a_ij = exp(-|p_i - p_j|^2 / (2 sigma))   if |p_i - p_j| <= R
//!      = 0                                 otherwise
//! ```

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Weights at or below this are treated as absent by combinatorial traversals.
pub const EDGE_EPSILON: f64 = 1e-15;

/// Symmetry tolerance accepted when importing a weight matrix.
const SYMMETRY_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("position of robot {index} is not finite ({x}, {y})")]
    NonFinitePosition { index: usize, x: f64, y: f64 },

    #[error("invalid communication model: radius {radius}, sigma {sigma} (both must be positive and finite)")]
    InvalidCommModel { radius: f64, sigma: f64 },

    #[error("invalid weight matrix: {0}")]
    InvalidWeights(String),

    #[error("node {node} out of range for a graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },

    #[error("perturbation factor must be positive and finite, got {0}")]
    InvalidEpsilon(f64),

    #[error("cannot remove a node from a graph with {0} node(s)")]
    EmptyReduction(usize),

    #[error("graph is not connected")]
    Disconnected,

    #[error("biconnectivity is undefined for graphs with fewer than 3 nodes (got {0})")]
    TooFewNodes(usize),
}

pub type Result<T, E = GraphError> = std::result::Result<T, E>;

/// A robot position in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn distance(&self, other: &Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn distance_squared(&self, other: &Position) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    /// Moves the position by `dt * velocity`.
    pub fn advanced(&self, velocity: &Vector2<f64>, dt: f64) -> Position {
        Position::new(self.x + dt * velocity.x, self.y + dt * velocity.y)
    }
}

impl From<Vector2<f64>> for Position {
    fn from(v: Vector2<f64>) -> Self {
        Position::new(v.x, v.y)
    }
}

/// R-disk communication model with Gaussian weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CommModel {
    pub radius: f64,
    pub sigma: f64,
}

impl Default for CommModel {
    fn default() -> Self {
        Self {
            radius: 0.5,
            sigma: 0.125,
        }
    }
}

impl CommModel {
    pub fn new(radius: f64, sigma: f64) -> Result<Self> {
        let model = Self { radius, sigma };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.radius.is_finite()
            && self.radius > 0.0
            && self.sigma.is_finite()
            && self.sigma > 0.0;
        if ok {
            Ok(())
        } else {
            Err(GraphError::InvalidCommModel {
                radius: self.radius,
                sigma: self.sigma,
            })
        }
    }

    /// Link weight between two robots.
    pub fn weight(&self, a: &Position, b: &Position) -> f64 {
        let d2 = a.distance_squared(b);
        if d2.sqrt() <= self.radius {
            (-d2 / (2.0 * self.sigma)).exp()
        } else {
            0.0
        }
    }
}

/// Undirected graph with a dense symmetric nonnegative weight matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    weights: DMatrix<f64>,
}

/// `L = D - A` for some adjacency `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplacianView {
    pub matrix: DMatrix<f64>,
}

/// The Laplacian of the graph obtained by scaling every weight incident to
/// `focal` by `epsilon`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedLaplacian {
    pub focal: usize,
    pub epsilon: f64,
    pub matrix: DMatrix<f64>,
}

impl WeightedGraph {
    /// A graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        Self {
            weights: DMatrix::zeros(n, n),
        }
    }

    /// Validates and wraps a weight matrix. Entries within `1e-12` of being
    /// symmetric are symmetrized.
    pub fn from_matrix(weights: DMatrix<f64>) -> Result<Self> {
        if !weights.is_square() {
            return Err(GraphError::InvalidWeights(format!(
                "matrix is {}x{}, expected square",
                weights.nrows(),
                weights.ncols()
            )));
        }
        let n = weights.nrows();
        let mut w = weights;
        for i in 0..n {
            if w[(i, i)] != 0.0 {
                return Err(GraphError::InvalidWeights(format!(
                    "nonzero self loop at node {i}"
                )));
            }
            for j in (i + 1)..n {
                let (a, b) = (w[(i, j)], w[(j, i)]);
                if !a.is_finite() || !b.is_finite() || a < 0.0 || b < 0.0 {
                    return Err(GraphError::InvalidWeights(format!(
                        "entry ({i},{j}) must be finite and nonnegative"
                    )));
                }
                if (a - b).abs() > SYMMETRY_TOLERANCE * a.abs().max(b.abs()).max(1.0) {
                    return Err(GraphError::InvalidWeights(format!(
                        "asymmetric entries ({i},{j})={a} vs ({j},{i})={b}"
                    )));
                }
                let m = 0.5 * (a + b);
                w[(i, j)] = m;
                w[(j, i)] = m;
            }
        }
        Ok(Self { weights: w })
    }

    /// Builds a graph from `(i, j, weight)` triples. Repeated pairs keep the
    /// last weight.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        let mut g = Self::empty(n);
        for &(i, j, w) in edges {
            g.set_weight(i, j, w)?;
        }
        Ok(g)
    }

    /// Unit-weight graph from an unweighted edge list.
    pub fn unit(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut g = Self::empty(n);
        for &(i, j) in edges {
            g.set_weight(i, j, 1.0)
                .expect("unit edge list out of range");
        }
        g
    }

    /// R-disk adjacency over `positions`.
    pub fn from_positions(positions: &[Position], model: &CommModel) -> Result<Self> {
        model.validate()?;
        if let Some((index, p)) = positions.iter().enumerate().find(|(_, p)| !p.is_finite()) {
            return Err(GraphError::NonFinitePosition {
                index,
                x: p.x,
                y: p.y,
            });
        }
        let n = positions.len();
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let a = model.weight(&positions[i], &positions[j]);
                w[(i, j)] = a;
                w[(j, i)] = a;
            }
        }
        Ok(Self { weights: w })
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[(i, j)]
    }

    pub fn set_weight(&mut self, i: usize, j: usize, w: f64) -> Result<()> {
        self.check_node(i)?;
        self.check_node(j)?;
        if i == j {
            return Err(GraphError::InvalidWeights(format!("self loop at node {i}")));
        }
        if !w.is_finite() || w < 0.0 {
            return Err(GraphError::InvalidWeights(format!(
                "weight {w} on ({i},{j})"
            )));
        }
        self.weights[(i, j)] = w;
        self.weights[(j, i)] = w;
        Ok(())
    }

    pub fn check_node(&self, i: usize) -> Result<()> {
        if i < self.n() {
            Ok(())
        } else {
            Err(GraphError::NodeOutOfRange {
                node: i,
                n: self.n(),
            })
        }
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i != j && self.weights[(i, j)] > EDGE_EPSILON
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(move |&j| self.has_edge(i, j))
    }

    /// Weighted degree `d_i = sum_j a_ij`.
    pub fn degree(&self, i: usize) -> f64 {
        self.weights.row(i).sum()
    }

    /// Edges `(i, j)` with `i < j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize, f64)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.has_edge(i, j) {
                    out.push((i, j, self.weights[(i, j)]));
                }
            }
        }
        out
    }

    pub fn laplacian(&self) -> LaplacianView {
        LaplacianView::from_adjacency(&self.weights)
    }

    /// Copy of the graph with every weight incident to `focal` scaled by
    /// `epsilon`.
    pub fn scaled_at(&self, focal: usize, epsilon: f64) -> Result<WeightedGraph> {
        self.check_node(focal)?;
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(GraphError::InvalidEpsilon(epsilon));
        }
        let mut w = self.weights.clone();
        if epsilon != 1.0 {
            for j in 0..self.n() {
                w[(focal, j)] *= epsilon;
                w[(j, focal)] *= epsilon;
            }
        }
        Ok(WeightedGraph { weights: w })
    }

    pub fn perturb(&self, focal: usize, epsilon: f64) -> Result<PerturbedLaplacian> {
        let scaled = self.scaled_at(focal, epsilon)?;
        Ok(PerturbedLaplacian {
            focal,
            epsilon,
            matrix: scaled.laplacian().matrix,
        })
    }

    /// The graph with node `i` and its incident edges removed. Remaining
    /// nodes keep their relative order.
    pub fn reduced(&self, i: usize) -> Result<WeightedGraph> {
        if self.n() < 2 {
            return Err(GraphError::EmptyReduction(self.n()));
        }
        self.check_node(i)?;
        Ok(WeightedGraph {
            weights: self.weights.clone().remove_row(i).remove_column(i),
        })
    }

    /// Induced subgraph over `nodes`, in the given order.
    pub fn induced(&self, nodes: &[usize]) -> WeightedGraph {
        let k = nodes.len();
        let w = DMatrix::from_fn(k, k, |a, b| self.weights[(nodes[a], nodes[b])]);
        WeightedGraph { weights: w }
    }

    /// Node `i` and its neighbours, `i` first.
    pub fn closed_neighborhood(&self, i: usize) -> Vec<usize> {
        std::iter::once(i).chain(self.neighbors(i)).collect()
    }

    pub fn is_connected(&self) -> bool {
        let n = self.n();
        if n <= 1 {
            return true;
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = stack.pop() {
            for (v, s) in seen.iter_mut().enumerate() {
                if !*s && self.has_edge(u, v) {
                    *s = true;
                    count += 1;
                    stack.push(v);
                }
            }
        }
        count == n
    }

    /// Number of edges whose presence differs between `self` and `other`.
    pub fn edge_set_difference(&self, other: &WeightedGraph) -> usize {
        if self.n() != other.n() {
            return usize::MAX;
        }
        let n = self.n();
        let mut diff = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                if self.has_edge(i, j) != other.has_edge(i, j) {
                    diff += 1;
                }
            }
        }
        diff
    }
}

impl LaplacianView {
    pub fn from_adjacency(adjacency: &DMatrix<f64>) -> Self {
        let degrees: DVector<f64> = adjacency.column_sum();
        let mut matrix = -adjacency.clone();
        for i in 0..adjacency.nrows() {
            matrix[(i, i)] += degrees[i];
        }
        Self { matrix }
    }
}

/// Articulation points of a connected graph via DFS lowpoints.
pub fn articulation_points(g: &WeightedGraph) -> Result<BTreeSet<usize>> {
    if !g.is_connected() {
        return Err(GraphError::Disconnected);
    }
    let n = g.n();
    let mut points = BTreeSet::new();
    if n < 3 {
        return Ok(points);
    }
    let adjacency: Vec<Vec<usize>> = (0..n).map(|i| g.neighbors(i).collect()).collect();

    const UNVISITED: usize = usize::MAX;
    let mut disc = vec![UNVISITED; n];
    let mut low = vec![0; n];
    let mut timer = 0;

    // Explicit stack of (node, parent, next neighbour cursor).
    let root = 0;
    let mut root_children = 0;
    let mut stack: Vec<(usize, usize, usize)> = vec![(root, UNVISITED, 0)];
    disc[root] = timer;
    low[root] = timer;
    timer += 1;

    while let Some(frame) = stack.last_mut() {
        let (u, parent, cursor) = *frame;
        if cursor < adjacency[u].len() {
            frame.2 += 1;
            let v = adjacency[u][cursor];
            if disc[v] == UNVISITED {
                disc[v] = timer;
                low[v] = timer;
                timer += 1;
                if u == root {
                    root_children += 1;
                }
                stack.push((v, u, 0));
            } else if v != parent {
                low[u] = low[u].min(disc[v]);
            }
        } else {
            stack.pop();
            if parent != UNVISITED {
                low[parent] = low[parent].min(low[u]);
                if parent != root && low[u] >= disc[parent] {
                    points.insert(parent);
                }
            }
        }
    }
    if root_children > 1 {
        points.insert(root);
    }
    Ok(points)
}

/// `true` iff the connected graph `g` has no articulation point.
///
/// Graphs with fewer than three nodes are rejected: a single edge is never
/// reported as biconnected.
pub fn is_biconnected(g: &WeightedGraph) -> Result<bool> {
    if g.n() < 3 {
        return Err(GraphError::TooFewNodes(g.n()));
    }
    Ok(articulation_points(g)?.is_empty())
}

/// Whether the subgraph induced by `i` and its neighbours is a block.
///
/// Fewer than three nodes in the local subgraph (isolated or degree-one
/// nodes) counts as not locally biconnected.
pub fn is_locally_biconnected(g: &WeightedGraph, i: usize) -> Result<bool> {
    g.check_node(i)?;
    let local = g.induced(&g.closed_neighborhood(i));
    if local.n() < 3 {
        return Ok(false);
    }
    Ok(articulation_points(&local)?.is_empty())
}

/// Combinatorial biconnectivity status, with the degenerate cases kept
/// distinct.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiconnectivityStatus {
    Biconnected,
    /// Connected, with at least one articulation point.
    Separable,
    Disconnected,
    /// Connected but too small for the notion to apply.
    Degenerate,
}

impl BiconnectivityStatus {
    pub fn of(g: &WeightedGraph) -> Self {
        if !g.is_connected() {
            BiconnectivityStatus::Disconnected
        } else if g.n() < 3 {
            BiconnectivityStatus::Degenerate
        } else if is_biconnected(g).unwrap_or(false) {
            BiconnectivityStatus::Biconnected
        } else {
            BiconnectivityStatus::Separable
        }
    }

    pub fn is_biconnected(self) -> bool {
        self == BiconnectivityStatus::Biconnected
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> WeightedGraph {
        WeightedGraph::unit(3, &[(0, 1), (1, 2)])
    }

    fn cycle(n: usize) -> WeightedGraph {
        let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        WeightedGraph::unit(n, &edges)
    }

    fn bowtie() -> WeightedGraph {
        WeightedGraph::unit(5, &[(0, 1), (1, 2), (0, 2), (2, 3), (3, 4), (2, 4)])
    }

    fn star(leaves: usize) -> WeightedGraph {
        let edges: Vec<_> = (1..=leaves).map(|j| (0, j)).collect();
        WeightedGraph::unit(leaves + 1, &edges)
    }

    fn brute_force_articulation(g: &WeightedGraph) -> BTreeSet<usize> {
        (0..g.n())
            .filter(|&i| !g.reduced(i).unwrap().is_connected())
            .collect()
    }

    #[test]
    fn coincident_robots_have_unit_weight() {
        let p = [Position::new(0.3, 0.3), Position::new(0.3, 0.3)];
        let g = WeightedGraph::from_positions(&p, &CommModel::default()).unwrap();
        assert_eq!(g.weight(0, 1), 1.0);
    }

    #[test]
    fn robots_beyond_radius_are_unlinked() {
        let p = [Position::new(0.0, 0.0), Position::new(0.6, 0.0)];
        let g = WeightedGraph::from_positions(&p, &CommModel::default()).unwrap();
        assert_eq!(g.weight(0, 1), 0.0);
    }

    #[test]
    fn weight_at_radius() {
        let p = [Position::new(0.0, 0.0), Position::new(0.5, 0.0)];
        let g = WeightedGraph::from_positions(&p, &CommModel::default()).unwrap();
        assert!((g.weight(0, 1) - 0.367_879_441_171_442_3).abs() < 1e-15);
        assert_eq!(g.weight(0, 1), g.weight(1, 0));
        assert_eq!(g.weight(0, 0), 0.0);
    }

    #[test]
    fn rejects_non_finite_position() {
        let p = [Position::new(0.0, 0.0), Position::new(f64::NAN, 0.0)];
        let err = WeightedGraph::from_positions(&p, &CommModel::default()).unwrap_err();
        assert!(matches!(
            err,
            GraphError::NonFinitePosition { index: 1, .. }
        ));
        assert!(CommModel::new(0.0, 1.0).is_err());
        assert!(CommModel::new(1.0, -1.0).is_err());
    }

    #[test]
    fn laplacian_examples() {
        let l = path3().laplacian().matrix;
        let expected =
            DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(l, expected);
        assert_eq!(
            WeightedGraph::empty(1).laplacian().matrix,
            DMatrix::zeros(1, 1)
        );
        let k2 = WeightedGraph::unit(2, &[(0, 1)]).laplacian().matrix;
        assert_eq!(k2, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn perturbation_examples() {
        let g = cycle(3);
        assert_eq!(g.perturb(0, 1.0).unwrap().matrix, g.laplacian().matrix);

        let p = g.perturb(0, 0.5).unwrap().matrix;
        assert_eq!(p[(1, 2)], -1.0);
        assert_eq!(p[(0, 1)], -0.5);
        assert_eq!(p[(0, 0)], 1.0);
        assert_eq!(p[(1, 1)], 1.5);

        let k2 = WeightedGraph::unit(2, &[(0, 1)]);
        let tiny = k2.perturb(0, 1e-12).unwrap().matrix;
        assert!(tiny.amax() <= 1e-12);

        assert_eq!(
            g.perturb(0, 0.0).unwrap_err(),
            GraphError::InvalidEpsilon(0.0)
        );
        assert!(g.perturb(0, -1.0).is_err());
        assert!(g.perturb(3, 0.5).is_err());
    }

    #[test]
    fn reduced_graph_examples() {
        let r = path3().reduced(1).unwrap();
        assert_eq!(r.n(), 2);
        assert!(r.edges().is_empty());

        for i in 0..3 {
            let r = cycle(3).reduced(i).unwrap();
            assert_eq!(r.edges(), vec![(0, 1, 1.0)]);
        }

        let r = star(4).reduced(0).unwrap();
        assert_eq!(r.n(), 4);
        assert!(r.edges().is_empty());

        assert_eq!(
            WeightedGraph::empty(1).reduced(0).unwrap_err(),
            GraphError::EmptyReduction(1)
        );
    }

    #[test]
    fn connectivity_examples() {
        assert!(path3().is_connected());
        assert!(!WeightedGraph::unit(4, &[(0, 1), (2, 3)]).is_connected());
        assert!(WeightedGraph::empty(1).is_connected());
        // floating point dust is not an edge
        let mut g = WeightedGraph::empty(2);
        g.set_weight(0, 1, 1e-16).unwrap();
        assert!(!g.is_connected());
    }

    #[test]
    fn articulation_examples() {
        assert_eq!(articulation_points(&path3()).unwrap(), BTreeSet::from([1]));
        assert!(articulation_points(&cycle(4)).unwrap().is_empty());
        assert_eq!(articulation_points(&bowtie()).unwrap(), BTreeSet::from([2]));
        assert_eq!(articulation_points(&star(4)).unwrap(), BTreeSet::from([0]));
        assert_eq!(
            articulation_points(&WeightedGraph::unit(4, &[(0, 1), (2, 3)])).unwrap_err(),
            GraphError::Disconnected
        );
    }

    #[test]
    fn articulation_agrees_with_brute_force_on_small_graphs() {
        // all connected graphs on 5 labelled nodes
        let pairs: Vec<(usize, usize)> = (0..5)
            .flat_map(|i| ((i + 1)..5).map(move |j| (i, j)))
            .collect();
        for mask in 0u32..(1 << pairs.len()) {
            let edges: Vec<_> = pairs
                .iter()
                .enumerate()
                .filter(|(k, _)| mask & (1 << k) != 0)
                .map(|(_, &e)| e)
                .collect();
            let g = WeightedGraph::unit(5, &edges);
            if !g.is_connected() {
                continue;
            }
            assert_eq!(
                articulation_points(&g).unwrap(),
                brute_force_articulation(&g),
                "mask {mask}"
            );
        }
    }

    #[test]
    fn biconnectivity_examples() {
        assert!(is_biconnected(&cycle(4)).unwrap());
        assert!(!is_biconnected(&path3()).unwrap());
        let k4 = WeightedGraph::unit(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
        assert!(is_biconnected(&k4).unwrap());
        let k2 = WeightedGraph::unit(2, &[(0, 1)]);
        assert_eq!(is_biconnected(&k2).unwrap_err(), GraphError::TooFewNodes(2));
        assert_eq!(
            BiconnectivityStatus::of(&k2),
            BiconnectivityStatus::Degenerate
        );
        assert_eq!(
            BiconnectivityStatus::of(&path3()),
            BiconnectivityStatus::Separable
        );
        assert_eq!(
            BiconnectivityStatus::of(&cycle(5)),
            BiconnectivityStatus::Biconnected
        );
        assert_eq!(
            BiconnectivityStatus::of(&WeightedGraph::unit(3, &[(0, 1)])),
            BiconnectivityStatus::Disconnected
        );
    }

    #[test]
    fn local_biconnectivity_examples() {
        assert!(is_locally_biconnected(&cycle(3), 0).unwrap());
        assert!(!is_locally_biconnected(&star(3), 0).unwrap());
        assert!(!is_locally_biconnected(&star(2), 0).unwrap());
        // a leaf sees only itself and the hub
        assert!(!is_locally_biconnected(&star(3), 1).unwrap());
        // isolated node
        assert!(!is_locally_biconnected(&WeightedGraph::empty(3), 0).unwrap());
        // the shared vertex of a bow-tie is locally separable, the others are not
        assert!(!is_locally_biconnected(&bowtie(), 2).unwrap());
        assert!(is_locally_biconnected(&bowtie(), 0).unwrap());
    }
}
