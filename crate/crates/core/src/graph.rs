//! Weighted graphs and the discrete calculus on them.
//!
//! Edges are stored once, in the canonical orientation `i < j`. An
//! [`EdgeField`] holds one value per canonical edge; the reversed orientation
//! is the negation, so skew-symmetry is structural. Sums over directed pairs
//! carrying a factor `1/2` are evaluated as plain sums over unordered edges.
//!
//! ```text
//! (grad S)_ij        = sqrt(w_ij) (S_i - S_j)
//! div(rho v)_i       = -sum_{j in N(i)} sqrt(w_ij) v_ij theta_ij(rho)
//! <u, v>_theta(rho)  = sum_{edges} u_e v_e theta_e(rho) w_e
//! ```

use std::collections::{HashSet, VecDeque};
use std::ops::Deref;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of a [`Density`].
pub const MASS_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub omega: f64,
    pub omega_tilde: f64,
}

/// Immutable, connected, undirected weighted graph without self loops or
/// multi-edges. Node indices are zero-based.
#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    /// `adjacency[i]` lists `(neighbour, edge index)`.
    adjacency: Vec<Vec<(usize, usize)>>,
}

#[derive(Debug, Deserialize, Serialize)]
struct GraphDocument {
    nodes: usize,
    /// `[i, j, omega]` or `[i, j, omega, omega_tilde]`, one-based.
    edges: Vec<Vec<f64>>,
}

impl Graph {
    /// Builds and validates a graph from zero-based `(i, j, omega, omega_tilde)`
    /// tuples. Orientation of the input pairs does not matter.
    pub fn new(n: usize, edges: &[(usize, usize, f64, f64)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut seen = HashSet::new();
        let mut stored = Vec::with_capacity(edges.len());
        for &(a, b, omega, omega_tilde) in edges {
            if a >= n || b >= n {
                return Err(Error::NodeOutOfRange { i: a + 1, j: b + 1, n });
            }
            if a == b {
                return Err(Error::SelfLoop(a + 1));
            }
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if !seen.insert((i, j)) {
                return Err(Error::DuplicateEdge(i + 1, j + 1));
            }
            for weight in [omega, omega_tilde] {
                if !(weight > 0.0) || !weight.is_finite() {
                    return Err(Error::NonPositiveWeight { i: i + 1, j: j + 1, weight });
                }
            }
            stored.push(Edge { i, j, omega, omega_tilde });
        }
        let mut adjacency = vec![Vec::new(); n];
        for (k, e) in stored.iter().enumerate() {
            adjacency[e.i].push((e.j, k));
            adjacency[e.j].push((e.i, k));
        }
        let graph = Graph { n, edges: stored, adjacency };
        if let Some(node) = graph.first_unreachable() {
            return Err(Error::Disconnected(node + 1));
        }
        Ok(graph)
    }

    /// Parses the JSON graph document
    /// `{"nodes": N, "edges": [[i, j, omega, omega_tilde], ...]}` (one-based,
    /// `omega_tilde` optional and defaulting to `omega`).
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: GraphDocument = serde_json::from_str(text)?;
        let mut edges = Vec::with_capacity(doc.edges.len());
        for row in &doc.edges {
            if row.len() != 3 && row.len() != 4 {
                return Err(Error::InvalidParameter(format!("edge entry must have 3 or 4 numbers, got {}", row.len())));
            }
            let index = |x: f64| -> Result<usize> {
                if x.fract() != 0.0 || x < 1.0 {
                    return Err(Error::InvalidParameter(format!("invalid node index {x}")));
                }
                Ok(x as usize - 1)
            };
            let omega = row[2];
            let omega_tilde = row.get(3).copied().unwrap_or(omega);
            edges.push((index(row[0])?, index(row[1])?, omega, omega_tilde));
        }
        Graph::new(doc.nodes, &edges)
    }

    pub fn to_json(&self) -> String {
        let doc = GraphDocument {
            nodes: self.n,
            edges: self
                .edges
                .iter()
                .map(|e| vec![(e.i + 1) as f64, (e.j + 1) as f64, e.omega, e.omega_tilde])
                .collect(),
        };
        serde_json::to_string(&doc).expect("graph document serializes")
    }

    /// Path graph `0 - 1 - ... - (n-1)` with unit weights.
    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|k| (k - 1, k, 1.0, 1.0)).collect();
        Graph::new(n, &edges)
    }

    /// Cycle graph on `n >= 3` nodes with unit weights.
    pub fn cycle(n: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n).map(|k| (k, (k + 1) % n, 1.0, 1.0)).collect();
        Graph::new(n, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Neighbours of `i` together with the index of the connecting edge.
    pub fn neighbours(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    /// Index of edge `{i, j}` if present.
    pub fn edge_index(&self, i: usize, j: usize) -> Option<usize> {
        self.adjacency[i].iter().find(|&&(nb, _)| nb == j).map(|&(_, k)| k)
    }

    fn first_unreachable(&self) -> Option<usize> {
        let mut visited = vec![false; self.n];
        let mut queue = VecDeque::from([0]);
        visited[0] = true;
        while let Some(v) = queue.pop_front() {
            for &(nb, _) in &self.adjacency[v] {
                if !visited[nb] {
                    visited[nb] = true;
                    queue.push_back(nb);
                }
            }
        }
        visited.iter().position(|&v| !v)
    }

    /// Reject node vectors of the wrong length.
    pub fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: len });
        }
        Ok(())
    }
}

/// Probability vector on the nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Density(Array1<f64>);

impl Density {
    pub fn new(values: impl Into<Array1<f64>>) -> Result<Self> {
        let values = values.into();
        if values.is_empty() {
            return Err(Error::InvalidDensity("empty vector".into()));
        }
        for (k, &v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(k));
            }
            if v < 0.0 {
                return Err(Error::InvalidDensity(format!("negative mass {v} at node {}", k + 1)));
            }
        }
        let mass = values.sum();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::InvalidDensity(format!("total mass {mass} differs from 1")));
        }
        Ok(Density(values))
    }

    pub fn uniform(n: usize) -> Self {
        Density(Array1::from_elem(n, 1.0 / n as f64))
    }

    /// True when every node carries positive mass.
    pub fn is_interior(&self) -> bool {
        self.0.iter().all(|&v| v > 0.0)
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }
}

impl Deref for Density {
    type Target = Array1<f64>;
    fn deref(&self) -> &Array1<f64> {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for Density {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Density::new(v)
    }
}

impl From<Density> for Vec<f64> {
    fn from(d: Density) -> Vec<f64> {
        d.0.to_vec()
    }
}

/// Real node potential. Not gauge-normalized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PotentialField(Array1<f64>);

impl PotentialField {
    pub fn new(values: impl Into<Array1<f64>>) -> Result<Self> {
        let values = values.into();
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(k));
        }
        Ok(PotentialField(values))
    }

    pub fn zeros(n: usize) -> Self {
        PotentialField(Array1::zeros(n))
    }

    pub fn into_inner(self) -> Array1<f64> {
        self.0
    }
}

impl Deref for PotentialField {
    type Target = Array1<f64>;
    fn deref(&self) -> &Array1<f64> {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for PotentialField {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        PotentialField::new(v)
    }
}

impl From<PotentialField> for Vec<f64> {
    fn from(p: PotentialField) -> Vec<f64> {
        p.0.to_vec()
    }
}

/// Skew-symmetric field on edges, one value per canonical edge `(i, j), i < j`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeField(pub Array1<f64>);

impl EdgeField {
    pub fn zeros(g: &Graph) -> Self {
        EdgeField(Array1::zeros(g.edge_count()))
    }

    /// Value in orientation `i -> j`; zero when `{i, j}` is not an edge.
    pub fn get(&self, g: &Graph, i: usize, j: usize) -> f64 {
        match g.edge_index(i, j) {
            Some(k) if g.edges[k].i == i => self.0[k],
            Some(k) => -self.0[k],
            None => 0.0,
        }
    }

    pub fn values(&self) -> &Array1<f64> {
        &self.0
    }
}

/// Choice of the density-dependent edge mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThetaKind {
    /// `(s + t) / 2`
    #[default]
    Arithmetic,
    /// `(s - t) / (log s - log t)`
    Logarithmic,
}

// 10-point Gauss-Legendre rule on [-1, 1].
const GL_NODES: [f64; 5] = [
    0.148_874_338_981_631_2,
    0.433_395_394_129_247_2,
    0.679_409_568_299_024_4,
    0.865_063_366_688_984_5,
    0.973_906_528_517_171_7,
];
const GL_WEIGHTS: [f64; 5] = [
    0.295_524_224_714_752_9,
    0.269_266_719_309_996_3,
    0.219_086_362_515_982,
    0.149_451_349_150_580_6,
    0.066_671_344_308_688_1,
];

/// `int_0^1 f(u) du` by Gauss-Legendre; exact to rounding for the smooth
/// integrands `u^k r^u` with `|log r| <= log 2` used below.
fn gauss_legendre_unit(f: impl Fn(f64) -> f64) -> f64 {
    let mut acc = 0.0;
    for (&x, &w) in GL_NODES.iter().zip(GL_WEIGHTS.iter()) {
        acc += w * (f(0.5 * (1.0 + x)) + f(0.5 * (1.0 - x)));
    }
    0.5 * acc
}

/// Ratio window in which the logarithmic mean and its derivatives are
/// evaluated through `Theta(s, t) = int_0^1 s^u t^(1-u) du` instead of the
/// closed forms, which cancel catastrophically as `s -> t`.
fn near_diagonal(s: f64, t: f64) -> bool {
    s <= 2.0 * t && t <= 2.0 * s
}

impl ThetaKind {
    /// Mean of two nonnegative masses. The logarithmic mean is extended by
    /// continuity: `Theta(s, s) = s` and `Theta(0, t) = 0`.
    pub fn value(self, s: f64, t: f64) -> f64 {
        match self {
            ThetaKind::Arithmetic => 0.5 * (s + t),
            ThetaKind::Logarithmic => {
                // Evaluate in a fixed argument order so the mean is exactly symmetric.
                let (s, t) = if s >= t { (s, t) } else { (t, s) };
                if s <= 0.0 || t <= 0.0 {
                    0.0
                } else if s == t {
                    s
                } else if near_diagonal(s, t) {
                    let lr = (s / t).ln();
                    t * gauss_legendre_unit(|u| (u * lr).exp())
                } else {
                    (s - t) / (s.ln() - t.ln())
                }
            }
        }
    }

    /// `dTheta/ds` at `(s, t)`; requires `s, t > 0` for the logarithmic mean.
    pub fn d_first(self, s: f64, t: f64) -> f64 {
        match self {
            ThetaKind::Arithmetic => 0.5,
            ThetaKind::Logarithmic => {
                if near_diagonal(s, t) {
                    let lr = (s / t).ln();
                    gauss_legendre_unit(|u| u * ((u - 1.0) * lr).exp())
                } else {
                    let l = s.ln() - t.ln();
                    1.0 / l - (s - t) / (s * l * l)
                }
            }
        }
    }

    /// `d^2 Theta / ds^2`.
    pub fn d_first_first(self, s: f64, t: f64) -> f64 {
        match self {
            ThetaKind::Arithmetic => 0.0,
            ThetaKind::Logarithmic => {
                if near_diagonal(s, t) {
                    let lr = (s / t).ln();
                    gauss_legendre_unit(|u| u * (u - 1.0) * ((u - 2.0) * lr).exp()) / t
                } else {
                    let l = s.ln() - t.ln();
                    let d = s - t;
                    let l2 = l * l;
                    -2.0 / (s * l2) + d / (s * s * l2) + 2.0 * d / (s * s * l2 * l)
                }
            }
        }
    }

    /// `d^2 Theta / ds dt`.
    pub fn d_first_second(self, s: f64, t: f64) -> f64 {
        match self {
            ThetaKind::Arithmetic => 0.0,
            ThetaKind::Logarithmic => {
                if near_diagonal(s, t) {
                    let lr = (s / t).ln();
                    gauss_legendre_unit(|u| u * (1.0 - u) * ((u - 1.0) * lr).exp()) / t
                } else {
                    let l = s.ln() - t.ln();
                    let d = s - t;
                    let l2 = l * l;
                    1.0 / (s * l2) + 1.0 / (t * l2) - 2.0 * d / (s * t * l2 * l)
                }
            }
        }
    }
}

/// Checked mean of two nonnegative masses.
pub fn theta(kind: ThetaKind, a: f64, b: f64) -> Result<f64> {
    if a < 0.0 || b < 0.0 || a.is_nan() || b.is_nan() {
        return Err(Error::NegativeTheta(a, b));
    }
    Ok(kind.value(a, b))
}

/// Edge means `theta_e(rho)` for every canonical edge.
pub fn edge_thetas(g: &Graph, rho: &Array1<f64>, kind: ThetaKind) -> Array1<f64> {
    g.edges.iter().map(|e| kind.value(rho[e.i], rho[e.j])).collect()
}

pub fn gradient(g: &Graph, s: &Array1<f64>) -> Result<EdgeField> {
    g.check_len(s.len())?;
    if let Some(k) = s.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(k));
    }
    Ok(EdgeField(g.edges.iter().map(|e| e.omega.sqrt() * (s[e.i] - s[e.j])).collect()))
}

pub fn divergence(g: &Graph, rho: &Array1<f64>, f: &EdgeField, kind: ThetaKind) -> Result<Array1<f64>> {
    g.check_len(rho.len())?;
    if f.0.len() != g.edge_count() {
        return Err(Error::DimensionMismatch { expected: g.edge_count(), got: f.0.len() });
    }
    let mut out = Array1::zeros(g.n);
    for (e, &v) in g.edges.iter().zip(f.0.iter()) {
        let flux = e.omega.sqrt() * v * kind.value(rho[e.i], rho[e.j]);
        out[e.i] -= flux;
        out[e.j] += flux;
    }
    Ok(out)
}

pub fn inner_product(g: &Graph, rho: &Array1<f64>, u: &EdgeField, v: &EdgeField, kind: ThetaKind) -> Result<f64> {
    g.check_len(rho.len())?;
    for f in [u, v] {
        if f.0.len() != g.edge_count() {
            return Err(Error::DimensionMismatch { expected: g.edge_count(), got: f.0.len() });
        }
    }
    Ok(g.edges.iter().enumerate().map(|(k, e)| u.0[k] * v.0[k] * kind.value(rho[e.i], rho[e.j]) * e.omega).sum())
}

/// Partition of the nodes into maximal sets joined by edges with
/// `theta_e(rho) > tol`. Blocks are sorted and ordered by their smallest node.
pub fn theta_connected_components(g: &Graph, rho: &Array1<f64>, kind: ThetaKind, tol: f64) -> Vec<Vec<usize>> {
    let mut label = vec![usize::MAX; g.n];
    let mut blocks = Vec::new();
    for start in 0..g.n {
        if label[start] != usize::MAX {
            continue;
        }
        let id = blocks.len();
        let mut block = vec![start];
        label[start] = id;
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &(nb, _) in &g.adjacency[v] {
                if label[nb] == usize::MAX && kind.value(rho[v], rho[nb]) > tol {
                    label[nb] = id;
                    block.push(nb);
                    queue.push_back(nb);
                }
            }
        }
        block.sort_unstable();
        blocks.push(block);
    }
    blocks
}
