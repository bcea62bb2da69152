//! Dynamic optimal transport on a graph under Wong–Zakai common noise.
//!
//! The time grid has `M` intervals of width `h = 1/M`. On interval `k` the
//! density moves by
//!
//! ```text
//! rho_{k+1} - rho_k + h D (q_k m_k + c_k * a_k) = 0,      a_{k,e} = theta_e(mid_k)
//! ```
//!
//! where `D` is the node-edge incidence matrix (`+1` at the tail `i`, `-1` at
//! the head `j` of the canonical edge `i < j`, so `m_e > 0` drains `i`),
//! `mid_k = (rho_k + rho_{k+1}) / 2`, and `s_k` is the mean Wong–Zakai slope
//! over the interval:
//!
//! * additive noise: `q_k = 1`, `c_{k,e} = w_e (Sigma_j - Sigma_i) s_k`;
//! * special multiplicative noise: `q_k = 1 + eps s_k`, `c = 0`.
//!
//! The action is `A = sum_k h sum_e 1/2 m_{k,e}^2 / (w_e a_{k,e})` with the
//! conventions `y^2/0 = inf` for `y != 0` and `0/0 = 0`. For the arithmetic
//! mean `a` is linear in `rho`, so the problem is a convex program, solved by
//! a diagonally preconditioned primal-dual hybrid gradient iteration with a
//! closed-form perspective proximal step. The multiplier of the continuity
//! rows is the potential `S`; the certificate is an exact lower bound on the
//! optimal action computed from it.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Density, Graph, ThetaKind};
use crate::noise::WongZakaiPath;

/// One node or edge vector per time level or interval.
pub type Path = Vec<Array1<f64>>;

/// Default lower bound on `|1 + eps s_k|` for the special variant.
pub const DEFAULT_SLOPE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "variant")]
pub enum Variant {
    /// Noise enters through the potential `Sigma`.
    Additive { sigma: Vec<f64> },
    /// Noise multiplies the controlled flux with strength `epsilon`.
    Special { epsilon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    #[serde(default = "default_gap_abs")]
    pub tol_gap_abs: f64,
    #[serde(default = "default_gap_rel")]
    pub tol_gap_rel: f64,
    #[serde(default = "default_residual")]
    pub tol_residual: f64,
    #[serde(default = "default_max_iter")]
    pub max_iterations: usize,
    /// Iterations between certificate evaluations.
    #[serde(default = "default_check_every")]
    pub check_every: usize,
    #[serde(default = "default_slope_floor")]
    pub slope_floor: f64,
}

fn default_gap_abs() -> f64 {
    1e-6
}
fn default_gap_rel() -> f64 {
    1e-4
}
fn default_residual() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    200_000
}
fn default_check_every() -> usize {
    100
}
fn default_slope_floor() -> f64 {
    DEFAULT_SLOPE_FLOOR
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tol_gap_abs: default_gap_abs(),
            tol_gap_rel: default_gap_rel(),
            tol_residual: default_residual(),
            max_iterations: default_max_iter(),
            check_every: default_check_every(),
            slope_floor: default_slope_floor(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ControlProblem {
    graph: Graph,
    rho_a: Array1<f64>,
    rho_b: Array1<f64>,
    variant: Variant,
    noise: WongZakaiPath,
    intervals: usize,
    theta: ThetaKind,
    pub options: SolverOptions,
    /// Mean Wong–Zakai slope on each interval.
    slopes: Vec<f64>,
}

impl ControlProblem {
    pub fn new(
        graph: Graph,
        rho_a: &Density,
        rho_b: &Density,
        variant: Variant,
        noise: WongZakaiPath,
        intervals: usize,
    ) -> Result<Self> {
        graph.check_len(rho_a.len())?;
        graph.check_len(rho_b.len())?;
        if intervals == 0 {
            return Err(Error::InvalidParameter("the time grid needs at least one interval".into()));
        }
        if (noise.horizon() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "the noise path must cover [0, 1], got [0, {}]",
                noise.horizon()
            )));
        }
        match &variant {
            Variant::Additive { sigma } => {
                if sigma.len() != graph.node_count() {
                    return Err(Error::DimensionMismatch { expected: graph.node_count(), got: sigma.len() });
                }
                if let Some(k) = sigma.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(k));
                }
            }
            Variant::Special { epsilon } => {
                if !epsilon.is_finite() {
                    return Err(Error::InvalidParameter("epsilon must be finite".into()));
                }
            }
        }
        let h = 1.0 / intervals as f64;
        let slopes = (0..intervals)
            .map(|k| {
                let t0 = k as f64 * h;
                let t1 = if k + 1 == intervals { 1.0 } else { (k + 1) as f64 * h };
                Ok((noise.value(t1)? - noise.value(t0)?) / h)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ControlProblem {
            graph,
            rho_a: (**rho_a).clone(),
            rho_b: (**rho_b).clone(),
            variant,
            noise,
            intervals,
            theta: ThetaKind::Arithmetic,
            options: SolverOptions::default(),
            slopes,
        })
    }

    /// Use a different mean for action and feasibility evaluation; only the
    /// arithmetic mean is accepted by the solver.
    pub fn with_theta(mut self, theta: ThetaKind) -> Self {
        self.theta = theta;
        self
    }

    pub fn with_options(mut self, options: SolverOptions) -> Self {
        self.options = options;
        self
    }

    /// Same problem with a different perturbation strength (special variant).
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        let mut p = self.clone();
        p.variant = Variant::Special { epsilon };
        p
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn rho_a(&self) -> &Array1<f64> {
        &self.rho_a
    }

    pub fn rho_b(&self) -> &Array1<f64> {
        &self.rho_b
    }

    pub fn variant(&self) -> &Variant {
        &self.variant
    }

    pub fn noise(&self) -> &WongZakaiPath {
        &self.noise
    }

    pub fn intervals(&self) -> usize {
        self.intervals
    }

    pub fn h(&self) -> f64 {
        1.0 / self.intervals as f64
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    /// Flux multiplier `q_k`.
    fn q(&self, k: usize) -> f64 {
        match &self.variant {
            Variant::Additive { .. } => 1.0,
            Variant::Special { epsilon } => 1.0 + epsilon * self.slopes[k],
        }
    }

    /// Noise drift coefficient `c_{k,e}`.
    fn c(&self, k: usize, e: usize) -> f64 {
        match &self.variant {
            Variant::Additive { sigma } => {
                let edge = &self.graph.edges()[e];
                edge.omega * (sigma[edge.j] - sigma[edge.i]) * self.slopes[k]
            }
            Variant::Special { .. } => 0.0,
        }
    }

    fn check_slopes(&self) -> Result<()> {
        if let Variant::Special { .. } = self.variant {
            for k in 0..self.intervals {
                let q = self.q(k);
                if q.abs() < self.options.slope_floor {
                    return Err(Error::DegenerateSlope { interval: k, value: q.abs() });
                }
            }
        }
        Ok(())
    }

    fn thetas(&self, rho0: &Array1<f64>, rho1: &Array1<f64>) -> Array1<f64> {
        let mid = (rho0 + rho1) * 0.5;
        Array1::from_iter(self.graph.edges().iter().map(|e| self.theta.value(mid[e.i].max(0.0), mid[e.j].max(0.0))))
    }

    fn check_paths(&self, rho: &[Array1<f64>], m: &[Array1<f64>]) -> Result<()> {
        if rho.len() != self.intervals + 1 || m.len() != self.intervals {
            return Err(Error::InvalidParameter(format!(
                "paths must have {} density slices and {} flux slices",
                self.intervals + 1,
                self.intervals
            )));
        }
        for r in rho {
            self.graph.check_len(r.len())?;
        }
        for f in m {
            if f.len() != self.graph.edge_count() {
                return Err(Error::DimensionMismatch { expected: self.graph.edge_count(), got: f.len() });
            }
        }
        Ok(())
    }
}

/// `L(x, y) = y^2 / x`, `L(0, 0) = 0`, `+inf` otherwise.
pub fn perspective(x: f64, y: f64) -> f64 {
    if x > 0.0 {
        y * y / x
    } else if y == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Action of a path; `+inf` when flux crosses an edge with zero mean.
pub fn action(problem: &ControlProblem, rho: &[Array1<f64>], m: &[Array1<f64>]) -> Result<f64> {
    problem.check_paths(rho, m)?;
    let h = problem.h();
    let mut total = 0.0;
    for k in 0..problem.intervals {
        let th = problem.thetas(&rho[k], &rho[k + 1]);
        for (e, edge) in problem.graph.edges().iter().enumerate() {
            total += h * 0.5 * perspective(edge.omega * th[e], m[k][e]);
        }
    }
    Ok(total)
}

/// Max-norm residual of `(rho_{k+1} - rho_k)/h + D (q_k m_k + c_k a_k)` over all intervals.
pub fn constraint_residual(problem: &ControlProblem, rho: &[Array1<f64>], m: &[Array1<f64>]) -> Result<f64> {
    problem.check_paths(rho, m)?;
    let h = problem.h();
    let mut worst: f64 = 0.0;
    for k in 0..problem.intervals {
        let th = problem.thetas(&rho[k], &rho[k + 1]);
        let mut r = (&rho[k + 1] - &rho[k]) / h;
        let q = problem.q(k);
        for (e, edge) in problem.graph.edges().iter().enumerate() {
            let flux = q * m[k][e] + problem.c(k, e) * th[e];
            r[edge.i] += flux;
            r[edge.j] -= flux;
        }
        worst = r.iter().fold(worst, |w, v| w.max(v.abs()));
    }
    Ok(worst)
}

/// Spanning tree in BFS order: `(order, parent edge of each node)`.
fn bfs_tree(g: &Graph) -> (Vec<usize>, Vec<Option<usize>>) {
    let n = g.node_count();
    let mut order = vec![0];
    let mut parent = vec![None; n];
    let mut seen = vec![false; n];
    seen[0] = true;
    let mut head = 0;
    while head < order.len() {
        let v = order[head];
        head += 1;
        for &(nb, e) in g.neighbours(v) {
            if !seen[nb] {
                seen[nb] = true;
                parent[nb] = Some(e);
                order.push(nb);
            }
        }
    }
    (order, parent)
}

/// Edge flux `f` with `D f = div` on a spanning tree (`div` must sum to zero).
fn tree_flux(g: &Graph, order: &[usize], parent: &[Option<usize>], div: &Array1<f64>) -> Array1<f64> {
    let mut excess = div.clone();
    let mut f = Array1::zeros(g.edge_count());
    for &v in order.iter().skip(1).rev() {
        let e = parent[v].expect("non-root nodes have a parent edge");
        let edge = &g.edges()[e];
        // Node v must send out `excess[v]` through its parent edge.
        let sign = if edge.i == v { 1.0 } else { -1.0 };
        f[e] = sign * excess[v];
        let other = if edge.i == v { edge.j } else { edge.i };
        excess[other] += excess[v];
        excess[v] = 0.0;
    }
    f
}

/// Convert a transfer flux `f` (with `D f = -(rho_{k+1} - rho_k)/h`) into the
/// control that realises it under the noise.
fn control_from_transfer(problem: &ControlProblem, k: usize, f: &Array1<f64>, th: &Array1<f64>) -> Array1<f64> {
    let q = problem.q(k);
    Array1::from_iter((0..f.len()).map(|e| (f[e] - problem.c(k, e) * th[e]) / q))
}

/// A feasible path with finite action between any two densities.
///
/// Two nodes: hold `rho_a`, then ramp linearly over the last `delta`.
/// More nodes: hold `rho_a`, then pass through the uniform density, so every
/// transfer interval has one interior endpoint and all edge means are
/// positive; fluxes are routed on a spanning tree. In both cases the control
/// cancels the noise drift, so `m = 0` wherever nothing moves and `Sigma = 0`.
pub fn feasible_path(problem: &ControlProblem) -> Result<(Path, Path)> {
    problem.check_slopes()?;
    let g = &problem.graph;
    let n = g.node_count();
    let m_int = problem.intervals;
    let h = problem.h();
    let ramp = ((problem.noise.delta() / h).round() as usize).clamp(1, m_int);

    let mut rho = vec![problem.rho_a.clone(); m_int + 1];
    if problem.rho_a != problem.rho_b {
        if n == 2 || m_int < 2 {
            let start = m_int - ramp;
            for k in start + 1..=m_int {
                let lam = (k - start) as f64 / ramp as f64;
                rho[k] = &problem.rho_a * (1.0 - lam) + &problem.rho_b * lam;
            }
        } else {
            let ramp = ramp.min(m_int / 2);
            let uniform = Array1::from_elem(n, 1.0 / n as f64);
            let mid = m_int - ramp;
            let start = mid - ramp;
            for k in start + 1..=mid {
                let lam = (k - start) as f64 / ramp as f64;
                rho[k] = &problem.rho_a * (1.0 - lam) + &uniform * lam;
            }
            for k in mid + 1..=m_int {
                let lam = (k - mid) as f64 / ramp as f64;
                rho[k] = &uniform * (1.0 - lam) + &problem.rho_b * lam;
            }
        }
        rho[m_int] = problem.rho_b.clone();
    }

    let (order, parent) = bfs_tree(g);
    let mut m = Vec::with_capacity(m_int);
    for k in 0..m_int {
        let th = problem.thetas(&rho[k], &rho[k + 1]);
        let div = -(&rho[k + 1] - &rho[k]) / h;
        let f = tree_flux(g, &order, &parent, &div);
        m.push(control_from_transfer(problem, k, &f, &th));
    }
    Ok((rho, m))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlSolution {
    /// Densities at the grid times `t_0, ..., t_M`.
    pub rho: Vec<Array1<f64>>,
    /// Controls on each interval, one value per canonical edge.
    pub m: Vec<Array1<f64>>,
    /// Multiplier of the continuity equation on each interval.
    pub s: Vec<Array1<f64>>,
    /// Normalised potentials at `t = 0` and `t = 1` realising the dual value.
    pub s_start: Array1<f64>,
    pub s_end: Array1<f64>,
    pub action: f64,
    /// `<S(1), rho_b> - <S(0), rho_a>`, a lower bound on the optimal action.
    pub dual_value: f64,
    pub gap: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Dual value of the multiplier path and the normalised end potentials.
fn dual_bound(problem: &ControlProblem, phi: &[Array1<f64>]) -> (f64, Array1<f64>, Array1<f64>) {
    let g = &problem.graph;
    let h = problem.h();
    let m_int = problem.intervals;
    // G_{k,e} = 1/2 w q^2 dphi^2 - c dphi, dphi = phi_i - phi_j.
    let node_g: Vec<Array1<f64>> = (0..m_int)
        .map(|k| {
            let q = problem.q(k);
            let mut acc = Array1::zeros(g.node_count());
            for (e, edge) in g.edges().iter().enumerate() {
                let d = phi[k][edge.i] - phi[k][edge.j];
                let val = 0.5 * edge.omega * q * q * d * d - problem.c(k, e) * d;
                acc[edge.i] += val;
                acc[edge.j] += val;
            }
            acc
        })
        .collect();
    let mut shift = 0.0;
    for k in 1..m_int {
        let coeff = -(&phi[k] - &phi[k - 1]) - (&node_g[k - 1] + &node_g[k]) * (0.25 * h);
        shift += coeff.iter().cloned().fold(f64::INFINITY, f64::min);
    }
    let s_start = &phi[0] + &(&node_g[0] * (0.25 * h));
    let s_end = &phi[m_int - 1] - &(&node_g[m_int - 1] * (0.25 * h)) + shift;
    let value = s_end.dot(&problem.rho_b) - s_start.dot(&problem.rho_a);
    (value, s_start, s_end)
}

/// Stationarity residual of the optimality system at interior points:
/// the Hamilton–Jacobi equation for the multiplier (up to the gauge constant)
/// at grid times with `min rho > floor`, and the flux law `m = w a dS / q^2`
/// form of the continuity equation on intervals whose ends are both interior.
/// Returns `None` when no point qualifies.
pub fn stationarity_residual(problem: &ControlProblem, sol: &ControlSolution, floor: f64) -> Option<f64> {
    let g = &problem.graph;
    let h = problem.h();
    let m_int = problem.intervals;
    let interior = |r: &Array1<f64>| r.iter().all(|&v| v > floor);
    let mut worst: Option<f64> = None;
    let mut bump = |v: f64| worst = Some(worst.map_or(v, |w: f64| w.max(v)));
    let node_g: Vec<Array1<f64>> = (0..m_int)
        .map(|k| {
            let q = problem.q(k);
            let mut acc = Array1::zeros(g.node_count());
            for (e, edge) in g.edges().iter().enumerate() {
                let d = sol.s[k][edge.i] - sol.s[k][edge.j];
                let val = 0.5 * edge.omega * q * q * d * d - problem.c(k, e) * d;
                acc[edge.i] += val;
                acc[edge.j] += val;
            }
            acc
        })
        .collect();
    for k in 1..m_int {
        if !interior(&sol.rho[k]) {
            continue;
        }
        let coeff = (&sol.s[k] - &sol.s[k - 1]) / h + (&node_g[k - 1] + &node_g[k]) * 0.25;
        let gauge = coeff.dot(&sol.rho[k]);
        bump(coeff.iter().fold(0.0f64, |w, v| w.max((v - gauge).abs())));
    }
    for k in 0..m_int {
        if !(interior(&sol.rho[k]) && interior(&sol.rho[k + 1])) {
            continue;
        }
        let th = problem.thetas(&sol.rho[k], &sol.rho[k + 1]);
        let q = problem.q(k);
        let mut r = (&sol.rho[k + 1] - &sol.rho[k]) / h;
        for (e, edge) in g.edges().iter().enumerate() {
            let d = sol.s[k][edge.i] - sol.s[k][edge.j];
            let flux = -edge.omega * th[e] * q * q * d + problem.c(k, e) * th[e];
            r[edge.i] += flux;
            r[edge.j] -= flux;
        }
        bump(r.iter().fold(0.0f64, |w, v| w.max(v.abs())));
    }
    worst
}

/// Gap between the action of a solution and the dual value of its multiplier.
pub fn duality_gap(problem: &ControlProblem, sol: &ControlSolution) -> Result<f64> {
    let a = action(problem, &sol.rho, &sol.m)?;
    Ok(a - dual_bound(problem, &sol.s).0)
}

/// Projection onto the probability simplex.
fn project_simplex(v: &Array1<f64>) -> Array1<f64> {
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &x) in u.iter().enumerate() {
        cum += x;
        let t = (cum - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            tau = t;
        }
    }
    v.mapv(|x| (x - tau).max(0.0))
}

/// Proximal map of `(a, m) -> kappa m^2 / (2a)` with steps `ta`, `tm`.
fn perspective_prox(a0: f64, m0: f64, kappa: f64, ta: f64, tm: f64) -> (f64, f64) {
    let gm = kappa * tm;
    let c = 0.5 * ta * kappa * m0 * m0;
    if c == 0.0 {
        return (a0.max(0.0), 0.0);
    }
    // Root of p(a) = (a - a0)(a + gm)^2 - c on a > max(a0, 0); none if p(0) >= 0.
    if -a0 * gm * gm - c >= 0.0 {
        return (0.0, 0.0);
    }
    let lo = a0.max(0.0);
    let mut a = lo + (c.cbrt()).min(c / (gm * gm));
    for _ in 0..100 {
        let w = a + gm;
        let p = (a - a0) * w * w - c;
        let dp = w * w + 2.0 * (a - a0) * w;
        let next = a - p / dp;
        if !(next < a) || next <= lo {
            break;
        }
        let done = a - next <= 1e-15 * a;
        a = next;
        if done {
            break;
        }
    }
    (a, m0 * a / (a + gm))
}

/// Densities and fluxes handed to the polish step.
struct Iterate {
    rho: Vec<Array1<f64>>,
    m: Vec<Array1<f64>>,
}

struct Pdhg<'p> {
    p: &'p ControlProblem,
    kappa: Vec<f64>,
    c: Vec<Array1<f64>>,
    tau_rho: Array1<f64>,
    flat: FlatCoefficients,
}

/// Row-major copies of the step data for the allocation-free inner loop.
struct FlatCoefficients {
    edges: Vec<(usize, usize, f64)>,
    c: Vec<f64>,
    kappa_edge: Vec<f64>,
    tau_a: Vec<f64>,
    tau_m: Vec<f64>,
    sig_cont: Vec<f64>,
    sig_avg: Vec<f64>,
}

/// Iterate stored row-major: `rho` is `(M + 1) x N`, `a` and `m` are `M x E`.
#[derive(Clone)]
struct FlatIterate {
    rho: Vec<f64>,
    a: Vec<f64>,
    m: Vec<f64>,
}

fn flatten(rows: &[Array1<f64>]) -> Vec<f64> {
    rows.iter().flat_map(|r| r.iter().copied()).collect()
}

fn unflatten(flat: &[f64], width: usize) -> Vec<Array1<f64>> {
    flat.chunks(width).map(|c| Array1::from_vec(c.to_vec())).collect()
}

impl<'p> Pdhg<'p> {
    fn new(p: &'p ControlProblem) -> Self {
        let g = &p.graph;
        let (n, ne, mi) = (g.node_count(), g.edge_count(), p.intervals);
        let h = p.h();
        let kappa: Vec<f64> = (0..mi).map(|k| 1.0 / (p.q(k) * p.q(k))).collect();
        let c: Vec<Array1<f64>> = (0..mi).map(|k| Array1::from_iter((0..ne).map(|e| p.c(k, e)))).collect();
        let degree = Array1::from_iter((0..n).map(|i| g.neighbours(i).len() as f64));
        let tau_rho = degree.mapv(|d| 1.0 / (2.0 + 0.5 * d));
        let tau_a: Vec<Array1<f64>> = c.iter().map(|ck| ck.mapv(|v| 1.0 / (1.0 + 2.0 * h * v.abs()))).collect();
        let tau_m: Vec<Array1<f64>> = vec![Array1::from_elem(ne, 1.0 / (2.0 * h)); mi];
        let sig_cont: Vec<Array1<f64>> = (0..mi)
            .map(|k| {
                let unknown = (k >= 1) as usize as f64 + (k + 1 < mi) as usize as f64;
                let mut row = Array1::from_elem(n, unknown);
                for (e, edge) in g.edges().iter().enumerate() {
                    let w = h * (1.0 + c[k][e].abs());
                    row[edge.i] += w;
                    row[edge.j] += w;
                }
                row.mapv(|v| if v > 0.0 { 1.0 / v } else { 0.0 })
            })
            .collect();
        let sig_avg: Vec<Array1<f64>> = (0..mi)
            .map(|k| {
                let unknown = (k >= 1) as usize as f64 + (k + 1 < mi) as usize as f64;
                Array1::from_elem(ne, 1.0 / (1.0 + 0.5 * unknown))
            })
            .collect();
        let flat = FlatCoefficients {
            edges: g.edges().iter().map(|e| (e.i, e.j, e.omega)).collect(),
            c: flatten(&c),
            kappa_edge: (0..mi)
                .flat_map(|k| g.edges().iter().map(move |e| (k, e.omega)))
                .map(|(k, w)| h * kappa[k] / w)
                .collect(),
            tau_a: flatten(&tau_a),
            tau_m: flatten(&tau_m),
            sig_cont: flatten(&sig_cont),
            sig_avg: flatten(&sig_avg),
        };
        Pdhg { p, kappa, c, tau_rho, flat }
    }

    fn avg(&self, r0: &Array1<f64>, r1: &Array1<f64>) -> Array1<f64> {
        Array1::from_iter(self.p.graph.edges().iter().map(|e| 0.25 * (r0[e.i] + r0[e.j] + r1[e.i] + r1[e.j])))
    }

    /// One primal step from `x` into `out`, then the dual ascent on `phi`
    /// and `psi` at the extrapolated point `2 out - x`.
    fn iterate(&self, x: &FlatIterate, out: &mut FlatIterate, phi: &mut [f64], psi: &mut [f64], scratch: &mut [f64]) {
        let f = &self.flat;
        let n = self.p.graph.node_count();
        let ne = f.edges.len();
        let (mi, h) = (self.p.intervals, self.p.h());
        out.rho[..n].copy_from_slice(&x.rho[..n]);
        out.rho[mi * n..].copy_from_slice(&x.rho[mi * n..]);
        for k in 1..mi {
            let grad = &mut scratch[..n];
            for i in 0..n {
                grad[i] = phi[(k - 1) * n + i] - phi[k * n + i];
            }
            for (e, &(i, j, _)) in f.edges.iter().enumerate() {
                let s = 0.25 * (psi[(k - 1) * ne + e] + psi[k * ne + e]);
                grad[i] -= s;
                grad[j] -= s;
            }
            for i in 0..n {
                out.rho[k * n + i] = (x.rho[k * n + i] - self.tau_rho[i] * grad[i]).max(0.0);
            }
        }
        for k in 0..mi {
            for (e, &(i, j, _)) in f.edges.iter().enumerate() {
                let idx = k * ne + e;
                let dphi = phi[k * n + i] - phi[k * n + j];
                let ga = h * f.c[idx] * dphi + psi[idx];
                let gm = h * dphi;
                let (ta, tm) = (f.tau_a[idx], f.tau_m[idx]);
                let (an, mn) = perspective_prox(x.a[idx] - ta * ga, x.m[idx] - tm * gm, f.kappa_edge[idx], ta, tm);
                out.a[idx] = an;
                out.m[idx] = mn;
            }
        }
        let bar = |new: &[f64], old: &[f64], idx: usize| 2.0 * new[idx] - old[idx];
        for k in 0..mi {
            let r = &mut scratch[..n];
            for i in 0..n {
                r[i] = bar(&out.rho, &x.rho, (k + 1) * n + i) - bar(&out.rho, &x.rho, k * n + i);
            }
            for (e, &(i, j, _)) in f.edges.iter().enumerate() {
                let idx = k * ne + e;
                let a = bar(&out.a, &x.a, idx);
                let flux = h * (bar(&out.m, &x.m, idx) + f.c[idx] * a);
                r[i] += flux;
                r[j] -= flux;
                let mean = 0.25
                    * (bar(&out.rho, &x.rho, k * n + i)
                        + bar(&out.rho, &x.rho, k * n + j)
                        + bar(&out.rho, &x.rho, (k + 1) * n + i)
                        + bar(&out.rho, &x.rho, (k + 1) * n + j));
                psi[idx] += f.sig_avg[idx] * (a - mean);
            }
            for i in 0..n {
                phi[k * n + i] += f.sig_cont[k * n + i] * r[i];
            }
        }
    }

    /// Feasible point near `x`: simplex densities, exact means, and the
    /// least-squares flux correction in the action metric.
    fn polish(&self, x: &Iterate) -> (Vec<Array1<f64>>, Vec<Array1<f64>>) {
        let p = self.p;
        let g = &p.graph;
        let (mi, h) = (p.intervals, p.h());
        let mut rho = x.rho.clone();
        for r in rho.iter_mut().take(mi).skip(1) {
            *r = project_simplex(r);
        }
        let mut mhat = Vec::with_capacity(mi);
        for k in 0..mi {
            let th = p.thetas(&rho[k], &rho[k + 1]);
            let weight =
                Array1::from_iter(g.edges().iter().enumerate().map(|(e, edge)| edge.omega * th[e] / self.kappa[k]));
            let mut f = Array1::from_iter((0..g.edge_count()).map(|e| if th[e] > 0.0 { x.m[k][e] } else { 0.0 }));
            for _ in 0..2 {
                let mut r = -(&rho[k + 1] - &rho[k]) / h;
                for (e, edge) in g.edges().iter().enumerate() {
                    let flux = f[e] + self.c[k][e] * th[e];
                    r[edge.i] -= flux;
                    r[edge.j] += flux;
                }
                let psi = weighted_laplacian_solve(g, &weight, &r);
                for (e, edge) in g.edges().iter().enumerate() {
                    f[e] += weight[e] * (psi[edge.i] - psi[edge.j]);
                }
            }
            mhat.push(f);
        }
        let m = mhat.into_iter().enumerate().map(|(k, f)| f / p.q(k)).collect();
        (rho, m)
    }
}

/// Minimum-norm solution of `D W D^T psi = r` restricted to each component of
/// the edges with positive weight (the part of `r` outside the range is dropped).
fn weighted_laplacian_solve(g: &Graph, w: &Array1<f64>, r: &Array1<f64>) -> Array1<f64> {
    let n = g.node_count();
    // Component labels over positive-weight edges.
    let mut label = vec![usize::MAX; n];
    let mut count = 0;
    for s in 0..n {
        if label[s] != usize::MAX {
            continue;
        }
        label[s] = count;
        let mut stack = vec![s];
        while let Some(v) = stack.pop() {
            for &(nb, e) in g.neighbours(v) {
                if w[e] > 0.0 && label[nb] == usize::MAX {
                    label[nb] = count;
                    stack.push(nb);
                }
            }
        }
        count += 1;
    }
    let mut b = r.clone();
    let mut sums = vec![0.0; count];
    let mut sizes = vec![0.0; count];
    for i in 0..n {
        sums[label[i]] += b[i];
        sizes[label[i]] += 1.0;
    }
    for i in 0..n {
        b[i] -= sums[label[i]] / sizes[label[i]];
    }
    let apply = |x: &Array1<f64>| {
        let mut y = Array1::zeros(n);
        for (e, edge) in g.edges().iter().enumerate() {
            let f = w[e] * (x[edge.i] - x[edge.j]);
            y[edge.i] += f;
            y[edge.j] -= f;
        }
        y
    };
    let mut x = Array1::zeros(n);
    let mut res = b.clone();
    let mut dir = res.clone();
    let mut rr = res.dot(&res);
    let stop = 1e-32 * b.dot(&b).max(1e-300);
    for _ in 0..(20 * n).max(50) {
        if rr <= stop {
            break;
        }
        let ad = apply(&dir);
        let curv = dir.dot(&ad);
        if !(curv > 0.0) {
            break;
        }
        let alpha = rr / curv;
        x.scaled_add(alpha, &dir);
        res.scaled_add(-alpha, &ad);
        let rr_new = res.dot(&res);
        dir = &res + &(&dir * (rr_new / rr));
        rr = rr_new;
    }
    x
}

fn certify(
    problem: &ControlProblem,
    pd: &Pdhg,
    x: &Iterate,
    phi: &[Array1<f64>],
    iterations: usize,
) -> Result<ControlSolution> {
    let (rho, m) = pd.polish(x);
    let action_value = action(problem, &rho, &m)?;
    let residual = constraint_residual(problem, &rho, &m)?;
    let (dual_value, s_start, s_end) = dual_bound(problem, phi);
    Ok(ControlSolution {
        rho,
        m,
        s: phi.to_vec(),
        s_start,
        s_end,
        action: action_value,
        dual_value,
        gap: action_value - dual_value,
        residual,
        iterations,
    })
}

/// Minimise the action over feasible paths.
pub fn solve(problem: &ControlProblem) -> Result<ControlSolution> {
    if problem.theta != ThetaKind::Arithmetic {
        return Err(Error::SolverThetaKind);
    }
    problem.check_slopes()?;
    let opts = &problem.options;
    let g = &problem.graph;
    let mi = problem.intervals;
    let pd = Pdhg::new(problem);

    let (rho0, m0) = feasible_path(problem)?;
    let a0: Vec<Array1<f64>> = (0..mi).map(|k| pd.avg(&rho0[k], &rho0[k + 1])).collect();
    let mhat0: Vec<Array1<f64>> = m0.iter().enumerate().map(|(k, f)| f * problem.q(k)).collect();
    let n = g.node_count();
    let ne = g.edge_count();
    let mut x = FlatIterate { rho: flatten(&rho0), a: flatten(&a0), m: flatten(&mhat0) };
    let mut next = x.clone();
    let mut phi = vec![0.0; mi * n];
    let mut psi = vec![0.0; mi * ne];
    let mut scratch = vec![0.0; n];

    let mut best: Option<ControlSolution> = None;
    let mut iterations = 0;
    loop {
        let rows = Iterate { rho: unflatten(&x.rho, n), m: unflatten(&x.m, ne) };
        let sol = certify(problem, &pd, &rows, &unflatten(&phi, n), iterations)?;
        let tol = opts.tol_gap_abs.max(opts.tol_gap_rel * sol.action.abs());
        let done = sol.gap <= tol && sol.residual <= opts.tol_residual;
        if best.as_ref().is_none_or(|b| certificate_rank(&sol) < certificate_rank(b)) {
            best = Some(sol);
        }
        if done {
            return Ok(best.unwrap());
        }
        if iterations >= opts.max_iterations {
            let b = best.unwrap();
            return Err(Error::NotConverged { iterations, gap: b.gap, residual: b.residual });
        }
        for _ in 0..opts.check_every.max(1) {
            pd.iterate(&x, &mut next, &mut phi, &mut psi, &mut scratch);
            std::mem::swap(&mut x, &mut next);
            iterations += 1;
        }
    }
}

/// Certificates are ranked by feasibility first, then by gap.
fn certificate_rank(sol: &ControlSolution) -> (bool, f64) {
    (sol.residual > 1e-8, sol.gap.max(0.0))
}

/// Solve the multiplicatively perturbed problem; `m = m_hat / (1 + eps s_k)`.
pub fn solve_special(problem: &ControlProblem) -> Result<ControlSolution> {
    match problem.variant {
        Variant::Special { .. } => solve(problem),
        Variant::Additive { .. } => Err(Error::InvalidParameter("solve_special requires the special variant".into())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaRow {
    pub epsilon: f64,
    pub action: f64,
    /// `|A^eps - A^0|`.
    pub deviation: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaStudy {
    pub reference_action: f64,
    pub rows: Vec<GammaRow>,
    /// Whether `deviation` strictly decreases along the table.
    pub monotone: bool,
}

/// Optimal special-variant actions for each `eps`, compared with `eps = 0`.
pub fn gamma_study(problem: &ControlProblem, eps_list: &[f64]) -> Result<GammaStudy> {
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) || eps_list.iter().any(|&e| e < 0.0) {
        return Err(Error::InvalidParameter("epsilon list must be nonnegative and strictly decreasing".into()));
    }
    let reference = solve_special(&problem.with_epsilon(0.0))?;
    let mut rows = Vec::with_capacity(eps_list.len());
    for &eps in eps_list {
        let sol = if eps == 0.0 { reference.clone() } else { solve_special(&problem.with_epsilon(eps))? };
        rows.push(GammaRow {
            epsilon: eps,
            action: sol.action,
            deviation: (sol.action - reference.action).abs(),
            gap: sol.gap,
        });
    }
    let monotone = rows.windows(2).all(|w| w[1].deviation < w[0].deviation);
    Ok(GammaStudy { reference_action: reference.action, rows, monotone })
}
