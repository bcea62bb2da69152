//! Energy functionals on the density manifold and the Hamiltonian pair
//! `(H0, H1)` driving the stochastic flow.
//!
//! ```text
//! K(S, rho) = 1/2 sum_edges w_e (S_i - S_j)^2 theta_e(rho)
//! I(rho)    = sum_edges wt_e (log rho_i - log rho_j)^2 thetat_e(rho)
//! L(rho)    = sum_i (rho_i log rho_i - rho_i)
//! V(rho)    = sum_i V_i rho_i,     W(rho) = 1/2 rho^T W rho
//!
//! H0 = a_K K + beta I  + V        + W        - alpha L
//! H1 = eta1 K + eta2 I + eta3 V   + eta4 W   - eta5 L
//! ```
//!
//! Both members of the pair are instances of [`EnergyPart`], which carries
//! the analytic first and second derivatives used by the integrators.
//! The kinetic term is the Dirichlet form whose `S`-gradient is minus the
//! graph divergence of `theta * grad S`, so `d rho / dt = dH/dS` is the
//! continuity equation.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, ThetaKind};

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct H0Coefficients {
    #[serde(default = "one")]
    pub a_k: f64,
    #[serde(default)]
    pub beta: f64,
    #[serde(default)]
    pub alpha: f64,
    /// Linear potential; empty means zero.
    #[serde(default)]
    pub v: Vec<f64>,
    /// Symmetric interaction matrix; empty means zero.
    #[serde(default)]
    pub w: Vec<Vec<f64>>,
}

impl Default for H0Coefficients {
    fn default() -> Self {
        H0Coefficients { a_k: 1.0, beta: 0.0, alpha: 0.0, v: Vec::new(), w: Vec::new() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct H1Coefficients {
    #[serde(default)]
    pub eta1: f64,
    #[serde(default)]
    pub eta2: f64,
    #[serde(default)]
    pub eta3: f64,
    #[serde(default)]
    pub eta4: f64,
    #[serde(default)]
    pub eta5: f64,
    /// When set, `sum_i sigma_i rho_i` replaces `eta3 * V` in `H1`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
}

/// Coefficients of the dominated energy `H0` and the perturbed energy `H1`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSpec {
    /// Mean used by the kinetic term.
    #[serde(default)]
    pub theta: ThetaKind,
    /// Mean used by the Fisher information.
    #[serde(default = "default_theta_tilde")]
    pub theta_tilde: ThetaKind,
    #[serde(default)]
    pub h0: H0Coefficients,
    #[serde(default)]
    pub h1: H1Coefficients,
}

fn default_theta_tilde() -> ThetaKind {
    ThetaKind::Logarithmic
}

impl HamiltonianSpec {
    /// Spec with every coefficient zero, including the kinetic one.
    pub fn zero() -> Self {
        HamiltonianSpec {
            theta: ThetaKind::Arithmetic,
            theta_tilde: ThetaKind::Logarithmic,
            h0: H0Coefficients { a_k: 0.0, ..Default::default() },
            h1: H1Coefficients::default(),
        }
    }

    fn vector(values: &[f64], n: usize, name: &str) -> Result<Array1<f64>> {
        if values.is_empty() {
            return Ok(Array1::zeros(n));
        }
        if values.len() != n {
            return Err(Error::InvalidParameter(format!("{name} has length {}, expected {n}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("{name} has non-finite entries")));
        }
        Ok(Array1::from_vec(values.to_vec()))
    }

    fn interaction(&self, n: usize) -> Result<Option<Array2<f64>>> {
        let w = &self.h0.w;
        if w.is_empty() {
            return Ok(None);
        }
        if w.len() != n || w.iter().any(|row| row.len() != n) {
            return Err(Error::InvalidParameter(format!("interaction matrix must be {n}x{n}")));
        }
        let m = Array2::from_shape_fn((n, n), |(i, j)| w[i][j]);
        for i in 0..n {
            for j in 0..i {
                if m[[i, j]] != m[[j, i]] {
                    return Err(Error::InvalidParameter(format!(
                        "interaction matrix is not symmetric at ({}, {})",
                        i + 1,
                        j + 1
                    )));
                }
            }
        }
        Ok(Some(m))
    }

    pub fn h0_part(&self, n: usize) -> Result<EnergyPart> {
        let c = &self.h0;
        Ok(EnergyPart {
            kinetic: c.a_k,
            fisher: c.beta,
            potential: Self::vector(&c.v, n, "h0.v")?,
            interaction: self.interaction(n)?,
            entropy: c.alpha,
            theta: self.theta,
            theta_tilde: self.theta_tilde,
        })
    }

    pub fn h1_part(&self, n: usize) -> Result<EnergyPart> {
        let c = &self.h1;
        let potential = match &c.sigma {
            Some(sigma) => Self::vector(sigma, n, "h1.sigma")?,
            None => Self::vector(&self.h0.v, n, "h0.v")? * c.eta3,
        };
        Ok(EnergyPart {
            kinetic: c.eta1,
            fisher: c.eta2,
            potential,
            interaction: self.interaction(n)?.map(|w| w * c.eta4),
            entropy: c.eta5,
            theta: self.theta,
            theta_tilde: self.theta_tilde,
        })
    }

    /// Both parts, validated against the graph.
    pub fn parts(&self, g: &Graph) -> Result<(EnergyPart, EnergyPart)> {
        Ok((self.h0_part(g.node_count())?, self.h1_part(g.node_count())?))
    }
}

/// One energy of the form
/// `kinetic K + fisher I + <potential, rho> + 1/2 rho^T interaction rho - entropy L`.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyPart {
    pub kinetic: f64,
    pub fisher: f64,
    pub potential: Array1<f64>,
    pub interaction: Option<Array2<f64>>,
    pub entropy: f64,
    pub theta: ThetaKind,
    pub theta_tilde: ThetaKind,
}

/// Second derivatives of an energy at `(rho, S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianBlocks {
    /// `d^2 H / dS_a dS_b`
    pub ss: Array2<f64>,
    /// `d^2 H / dS_a drho_b`
    pub s_rho: Array2<f64>,
    /// `d^2 H / drho_a drho_b`
    pub rho_rho: Array2<f64>,
}

fn check_interior(rho: &Array1<f64>) -> Result<()> {
    match rho.iter().position(|&v| !(v > 0.0)) {
        Some(node) => Err(Error::Boundary { node, value: rho[node] }),
        None => Ok(()),
    }
}

/// Kinetic energy `1/2 sum_e w_e (S_i - S_j)^2 theta_e(rho)`.
pub fn kinetic(g: &Graph, rho: &Array1<f64>, s: &Array1<f64>, kind: ThetaKind) -> f64 {
    0.5 * g
        .edges()
        .iter()
        .map(|e| {
            let ds = s[e.i] - s[e.j];
            e.omega * ds * ds * kind.value(rho[e.i], rho[e.j])
        })
        .sum::<f64>()
}

/// Discrete Fisher information. With the logarithmic mean this is
/// `sum_e wt_e (log rho_i - log rho_j)(rho_i - rho_j)`.
pub fn fisher(g: &Graph, rho: &Array1<f64>, theta_tilde: ThetaKind) -> Result<f64> {
    check_interior(rho)?;
    Ok(g.edges()
        .iter()
        .map(|e| {
            let (a, b) = (rho[e.i], rho[e.j]);
            let dl = a.ln() - b.ln();
            match theta_tilde {
                ThetaKind::Logarithmic => e.omega_tilde * dl * (a - b),
                kind => e.omega_tilde * dl * dl * kind.value(a, b),
            }
        })
        .sum())
}

/// Discrete entropy with `0 log 0 = 0`.
pub fn entropy(rho: &Array1<f64>) -> f64 {
    rho.iter().map(|&r| if r > 0.0 { r * r.ln() - r } else { -r }).sum()
}

/// `dL/drho_i = log rho_i`; undefined on the boundary.
pub fn entropy_gradient(rho: &Array1<f64>) -> Result<Array1<f64>> {
    check_interior(rho)?;
    Ok(rho.mapv(f64::ln))
}

/// Values `(H0, H1)` at `(rho, S)`.
pub fn hamiltonian_value(spec: &HamiltonianSpec, g: &Graph, rho: &Array1<f64>, s: &Array1<f64>) -> Result<(f64, f64)> {
    let (h0, h1) = spec.parts(g)?;
    Ok((h0.value(g, rho, s)?, h1.value(g, rho, s)?))
}

pub fn grad_s(part: &EnergyPart, g: &Graph, rho: &Array1<f64>, s: &Array1<f64>) -> Array1<f64> {
    part.grad_s(g, rho, s)
}

pub fn grad_rho(part: &EnergyPart, g: &Graph, rho: &Array1<f64>, s: &Array1<f64>) -> Result<Array1<f64>> {
    part.grad_rho(g, rho, s)
}

pub fn hessian_blocks(part: &EnergyPart, g: &Graph, rho: &Array1<f64>, s: &Array1<f64>) -> Result<HessianBlocks> {
    part.hessian_blocks(g, rho, s)
}

/// Canonical bracket `{A, B} = sum_i dA/drho_i dB/dS_i - dA/dS_i dB/drho_i`.
pub fn poisson_bracket(a: &EnergyPart, b: &EnergyPart, g: &Graph, rho: &Array1<f64>, s: &Array1<f64>) -> Result<f64> {
    let ar = a.grad_rho(g, rho, s)?;
    let br = b.grad_rho(g, rho, s)?;
    let as_ = a.grad_s(g, rho, s);
    let bs = b.grad_s(g, rho, s);
    Ok(ar.dot(&bs) - as_.dot(&br))
}

impl EnergyPart {
    pub fn zero(n: usize) -> Self {
        EnergyPart {
            kinetic: 0.0,
            fisher: 0.0,
            potential: Array1::zeros(n),
            interaction: None,
            entropy: 0.0,
            theta: ThetaKind::Arithmetic,
            theta_tilde: ThetaKind::Logarithmic,
        }
    }

    /// `c * self`, coefficient-wise.
    pub fn scaled(&self, c: f64) -> Self {
        EnergyPart {
            kinetic: c * self.kinetic,
            fisher: c * self.fisher,
            potential: &self.potential * c,
            interaction: self.interaction.as_ref().map(|w| w * c),
            entropy: c * self.entropy,
            theta: self.theta,
            theta_tilde: self.theta_tilde,
        }
    }

    /// True if the part has no `S` dependence.
    pub fn is_s_independent(&self) -> bool {
        self.kinetic == 0.0
    }

    /// True when derivatives in `rho` need strictly positive masses.
    pub fn needs_interior(&self) -> bool {
        self.fisher != 0.0 || self.entropy != 0.0 || (self.kinetic != 0.0 && self.theta == ThetaKind::Logarithmic)
    }

    pub fn value(&self, g: &Graph, rho: &Array1<f64>, s: &Array1<f64>) -> Result<f64> {
        g.check_len(rho.len())?;
        g.check_len(s.len())?;
        let mut total = self.potential.dot(rho);
        if self.kinetic != 0.0 {
            total += self.kinetic * kinetic(g, rho, s, self.theta);
        }
        if self.fisher != 0.0 {
            total += self.fisher * fisher(g, rho, self.theta_tilde)?;
        }
        if let Some(w) = &self.interaction {
            total += 0.5 * rho.dot(&w.dot(rho));
        }
        if self.entropy != 0.0 {
            if rho.iter().any(|&r| r < 0.0) {
                let node = rho.iter().position(|&r| r < 0.0).unwrap();
                return Err(Error::Boundary { node, value: rho[node] });
            }
            total -= self.entropy * entropy(rho);
        }
        Ok(total)
    }

    pub fn grad_s(&self, g: &Graph, rho: &Array1<f64>, s: &Array1<f64>) -> Array1<f64> {
        let mut out = Array1::zeros(g.node_count());
        if self.kinetic == 0.0 {
            return out;
        }
        for e in g.edges() {
            let flux = self.kinetic * e.omega * (s[e.i] - s[e.j]) * self.theta.value(rho[e.i], rho[e.j]);
            out[e.i] += flux;
            out[e.j] -= flux;
        }
        out
    }

    pub fn grad_rho(&self, g: &Graph, rho: &Array1<f64>, s: &Array1<f64>) -> Result<Array1<f64>> {
        if self.needs_interior() {
            check_interior(rho)?;
        }
        let mut out = self.potential.clone();
        if let Some(w) = &self.interaction {
            out += &w.dot(rho);
        }
        if self.entropy != 0.0 {
            out.zip_mut_with(rho, |o, &r| *o -= self.entropy * r.ln());
        }
        for e in g.edges() {
            let (a, b) = (rho[e.i], rho[e.j]);
            if self.kinetic != 0.0 {
                let ds = s[e.i] - s[e.j];
                let c = 0.5 * self.kinetic * e.omega * ds * ds;
                out[e.i] += c * self.theta.d_first(a, b);
                out[e.j] += c * self.theta.d_first(b, a);
            }
            if self.fisher != 0.0 {
                let c = self.fisher * e.omega_tilde;
                let dl = a.ln() - b.ln();
                match self.theta_tilde {
                    ThetaKind::Logarithmic => {
                        out[e.i] += c * (dl + (a - b) / a);
                        out[e.j] += c * (-dl + (b - a) / b);
                    }
                    kind => {
                        let th = kind.value(a, b);
                        out[e.i] += c * (2.0 * dl * th / a + dl * dl * kind.d_first(a, b));
                        out[e.j] += c * (-2.0 * dl * th / b + dl * dl * kind.d_first(b, a));
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn hessian_blocks(&self, g: &Graph, rho: &Array1<f64>, s: &Array1<f64>) -> Result<HessianBlocks> {
        if self.needs_interior() {
            check_interior(rho)?;
        }
        let n = g.node_count();
        let mut ss = Array2::zeros((n, n));
        let mut s_rho = Array2::zeros((n, n));
        let mut rho_rho = match &self.interaction {
            Some(w) => w.clone(),
            None => Array2::zeros((n, n)),
        };
        if self.entropy != 0.0 {
            for i in 0..n {
                rho_rho[[i, i]] -= self.entropy / rho[i];
            }
        }
        for e in g.edges() {
            let (i, j) = (e.i, e.j);
            let (a, b) = (rho[i], rho[j]);
            if self.kinetic != 0.0 {
                let k = self.kinetic * e.omega;
                let th = self.theta.value(a, b);
                ss[[i, i]] += k * th;
                ss[[j, j]] += k * th;
                ss[[i, j]] -= k * th;
                ss[[j, i]] -= k * th;

                let ds = s[i] - s[j];
                let (ti, tj) = (self.theta.d_first(a, b), self.theta.d_first(b, a));
                s_rho[[i, i]] += k * ds * ti;
                s_rho[[i, j]] += k * ds * tj;
                s_rho[[j, i]] -= k * ds * ti;
                s_rho[[j, j]] -= k * ds * tj;

                let c = 0.5 * k * ds * ds;
                if c != 0.0 && self.theta != ThetaKind::Arithmetic {
                    let tij = self.theta.d_first_second(a, b);
                    rho_rho[[i, i]] += c * self.theta.d_first_first(a, b);
                    rho_rho[[j, j]] += c * self.theta.d_first_first(b, a);
                    rho_rho[[i, j]] += c * tij;
                    rho_rho[[j, i]] += c * tij;
                }
            }
            if self.fisher != 0.0 {
                let c = self.fisher * e.omega_tilde;
                let (hii, hjj, hij) = match self.theta_tilde {
                    ThetaKind::Logarithmic => (1.0 / a + b / (a * a), 1.0 / b + a / (b * b), -1.0 / a - 1.0 / b),
                    kind => fisher_edge_hessian(kind, a, b),
                };
                rho_rho[[i, i]] += c * hii;
                rho_rho[[j, j]] += c * hjj;
                rho_rho[[i, j]] += c * hij;
                rho_rho[[j, i]] += c * hij;
            }
        }
        Ok(HessianBlocks { ss, s_rho, rho_rho })
    }
}

/// Second derivatives of `(log a - log b)^2 Theta(a, b)` for a generic mean.
fn fisher_edge_hessian(kind: ThetaKind, a: f64, b: f64) -> (f64, f64, f64) {
    let d = a.ln() - b.ln();
    let th = kind.value(a, b);
    let (ta, tb) = (kind.d_first(a, b), kind.d_first(b, a));
    let (taa, tbb) = (kind.d_first_first(a, b), kind.d_first_first(b, a));
    let tab = kind.d_first_second(a, b);
    let haa = 2.0 * th / (a * a) - 2.0 * d * th / (a * a) + 4.0 * d * ta / a + d * d * taa;
    let hbb = 2.0 * th / (b * b) + 2.0 * d * th / (b * b) - 4.0 * d * tb / b + d * d * tbb;
    let hab = -2.0 * th / (a * b) + 2.0 * d * tb / a - 2.0 * d * ta / b + d * d * tab;
    (haa, hbb, hab)
}
