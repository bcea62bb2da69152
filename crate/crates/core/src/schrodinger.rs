//! Madelung coordinates `u = sqrt(rho) e^{iS}` for Schrödinger equations on
//! graphs, the nonlinear graph Laplacian, and the Hamiltonian presets for the
//! common-noise, logarithmic and white-noise-dispersion equations.
//!
//! Time stepping always happens in `(rho, S)`; the complex form is used to
//! cross-check the vector field.

use ndarray::Array1;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::energy::{H0Coefficients, H1Coefficients, HamiltonianSpec};
use crate::error::{Error, Result};
use crate::flow::{Dynamics, State};
use crate::graph::{Density, Graph, PotentialField, ThetaKind};

/// Tolerance on `sum |u_j|^2 = 1`.
pub const WAVE_MASS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction(Array1<Complex64>);

impl WaveFunction {
    pub fn new(values: Array1<Complex64>) -> Result<Self> {
        if let Some(k) = values.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite(k));
        }
        let mass: f64 = values.iter().map(|z| z.norm_sqr()).sum();
        if (mass - 1.0).abs() > WAVE_MASS_TOL {
            return Err(Error::InvalidDensity(format!("wave function has mass {mass}")));
        }
        Ok(WaveFunction(values))
    }

    pub fn values(&self) -> &Array1<Complex64> {
        &self.0
    }

    pub fn mass(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }
}

fn nonzero_amplitude(u: &Array1<Complex64>) -> Result<()> {
    match u.iter().position(|z| z.norm_sqr() == 0.0) {
        Some(node) => Err(Error::Boundary { node, value: 0.0 }),
        None => Ok(()),
    }
}

/// `rho_j = |u_j|^2`, `S_j = arg u_j` in `(-pi, pi]`.
pub fn madelung_forward(u: &WaveFunction) -> Result<(Density, PotentialField)> {
    nonzero_amplitude(&u.0)?;
    let rho = u.0.mapv(|z| z.norm_sqr());
    // The wave function is normalised to 1e-10; project the last few ulps away.
    let total = rho.sum();
    let rho = Density::new(rho / total)?;
    let s = u.0.mapv(|z| {
        let a = z.arg();
        if a == -std::f64::consts::PI {
            std::f64::consts::PI
        } else {
            a
        }
    });
    Ok((rho, PotentialField::new(s)?))
}

/// `u_j = sqrt(rho_j) e^{i S_j}`.
pub fn madelung_inverse(rho: &Density, s: &PotentialField) -> Result<WaveFunction> {
    if rho.len() != s.len() {
        return Err(Error::DimensionMismatch { expected: rho.len(), got: s.len() });
    }
    if let Some(node) = rho.iter().position(|&r| r <= 0.0) {
        return Err(Error::Boundary { node, value: rho[node] });
    }
    let u = Array1::from_iter(rho.iter().zip(s.iter()).map(|(&r, &p)| Complex64::from_polar(r.sqrt(), p)));
    WaveFunction::new(u)
}

/// Nonlinear graph Laplacian
///
/// ```text
/// (Lap u)_j = -u_j ( (1/rho_j) [ i sum_l w theta (S_j - S_l) + sum_l wt thetat (R_j - R_l) ]
///                    + sum_l w dtheta/drho_j (S_j - S_l)^2
///                    + sum_l wt dthetat/drho_j (R_j - R_l)^2 )
/// ```
///
/// with `S = Im log u`, `R = Re log u = 1/2 log rho`. The factor `i` on the
/// phase sum is what makes `i du/dt = -1/2 Lap u + ...` equivalent to the
/// continuity equation for `rho`.
pub fn graph_laplacian(
    g: &Graph,
    u: &Array1<Complex64>,
    theta: ThetaKind,
    theta_tilde: ThetaKind,
) -> Result<Array1<Complex64>> {
    g.check_len(u.len())?;
    nonzero_amplitude(u)?;
    let rho = u.mapv(|z| z.norm_sqr());
    let phase = u.mapv(|z| z.arg());
    let re_log = rho.mapv(|r| 0.5 * r.ln());
    let n = g.node_count();
    let mut phase_sum = Array1::<f64>::zeros(n);
    let mut amp_sum = Array1::<f64>::zeros(n);
    let mut quad = Array1::<f64>::zeros(n);
    for e in g.edges() {
        let (i, j) = (e.i, e.j);
        let (a, b) = (rho[i], rho[j]);
        // Phases come from the principal logarithm of each amplitude, so the
        // operator agrees with the (rho, S) field when S lies in (-pi, pi].
        let ds = phase[i] - phase[j];
        let dr = re_log[i] - re_log[j];
        let th = theta.value(a, b);
        let tt = theta_tilde.value(a, b);
        phase_sum[i] += e.omega * th * ds;
        phase_sum[j] -= e.omega * th * ds;
        amp_sum[i] += e.omega_tilde * tt * dr;
        amp_sum[j] -= e.omega_tilde * tt * dr;
        quad[i] += e.omega * theta.d_first(a, b) * ds * ds + e.omega_tilde * theta_tilde.d_first(a, b) * dr * dr;
        quad[j] += e.omega * theta.d_first(b, a) * ds * ds + e.omega_tilde * theta_tilde.d_first(b, a) * dr * dr;
    }
    Ok(Array1::from_iter((0..n).map(|k| {
        let bracket = Complex64::new(amp_sum[k], phase_sum[k]) / rho[k] + quad[k];
        -u[k] * bracket
    })))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NlsPreset {
    CommonNoise,
    Logarithmic,
    Dispersion,
}

/// Potentials shared by the presets; empty vectors mean zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NlsParams {
    #[serde(default)]
    pub v: Vec<f64>,
    #[serde(default)]
    pub w: Vec<Vec<f64>>,
    #[serde(default)]
    pub sigma: Vec<f64>,
}

/// Coefficients of the Hamiltonian pair behind each Schrödinger preset.
pub fn preset_spec(preset: NlsPreset, params: &NlsParams) -> HamiltonianSpec {
    let h0 = H0Coefficients { a_k: 1.0, beta: 0.125, alpha: 0.0, v: params.v.clone(), w: params.w.clone() };
    let noise = H1Coefficients { sigma: Some(params.sigma.clone()), ..Default::default() };
    let (h0, h1) = match preset {
        NlsPreset::CommonNoise => (h0, noise),
        NlsPreset::Logarithmic => (H0Coefficients { alpha: 1.0, ..h0 }, noise),
        NlsPreset::Dispersion => (
            H0Coefficients { a_k: 0.0, beta: 0.0, ..h0 },
            H1Coefficients { eta1: 1.0, eta2: 0.125, ..Default::default() },
        ),
    };
    HamiltonianSpec { theta: ThetaKind::Arithmetic, theta_tilde: ThetaKind::Logarithmic, h0, h1 }
}

/// Deterministic right-hand side of the complex equation
/// `du/dt = -i ( -1/2 Lap u + u V + u (W |u|^2) - alpha u log|u|^2 )`.
pub fn schrodinger_drift(g: &Graph, u: &Array1<Complex64>, spec: &HamiltonianSpec) -> Result<Array1<Complex64>> {
    let n = g.node_count();
    let (h0, _) = spec.parts(g)?;
    let lap = graph_laplacian(g, u, spec.theta, spec.theta_tilde)?;
    let rho = u.mapv(|z| z.norm_sqr());
    let mut local = h0.potential.clone();
    if let Some(w) = &h0.interaction {
        local += &w.dot(&rho);
    }
    local.zip_mut_with(&rho, |l, &r| *l -= h0.entropy * r.ln());
    let minus_i = Complex64::new(0.0, -1.0);
    Ok(Array1::from_iter((0..n).map(|k| minus_i * (-0.5 * lap[k] + u[k] * local[k]))))
}

/// The `H0` vector field at `(rho, S)` mapped to `du/dt` by the chain rule
/// `du = (1/2 rho^{-1/2} drho + i sqrt(rho) dS) e^{iS}`.
pub fn madelung_drift(
    g: &Graph,
    spec: &HamiltonianSpec,
    rho: &Array1<f64>,
    s: &Array1<f64>,
) -> Result<Array1<Complex64>> {
    let dynamics = Dynamics::new(spec, g)?;
    let x = State { rho: rho.clone(), s: s.clone() };
    let (dr, ds) = dynamics.field(g, &x, 0.0)?;
    Ok(Array1::from_iter((0..g.node_count()).map(|k| {
        let sq = rho[k].sqrt();
        Complex64::new(0.5 * dr[k] / sq, sq * ds[k]) * Complex64::from_polar(1.0, s[k])
    })))
}
