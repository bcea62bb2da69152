//! Time integration of the stochastic Wasserstein Hamiltonian flow
//!
//! ```text
//! d rho =  dH0/dS   dt + dH1/dS   o dW
//! d S   = -dH0/drho dt - dH1/drho o dW
//! ```
//!
//! Three one-step schemes are provided so that they can cross-validate:
//!
//! * [`Scheme::WongZakaiOde`]: classical RK4 on the random ODE driven by the
//!   constant slope of the Wong–Zakai interpolant on each interval;
//! * [`Scheme::StratonovichHeun`]: stochastic trapezoidal predictor-corrector;
//! * [`Scheme::ItoEulerCorrected`]: Euler–Maruyama on the Itô form, with the
//!   drift correction built from the Hessian blocks of `H1`.
//!
//! Integration stops when the density approaches the simplex boundary or the
//! potential blows up; before that time the dynamics are unmodified.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::energy::{EnergyPart, HamiltonianSpec};
use crate::error::{Error, Result};
use crate::graph::{Density, Graph, PotentialField, MASS_TOL};
use crate::noise::{exact_ratio, WienerPath, WongZakaiPath};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    WongZakaiOde,
    StratonovichHeun,
    ItoEulerCorrected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    /// Step width.
    pub h: f64,
    /// Final time.
    pub horizon: f64,
    pub scheme: Scheme,
    /// Interpolation width for the Wong–Zakai scheme; defaults to `h`.
    #[serde(default)]
    pub wz_delta: Option<f64>,
    #[serde(default = "default_rho_min")]
    pub rho_min: f64,
    #[serde(default = "default_s_max")]
    pub s_max: f64,
    /// Store every `record_every`-th state (the final state is always stored).
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    /// Evaluate `H0` and `H1` at every stored state.
    #[serde(default = "default_true")]
    pub energies: bool,
}

fn default_rho_min() -> f64 {
    1e-8
}

fn default_s_max() -> f64 {
    1e8
}

fn default_record_every() -> usize {
    10
}

fn default_true() -> bool {
    true
}

impl FlowConfig {
    pub fn new(scheme: Scheme, h: f64, horizon: f64) -> Self {
        FlowConfig {
            h,
            horizon,
            scheme,
            wz_delta: None,
            rho_min: default_rho_min(),
            s_max: default_s_max(),
            record_every: default_record_every(),
            energies: true,
        }
    }

    fn validate(&self) -> Result<usize> {
        if !(self.rho_min >= 0.0 && self.s_max > 0.0) {
            return Err(Error::InvalidParameter("stopping thresholds need rho_min >= 0 and s_max > 0".into()));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParameter("record_every must be positive".into()));
        }
        exact_ratio(self.horizon, self.h, "time grid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    None,
    DensityFloor,
    PotentialBlowup,
}

/// Canonical coordinates `(rho, S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub rho: Array1<f64>,
    pub s: Array1<f64>,
}

impl State {
    pub fn new(rho: &Density, s: &PotentialField) -> Self {
        State { rho: (**rho).clone(), s: (**s).clone() }
    }

    fn axpy(&self, c: f64, d: &(Array1<f64>, Array1<f64>)) -> State {
        State { rho: &self.rho + &(&d.0 * c), s: &self.s + &(&d.1 * c) }
    }

    fn is_finite(&self) -> bool {
        self.rho.iter().chain(self.s.iter()).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub rho: Vec<Array1<f64>>,
    pub s: Vec<Array1<f64>>,
    /// `H0` and `H1` at the stored states (empty when not requested).
    pub h0: Vec<f64>,
    pub h1: Vec<f64>,
    pub stopped: bool,
    /// Stopping time; `None` means the run reached the horizon.
    pub tau: Option<f64>,
    pub reason: StopReason,
    /// Smallest density value seen at any step, stored or not.
    pub min_density: f64,
    /// Number of steps taken.
    pub steps: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> State {
        State { rho: self.rho.last().unwrap().clone(), s: self.s.last().unwrap().clone() }
    }
}

/// The pair `(H0, H1)` bound to a graph.
#[derive(Debug, Clone)]
pub struct Dynamics {
    pub h0: EnergyPart,
    pub h1: EnergyPart,
}

type Field = (Array1<f64>, Array1<f64>);

impl Dynamics {
    pub fn new(spec: &HamiltonianSpec, g: &Graph) -> Result<Self> {
        let (h0, h1) = spec.parts(g)?;
        Ok(Dynamics { h0, h1 })
    }

    fn needs_interior(&self) -> bool {
        self.h0.needs_interior() || self.h1.needs_interior()
    }

    /// Hamiltonian vector field of `part`: `(dH/dS, -dH/drho)`.
    pub fn hamiltonian_field(part: &EnergyPart, g: &Graph, x: &State) -> Result<Field> {
        Ok((part.grad_s(g, &x.rho, &x.s), -part.grad_rho(g, &x.rho, &x.s)?))
    }

    /// Field of `H0 + xi H1`.
    pub fn field(&self, g: &Graph, x: &State, xi: f64) -> Result<Field> {
        let (mut dr, mut ds) = Self::hamiltonian_field(&self.h0, g, x)?;
        if xi != 0.0 {
            let (nr, ns) = Self::hamiltonian_field(&self.h1, g, x)?;
            dr.scaled_add(xi, &nr);
            ds.scaled_add(xi, &ns);
        }
        Ok((dr, ds))
    }

    /// Stratonovich-to-Itô drift correction of the `H1` noise term.
    pub fn ito_correction(&self, g: &Graph, x: &State) -> Result<Field> {
        let n = g.node_count();
        if self.h1 == EnergyPart::zero(n) {
            return Ok((Array1::zeros(n), Array1::zeros(n)));
        }
        let hb = self.h1.hessian_blocks(g, &x.rho, &x.s)?;
        let gs = self.h1.grad_s(g, &x.rho, &x.s);
        let gr = self.h1.grad_rho(g, &x.rho, &x.s)?;
        let mut cr = (hb.s_rho.dot(&gs) - hb.ss.dot(&gr)) * 0.5;
        let cs = (hb.s_rho.t().dot(&gr) - hb.rho_rho.dot(&gs)) * 0.5;
        let drift = cr.sum();
        if drift.abs() > MASS_TOL {
            cr -= drift / n as f64;
        }
        Ok((cr, cs))
    }
}

/// Stratonovich-to-Itô correction `(c_rho, c_S)` of the noise generated by `H1`.
pub fn ito_correction(
    spec: &HamiltonianSpec,
    g: &Graph,
    rho: &Array1<f64>,
    s: &Array1<f64>,
) -> Result<(Array1<f64>, Array1<f64>)> {
    Dynamics::new(spec, g)?.ito_correction(g, &State { rho: rho.clone(), s: s.clone() })
}

/// One step of width `h`. `drive` is the Wong–Zakai slope for
/// [`Scheme::WongZakaiOde`] and the Wiener increment over the step otherwise.
pub fn step(scheme: Scheme, dynamics: &Dynamics, g: &Graph, x: &State, h: f64, drive: f64) -> Result<State> {
    match scheme {
        Scheme::WongZakaiOde => {
            let k1 = dynamics.field(g, x, drive)?;
            let k2 = dynamics.field(g, &x.axpy(0.5 * h, &k1), drive)?;
            let k3 = dynamics.field(g, &x.axpy(0.5 * h, &k2), drive)?;
            let k4 = dynamics.field(g, &x.axpy(h, &k3), drive)?;
            let c = h / 6.0;
            Ok(State {
                rho: &x.rho + &((&k1.0 + &(&k2.0 * 2.0) + &(&k3.0 * 2.0) + &k4.0) * c),
                s: &x.s + &((&k1.1 + &(&k2.1 * 2.0) + &(&k3.1 * 2.0) + &k4.1) * c),
            })
        }
        Scheme::StratonovichHeun => {
            let xi = drive / h;
            let k1 = dynamics.field(g, x, xi)?;
            let k2 = dynamics.field(g, &x.axpy(h, &k1), xi)?;
            Ok(State { rho: &x.rho + &((&k1.0 + &k2.0) * (0.5 * h)), s: &x.s + &((&k1.1 + &k2.1) * (0.5 * h)) })
        }
        Scheme::ItoEulerCorrected => {
            let f0 = Dynamics::hamiltonian_field(&dynamics.h0, g, x)?;
            let f1 = Dynamics::hamiltonian_field(&dynamics.h1, g, x)?;
            let c = dynamics.ito_correction(g, x)?;
            Ok(State {
                rho: &x.rho + &((&f0.0 + &c.0) * h) + &(&f1.0 * drive),
                s: &x.s + &((&f0.1 + &c.1) * h) + &(&f1.1 * drive),
            })
        }
    }
}

/// Per-step drive for a given scheme on a sampled path.
enum Drive {
    Slopes { wz: WongZakaiPath, steps_per_interval: usize },
    Increments { path: WienerPath, stride: usize },
}

impl Drive {
    fn new(config: &FlowConfig, noise: &WienerPath) -> Result<Self> {
        if noise.horizon() + 1e-12 < config.horizon {
            return Err(Error::InvalidParameter(format!(
                "noise path covers [0, {}] but the horizon is {}",
                noise.horizon(),
                config.horizon
            )));
        }
        match config.scheme {
            Scheme::WongZakaiOde => {
                let delta = config.wz_delta.unwrap_or(config.h);
                let steps_per_interval = exact_ratio(delta, config.h, "wong-zakai width / step")?;
                Ok(Drive::Slopes { wz: WongZakaiPath::new(noise.clone(), delta)?, steps_per_interval })
            }
            _ => {
                let stride = exact_ratio(config.h, noise.dt(), "step / wiener grid")?;
                Ok(Drive::Increments { path: noise.clone(), stride })
            }
        }
    }

    fn at(&self, k: usize) -> f64 {
        match self {
            Drive::Slopes { wz, steps_per_interval } => wz.interval_slope(k / steps_per_interval),
            Drive::Increments { path, stride } => path.knot((k + 1) * stride) - path.knot(k * stride),
        }
    }
}

/// Integrate from `(rho0, s0)` up to the horizon or the stopping time.
pub fn integrate(
    config: &FlowConfig,
    spec: &HamiltonianSpec,
    g: &Graph,
    rho0: &Density,
    s0: &PotentialField,
    noise: &WienerPath,
) -> Result<Trajectory> {
    let steps = config.validate()?;
    g.check_len(rho0.len())?;
    g.check_len(s0.len())?;
    let dynamics = Dynamics::new(spec, g)?;
    let drive = Drive::new(config, noise)?;
    let mut x = State::new(rho0, s0);
    if dynamics.needs_interior() && !rho0.is_interior() {
        let node = rho0.iter().position(|&r| r <= 0.0).unwrap();
        return Err(Error::Boundary { node, value: rho0[node] });
    }

    let mut traj = Trajectory {
        times: Vec::new(),
        rho: Vec::new(),
        s: Vec::new(),
        h0: Vec::new(),
        h1: Vec::new(),
        stopped: false,
        tau: None,
        reason: StopReason::None,
        min_density: x.rho.iter().cloned().fold(f64::INFINITY, f64::min),
        steps: 0,
    };
    let record = |traj: &mut Trajectory, t: f64, x: &State| {
        traj.times.push(t);
        if config.energies {
            traj.h0.push(dynamics.h0.value(g, &x.rho, &x.s).unwrap_or(f64::NAN));
            traj.h1.push(dynamics.h1.value(g, &x.rho, &x.s).unwrap_or(f64::NAN));
        }
        traj.rho.push(x.rho.clone());
        traj.s.push(x.s.clone());
    };
    record(&mut traj, 0.0, &x);
    let mut t_x = 0.0;

    for k in 0..steps {
        let t_next = (k + 1) as f64 * config.h;
        let next = match step(config.scheme, &dynamics, g, &x, config.h, drive.at(k)) {
            Ok(next) => next,
            Err(Error::Boundary { .. }) => {
                traj.stop(t_next, StopReason::DensityFloor);
                break;
            }
            Err(e) => return Err(e),
        };
        traj.steps = k + 1;
        if !next.is_finite() {
            if next.rho.iter().all(|v| v.is_finite()) {
                traj.stop(t_next, StopReason::PotentialBlowup);
                break;
            }
            return Err(Error::NonFiniteState { t: t_next });
        }
        let min_rho = next.rho.iter().cloned().fold(f64::INFINITY, f64::min);
        traj.min_density = traj.min_density.min(min_rho);
        if min_rho <= config.rho_min {
            traj.stop(t_next, StopReason::DensityFloor);
            break;
        }
        if next.s.iter().any(|v| v.abs() >= config.s_max) {
            traj.stop(t_next, StopReason::PotentialBlowup);
            break;
        }
        x = next;
        t_x = t_next;
        if (k + 1) % config.record_every == 0 || k + 1 == steps {
            record(&mut traj, t_next, &x);
        }
    }
    if traj.stopped && *traj.times.last().unwrap() < t_x {
        // Keep the last admissible state so the record ends just before tau.
        record(&mut traj, t_x, &x);
    }
    Ok(traj)
}

impl Trajectory {
    fn stop(&mut self, tau: f64, reason: StopReason) {
        self.stopped = true;
        self.tau = Some(tau);
        self.reason = reason;
    }
}

/// A continuous scalar driving path that can be evaluated at any time.
pub trait DrivingPath {
    fn value_at(&self, t: f64) -> Result<f64>;
}

impl DrivingPath for WienerPath {
    fn value_at(&self, t: f64) -> Result<f64> {
        self.value(t)
    }
}

impl DrivingPath for WongZakaiPath {
    fn value_at(&self, t: f64) -> Result<f64> {
        self.value(t)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub times: Vec<f64>,
    pub h0: Vec<f64>,
    /// `H0(t) - H0(0)` minus the discretised bracket expansion.
    pub residual: Vec<f64>,
    pub max_residual: f64,
    /// `max_t |H0(t) - H0(0)|`.
    pub max_drift: f64,
}

/// Compare `H0` along a trajectory with its Itô expansion
/// `dH0 = {H0, H1} dW + D dt`, `D = grad H0 . c + 1/2 f1^T Hess(H0) f1`,
/// where `f1` is the `H1` field and `c` the Itô correction. The sum is
/// evaluated at the stored states with the Milstein weight `dW^2` on `D`,
/// which makes the residual first order in the audit spacing.
pub fn energy_audit(
    spec: &HamiltonianSpec,
    g: &Graph,
    traj: &Trajectory,
    noise: &dyn DrivingPath,
) -> Result<AuditReport> {
    let dynamics = Dynamics::new(spec, g)?;
    let mut h0 = Vec::with_capacity(traj.times.len());
    let mut residual = Vec::with_capacity(traj.times.len());
    let mut expansion = 0.0;
    for (k, &t) in traj.times.iter().enumerate() {
        let x = State { rho: traj.rho[k].clone(), s: traj.s[k].clone() };
        let value = dynamics.h0.value(g, &x.rho, &x.s)?;
        h0.push(value);
        residual.push(value - h0[0] - expansion);
        if k + 1 < traj.times.len() {
            let dw = noise.value_at(traj.times[k + 1])? - noise.value_at(t)?;
            let (p, d) = bracket_terms(&dynamics, g, &x)?;
            expansion += p * dw + d * dw * dw;
        }
    }
    let max_residual = residual.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let max_drift = h0.iter().fold(0.0f64, |m, v| m.max((v - h0[0]).abs()));
    Ok(AuditReport { times: traj.times.clone(), h0, residual, max_residual, max_drift })
}

/// `({H0, H1}, D)` at `x`.
fn bracket_terms(dynamics: &Dynamics, g: &Graph, x: &State) -> Result<(f64, f64)> {
    let (h0, h1) = (&dynamics.h0, &dynamics.h1);
    let g0s = h0.grad_s(g, &x.rho, &x.s);
    let g0r = h0.grad_rho(g, &x.rho, &x.s)?;
    let (f_rho, f_s) = Dynamics::hamiltonian_field(h1, g, x)?;
    let p = g0r.dot(&f_rho) + g0s.dot(&f_s);
    let c = dynamics.ito_correction(g, x)?;
    let hb = h0.hessian_blocks(g, &x.rho, &x.s)?;
    let quad = f_rho.dot(&hb.rho_rho.dot(&f_rho)) + 2.0 * f_s.dot(&hb.s_rho.dot(&f_rho)) + f_s.dot(&hb.ss.dot(&f_s));
    let d = g0r.dot(&c.0) + g0s.dot(&c.1) + 0.5 * quad;
    Ok((p, d))
}
