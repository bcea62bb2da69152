//! Scalar Brownian paths and their piecewise-linear Wong–Zakai interpolants.
//!
//! Paths are sampled on a uniform grid `t_k = k dt_w` from a ChaCha stream
//! keyed by `(seed, stream)`, so ensemble member `k` can be regenerated
//! independently of every other member.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Relative slack used when checking that one grid width divides another.
const GRID_TOL: f64 = 1e-9;

/// Number of `unit` steps in `span`, provided `span / unit` is an integer.
pub(crate) fn exact_ratio(span: f64, unit: f64, what: &str) -> Result<usize> {
    if !(span > 0.0 && span.is_finite() && unit > 0.0 && unit.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "{what}: widths must be positive and finite (got {span} and {unit})"
        )));
    }
    let ratio = span / unit;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > GRID_TOL * ratio.max(1.0) {
        return Err(Error::InvalidParameter(format!("{what}: {unit} does not divide {span}")));
    }
    Ok(k as usize)
}

/// A sampled standard Wiener process on `[0, horizon]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WienerPath {
    seed: u64,
    stream: u64,
    dt: f64,
    values: Vec<f64>,
}

/// Sample stream 0 of `seed` on `[0, horizon]` with grid width `dt`.
pub fn sample_wiener(seed: u64, horizon: f64, dt: f64) -> Result<WienerPath> {
    WienerPath::sample(seed, 0, horizon, dt)
}

impl WienerPath {
    /// Sample the path for ensemble member `stream` of `seed`.
    pub fn sample(seed: u64, stream: u64, horizon: f64, dt: f64) -> Result<Self> {
        let steps = exact_ratio(horizon, dt, "wiener grid")?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let scale = dt.sqrt();
        let mut values = Vec::with_capacity(steps + 1);
        let mut w = 0.0;
        values.push(w);
        for _ in 0..steps {
            let z: f64 = StandardNormal.sample(&mut rng);
            w += scale * z;
            values.push(w);
        }
        Ok(WienerPath { seed, stream, dt, values })
    }

    /// The identically zero path, used to switch noise off.
    pub fn zero(horizon: f64, dt: f64) -> Result<Self> {
        let steps = exact_ratio(horizon, dt, "wiener grid")?;
        Ok(WienerPath { seed: 0, stream: 0, dt, values: vec![0.0; steps + 1] })
    }

    /// A path with prescribed knot values; the first value must be zero.
    pub fn from_values(dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt > 0.0) || values.len() < 2 || values[0] != 0.0 {
            return Err(Error::InvalidParameter("a path needs dt > 0, at least two knots and W(0) = 0".into()));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(k));
        }
        Ok(WienerPath { seed: 0, stream: 0, dt, values })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    /// Knot values `W(t_0), ..., W(t_K)`.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn knot(&self, k: usize) -> f64 {
        self.values[k]
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let horizon = self.horizon();
        if !(t >= -GRID_TOL * horizon && t <= horizon * (1.0 + GRID_TOL)) {
            return Err(Error::TimeOutOfRange { t, horizon });
        }
        Ok(())
    }

    /// Index of the knot at `t`, if `t` lies on the grid.
    pub fn knot_index(&self, t: f64) -> Option<usize> {
        let r = t / self.dt;
        let k = r.round();
        ((r - k).abs() <= GRID_TOL * r.abs().max(1.0) && k >= 0.0 && (k as usize) <= self.steps()).then_some(k as usize)
    }

    /// Path value at `t`, linear between knots.
    pub fn value(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        if let Some(k) = self.knot_index(t) {
            return Ok(self.values[k]);
        }
        let k = ((t / self.dt).floor() as usize).min(self.steps() - 1);
        let s = (t - k as f64 * self.dt) / self.dt;
        Ok(self.values[k] + s * (self.values[k + 1] - self.values[k]))
    }

    /// `W(t1) - W(t0)`.
    pub fn increment(&self, t0: f64, t1: f64) -> Result<f64> {
        Ok(self.value(t1)? - self.value(t0)?)
    }
}

/// Piecewise-linear interpolation of a [`WienerPath`] on knots spaced `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct WongZakaiPath {
    path: WienerPath,
    stride: usize,
}

impl WongZakaiPath {
    /// `delta` must be a positive multiple of the path's grid width that divides the horizon.
    pub fn new(path: WienerPath, delta: f64) -> Result<Self> {
        let stride = exact_ratio(delta, path.dt(), "wong-zakai width")?;
        if !path.steps().is_multiple_of(stride) {
            return Err(Error::InvalidParameter(format!(
                "wong-zakai width {delta} does not divide the horizon {}",
                path.horizon()
            )));
        }
        Ok(WongZakaiPath { path, stride })
    }

    pub fn wiener(&self) -> &WienerPath {
        &self.path
    }

    pub fn delta(&self) -> f64 {
        self.stride as f64 * self.path.dt()
    }

    pub fn intervals(&self) -> usize {
        self.path.steps() / self.stride
    }

    pub fn horizon(&self) -> f64 {
        self.path.horizon()
    }

    /// `W(t_k)` at the interpolation knot `t_k = k delta`.
    pub fn knot(&self, k: usize) -> f64 {
        self.path.knot(k * self.stride)
    }

    /// Interval containing `t`; knots belong to the interval they open,
    /// except the final knot, which closes the last interval.
    pub fn interval_index(&self, t: f64) -> Result<usize> {
        self.path.check_time(t)?;
        let r = t / self.delta();
        let k = r.round();
        let k = if (r - k).abs() <= GRID_TOL * r.abs().max(1.0) { k } else { r.floor() };
        Ok((k.max(0.0) as usize).min(self.intervals() - 1))
    }

    /// Constant slope `(W(t_{k+1}) - W(t_k)) / delta` on interval `k`.
    pub fn interval_slope(&self, k: usize) -> f64 {
        (self.knot(k + 1) - self.knot(k)) / self.delta()
    }

    /// Interpolated value `W_delta(t)`.
    pub fn value(&self, t: f64) -> Result<f64> {
        let k = self.interval_index(t)?;
        let r = t / self.delta();
        if (r - r.round()).abs() <= GRID_TOL * r.abs().max(1.0) {
            return Ok(self.knot(r.round() as usize));
        }
        let t_k = k as f64 * self.delta();
        Ok(self.knot(k) + (t - t_k) * self.interval_slope(k))
    }

    /// Right-continuous slope of `W_delta` at `t`.
    pub fn slope(&self, t: f64) -> Result<f64> {
        Ok(self.interval_slope(self.interval_index(t)?))
    }

    /// CSV with columns `t, W, W_delta, slope` on the underlying Wiener grid.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,W,W_delta,slope\n");
        for k in 0..=self.path.steps() {
            let t = k as f64 * self.path.dt();
            let wd = self.value(t).expect("grid time is in range");
            let sl = self.slope(t).expect("grid time is in range");
            let _ = writeln!(out, "{t:.17e},{:.17e},{wd:.17e},{sl:.17e}", self.path.knot(k));
        }
        out
    }
}

pub fn wz_value(path: &WongZakaiPath, t: f64) -> Result<f64> {
    path.value(t)
}

pub fn wz_slope(path: &WongZakaiPath, t: f64) -> Result<f64> {
    path.slope(t)
}
