//! Convergence studies that fan out over seeds.

use ndarray::Array1;
use rayon::prelude::*;
use serde::Serialize;
use whf_core::energy::HamiltonianSpec;
use whf_core::flow::{integrate, FlowConfig, Scheme, Trajectory};
use whf_core::graph::{Density, Graph, PotentialField};
use whf_core::noise::WienerPath;

use crate::error::{CliError, Context};

/// Inputs of the Wong–Zakai versus Stratonovich comparison.
#[derive(Debug, Clone)]
pub struct WzStudyInput {
    pub graph: Graph,
    pub spec: HamiltonianSpec,
    pub rho0: Density,
    pub s0: PotentialField,
    /// Interpolation widths, strictly decreasing.
    pub deltas: Vec<f64>,
    pub seeds: usize,
    pub master_seed: u64,
    /// Brownian grid and Heun step of the reference solution.
    pub reference_dt: f64,
    /// Step of every Wong–Zakai run; shared so that without noise the error
    /// column does not depend on the width.
    pub step: f64,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WzRow {
    pub delta: f64,
    /// `|rho_wz(T) - rho_ref(T)|_inf` averaged over seeds.
    pub mean_error: f64,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WzStudy {
    pub rows: Vec<WzRow>,
    /// Whether the mean error strictly decreases down the table.
    pub monotone: bool,
    /// Trajectories (reference or approximation) that stopped before the horizon.
    pub stopped: usize,
}

fn final_rho(traj: &Trajectory) -> &Array1<f64> {
    traj.rho.last().expect("trajectories store the initial state")
}

pub fn wz_study(input: &WzStudyInput) -> Result<WzStudy, CliError> {
    if input.deltas.is_empty() || input.deltas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(CliError::Config("wz_study.deltas: must be nonempty and strictly decreasing".into()));
    }
    if input.seeds == 0 {
        return Err(CliError::Config("wz_study.seeds: must be positive".into()));
    }
    let per_seed: Vec<Result<(Vec<f64>, usize), CliError>> = (0..input.seeds as u64)
        .into_par_iter()
        .map(|member| {
            let path = WienerPath::sample(input.master_seed, member, input.horizon, input.reference_dt)
                .context("wz_study.reference_dt")?;
            let mut reference = FlowConfig::new(Scheme::StratonovichHeun, input.reference_dt, input.horizon);
            reference.record_every = usize::MAX;
            reference.energies = false;
            let base = integrate(&reference, &input.spec, &input.graph, &input.rho0, &input.s0, &path)
                .context("reference run")?;
            let mut stopped = base.stopped as usize;
            let mut errors = Vec::with_capacity(input.deltas.len());
            for &delta in &input.deltas {
                let mut cfg = FlowConfig::new(Scheme::WongZakaiOde, input.step, input.horizon);
                cfg.wz_delta = Some(delta);
                cfg.record_every = usize::MAX;
                cfg.energies = false;
                let run = integrate(&cfg, &input.spec, &input.graph, &input.rho0, &input.s0, &path)
                    .context("wong-zakai run")?;
                stopped += run.stopped as usize;
                let diff = final_rho(&run) - final_rho(&base);
                errors.push(diff.iter().fold(0.0f64, |m, v| m.max(v.abs())));
            }
            Ok((errors, stopped))
        })
        .collect();

    let mut sums = vec![0.0; input.deltas.len()];
    let mut maxima = vec![0.0f64; input.deltas.len()];
    let mut stopped = 0;
    for result in per_seed {
        let (errors, s) = result?;
        stopped += s;
        for (k, e) in errors.into_iter().enumerate() {
            sums[k] += e;
            maxima[k] = maxima[k].max(e);
        }
    }
    let rows: Vec<WzRow> = input
        .deltas
        .iter()
        .enumerate()
        .map(|(k, &delta)| WzRow { delta, mean_error: sums[k] / input.seeds as f64, max_error: maxima[k] })
        .collect();
    let monotone = rows.windows(2).all(|w| w[1].mean_error < w[0].mean_error);
    Ok(WzStudy { rows, monotone, stopped })
}
