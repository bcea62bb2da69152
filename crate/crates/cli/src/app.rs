//! Command-line surface and the drivers behind each command.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use ndarray::Array1;
use rayon::prelude::*;
use serde_json::json;
use whf_core::control::{self, ControlProblem, ControlSolution, Variant};
use whf_core::energy::HamiltonianSpec;
use whf_core::flow::{integrate, FlowConfig, Scheme, Trajectory};
use whf_core::graph::{theta_connected_components, Density, Graph, PotentialField};
use whf_core::noise::{WienerPath, WongZakaiPath};
use whf_core::schrodinger::{preset_spec, NlsPreset};

use crate::config::{require, ComponentsSection, ControlSection, ControlVariant, GraphSource, NlsSection, RunConfig};
use crate::error::{CliError, Context};
use crate::output::{num, sha256_hex, Artifacts, Table};
use crate::study::{wz_study, WzStudyInput};

#[derive(Debug, Parser)]
#[command(name = "whf", version, about = "Stochastic Wasserstein Hamiltonian flows on graphs")]
pub struct Cli {
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides `noise.seed`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory for the artifacts.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Worker threads for ensembles and studies (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate a Hamiltonian pair from `spec`.
    Simulate(SimulateArgs),
    /// Integrate a Schrödinger preset.
    Nls(NlsArgs),
    /// Solve an optimal transport problem under Wong–Zakai noise.
    Control(ControlArgs),
    /// Compare Wong–Zakai runs with a fine Stratonovich reference.
    WzStudy,
    /// Solve the special variant for a decreasing list of strengths.
    GammaStudy,
    /// Partition the nodes into blocks joined by edges with positive mean.
    Components(ComponentsArgs),
}

#[derive(Debug, Args, Default)]
pub struct SimulateArgs {
    /// Graph JSON document.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Hamiltonian coefficients (TOML or JSON).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Integrator (creates the `flow` section together with --dt and --T).
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Step width.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Final time.
    #[arg(long = "T")]
    pub horizon: Option<f64>,
    /// Wong–Zakai interpolation width (defaults to the step).
    #[arg(long)]
    pub wz_delta: Option<f64>,
    /// Ensemble size.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Exit with status 4 when any trajectory stops before the horizon.
    #[arg(long)]
    pub require_global: bool,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum SchemeArg {
    WongZakaiOde,
    StratonovichHeun,
    ItoEulerCorrected,
}

impl From<SchemeArg> for Scheme {
    fn from(s: SchemeArg) -> Self {
        match s {
            SchemeArg::WongZakaiOde => Scheme::WongZakaiOde,
            SchemeArg::StratonovichHeun => Scheme::StratonovichHeun,
            SchemeArg::ItoEulerCorrected => Scheme::ItoEulerCorrected,
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum PresetArg {
    CommonNoise,
    Logarithmic,
    Dispersion,
}

impl From<PresetArg> for NlsPreset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::CommonNoise => NlsPreset::CommonNoise,
            PresetArg::Logarithmic => NlsPreset::Logarithmic,
            PresetArg::Dispersion => NlsPreset::Dispersion,
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct NlsArgs {
    /// Schrödinger preset.
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    /// JSON array with the noise coefficient of every node.
    #[arg(long)]
    pub sigma: Option<PathBuf>,
    #[command(flatten)]
    pub sim: SimulateArgs,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum VariantArg {
    Additive,
    Special,
}

#[derive(Debug, Args, Default)]
pub struct ControlArgs {
    /// Graph JSON document.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Initial density, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub rho_a: Option<Vec<f64>>,
    /// Final density, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub rho_b: Option<Vec<f64>>,
    /// Noise potential of the additive variant, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub sigma_potential: Option<Vec<f64>>,
    /// Perturbation strength of the special variant.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    /// Number of time intervals.
    #[arg(long = "M")]
    pub intervals: Option<usize>,
    /// Wong–Zakai interpolation width.
    #[arg(long)]
    pub wz_delta: Option<f64>,
    /// Relative duality-gap tolerance.
    #[arg(long)]
    pub tol_gap: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct ComponentsArgs {
    /// Graph JSON document.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Density, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub rho: Option<Vec<f64>>,
    /// Edges whose mean does not exceed this value are cut.
    #[arg(long)]
    pub tol: Option<f64>,
}

/// Result of a successful command.
#[derive(Debug)]
pub struct Outcome {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
}

/// Parse arguments, run, and report errors as JSON on stderr. Returns the exit code.
pub fn main_with_args(cli: Cli) -> i32 {
    let out_dir = cli.out_dir.clone();
    match execute(cli) {
        Ok(outcome) => outcome.exit_code,
        Err(e) => {
            let doc = e.to_json();
            eprintln!("{doc}");
            if fs::create_dir_all(&out_dir).is_ok() {
                let _ = fs::write(out_dir.join("error.json"), doc + "\n");
            }
            e.exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<Outcome, CliError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.noise.seed = Some(seed);
    }
    let require_global = apply_overrides(&cli.command, &mut config)?;
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("--threads: {e}")))?;
    pool.install(|| run(&cli.command, &config, &cli.out_dir, require_global))
}

fn graph_from_file(path: &Path) -> GraphSource {
    GraphSource { file: Some(path.to_path_buf()), ..Default::default() }
}

fn read_text(path: &Path, what: &str) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Config(format!("{what}: cannot read {}: {e}", path.display())))
}

fn apply_simulate(args: &SimulateArgs, config: &mut RunConfig) -> Result<(), CliError> {
    if let Some(g) = &args.graph {
        config.graph = Some(graph_from_file(g));
    }
    if let Some(path) = &args.spec {
        let text = read_text(path, "--spec")?;
        let spec: HamiltonianSpec = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("--spec: {e}")))?
        } else {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("--spec: {e}")))?
        };
        config.spec = Some(spec);
    }
    if config.flow.is_none() {
        if let (Some(scheme), Some(h), Some(t)) = (args.scheme, args.dt, args.horizon) {
            config.flow = Some(FlowConfig::new(scheme.into(), h, t));
        }
    }
    if let Some(flow) = &mut config.flow {
        if let Some(s) = args.scheme {
            flow.scheme = s.into();
        }
        if let Some(h) = args.dt {
            flow.h = h;
        }
        if let Some(t) = args.horizon {
            flow.horizon = t;
        }
        if let Some(d) = args.wz_delta {
            flow.wz_delta = Some(d);
        }
    }
    if let Some(n) = args.seeds {
        config.noise.ensemble = n;
    }
    Ok(())
}

/// Fold command-line flags into the configuration; returns the `--require-global` flag.
fn apply_overrides(command: &Command, config: &mut RunConfig) -> Result<bool, CliError> {
    match command {
        Command::Simulate(args) => {
            apply_simulate(args, config)?;
            Ok(args.require_global)
        }
        Command::Nls(args) => {
            apply_simulate(&args.sim, config)?;
            if let Some(p) = args.preset {
                match &mut config.nls {
                    Some(section) => section.preset = p.into(),
                    None => {
                        config.nls = Some(NlsSection {
                            preset: p.into(),
                            v: Vec::new(),
                            w: Vec::new(),
                            sigma: Vec::new(),
                            sigma_file: None,
                        })
                    }
                }
            }
            if let Some(path) = &args.sigma {
                let section = config.nls.as_mut().ok_or_else(|| CliError::Config("--sigma: needs a preset".into()))?;
                section.sigma_file = Some(path.clone());
            }
            Ok(args.sim.require_global)
        }
        Command::Control(args) => {
            if let Some(g) = &args.graph {
                config.graph = Some(graph_from_file(g));
            }
            if config.control.is_none() {
                if let (Some(a), Some(b), Some(v), Some(m), Some(d)) =
                    (&args.rho_a, &args.rho_b, args.variant, args.intervals, args.wz_delta)
                {
                    config.control = Some(ControlSection {
                        rho_a: a.clone(),
                        rho_b: b.clone(),
                        variant: match v {
                            VariantArg::Additive => ControlVariant::Additive,
                            VariantArg::Special => ControlVariant::Special,
                        },
                        sigma: None,
                        epsilon: None,
                        intervals: m,
                        wz_delta: d,
                        dt: None,
                        solver: Default::default(),
                    });
                }
            }
            if let Some(c) = &mut config.control {
                if let Some(a) = &args.rho_a {
                    c.rho_a = a.clone();
                }
                if let Some(b) = &args.rho_b {
                    c.rho_b = b.clone();
                }
                if let Some(s) = &args.sigma_potential {
                    c.sigma = Some(s.clone());
                }
                if let Some(e) = args.epsilon {
                    c.epsilon = Some(e);
                }
                if let Some(v) = args.variant {
                    c.variant = match v {
                        VariantArg::Additive => ControlVariant::Additive,
                        VariantArg::Special => ControlVariant::Special,
                    };
                }
                if let Some(m) = args.intervals {
                    c.intervals = m;
                }
                if let Some(d) = args.wz_delta {
                    c.wz_delta = d;
                }
                if let Some(t) = args.tol_gap {
                    c.solver.tol_gap_rel = t;
                }
            }
            Ok(false)
        }
        Command::Components(args) => {
            if let Some(g) = &args.graph {
                config.graph = Some(graph_from_file(g));
            }
            if let Some(rho) = &args.rho {
                config.components = Some(ComponentsSection {
                    rho: rho.clone(),
                    tol: args.tol.unwrap_or(0.0),
                    theta: Default::default(),
                });
            } else if let (Some(c), Some(t)) = (&mut config.components, args.tol) {
                c.tol = t;
            }
            Ok(false)
        }
        Command::WzStudy | Command::GammaStudy => Ok(false),
    }
}

fn command_name(command: &Command) -> &'static str {
    match command {
        Command::Simulate(_) => "simulate",
        Command::Nls(_) => "nls",
        Command::Control(_) => "control",
        Command::WzStudy => "wz-study",
        Command::GammaStudy => "gamma-study",
        Command::Components(_) => "components",
    }
}

/// Hash of everything that determines the numeric output.
fn config_hash(command: &str, config: &RunConfig, graph: &Graph) -> Result<String, CliError> {
    let doc = json!({ "command": command, "config": config, "graph": graph.to_json() });
    Ok(sha256_hex(doc.to_string().as_bytes()))
}

pub fn run(command: &Command, config: &RunConfig, out_dir: &Path, require_global: bool) -> Result<Outcome, CliError> {
    let graph = require(&config.graph, "graph")?.build()?;
    let name = command_name(command);
    let mut artifacts = Artifacts::new(out_dir, config_hash(name, config, &graph)?)?;
    let exit_code = match command {
        Command::Simulate(_) => {
            let spec = require(&config.spec, "spec")?.clone();
            simulate(config, &graph, &spec, None, &mut artifacts, require_global)?
        }
        Command::Nls(_) => {
            let section = require(&config.nls, "nls")?;
            let mut params = section.params();
            if let Some(path) = &section.sigma_file {
                let text = read_text(path, "nls.sigma_file")?;
                params.sigma =
                    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("nls.sigma_file: {e}")))?;
            }
            let spec = preset_spec(section.preset, &params);
            simulate(config, &graph, &spec, Some(section.preset), &mut artifacts, require_global)?
        }
        Command::Control(_) => {
            control_command(config, &graph, &mut artifacts)?;
            0
        }
        Command::WzStudy => {
            wz_command(config, &graph, &mut artifacts)?;
            0
        }
        Command::GammaStudy => {
            gamma_command(config, &graph, &mut artifacts)?;
            0
        }
        Command::Components(_) => {
            components_command(config, &graph, &mut artifacts)?;
            0
        }
    };
    Ok(Outcome { exit_code, artifacts: artifacts.written().to_vec() })
}

fn initial_state(config: &RunConfig, graph: &Graph) -> Result<(Density, PotentialField), CliError> {
    let init = require(&config.initial, "initial")?;
    let rho = Density::new(Array1::from_vec(init.rho.clone())).context("initial.rho")?;
    graph.check_len(rho.len()).context("initial.rho")?;
    let s = if init.s.is_empty() { vec![0.0; graph.node_count()] } else { init.s.clone() };
    let s = PotentialField::new(Array1::from_vec(s)).context("initial.s")?;
    graph.check_len(s.len()).context("initial.s")?;
    Ok((rho, s))
}

fn trajectory_table(traj: &Trajectory, n: usize, nls: bool) -> Table {
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("rho_{i}")));
    header.extend((1..=n).map(|i| format!("S_{i}")));
    header.extend(["H0".to_string(), "H1".to_string(), "stopped".to_string()]);
    if nls {
        header.extend((1..=n).map(|i| format!("abs_u_{i}")));
        header.extend((1..=n).map(|i| format!("phase_{i}")));
    }
    let mut table = Table::new(header);
    let last = traj.times.len() - 1;
    for (k, &t) in traj.times.iter().enumerate() {
        let mut row = vec![num(t)];
        row.extend(traj.rho[k].iter().map(|&v| num(v)));
        row.extend(traj.s[k].iter().map(|&v| num(v)));
        for series in [&traj.h0, &traj.h1] {
            row.push(series.get(k).map_or(String::new(), |&v| num(v)));
        }
        row.push(if traj.stopped && k == last { "1" } else { "0" }.to_string());
        if nls {
            row.extend(traj.rho[k].iter().map(|&v| num(v.max(0.0).sqrt())));
            row.extend(traj.s[k].iter().map(|&v| num(wrap_phase(v))));
        }
        table.push(row);
    }
    table
}

/// Phase reduced to `(-pi, pi]`.
pub fn wrap_phase(s: f64) -> f64 {
    let z = num_complex_phase(s);
    if z <= -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        z
    }
}

fn num_complex_phase(s: f64) -> f64 {
    s.sin().atan2(s.cos())
}

fn simulate(
    config: &RunConfig,
    graph: &Graph,
    spec: &HamiltonianSpec,
    preset: Option<NlsPreset>,
    artifacts: &mut Artifacts,
    require_global: bool,
) -> Result<i32, CliError> {
    let flow = require(&config.flow, "flow")?;
    let seed = config.seed()?;
    let (rho0, s0) = initial_state(config, graph)?;
    let dt = config.noise.dt.unwrap_or(flow.h);
    let members = config.noise.ensemble;
    if members == 0 {
        return Err(CliError::Config("noise.ensemble: must be positive".into()));
    }
    let runs: Vec<Result<Trajectory, CliError>> = (0..members as u64)
        .into_par_iter()
        .map(|member| {
            let path = WienerPath::sample(seed, member, flow.horizon, dt).context("noise")?;
            integrate(flow, spec, graph, &rho0, &s0, &path).context("flow")
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let n = graph.node_count();
    let mut summary = Vec::with_capacity(members);
    for (member, traj) in runs.iter().enumerate() {
        let name = if members == 1 { "trajectory.csv".to_string() } else { format!("trajectory_{member:04}.csv") };
        artifacts.csv(&name, &trajectory_table(traj, n, preset.is_some()))?;
        summary.push(json!({
            "stream": member,
            "stopped": traj.stopped,
            "tau": traj.tau,
            "reason": traj.reason,
            "steps": traj.steps,
            "min_density": traj.min_density,
            "final_time": traj.times.last(),
            "final_h0": traj.h0.last(),
            "final_h1": traj.h1.last(),
            "mass_error": runs_mass_error(traj),
        }));
    }
    let stopped = runs.iter().filter(|t| t.stopped).count();
    let min_density = runs.iter().map(|t| t.min_density).fold(f64::INFINITY, f64::min);
    artifacts.json(
        "summary.json",
        json!({
            "preset": preset,
            "seed": seed,
            "members": summary,
            "stopped_count": stopped,
            "min_density": min_density,
        }),
    )?;
    Ok(if require_global && stopped > 0 { 4 } else { 0 })
}

fn runs_mass_error(traj: &Trajectory) -> f64 {
    traj.rho.iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max)
}

fn control_problem(config: &RunConfig, graph: &Graph) -> Result<ControlProblem, CliError> {
    let c = require(&config.control, "control")?;
    let seed = config.seed()?;
    let rho_a = Density::new(Array1::from_vec(c.rho_a.clone())).context("control.rho_a")?;
    let rho_b = Density::new(Array1::from_vec(c.rho_b.clone())).context("control.rho_b")?;
    let variant = match c.variant {
        ControlVariant::Additive => {
            Variant::Additive { sigma: c.sigma.clone().unwrap_or_else(|| vec![0.0; graph.node_count()]) }
        }
        ControlVariant::Special => Variant::Special { epsilon: c.epsilon.unwrap_or(0.0) },
    };
    let dt = c.dt.unwrap_or(c.wz_delta / 8.0);
    let path = WienerPath::sample(seed, 0, 1.0, dt).context("control.dt")?;
    let wz = WongZakaiPath::new(path, c.wz_delta).context("control.wz_delta")?;
    Ok(ControlProblem::new(graph.clone(), &rho_a, &rho_b, variant, wz, c.intervals)
        .context("control")?
        .with_options(c.solver.clone()))
}

fn rows(v: &[Array1<f64>]) -> Vec<Vec<f64>> {
    v.iter().map(|r| r.to_vec()).collect()
}

fn solution_json(problem: &ControlProblem, sol: &ControlSolution) -> serde_json::Value {
    json!({
        "intervals": problem.intervals(),
        "action": sol.action,
        "dual_value": sol.dual_value,
        "gap": sol.gap,
        "residual": sol.residual,
        "iterations": sol.iterations,
        "stationarity": control::stationarity_residual(problem, sol, 1e-6),
        "rho": rows(&sol.rho),
        "m": rows(&sol.m),
        "s": rows(&sol.s),
        "s_start": sol.s_start.to_vec(),
        "s_end": sol.s_end.to_vec(),
    })
}

fn control_command(config: &RunConfig, graph: &Graph, artifacts: &mut Artifacts) -> Result<(), CliError> {
    let problem = control_problem(config, graph)?;
    let sol = control::solve(&problem).context("control solve")?;
    let mut body = solution_json(&problem, &sol);
    body["variant"] = serde_json::to_value(problem.variant()).expect("variant serializes");
    artifacts.json("solution.json", body)?;

    let n = graph.node_count();
    let mut header = vec!["k".to_string(), "t".to_string()];
    header.extend((1..=n).map(|i| format!("rho_{i}")));
    header.extend(graph.edges().iter().map(|e| format!("m_{}_{}", e.i + 1, e.j + 1)));
    header.extend((1..=n).map(|i| format!("S_{i}")));
    let mut table = Table::new(header);
    let h = problem.h();
    for k in 0..=problem.intervals() {
        let mut row = vec![k.to_string(), num(k as f64 * h)];
        row.extend(sol.rho[k].iter().map(|&v| num(v)));
        if k < problem.intervals() {
            row.extend(sol.m[k].iter().map(|&v| num(v)));
            row.extend(sol.s[k].iter().map(|&v| num(v)));
        } else {
            row.extend(std::iter::repeat_n(String::new(), graph.edge_count() + n));
        }
        table.push(row);
    }
    artifacts.csv("paths.csv", &table)
}

fn wz_command(config: &RunConfig, graph: &Graph, artifacts: &mut Artifacts) -> Result<(), CliError> {
    let section = require(&config.wz_study, "wz_study")?;
    let spec = match (&config.nls, &config.spec) {
        (Some(nls), _) => preset_spec(nls.preset, &nls.params()),
        (None, Some(spec)) => spec.clone(),
        (None, None) => return Err(CliError::Config("wz_study: needs an `nls` or `spec` section".into())),
    };
    let (rho0, s0) = initial_state(config, graph)?;
    let input = WzStudyInput {
        graph: graph.clone(),
        spec,
        rho0,
        s0,
        deltas: section.deltas.clone(),
        seeds: section.seeds,
        master_seed: config.seed()?,
        reference_dt: section.reference_dt,
        step: section.step,
        horizon: section.horizon,
    };
    let study = wz_study(&input)?;
    let mut table = Table::new(["delta", "mean_error", "max_error"]);
    for row in &study.rows {
        table.push(vec![num(row.delta), num(row.mean_error), num(row.max_error)]);
    }
    artifacts.csv("wz_study.csv", &table)?;
    artifacts.json("wz_study.json", serde_json::to_value(&study).expect("study serializes"))
}

fn gamma_command(config: &RunConfig, graph: &Graph, artifacts: &mut Artifacts) -> Result<(), CliError> {
    let section = require(&config.gamma_study, "gamma_study")?;
    let problem = control_problem(config, graph)?;
    let study = control::gamma_study(&problem, &section.epsilons).context("gamma study")?;
    let mut table = Table::new(["epsilon", "action", "deviation", "gap"]);
    for row in &study.rows {
        table.push(vec![num(row.epsilon), num(row.action), num(row.deviation), num(row.gap)]);
    }
    artifacts.csv("gamma_study.csv", &table)?;
    artifacts.json("gamma_study.json", serde_json::to_value(&study).expect("study serializes"))
}

fn components_command(config: &RunConfig, graph: &Graph, artifacts: &mut Artifacts) -> Result<(), CliError> {
    let section = require(&config.components, "components")?;
    let rho = Density::new(Array1::from_vec(section.rho.clone())).context("components.rho")?;
    graph.check_len(rho.len()).context("components.rho")?;
    let blocks = theta_connected_components(graph, &rho, section.theta, section.tol);
    let one_based: Vec<Vec<usize>> = blocks.iter().map(|b| b.iter().map(|i| i + 1).collect()).collect();
    artifacts.json("components.json", json!({ "blocks": one_based, "tol": section.tol }))
}
