//! Run configuration: one TOML or JSON document whose sections are read by
//! the drivers that need them. Relative file references resolve against the
//! directory of the configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use whf_core::control::SolverOptions;
use whf_core::energy::HamiltonianSpec;
use whf_core::flow::FlowConfig;
use whf_core::graph::{Graph, ThetaKind};
use whf_core::schrodinger::{NlsParams, NlsPreset};

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSource>,
    /// Explicit Hamiltonian pair for `simulate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<HamiltonianSpec>,
    /// Schrödinger preset for `nls` and `wz-study`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nls: Option<NlsSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial: Option<InitialSection>,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub control: Option<ControlSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wz_study: Option<WzStudySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_study: Option<GammaSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub components: Option<ComponentsSection>,
}

/// Where the graph comes from; exactly one form must be given.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSource {
    /// JSON graph document `{"nodes": N, "edges": [[i, j, w, w_tilde], ...]}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    /// Unit-weight path graph on this many nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<usize>,
    /// Unit-weight cycle on this many nodes.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle: Option<usize>,
    /// Inline document, same layout as the file form.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NlsSection {
    pub preset: NlsPreset,
    #[serde(default)]
    pub v: Vec<f64>,
    #[serde(default)]
    pub w: Vec<Vec<f64>>,
    #[serde(default)]
    pub sigma: Vec<f64>,
    /// JSON array of noise coefficients; overrides `sigma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_file: Option<PathBuf>,
}

impl NlsSection {
    pub fn params(&self) -> NlsParams {
        NlsParams { v: self.v.clone(), w: self.w.clone(), sigma: self.sigma.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub rho: Vec<f64>,
    /// Defaults to zero.
    #[serde(default)]
    pub s: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    /// Master seed; mandatory for every stochastic command.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Ensemble size; member `k` uses stream `k` of the master seed.
    #[serde(default = "one")]
    pub ensemble: usize,
    /// Brownian grid width; defaults to the integration step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlVariant {
    Additive,
    Special,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    pub rho_a: Vec<f64>,
    pub rho_b: Vec<f64>,
    pub variant: ControlVariant,
    /// Noise potential of the additive variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Vec<f64>>,
    /// Perturbation strength of the special variant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Number of time intervals `M`.
    pub intervals: usize,
    pub wz_delta: f64,
    /// Brownian grid width; defaults to `wz_delta / 8`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default)]
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WzStudySection {
    /// Interpolation widths, strictly decreasing.
    pub deltas: Vec<f64>,
    pub seeds: usize,
    /// Brownian grid and step of the Heun reference.
    pub reference_dt: f64,
    /// Step of the Wong–Zakai runs; must divide every width.
    pub step: f64,
    #[serde(default = "unit_horizon")]
    pub horizon: f64,
}

fn unit_horizon() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaSection {
    /// Perturbation strengths, strictly decreasing.
    pub epsilons: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentsSection {
    pub rho: Vec<f64>,
    #[serde(default)]
    pub tol: f64,
    #[serde(default)]
    pub theta: ThetaKind,
}

impl RunConfig {
    /// Parse TOML or JSON; JSON is recognised by extension or a leading `{`.
    pub fn parse(text: &str, json: bool) -> Result<Self, CliError> {
        if json || text.trim_start().starts_with('{') {
            let de = &mut serde_json::Deserializer::from_str(text);
            serde_path_to_error::deserialize(de)
                .map_err(|e| CliError::Config(format!("{}: {}", display_path(&e.path().to_string()), e.inner())))
        } else {
            let de = toml::Deserializer::parse(text).map_err(|e| CliError::Config(e.to_string()))?;
            serde_path_to_error::deserialize(de).map_err(|e| {
                CliError::Config(format!("{}: {}", display_path(&e.path().to_string()), e.inner().message()))
            })
        }
    }

    /// Read a configuration file and resolve relative file references.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let json = path.extension().is_some_and(|e| e == "json");
        let mut config = Self::parse(&text, json)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(GraphSource { file: Some(f), .. }) = &mut self.graph {
            fix(f);
        }
        if let Some(NlsSection { sigma_file: Some(f), .. }) = &mut self.nls {
            fix(f);
        }
    }

    pub fn seed(&self) -> Result<u64, CliError> {
        self.noise.seed.ok_or_else(|| CliError::Config("noise.seed: a seed is required (no wall-clock seeding)".into()))
    }
}

fn display_path(path: &str) -> String {
    if path == "." || path.is_empty() {
        "<root>".into()
    } else {
        path.into()
    }
}

pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    section.as_ref().ok_or_else(|| CliError::Config(format!("{name}: section is missing")))
}

impl GraphSource {
    pub fn build(&self) -> Result<Graph, CliError> {
        let forms = [self.file.is_some(), self.path.is_some(), self.cycle.is_some(), self.nodes.is_some()];
        if forms.iter().filter(|&&f| f).count() != 1 {
            return Err(CliError::Config(
                "graph: give exactly one of `file`, `path`, `cycle` or `nodes`/`edges`".into(),
            ));
        }
        let graph = if let Some(file) = &self.file {
            let text = fs::read_to_string(file)
                .map_err(|e| CliError::Config(format!("graph.file: cannot read {}: {e}", file.display())))?;
            Graph::from_json(&text)
        } else if let Some(n) = self.path {
            Graph::path(n)
        } else if let Some(n) = self.cycle {
            Graph::cycle(n)
        } else {
            let doc = serde_json::json!({
                "nodes": self.nodes,
                "edges": self.edges.clone().unwrap_or_default(),
            });
            Graph::from_json(&doc.to_string())
        };
        graph.map_err(|e| CliError::Config(format!("graph: {e}")))
    }
}
