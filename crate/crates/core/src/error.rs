use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph must have at least one node")]
    EmptyGraph,
    #[error("self loop at node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge {{{0}, {1}}}")]
    DuplicateEdge(usize, usize),
    #[error("edge {{{i}, {j}}} has nonpositive weight {weight}")]
    NonPositiveWeight { i: usize, j: usize, weight: f64 },
    #[error("edge {{{i}, {j}}} references a node outside 1..={n}")]
    NodeOutOfRange { i: usize, j: usize, n: usize },
    #[error("graph is disconnected: node {0} is unreachable from node 1")]
    Disconnected(usize),
    #[error("graph document: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("expected a vector of length {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("non-finite entry at index {0}")]
    NonFinite(usize),
    #[error("negative argument to theta mean: ({0}, {1})")]
    NegativeTheta(f64, f64),
    #[error("density touches the boundary at node {node} (rho = {value:e}); singular term is undefined")]
    Boundary { node: usize, value: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("time {t} outside the sampled horizon [0, {horizon}]")]
    TimeOutOfRange { t: f64, horizon: f64 },

    #[error("integration produced a non-finite state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("degenerate noise slope on interval {interval}: |1 + eps * slope| = {value:e}")]
    DegenerateSlope { interval: usize, value: f64 },
    #[error("solver requires the arithmetic theta mean")]
    SolverThetaKind,
    #[error("solver did not converge in {iterations} iterations (gap {gap:e}, residual {residual:e})")]
    NotConverged { iterations: usize, gap: f64, residual: f64 },
}
