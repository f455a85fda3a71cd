use thiserror::Error;

use crate::profile::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid profile: {}", format_violations(.0))]
    InvalidProfile(Vec<Violation>),

    #[error(
        "non-finite scalar curvature at node {node} (s = {s}, phi = {phi}, phi' = {dphi}, phi'' = {ddphi})"
    )]
    NonFiniteCurvature {
        node: usize,
        s: f64,
        phi: f64,
        dphi: f64,
        ddphi: f64,
    },

    #[error("time step {dt:.3e} exceeds the stability bound {bound:.3e}")]
    StepTooLarge { dt: f64, bound: f64 },

    #[error("flow degenerated at node {node} (s = {s}, phi = {phi}) at t = {t}")]
    Singularity {
        node: usize,
        s: f64,
        phi: f64,
        t: f64,
    },

    #[error("non-finite flow state at t = {t}")]
    NonFiniteState { t: f64 },

    #[error("fast marching produced a non-monotone update at (s index {i}, alpha index {j})")]
    Marching { i: usize, j: usize },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error(
        "yamabe-derived Sobolev constants need Y_sym > 0 (got {0:.6e}); use the probe_fit strategy"
    )]
    NonPositiveYamabe(f64),

    #[error("kappa0 needs A > 0 and B >= 0 (got A = {a}, B = {b})")]
    BadSobolevPair { a: f64, b: f64 },

    #[error("snapshot gap {gap:.3e} at t = {t:.6} is too coarse for the heat solver; need gaps <= {required:.3e}")]
    CadenceTooCoarse { t: f64, gap: f64, required: f64 },

    #[error("heat kernel start time {l} is outside the trajectory range [{start}, {end}]")]
    KernelStart { l: f64, start: f64, end: f64 },

    #[error("negative heat mass {mass:.3e} at t = {t}")]
    NegativeMass { mass: f64, t: f64 },

    #[error("config error in `{field}`: {msg}")]
    Config { field: String, msg: String },

    #[error("config parse error: {0}")]
    ConfigParse(#[from] serde_json::Error),

    #[error("unknown report format `{0}`")]
    UnknownFormat(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 for configuration problems, 3 for numerical or I/O
    /// failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::ConfigParse(_) | Error::UnknownFormat(_) => 2,
            Error::InvalidProfile(_) => 2,
            _ => 3,
        }
    }
}

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
