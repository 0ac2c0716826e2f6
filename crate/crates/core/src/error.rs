use std::path::PathBuf;

use thiserror::Error;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed document: {0}")]
    Parse(#[from] serde_json::Error),

    /// A configuration value breaks one of the model invariants.
    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A transform was evaluated outside the region where it exists.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("stream ({server}, {stream}) carries no bandwidth")]
    ZeroRate { server: usize, stream: usize },

    #[error("queue at stream ({server}, {stream}) is unstable: utilization {rho:.6} >= 1")]
    Unstable {
        server: usize,
        stream: usize,
        rho: f64,
    },

    #[error("policy infeasible: {}", format_violations(.0))]
    Infeasible(Vec<Violation>),

    /// No auxiliary exponent keeps the stall bound of `video` well defined.
    #[error("empty feasible interval for the auxiliary exponent of video {video}: {reason}")]
    EmptyInterval { video: usize, reason: String },

    #[error("target sum {total} exceeds capacity {capacity} of the support")]
    InfeasibleTarget { total: f64, capacity: f64 },

    #[error("sampling weights sum to {sum}, expected {expected}")]
    SamplingSum { sum: f64, expected: f64 },

    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
}

fn format_violations(v: &[Violation]) -> String {
    let shown: Vec<String> = v.iter().take(8).map(|x| x.to_string()).collect();
    let mut s = shown.join("; ");
    if v.len() > 8 {
        s.push_str(&format!("; ... ({} more)", v.len() - 8));
    }
    s
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
