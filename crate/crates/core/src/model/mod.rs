//! Cluster, catalog and quality-ladder description plus the decision
//! variables of the scheduling problem.
//!
//! All types are immutable once an [`Instance`] has been validated. Server and
//! video ids from the configuration file are kept for output, but every
//! internal index (placement sets, policy arrays) is positional.

mod config;
mod policy;

pub use config::{
    load_config, parse_config, BlockRegularization, Config, InnerPgd, PlacementSpec, RawServer,
    RawStreaming, RawVideo,
};
pub use policy::{load_policy, validate_policy, PolicyVars, Violation, EQ_TOL};
pub(crate) use policy::structural_ok;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct ServerSpec {
    pub id: u32,
    /// Chunk service rate (1/s) for a unit-size chunk with the full server
    /// bandwidth on one stream.
    pub alpha_base: f64,
    /// Service shift (s) per unit chunk size.
    pub beta_base: f64,
    pub num_streams: usize,
}

/// Per-segment data sizes `a_1 < a_2 < ... < a_V`.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityLadder {
    sizes: Vec<f64>,
}

impl QualityLadder {
    pub fn new(sizes: Vec<f64>) -> Result<Self, String> {
        if sizes.is_empty() {
            return Err("quality ladder is empty".into());
        }
        if !(sizes[0] > 0.0) || !sizes[0].is_finite() {
            return Err(format!("quality size a_1 = {} must be positive", sizes[0]));
        }
        for (l, pair) in sizes.windows(2).enumerate() {
            if !(pair[1] > pair[0]) || !pair[1].is_finite() {
                return Err(format!(
                    "quality sizes must be strictly increasing: a_{} = {} follows a_{} = {}",
                    l + 2,
                    pair[1],
                    l + 1,
                    pair[0]
                ));
            }
        }
        Ok(Self { sizes })
    }

    pub fn sizes(&self) -> &[f64] {
        &self.sizes
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    pub fn size(&self, quality: usize) -> f64 {
        self.sizes[quality]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoSpec {
    pub id: u32,
    pub arrival_rate: f64,
    pub num_segments: usize,
    pub n: usize,
    pub k: usize,
    /// Server indices holding the coded chunks, one sorted set per quality.
    pub placement: Vec<Vec<usize>>,
    /// Whether the configuration gave a single set shared by all qualities.
    pub shared_placement: bool,
}

impl VideoSpec {
    pub fn is_placed(&self, quality: usize, server: usize) -> bool {
        self.placement[quality].binary_search(&server).is_ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamingParams {
    /// Segment playback length tau (s).
    pub segment_seconds: f64,
    /// Start-up delay d_s (s).
    pub startup_delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "defaults::theta")]
    pub theta: f64,
    #[serde(default = "defaults::step_gamma")]
    pub step_gamma: f64,
    #[serde(default)]
    pub reg: BlockRegularization,
    #[serde(default = "defaults::epsilon")]
    pub epsilon: f64,
    #[serde(default = "defaults::max_outer_iters")]
    pub max_outer_iters: usize,
    #[serde(default)]
    pub inner_pgd: InnerPgd,
    #[serde(default = "defaults::slack_delta")]
    pub slack_delta: f64,
    /// Use central finite differences instead of the analytic gradient.
    #[serde(default)]
    pub fd_gradients: bool,
}

pub(crate) mod defaults {
    pub fn theta() -> f64 {
        1e-7
    }
    pub fn step_gamma() -> f64 {
        0.9
    }
    pub fn epsilon() -> f64 {
        1e-6
    }
    pub fn max_outer_iters() -> usize {
        5000
    }
    pub fn slack_delta() -> f64 {
        1e-6
    }
    pub fn reg() -> f64 {
        1.0
    }
    pub fn inner_max_steps() -> usize {
        50
    }
    pub fn inner_tol() -> f64 {
        1e-6
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            theta: defaults::theta(),
            step_gamma: defaults::step_gamma(),
            reg: BlockRegularization::default(),
            epsilon: defaults::epsilon(),
            max_outer_iters: defaults::max_outer_iters(),
            inner_pgd: InnerPgd::default(),
            slack_delta: defaults::slack_delta(),
            fd_gradients: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(format!("theta = {} must lie in [0, 1]", self.theta));
        }
        if !(self.step_gamma > 0.0 && self.step_gamma <= 1.0) {
            return Err(format!("step_gamma = {} must lie in (0, 1]", self.step_gamma));
        }
        for (name, v) in self.reg.named() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(format!("regularization reg.{name} = {v} must be positive"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(format!("epsilon = {} must be positive", self.epsilon));
        }
        if self.max_outer_iters == 0 {
            return Err("max_outer_iters must be at least 1".into());
        }
        if self.inner_pgd.max_steps == 0 {
            return Err("inner_pgd.max_steps must be at least 1".into());
        }
        if !(self.inner_pgd.tol > 0.0) {
            return Err(format!("inner_pgd.tol = {} must be positive", self.inner_pgd.tol));
        }
        if let Some(step) = self.inner_pgd.step {
            if !(step > 0.0) || !step.is_finite() {
                return Err(format!("inner_pgd.step = {step} must be positive"));
            }
        }
        if !(self.slack_delta > 0.0 && self.slack_delta < 0.5) {
            return Err(format!(
                "slack_delta = {} must lie in (0, 0.5)",
                self.slack_delta
            ));
        }
        Ok(())
    }
}

/// A validated problem instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub servers: Vec<ServerSpec>,
    pub qualities: QualityLadder,
    pub videos: Vec<VideoSpec>,
    pub streaming: StreamingParams,
    pub solver: SolverConfig,
    stream_offsets: Vec<usize>,
}

impl Instance {
    pub fn new(
        servers: Vec<ServerSpec>,
        qualities: QualityLadder,
        videos: Vec<VideoSpec>,
        streaming: StreamingParams,
        solver: SolverConfig,
    ) -> Self {
        let mut stream_offsets = Vec::with_capacity(servers.len() + 1);
        let mut acc = 0;
        for s in &servers {
            stream_offsets.push(acc);
            acc += s.num_streams;
        }
        stream_offsets.push(acc);
        Self {
            servers,
            qualities,
            videos,
            streaming,
            solver,
            stream_offsets,
        }
    }

    pub fn num_servers(&self) -> usize {
        self.servers.len()
    }

    pub fn num_videos(&self) -> usize {
        self.videos.len()
    }

    pub fn num_qualities(&self) -> usize {
        self.qualities.len()
    }

    /// Total number of parallel streams across all servers.
    pub fn num_streams(&self) -> usize {
        *self.stream_offsets.last().unwrap()
    }

    /// Flat index of stream `nu` of server `j`.
    pub fn stream_index(&self, j: usize, nu: usize) -> usize {
        self.stream_offsets[j] + nu
    }

    /// Range of flat stream indices belonging to server `j`.
    pub fn streams_of(&self, j: usize) -> std::ops::Range<usize> {
        self.stream_offsets[j]..self.stream_offsets[j + 1]
    }

    /// Inverse of [`Instance::stream_index`].
    pub fn stream_location(&self, s: usize) -> (usize, usize) {
        let j = match self.stream_offsets.binary_search(&s) {
            Ok(mut j) => {
                // skip servers with zero streams (not allowed, but stay safe)
                while self.stream_offsets[j + 1] == s {
                    j += 1;
                }
                j
            }
            Err(j) => j - 1,
        };
        (j, s - self.stream_offsets[j])
    }

    /// Aggregate request rate over the catalog.
    pub fn total_arrival_rate(&self) -> f64 {
        self.videos.iter().map(|v| v.arrival_rate).sum()
    }

    /// Sum of the segment counts of all videos.
    pub fn total_segments(&self) -> usize {
        self.videos.iter().map(|v| v.num_segments).sum()
    }

    pub fn with_solver(mut self, solver: SolverConfig) -> Self {
        self.solver = solver;
        self
    }

    pub fn with_startup_delay(mut self, d: f64) -> Self {
        self.streaming.startup_delay = d;
        self
    }

    /// Copy of the instance with every arrival rate multiplied by `factor`.
    pub fn scaled_arrivals(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for v in &mut out.videos {
            v.arrival_rate *= factor;
        }
        out
    }
}
