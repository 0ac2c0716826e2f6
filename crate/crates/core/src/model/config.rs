use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{
    defaults, Instance, QualityLadder, ServerSpec, SolverConfig, StreamingParams, VideoSpec,
};
use crate::error::{Error, Result};

/// On-disk form of an instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub servers: Vec<RawServer>,
    pub qualities: Vec<f64>,
    pub videos: Vec<RawVideo>,
    pub streaming: RawStreaming,
    #[serde(default)]
    pub solver: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawServer {
    pub id: u32,
    pub alpha_base: f64,
    pub beta_base: f64,
    pub num_streams: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawVideo {
    pub id: u32,
    pub lambda: f64,
    pub segments: usize,
    pub n: usize,
    pub k: usize,
    #[serde(flatten)]
    pub placement: PlacementSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlacementSpec {
    /// One server set shared by every quality.
    Placement(Vec<u32>),
    /// One server set per quality.
    PlacementPerQuality(Vec<Vec<u32>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawStreaming {
    pub tau: f64,
    pub startup_delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockRegularization {
    #[serde(default = "defaults::reg")]
    pub q: f64,
    #[serde(default = "defaults::reg")]
    pub p: f64,
    #[serde(default = "defaults::reg")]
    pub t: f64,
    #[serde(default = "defaults::reg")]
    pub b: f64,
    #[serde(default = "defaults::reg")]
    pub w: f64,
}

impl Default for BlockRegularization {
    fn default() -> Self {
        Self {
            q: 1.0,
            p: 1.0,
            t: 1.0,
            b: 1.0,
            w: 1.0,
        }
    }
}

impl BlockRegularization {
    pub(crate) fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("q", self.q),
            ("p", self.p),
            ("t", self.t),
            ("b", self.b),
            ("w", self.w),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InnerPgd {
    /// Inner step size; `None` means `1 / reg` of the block.
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default = "defaults::inner_max_steps")]
    pub max_steps: usize,
    #[serde(default = "defaults::inner_tol")]
    pub tol: f64,
}

impl Default for InnerPgd {
    fn default() -> Self {
        Self {
            step: None,
            max_steps: defaults::inner_max_steps(),
            tol: defaults::inner_tol(),
        }
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<Instance> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<Instance> {
    let raw: Config = serde_json::from_str(text)?;
    raw.into_instance()
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::Validation(msg.into())
}

impl Config {
    pub fn into_instance(self) -> Result<Instance> {
        if self.servers.is_empty() {
            return Err(invalid("at least one server is required"));
        }
        let mut index_of = HashMap::new();
        let mut servers = Vec::with_capacity(self.servers.len());
        for (pos, s) in self.servers.iter().enumerate() {
            if index_of.insert(s.id, pos).is_some() {
                return Err(invalid(format!("duplicate server id {}", s.id)));
            }
            if !(s.alpha_base > 0.0) || !s.alpha_base.is_finite() {
                return Err(invalid(format!(
                    "alpha_base = {} of server {} must be positive",
                    s.alpha_base, s.id
                )));
            }
            if !(s.beta_base >= 0.0) || !s.beta_base.is_finite() {
                return Err(invalid(format!(
                    "beta_base = {} of server {} must be non-negative",
                    s.beta_base, s.id
                )));
            }
            if s.num_streams == 0 {
                return Err(invalid(format!(
                    "server {} needs at least one stream",
                    s.id
                )));
            }
            servers.push(ServerSpec {
                id: s.id,
                alpha_base: s.alpha_base,
                beta_base: s.beta_base,
                num_streams: s.num_streams,
            });
        }

        let qualities = QualityLadder::new(self.qualities.clone()).map_err(invalid)?;
        let nq = qualities.len();
        let m = servers.len();

        if self.videos.is_empty() {
            return Err(invalid("at least one video is required"));
        }
        let mut seen_videos = HashMap::new();
        let mut videos = Vec::with_capacity(self.videos.len());
        for v in &self.videos {
            if seen_videos.insert(v.id, ()).is_some() {
                return Err(invalid(format!("duplicate video id {}", v.id)));
            }
            if !(v.lambda >= 0.0) || !v.lambda.is_finite() {
                return Err(invalid(format!(
                    "arrival rate {} of video {} must be non-negative",
                    v.lambda, v.id
                )));
            }
            if v.segments == 0 {
                return Err(invalid(format!("video {} needs at least one segment", v.id)));
            }
            if v.k == 0 || v.k > v.n || v.n > m {
                return Err(invalid(format!(
                    "code ({}, {}) of video {} must satisfy 1 <= k <= n <= {m}",
                    v.n, v.k, v.id
                )));
            }
            let (sets, shared): (Vec<&Vec<u32>>, bool) = match &v.placement {
                PlacementSpec::Placement(set) => (vec![set; nq], true),
                PlacementSpec::PlacementPerQuality(sets) => {
                    if sets.len() != nq {
                        return Err(invalid(format!(
                            "video {} lists {} placement sets for {nq} qualities",
                            v.id,
                            sets.len()
                        )));
                    }
                    (sets.iter().collect(), false)
                }
            };
            let mut placement = Vec::with_capacity(nq);
            for set in sets {
                if set.len() != v.n {
                    return Err(invalid(format!(
                        "placement size {} != n = {} for video {}",
                        set.len(),
                        v.n,
                        v.id
                    )));
                }
                let mut idx = Vec::with_capacity(set.len());
                for id in set {
                    let j = *index_of.get(id).ok_or_else(|| {
                        invalid(format!("video {} is placed on unknown server {id}", v.id))
                    })?;
                    idx.push(j);
                }
                idx.sort_unstable();
                if idx.windows(2).any(|w| w[0] == w[1]) {
                    return Err(invalid(format!(
                        "placement of video {} repeats a server",
                        v.id
                    )));
                }
                placement.push(idx);
            }
            videos.push(VideoSpec {
                id: v.id,
                arrival_rate: v.lambda,
                num_segments: v.segments,
                n: v.n,
                k: v.k,
                placement,
                shared_placement: shared,
            });
        }
        if !(videos.iter().map(|v| v.arrival_rate).sum::<f64>() > 0.0) {
            return Err(invalid("total arrival rate must be positive"));
        }

        let st = &self.streaming;
        if !(st.tau > 0.0) || !st.tau.is_finite() {
            return Err(invalid(format!("segment length tau = {} must be positive", st.tau)));
        }
        if !(st.startup_delay >= 0.0) || !st.startup_delay.is_finite() {
            return Err(invalid(format!(
                "startup delay {} must be non-negative",
                st.startup_delay
            )));
        }
        self.solver.validate().map_err(invalid)?;

        Ok(Instance::new(
            servers,
            qualities,
            videos,
            StreamingParams {
                segment_seconds: st.tau,
                startup_delay: st.startup_delay,
            },
            self.solver,
        ))
    }
}

impl Instance {
    /// Canonical on-disk form; placement sets come out sorted.
    pub fn to_config(&self) -> Config {
        let ids = |set: &Vec<usize>| set.iter().map(|&j| self.servers[j].id).collect::<Vec<_>>();
        Config {
            servers: self
                .servers
                .iter()
                .map(|s| RawServer {
                    id: s.id,
                    alpha_base: s.alpha_base,
                    beta_base: s.beta_base,
                    num_streams: s.num_streams,
                })
                .collect(),
            qualities: self.qualities.sizes().to_vec(),
            videos: self
                .videos
                .iter()
                .map(|v| RawVideo {
                    id: v.id,
                    lambda: v.arrival_rate,
                    segments: v.num_segments,
                    n: v.n,
                    k: v.k,
                    placement: if v.shared_placement {
                        PlacementSpec::Placement(ids(&v.placement[0]))
                    } else {
                        PlacementSpec::PlacementPerQuality(v.placement.iter().map(ids).collect())
                    },
                })
                .collect(),
            streaming: RawStreaming {
                tau: self.streaming.segment_seconds,
                startup_delay: self.streaming.startup_delay,
            },
            solver: self.solver.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_config()).expect("config serializes")
    }
}
