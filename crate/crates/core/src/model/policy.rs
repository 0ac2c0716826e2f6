use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Instance;
use crate::analytics;
use crate::error::{Error, Result};

/// Absolute tolerance for the equality and box constraints.
pub const EQ_TOL: f64 = 1e-9;

/// The five decision blocks.
///
/// Indexing: `q[i][l][j]`, `p[l][j][nu]`, `b[i][l]`, `w[j][nu]`, `t[i]`. The
/// same shape doubles as a gradient container.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyVars {
    pub q: Vec<Vec<Vec<f64>>>,
    pub p: Vec<Vec<Vec<f64>>>,
    pub b: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub t: Vec<f64>,
}

impl PolicyVars {
    /// All-zero blocks with the instance's shape.
    pub fn zeros(inst: &Instance) -> Self {
        let nq = inst.num_qualities();
        let m = inst.num_servers();
        let d = |j: usize| inst.servers[j].num_streams;
        Self {
            q: vec![vec![vec![0.0; m]; nq]; inst.num_videos()],
            p: (0..nq)
                .map(|_| (0..m).map(|j| vec![0.0; d(j)]).collect())
                .collect(),
            b: vec![vec![0.0; nq]; inst.num_videos()],
            w: (0..m).map(|j| vec![0.0; d(j)]).collect(),
            t: vec![0.0; inst.num_videos()],
        }
    }

    /// Equal access over the placement (`q = k/n`), equal stream and bandwidth
    /// split, equal quality mix and a common auxiliary exponent `t0`.
    pub fn uniform(inst: &Instance, t0: f64) -> Self {
        let mut x = Self::zeros(inst);
        let nq = inst.num_qualities();
        for (i, v) in inst.videos.iter().enumerate() {
            for l in 0..nq {
                for &j in &v.placement[l] {
                    x.q[i][l][j] = v.k as f64 / v.n as f64;
                }
                x.b[i][l] = 1.0 / nq as f64;
            }
            x.t[i] = t0;
        }
        for j in 0..inst.num_servers() {
            let d = inst.servers[j].num_streams as f64;
            for l in 0..nq {
                x.p[l][j].fill(1.0 / d);
            }
            x.w[j].fill(1.0 / d);
        }
        x
    }

    pub fn check_dims(&self, inst: &Instance) -> Result<()> {
        let nq = inst.num_qualities();
        let m = inst.num_servers();
        let r = inst.num_videos();
        let bad = |what: &str| Err(Error::Dimension(what.to_string()));
        if self.q.len() != r || self.b.len() != r || self.t.len() != r {
            return bad(&format!("policy covers {} videos, instance has {r}", self.q.len()));
        }
        if self.p.len() != nq {
            return bad(&format!("p lists {} qualities, instance has {nq}", self.p.len()));
        }
        if self.w.len() != m {
            return bad(&format!("w lists {} servers, instance has {m}", self.w.len()));
        }
        for i in 0..r {
            if self.q[i].len() != nq || self.q[i].iter().any(|row| row.len() != m) {
                return bad(&format!("q block of video {i} is not {nq} x {m}"));
            }
            if self.b[i].len() != nq {
                return bad(&format!("b row of video {i} has {} entries", self.b[i].len()));
            }
        }
        for j in 0..m {
            let d = inst.servers[j].num_streams;
            if self.w[j].len() != d || (0..nq).any(|l| self.p[l].len() != m || self.p[l][j].len() != d)
            {
                return bad(&format!("stream count of server {j} differs from {d}"));
            }
        }
        Ok(())
    }

    /// Flatten every entry in a fixed order (q, p, b, w, t).
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.q.iter().flatten().flatten());
        out.extend(self.p.iter().flatten().flatten());
        out.extend(self.b.iter().flatten());
        out.extend(self.w.iter().flatten());
        out.extend(&self.t);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }
}

pub fn load_policy(path: impl AsRef<Path>, inst: &Instance) -> Result<PolicyVars> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let policy: PolicyVars = serde_json::from_str(&text)?;
    policy.check_dims(inst)?;
    Ok(policy)
}

/// A violated feasibility condition. Indices are positional.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    AccessSum {
        video: usize,
        quality: usize,
        sum: f64,
        k: usize,
    },
    AccessRange {
        video: usize,
        quality: usize,
        server: usize,
        value: f64,
    },
    AccessOffPlacement {
        video: usize,
        quality: usize,
        server: usize,
        value: f64,
    },
    StreamSum {
        quality: usize,
        server: usize,
        sum: f64,
    },
    StreamNegative {
        quality: usize,
        server: usize,
        stream: usize,
        value: f64,
    },
    QualitySum {
        video: usize,
        sum: f64,
    },
    QualityNegative {
        video: usize,
        quality: usize,
        value: f64,
    },
    BandwidthRange {
        server: usize,
        stream: usize,
        value: f64,
    },
    BandwidthBudget {
        server: usize,
        sum: f64,
    },
    ExponentNotPositive {
        video: usize,
        t: f64,
    },
    Overload {
        server: usize,
        stream: usize,
        rho: f64,
    },
    ExponentAboveRate {
        video: usize,
        server: usize,
        stream: usize,
        quality: usize,
        t: f64,
        alpha: f64,
    },
    PlaybackOutpaced {
        video: usize,
        server: usize,
        stream: usize,
        quality: usize,
        margin: f64,
    },
    WaitingTransformUndefined {
        video: usize,
        server: usize,
        stream: usize,
        margin: f64,
    },
    NonFinite {
        block: &'static str,
    },
}

impl Violation {
    /// Short machine-friendly tag of the violated condition.
    pub fn kind(&self) -> &'static str {
        match self {
            Violation::AccessSum { .. } => "access_sum",
            Violation::AccessRange { .. } => "access_range",
            Violation::AccessOffPlacement { .. } => "access_off_placement",
            Violation::StreamSum { .. } => "stream_sum",
            Violation::StreamNegative { .. } => "stream_negative",
            Violation::QualitySum { .. } => "quality_sum",
            Violation::QualityNegative { .. } => "quality_negative",
            Violation::BandwidthRange { .. } => "bandwidth_range",
            Violation::BandwidthBudget { .. } => "bandwidth_budget",
            Violation::ExponentNotPositive { .. } => "exponent_not_positive",
            Violation::Overload { .. } => "overload",
            Violation::ExponentAboveRate { .. } => "exponent_above_rate",
            Violation::PlaybackOutpaced { .. } => "playback_outpaced",
            Violation::WaitingTransformUndefined { .. } => "waiting_transform_undefined",
            Violation::NonFinite { .. } => "non_finite",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Violation::AccessSum { video, quality, sum, k } => write!(
                f,
                "server access probabilities must sum to k (video {video}, quality {quality}: sum {sum}, k {k})"
            ),
            Violation::AccessRange { video, quality, server, value } => write!(
                f,
                "server access probability must lie in [0, 1] (video {video}, quality {quality}, server {server}: {value})"
            ),
            Violation::AccessOffPlacement { video, quality, server, value } => write!(
                f,
                "server access probability must be 0 off the placement (video {video}, quality {quality}, server {server}: {value})"
            ),
            Violation::StreamSum { quality, server, sum } => write!(
                f,
                "stream selection probabilities must sum to 1 (quality {quality}, server {server}: sum {sum})"
            ),
            Violation::StreamNegative { quality, server, stream, value } => write!(
                f,
                "stream selection probability must be non-negative (quality {quality}, server {server}, stream {stream}: {value})"
            ),
            Violation::QualitySum { video, sum } => write!(
                f,
                "quality probabilities must sum to 1 (video {video}: sum {sum})"
            ),
            Violation::QualityNegative { video, quality, value } => write!(
                f,
                "quality probability must be non-negative (video {video}, quality {quality}: {value})"
            ),
            Violation::BandwidthRange { server, stream, value } => write!(
                f,
                "bandwidth weight must lie in [0, 1] (server {server}, stream {stream}: {value})"
            ),
            Violation::BandwidthBudget { server, sum } => write!(
                f,
                "bandwidth weights of a server must sum to at most 1 (server {server}: sum {sum})"
            ),
            Violation::ExponentNotPositive { video, t } => write!(
                f,
                "auxiliary exponent must be positive (video {video}: t {t})"
            ),
            Violation::Overload { server, stream, rho } => write!(
                f,
                "stream utilization must stay below 1 (server {server}, stream {stream}: rho {rho})"
            ),
            Violation::ExponentAboveRate { video, server, stream, quality, t, alpha } => write!(
                f,
                "auxiliary exponent must stay below the chunk service rate (video {video}, server {server}, stream {stream}, quality {quality}: t {t}, rate {alpha})"
            ),
            Violation::PlaybackOutpaced { video, server, stream, quality, margin } => write!(
                f,
                "segment download must outpace playback at the auxiliary exponent (video {video}, server {server}, stream {stream}, quality {quality}: margin {margin})"
            ),
            Violation::WaitingTransformUndefined { video, server, stream, margin } => write!(
                f,
                "waiting-time transform must exist at the auxiliary exponent (video {video}, server {server}, stream {stream}: margin {margin})"
            ),
            Violation::NonFinite { block } => write!(f, "block {block} contains non-finite values"),
        }
    }
}

/// Simplex, box and support constraints, checked to [`EQ_TOL`].
pub(crate) fn structural_violations(inst: &Instance, x: &PolicyVars) -> Vec<Violation> {
    let mut out = Vec::new();
    fn finite<'a>(mut v: impl Iterator<Item = &'a f64>) -> bool {
        v.all(|x| x.is_finite())
    }
    for (block, ok) in [
        ("q", finite(x.q.iter().flatten().flatten())),
        ("p", finite(x.p.iter().flatten().flatten())),
        ("b", finite(x.b.iter().flatten())),
        ("w", finite(x.w.iter().flatten())),
        ("t", finite(x.t.iter())),
    ] {
        if !ok {
            out.push(Violation::NonFinite { block });
        }
    }
    if !out.is_empty() {
        return out;
    }

    let nq = inst.num_qualities();
    for (i, v) in inst.videos.iter().enumerate() {
        for l in 0..nq {
            let row = &x.q[i][l];
            for (j, &val) in row.iter().enumerate() {
                if !(-EQ_TOL..=1.0 + EQ_TOL).contains(&val) {
                    out.push(Violation::AccessRange { video: i, quality: l, server: j, value: val });
                }
                if val.abs() > EQ_TOL && !v.is_placed(l, j) {
                    out.push(Violation::AccessOffPlacement {
                        video: i,
                        quality: l,
                        server: j,
                        value: val,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if (sum - v.k as f64).abs() > EQ_TOL {
                out.push(Violation::AccessSum { video: i, quality: l, sum, k: v.k });
            }
        }
        let mut sum = 0.0;
        for (l, &val) in x.b[i].iter().enumerate() {
            if val < -EQ_TOL {
                out.push(Violation::QualityNegative { video: i, quality: l, value: val });
            }
            sum += val;
        }
        if (sum - 1.0).abs() > EQ_TOL {
            out.push(Violation::QualitySum { video: i, sum });
        }
        if v.arrival_rate > 0.0 && !(x.t[i] > 0.0) {
            out.push(Violation::ExponentNotPositive { video: i, t: x.t[i] });
        }
    }
    for l in 0..nq {
        for j in 0..inst.num_servers() {
            let mut sum = 0.0;
            for (nu, &val) in x.p[l][j].iter().enumerate() {
                if val < -EQ_TOL {
                    out.push(Violation::StreamNegative { quality: l, server: j, stream: nu, value: val });
                }
                sum += val;
            }
            if (sum - 1.0).abs() > EQ_TOL {
                out.push(Violation::StreamSum { quality: l, server: j, sum });
            }
        }
    }
    for j in 0..inst.num_servers() {
        let mut sum = 0.0;
        for (nu, &val) in x.w[j].iter().enumerate() {
            if !(-EQ_TOL..=1.0 + EQ_TOL).contains(&val) {
                out.push(Violation::BandwidthRange { server: j, stream: nu, value: val });
            }
            sum += val;
        }
        if sum > 1.0 + EQ_TOL {
            out.push(Violation::BandwidthBudget { server: j, sum });
        }
    }
    out
}

pub(crate) fn structural_ok(inst: &Instance, x: &PolicyVars) -> bool {
    structural_violations(inst, x).is_empty()
}

/// Every violated constraint of `x`, empty when the policy is feasible.
///
/// Simplex, box and support constraints are checked to [`EQ_TOL`]; stability
/// and the existence conditions of the stall bound must hold with the
/// instance's `slack_delta` margin.
pub fn validate_policy(x: &PolicyVars, inst: &Instance) -> Result<Vec<Violation>> {
    x.check_dims(inst)?;
    let mut out = structural_violations(inst, x);
    if out.iter().any(|v| matches!(v, Violation::NonFinite { .. })) {
        return Ok(out);
    }
    out.extend(analytics::strict_violations(inst, x));
    Ok(out)
}
