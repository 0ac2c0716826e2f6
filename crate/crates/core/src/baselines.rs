//! Comparison strategies: fixed initializations of some blocks followed by
//! alternating optimization over the remaining ones.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analytics::{bound_report, BoundReport};
use crate::error::{Error, Result};
use crate::model::{Instance, PolicyVars, SolverConfig};
use crate::optimizer::{feasibility_repair, optimize_blocks, BlockId, OptimizeResult, INITIAL_EXPONENT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaselineKind {
    /// Equal server access, everything else optimized.
    #[serde(rename = "PEA-QTB")]
    PeaQtb,
    /// Equal bandwidth split.
    #[serde(rename = "PEB-QTA")]
    PebQta,
    /// Equal quality mix.
    #[serde(rename = "PEQ-BTA")]
    PeqBta,
    /// Server access proportional to service rate.
    #[serde(rename = "PSP-QTB")]
    PspQtb,
    /// Lowest quality for every video.
    #[serde(rename = "PLQ-BTA")]
    PlqBta,
    /// Highest quality for every video.
    #[serde(rename = "PHQ-BTA")]
    PhqBta,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 6] = [
        BaselineKind::PeaQtb,
        BaselineKind::PebQta,
        BaselineKind::PeqBta,
        BaselineKind::PspQtb,
        BaselineKind::PlqBta,
        BaselineKind::PhqBta,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::PeaQtb => "PEA-QTB",
            BaselineKind::PebQta => "PEB-QTA",
            BaselineKind::PeqBta => "PEQ-BTA",
            BaselineKind::PspQtb => "PSP-QTB",
            BaselineKind::PlqBta => "PLQ-BTA",
            BaselineKind::PhqBta => "PHQ-BTA",
        }
    }

    /// Blocks optimized by this strategy, in update order.
    pub fn free_blocks(self) -> Vec<BlockId> {
        use BlockId::*;
        let frozen = match self {
            BaselineKind::PeaQtb | BaselineKind::PspQtb => QAccess,
            BaselineKind::PebQta => WBandwidth,
            BaselineKind::PeqBta | BaselineKind::PlqBta | BaselineKind::PhqBta => BQuality,
        };
        BlockId::ORDER.into_iter().filter(|&b| b != frozen).collect()
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase();
        BaselineKind::ALL
            .into_iter()
            .find(|k| {
                let name = k.name().to_ascii_lowercase();
                key == name || key == name[..3]
            })
            .ok_or_else(|| Error::Validation(format!("unknown baseline '{s}'")))
    }
}

/// Mean chunk service rate of server `j` at quality `l` with the whole
/// bandwidth: `1 / (beta + 1/alpha)`.
fn service_rate(inst: &Instance, j: usize, l: usize) -> f64 {
    let a = inst.qualities.size(l);
    let s = &inst.servers[j];
    1.0 / (s.beta_base * a + a / s.alpha_base)
}

/// Raw initialization of `kind` before repair.
pub fn raw_init(inst: &Instance, kind: BaselineKind) -> PolicyVars {
    let mut x = PolicyVars::uniform(inst, INITIAL_EXPONENT);
    let nq = inst.num_qualities();
    match kind {
        BaselineKind::PeaQtb | BaselineKind::PebQta | BaselineKind::PeqBta => {}
        BaselineKind::PspQtb => {
            for (i, v) in inst.videos.iter().enumerate() {
                for l in 0..nq {
                    let total: f64 = v.placement[l].iter().map(|&j| service_rate(inst, j, l)).sum();
                    for &j in &v.placement[l] {
                        x.q[i][l][j] = v.k as f64 * service_rate(inst, j, l) / total;
                    }
                }
            }
        }
        BaselineKind::PlqBta | BaselineKind::PhqBta => {
            let top = if kind == BaselineKind::PlqBta { 0 } else { nq - 1 };
            for b in &mut x.b {
                b.fill(0.0);
                b[top] = 1.0;
            }
        }
    }
    x
}

/// Feasible starting point of `kind`.
pub fn baseline_init(inst: &Instance, kind: BaselineKind) -> Result<PolicyVars> {
    feasibility_repair(inst, &raw_init(inst, kind))
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineRun {
    pub kind: BaselineKind,
    #[serde(skip)]
    pub result: OptimizeResult,
    pub report: BoundReport,
}

/// Optimize the free blocks of `kind` from its initialization.
pub fn run_baseline(inst: &Instance, kind: BaselineKind, theta: f64, cfg: &SolverConfig) -> Result<BaselineRun> {
    let init = baseline_init(inst, kind)?;
    let result = optimize_blocks(inst, theta, &init, cfg, &kind.free_blocks())?;
    let report = bound_report(inst, &result.policy, theta)?;
    Ok(BaselineRun { kind, result, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_config;

    fn instance() -> Instance {
        parse_config(
            r#"{
            "servers": [
                {"id": 1, "alpha_base": 40.0, "beta_base": 0.01, "num_streams": 2},
                {"id": 2, "alpha_base": 40.0, "beta_base": 0.01, "num_streams": 2},
                {"id": 3, "alpha_base": 80.0, "beta_base": 0.01, "num_streams": 2}
            ],
            "qualities": [1.0, 2.0],
            "videos": [
                {"id": 0, "lambda": 0.01, "segments": 4, "n": 3, "k": 2, "placement": [1, 2, 3]},
                {"id": 1, "lambda": 0.02, "segments": 3, "n": 2, "k": 1, "placement": [1, 2]}
            ],
            "streaming": {"tau": 1.0, "startup_delay": 2.0}
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn names_parse_back() {
        for k in BaselineKind::ALL {
            assert_eq!(k.name().parse::<BaselineKind>().unwrap(), k);
        }
        assert_eq!("plq".parse::<BaselineKind>().unwrap(), BaselineKind::PlqBta);
        assert!("xyz".parse::<BaselineKind>().is_err());
    }

    #[test]
    fn each_kind_freezes_one_block() {
        for k in BaselineKind::ALL {
            assert_eq!(k.free_blocks().len(), 4);
            assert!(k.free_blocks().contains(&BlockId::TAux));
        }
    }

    #[test]
    fn quality_extremes() {
        let inst = instance();
        let lo = baseline_init(&inst, BaselineKind::PlqBta).unwrap();
        let hi = baseline_init(&inst, BaselineKind::PhqBta).unwrap();
        for i in 0..2 {
            assert_eq!(lo.b[i], vec![1.0, 0.0]);
            assert_eq!(hi.b[i], vec![0.0, 1.0]);
        }
    }

    #[test]
    fn proportional_access_favours_faster_server() {
        let inst = instance();
        let x = baseline_init(&inst, BaselineKind::PspQtb).unwrap();
        assert!(x.q[0][0][2] > x.q[0][0][0]);
        assert!((x.q[0][0].iter().sum::<f64>() - 2.0).abs() < 1e-12);
        // both servers of video 1 are identical
        assert!((x.q[1][1][0] - 0.5).abs() < 1e-12);
    }
}
