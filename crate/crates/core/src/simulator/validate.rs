//! Simulated stalls against the analytic bound.

use serde::Serialize;

use super::{run_simulation, SimConfig, SimReport};
use crate::analytics::bound_report;
use crate::error::{Error, Result};
use crate::model::{validate_policy, Instance, PolicyVars, Violation};

/// Standard errors of slack granted to the empirical mean.
const SE_MARGIN: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCheck {
    /// `None` for the request-weighted aggregate.
    pub video_id: Option<u32>,
    pub quality: Option<usize>,
    pub requests: usize,
    pub empirical: f64,
    pub std_error: Option<f64>,
    pub bound: f64,
    /// `empirical / bound`.
    pub ratio: f64,
    /// `bound >= empirical - 3 std_error`; cells without a standard error
    /// are not judged.
    pub holds: bool,
}

impl BoundCheck {
    fn new(video_id: Option<u32>, quality: Option<usize>, requests: usize, empirical: f64, std_error: Option<f64>, bound: f64) -> Self {
        let holds = match std_error {
            Some(se) => bound >= empirical - SE_MARGIN * se,
            None => true,
        };
        Self {
            video_id,
            quality,
            requests,
            empirical,
            std_error,
            bound,
            ratio: empirical / bound,
            holds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundValidation {
    /// Set when some stream is overloaded; no bound is claimed then.
    pub unstable: bool,
    pub weighted: Option<BoundCheck>,
    pub entries: Vec<BoundCheck>,
    pub simulation: SimReport,
}

impl BoundValidation {
    /// Checks where the empirical stall exceeds the bound beyond noise.
    pub fn findings(&self) -> usize {
        self.weighted.iter().chain(&self.entries).filter(|c| !c.holds).count()
    }
}

/// Simulate `x` and compare per (video, quality) and overall stalls with the
/// analytic bounds.
pub fn validate_bound(inst: &Instance, x: &PolicyVars, sim: &SimConfig) -> Result<BoundValidation> {
    let violations = validate_policy(x, inst)?;
    let overloaded = violations.iter().any(|v| matches!(v, Violation::Overload { .. }));
    if !violations.is_empty() && !overloaded {
        return Err(Error::Infeasible(violations));
    }
    let simulation = run_simulation(inst, x, sim)?;
    if overloaded || simulation.unstable {
        return Ok(BoundValidation {
            unstable: true,
            weighted: None,
            entries: Vec::new(),
            simulation,
        });
    }
    let report = bound_report(inst, x, inst.solver.theta)?;
    let mut entries = Vec::new();
    for (i, file) in simulation.per_file_stall.iter().enumerate() {
        for (l, cell) in file.per_quality.iter().enumerate() {
            if let Some(mean) = cell.mean_stall {
                entries.push(BoundCheck::new(
                    Some(file.video_id),
                    Some(l + 1),
                    cell.requests,
                    mean,
                    cell.std_error,
                    report.per_file_quality_bound[i][l],
                ));
            }
        }
    }
    let overall = simulation.mean_stall;
    let weighted = BoundCheck::new(
        None,
        None,
        simulation.per_file_stall.iter().map(|f| f.requests).sum(),
        overall.mean,
        Some(overall.std_error).filter(|s| s.is_finite()),
        report.weighted_mean_stall,
    );
    Ok(BoundValidation {
        unstable: false,
        weighted: Some(weighted),
        entries,
        simulation,
    })
}
