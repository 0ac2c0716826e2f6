//! Alternating minimization of the trade-off objective over the five
//! decision blocks, with the projections and repair used to stay feasible.

mod nova;
mod projection;
mod repair;

pub use nova::{
    alternating_optimize, block_values, grad_block, nova_step, optimize_blocks, set_block_values,
    BlockId, OptimizeResult, StepOutcome, TraceRow,
};
pub use projection::{clamp_exponent, project_box_budget, project_capped_simplex};
pub use repair::feasibility_repair;

use crate::analytics::t_feasible_upper;
use crate::error::Result;
use crate::model::{Instance, PolicyVars};

/// Auxiliary exponent used by the default initializations.
pub const INITIAL_EXPONENT: f64 = 0.01;

/// Clamp the exponent of video `i` into its feasible interval.
pub fn project_t(inst: &Instance, x: &PolicyVars, i: usize) -> Result<f64> {
    let upper = t_feasible_upper(inst, x, i)?;
    Ok(clamp_exponent(x.t[i], inst.solver.slack_delta, upper))
}
