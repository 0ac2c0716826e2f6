//! Block-wise successive convex approximation.
//!
//! Each block update minimizes the proximal linearization
//! `g'(x - x0) + (tau/2)|x - x0|^2` over the block's convex set, then moves a
//! fraction `gamma` towards that minimizer. `gamma` is halved until the
//! candidate keeps every strict constraint with margin and does not increase
//! the objective; if no such fraction exists the block is left unchanged.
//! A candidate that moves a block other than `t` may shrink the feasible
//! exponent intervals, so exponents are pulled back onto the new interval
//! ends before the candidate is checked. Entries whose target is zero snap
//! to zero once they get small enough.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::projection::{clamp_exponent, project_box_budget, project_capped_simplex};
use crate::analytics::{fd_gradient, forward, objective_gradient, ExponentLimits, LoadState};
use crate::error::{Error, Result};
use crate::model::{structural_ok, validate_policy, Instance, PolicyVars, SolverConfig};

/// Halvings of `gamma` tried before a block update is abandoned.
const MAX_BACKTRACK: usize = 20;

/// Entries heading for zero are set to zero once below this magnitude.
const SNAP_TO_ZERO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockId {
    QAccess,
    PStream,
    TAux,
    BQuality,
    WBandwidth,
}

impl BlockId {
    /// Update order within one outer iteration.
    pub const ORDER: [BlockId; 5] = [
        BlockId::QAccess,
        BlockId::PStream,
        BlockId::TAux,
        BlockId::BQuality,
        BlockId::WBandwidth,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BlockId::QAccess => "q",
            BlockId::PStream => "p",
            BlockId::TAux => "t",
            BlockId::BQuality => "b",
            BlockId::WBandwidth => "w",
        }
    }

    fn reg(self, cfg: &SolverConfig) -> f64 {
        match self {
            BlockId::QAccess => cfg.reg.q,
            BlockId::PStream => cfg.reg.p,
            BlockId::TAux => cfg.reg.t,
            BlockId::BQuality => cfg.reg.b,
            BlockId::WBandwidth => cfg.reg.w,
        }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Flattened values of one block.
pub fn block_values(x: &PolicyVars, block: BlockId) -> Vec<f64> {
    match block {
        BlockId::QAccess => x.q.iter().flatten().flatten().copied().collect(),
        BlockId::PStream => x.p.iter().flatten().flatten().copied().collect(),
        BlockId::TAux => x.t.clone(),
        BlockId::BQuality => x.b.iter().flatten().copied().collect(),
        BlockId::WBandwidth => x.w.iter().flatten().copied().collect(),
    }
}

/// Inverse of [`block_values`].
pub fn set_block_values(x: &mut PolicyVars, block: BlockId, v: &[f64]) {
    let mut it = v.iter().copied();
    let mut fill = |slot: &mut f64| *slot = it.next().expect("block length");
    match block {
        BlockId::QAccess => x.q.iter_mut().flatten().flatten().for_each(&mut fill),
        BlockId::PStream => x.p.iter_mut().flatten().flatten().for_each(&mut fill),
        BlockId::TAux => x.t.iter_mut().for_each(&mut fill),
        BlockId::BQuality => x.b.iter_mut().flatten().for_each(&mut fill),
        BlockId::WBandwidth => x.w.iter_mut().flatten().for_each(&mut fill),
    }
}

/// Gradient of the objective restricted to one block.
pub fn grad_block(inst: &Instance, x: &PolicyVars, theta: f64, block: BlockId) -> Result<Vec<f64>> {
    let g = full_gradient(inst, x, theta, inst.solver.fd_gradients)?;
    Ok(block_values(&g, block))
}

fn full_gradient(inst: &Instance, x: &PolicyVars, theta: f64, fd: bool) -> Result<PolicyVars> {
    if fd {
        fd_gradient(inst, x, theta)
    } else {
        objective_gradient(inst, x, theta).map(|(_, g)| g)
    }
}

/// Upper limits of the auxiliary exponents at `x` (active videos only).
fn exponent_limits(inst: &Instance, x: &PolicyVars) -> Result<Vec<f64>> {
    let load = LoadState::new(inst, x);
    let mut lim = ExponentLimits::new(inst, &load);
    inst.videos
        .iter()
        .enumerate()
        .map(|(i, v)| {
            if v.arrival_rate > 0.0 {
                lim.upper(x, i)
            } else {
                Ok(f64::INFINITY)
            }
        })
        .collect()
}

/// Project flattened block values onto the block's constraint set. Entries of
/// videos without requests keep their values from `x`.
pub(crate) fn project_block(
    inst: &Instance,
    x: &PolicyVars,
    block: BlockId,
    v: &[f64],
    t_upper: &[f64],
) -> Result<Vec<f64>> {
    let nq = inst.num_qualities();
    let m = inst.num_servers();
    let mut out = Vec::with_capacity(v.len());
    match block {
        BlockId::QAccess => {
            for (i, vid) in inst.videos.iter().enumerate() {
                for l in 0..nq {
                    let off = (i * nq + l) * m;
                    if vid.arrival_rate > 0.0 {
                        out.extend(project_capped_simplex(
                            &v[off..off + m],
                            vid.k as f64,
                            1.0,
                            &vid.placement[l],
                        )?);
                    } else {
                        out.extend(&x.q[i][l]);
                    }
                }
            }
        }
        BlockId::PStream => {
            let mut off = 0;
            for _l in 0..nq {
                for j in 0..m {
                    let d = inst.servers[j].num_streams;
                    let all: Vec<usize> = (0..d).collect();
                    out.extend(project_capped_simplex(&v[off..off + d], 1.0, 1.0, &all)?);
                    off += d;
                }
            }
        }
        BlockId::TAux => {
            let delta = inst.solver.slack_delta;
            for (i, vid) in inst.videos.iter().enumerate() {
                if vid.arrival_rate > 0.0 {
                    out.push(clamp_exponent(v[i], delta, t_upper[i]));
                } else {
                    out.push(x.t[i]);
                }
            }
        }
        BlockId::BQuality => {
            let all: Vec<usize> = (0..nq).collect();
            for (i, vid) in inst.videos.iter().enumerate() {
                if vid.arrival_rate > 0.0 {
                    out.extend(project_capped_simplex(&v[i * nq..(i + 1) * nq], 1.0, 1.0, &all)?);
                } else {
                    out.extend(&x.b[i]);
                }
            }
        }
        BlockId::WBandwidth => {
            let mut off = 0;
            for j in 0..m {
                let d = inst.servers[j].num_streams;
                out.extend(project_box_budget(&v[off..off + d]));
                off += d;
            }
        }
    }
    Ok(out)
}

/// Objective and feasibility of a candidate in one forward pass.
pub(crate) fn evaluate(inst: &Instance, x: &PolicyVars, theta: f64) -> Option<(f64, f64)> {
    if !structural_ok(inst, x) {
        return None;
    }
    let load = LoadState::new(inst, x);
    let fw = forward(inst, x, &load, true);
    if !fw.violations.is_empty() {
        return None;
    }
    fw.objective(inst, x, theta).map(|o| (o, fw.min_slack))
}

/// Result of one block update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub objective: f64,
    pub inner_steps: usize,
    /// Fraction of the way to the surrogate minimizer that was taken; 0 when
    /// the block was left unchanged.
    pub gamma: f64,
    /// `|x - Proj(x - grad / tau)|` at the start of the update.
    pub residual: f64,
    pub slack: f64,
}

/// Minimizer of the block surrogate at `x`, by projected gradient descent.
fn surrogate_minimizer(
    inst: &Instance,
    x: &PolicyVars,
    block: BlockId,
    grad: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, usize, f64)> {
    let tau = block.reg(cfg);
    let t_upper = if block == BlockId::TAux {
        exponent_limits(inst, x)?
    } else {
        Vec::new()
    };
    let x0 = block_values(x, block);
    let prox: Vec<f64> = x0.iter().zip(grad).map(|(a, g)| a - g / tau).collect();
    let closed = project_block(inst, x, block, &prox, &t_upper)?;
    let residual = norm_diff(&closed, &x0);
    let step = match cfg.inner_pgd.step {
        None => return Ok((closed, 1, residual)),
        Some(s) if (s * tau - 1.0).abs() < 1e-15 => return Ok((closed, 1, residual)),
        Some(s) => s,
    };
    let mut z = x0.clone();
    let mut steps = 0;
    for _ in 0..cfg.inner_pgd.max_steps {
        steps += 1;
        let trial: Vec<f64> = z
            .iter()
            .zip(&x0)
            .zip(grad)
            .map(|((zi, xi), g)| zi - step * (g + tau * (zi - xi)))
            .collect();
        let next = project_block(inst, x, block, &trial, &t_upper)?;
        let change = norm_diff(&next, &z);
        z = next;
        if change <= cfg.inner_pgd.tol {
            break;
        }
    }
    Ok((z, steps, residual))
}

fn norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Lower every exponent above its feasible interval at `x` onto the interval
/// end. `None` when some interval is empty.
fn pull_exponents(inst: &Instance, x: &mut PolicyVars) -> Option<()> {
    let upper = exponent_limits(inst, x).ok()?;
    for (t, u) in x.t.iter_mut().zip(upper) {
        if *t > u {
            *t = u;
        }
    }
    Some(())
}

/// One block update from a feasible `x` with known objective `current`.
pub(crate) fn step_block(
    inst: &Instance,
    x: &mut PolicyVars,
    theta: f64,
    block: BlockId,
    cfg: &SolverConfig,
    current: f64,
    gamma0: f64,
) -> Result<StepOutcome> {
    let grad = block_values(&full_gradient(inst, x, theta, cfg.fd_gradients)?, block);
    let (target, inner_steps, residual) = surrogate_minimizer(inst, x, block, &grad, cfg)?;
    let x0 = block_values(x, block);
    let dir: Vec<f64> = target.iter().zip(&x0).map(|(a, b)| a - b).collect();
    let unchanged = StepOutcome {
        objective: current,
        inner_steps,
        gamma: 0.0,
        residual,
        slack: f64::NAN,
    };
    if dir.iter().all(|d| *d == 0.0) {
        return Ok(unchanged);
    }
    let mut gamma = gamma0;
    let mut cand = x.clone();
    for _ in 0..MAX_BACKTRACK {
        let v: Vec<f64> = x0
            .iter()
            .zip(&dir)
            .zip(&target)
            .map(|((a, d), &z)| {
                let v = a + gamma * d;
                if z == 0.0 && v.abs() < SNAP_TO_ZERO {
                    0.0
                } else {
                    v
                }
            })
            .collect();
        set_block_values(&mut cand, block, &v);
        let mut verdict = evaluate(inst, &cand, theta);
        if verdict.is_none() && block != BlockId::TAux && structural_ok(inst, &cand) {
            verdict = pull_exponents(inst, &mut cand).and_then(|_| evaluate(inst, &cand, theta));
        }
        if let Some((obj, slack)) = verdict {
            if obj <= current {
                *x = cand;
                return Ok(StepOutcome {
                    objective: obj,
                    inner_steps,
                    gamma,
                    residual,
                    slack,
                });
            }
        }
        gamma *= 0.5;
    }
    Ok(unchanged)
}

/// One surrogate-minimization update of `block`, starting from a feasible
/// policy.
pub fn nova_step(
    inst: &Instance,
    x: &PolicyVars,
    theta: f64,
    block: BlockId,
    cfg: &SolverConfig,
) -> Result<(PolicyVars, StepOutcome)> {
    let current = require_feasible(inst, x, theta)?;
    let mut next = x.clone();
    let out = step_block(inst, &mut next, theta, block, cfg, current, cfg.step_gamma)?;
    Ok((next, out))
}

fn require_feasible(inst: &Instance, x: &PolicyVars, theta: f64) -> Result<f64> {
    let v = validate_policy(x, inst)?;
    if !v.is_empty() {
        return Err(Error::Infeasible(v));
    }
    evaluate(inst, x, theta)
        .map(|(o, _)| o)
        .ok_or_else(|| Error::Domain("objective undefined at a feasible policy".into()))
}

/// One row of the optimization trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub block: BlockId,
    pub objective: f64,
    pub inner_steps: usize,
    pub gamma: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OptimizeResult {
    pub policy: PolicyVars,
    pub trace: Vec<TraceRow>,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final projected-gradient residual per block, in update order.
    pub residuals: Vec<(BlockId, f64)>,
}

impl OptimizeResult {
    pub fn write_trace_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["iteration", "block", "objective", "inner_steps", "gamma", "slack"])?;
        for r in &self.trace {
            w.write_record([
                r.iteration.to_string(),
                r.block.name().to_string(),
                r.objective.to_string(),
                r.inner_steps.to_string(),
                r.gamma.to_string(),
                r.slack.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

/// Cycle block updates in [`BlockId::ORDER`] until the objective changes by
/// less than `cfg.epsilon` over an outer iteration.
pub fn alternating_optimize(
    inst: &Instance,
    theta: f64,
    init: &PolicyVars,
    cfg: &SolverConfig,
) -> Result<OptimizeResult> {
    optimize_blocks(inst, theta, init, cfg, &BlockId::ORDER)
}

/// [`alternating_optimize`] restricted to the blocks in `free`; the others
/// keep their initial values.
pub fn optimize_blocks(
    inst: &Instance,
    theta: f64,
    init: &PolicyVars,
    cfg: &SolverConfig,
    free: &[BlockId],
) -> Result<OptimizeResult> {
    let mut x = init.clone();
    let mut obj = require_feasible(inst, &x, theta)?;
    let blocks: Vec<BlockId> = BlockId::ORDER.iter().copied().filter(|b| free.contains(b)).collect();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;

    for it in 1..=cfg.max_outer_iters {
        iterations = it;
        let before = obj;
        for &block in &blocks {
            let out = step_block(inst, &mut x, theta, block, cfg, obj, cfg.step_gamma)?;
            obj = out.objective;
            trace.push(TraceRow {
                iteration: it,
                block,
                objective: obj,
                inner_steps: out.inner_steps,
                gamma: out.gamma,
                slack: out.slack,
            });
        }
        if (before - obj).abs() < cfg.epsilon {
            converged = true;
            break;
        }
    }

    // full steps to the surrogate minimizers, kept only where they help
    for &block in &blocks {
        let out = step_block(inst, &mut x, theta, block, cfg, obj, 1.0)?;
        if out.gamma > 0.0 {
            obj = out.objective;
            trace.push(TraceRow {
                iteration: iterations,
                block,
                objective: obj,
                inner_steps: out.inner_steps,
                gamma: out.gamma,
                slack: out.slack,
            });
        }
    }

    let grad = full_gradient(inst, &x, theta, cfg.fd_gradients)?;
    let mut residuals = Vec::with_capacity(blocks.len());
    for &block in &blocks {
        let tau = block.reg(cfg);
        let t_upper = if block == BlockId::TAux {
            exponent_limits(inst, &x)?
        } else {
            Vec::new()
        };
        let x0 = block_values(&x, block);
        let g = block_values(&grad, block);
        let prox: Vec<f64> = x0.iter().zip(&g).map(|(a, g)| a - g / tau).collect();
        let p = project_block(inst, &x, block, &prox, &t_upper)?;
        residuals.push((block, norm_diff(&p, &x0)));
    }

    Ok(OptimizeResult {
        policy: x,
        trace,
        objective: obj,
        iterations,
        converged,
        residuals,
    })
}
