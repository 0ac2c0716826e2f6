use super::projection::{clamp_exponent, project_box_budget, project_capped_simplex};
use crate::analytics::{ExponentLimits, LoadState};
use crate::error::{Error, Result};
use crate::model::{validate_policy, Instance, PolicyVars, EQ_TOL};

fn row_ok(row: &[f64], total: f64, cap: f64, support: Option<&[usize]>) -> bool {
    let in_support = |j: usize| support.is_none_or(|s| s.contains(&j));
    let sum: f64 = row.iter().sum();
    (sum - total).abs() <= EQ_TOL
        && row.iter().enumerate().all(|(j, &v)| {
            if in_support(j) {
                v >= 0.0 && v <= cap
            } else {
                v == 0.0
            }
        })
}

/// Closest feasible policy to `raw`, block by block in the order q, p, b, w, t.
///
/// Rows that already satisfy their constraints are left untouched, so the
/// repair is the identity on feasible input.
pub fn feasibility_repair(inst: &Instance, raw: &PolicyVars) -> Result<PolicyVars> {
    raw.check_dims(inst)?;
    let mut x = raw.clone();
    let nq = inst.num_qualities();
    let m = inst.num_servers();

    for (i, v) in inst.videos.iter().enumerate() {
        for l in 0..nq {
            let support = &v.placement[l];
            if !row_ok(&x.q[i][l], v.k as f64, 1.0, Some(support)) {
                x.q[i][l] = project_capped_simplex(&x.q[i][l], v.k as f64, 1.0, support)?;
            }
        }
    }
    for l in 0..nq {
        for j in 0..m {
            if !row_ok(&x.p[l][j], 1.0, 1.0, None) {
                let all: Vec<usize> = (0..x.p[l][j].len()).collect();
                x.p[l][j] = project_capped_simplex(&x.p[l][j], 1.0, 1.0, &all)?;
            }
        }
    }
    let all_q: Vec<usize> = (0..nq).collect();
    for i in 0..inst.num_videos() {
        if !row_ok(&x.b[i], 1.0, 1.0, None) {
            x.b[i] = project_capped_simplex(&x.b[i], 1.0, 1.0, &all_q)?;
        }
    }
    for j in 0..m {
        let row = &x.w[j];
        let ok = row.iter().all(|&v| (0.0..=1.0).contains(&v)) && row.iter().sum::<f64>() <= 1.0 + EQ_TOL;
        if !ok {
            x.w[j] = project_box_budget(row);
        }
    }

    let load = LoadState::new(inst, &x);
    let delta = inst.solver.slack_delta;
    for s in 0..inst.num_streams() {
        if load.lambda[s] > 0.0 && !(load.rho[s] <= 1.0 - delta) {
            let (server, stream) = inst.stream_location(s);
            return Err(Error::Unstable { server, stream, rho: load.rho[s] });
        }
    }
    let mut limits = ExponentLimits::new(inst, &load);
    for (i, v) in inst.videos.iter().enumerate() {
        if v.arrival_rate > 0.0 {
            let upper = limits.upper(&x, i)?;
            x.t[i] = clamp_exponent(x.t[i], delta, upper);
        } else if !(x.t[i] > 0.0) {
            x.t[i] = delta;
        }
    }

    let violations = validate_policy(&x, inst)?;
    if !violations.is_empty() {
        return Err(Error::Infeasible(violations));
    }
    Ok(x)
}
