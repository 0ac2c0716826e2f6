//! Closed-form evaluation of loads, queue transforms, the segment tail sums,
//! the per-(video, quality) mean stall bound and the trade-off objective.

mod eval;
mod gradient;
mod load;
mod tail;

pub use gradient::{fd_gradient, objective_gradient};
pub use tail::{geometric_sum, log_chunk_mgf, weighted_geometric_sum};

pub(crate) use eval::{forward, strict_violations, ExponentLimits};
pub(crate) use gradient::raw_objective;
pub(crate) use load::LoadState;

use std::io::Write;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{validate_policy, Instance, PolicyVars, ServerSpec};

/// Service parameters of one stream at one quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveService {
    pub alpha: f64,
    pub beta: f64,
}

/// Scale the unit-size, full-bandwidth parameters to bandwidth share `w` and
/// chunk size `a`.
pub fn effective_params(server: &ServerSpec, w: f64, a: f64) -> Result<EffectiveService> {
    if !(a > 0.0) {
        return Err(Error::Domain(format!("chunk size {a} must be positive")));
    }
    if !(w > 0.0) {
        return Err(Error::ZeroRate { server: server.id as usize, stream: 0 });
    }
    Ok(EffectiveService {
        alpha: server.alpha_base * w / a,
        beta: server.beta_base * a,
    })
}

/// MGF of a shifted-exponential chunk time, `alpha/(alpha - t) exp(beta t)`.
pub fn chunk_mgf(svc: EffectiveService, t: f64) -> Result<f64> {
    if !(t < svc.alpha) {
        return Err(Error::Domain(format!(
            "MGF does not exist: t = {t} >= rate {}",
            svc.alpha
        )));
    }
    Ok(log_chunk_mgf(svc.alpha, svc.beta, t).exp())
}

/// Arrival rate and utilization of every stream, indexed `[j][nu]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamLoad {
    pub lambda: Vec<Vec<f64>>,
    pub rho: Vec<Vec<f64>>,
    /// Sum of all stream arrival rates; equals `sum_i lambda_i k_i` for a
    /// policy whose quality probabilities sum to one.
    pub checksum: f64,
}

fn per_server(inst: &Instance, flat: &[f64]) -> Vec<Vec<f64>> {
    (0..inst.num_servers())
        .map(|j| inst.streams_of(j).map(|s| flat[s]).collect())
        .collect()
}

pub fn stream_arrival_rates(inst: &Instance, x: &PolicyVars) -> Result<StreamLoad> {
    x.check_dims(inst)?;
    let load = LoadState::new(inst, x);
    Ok(stream_load(inst, &load))
}

fn stream_load(inst: &Instance, load: &LoadState) -> StreamLoad {
    StreamLoad {
        lambda: per_server(inst, &load.lambda),
        rho: per_server(inst, &load.rho),
        checksum: load.lambda.iter().sum(),
    }
}

fn check_stream(inst: &Instance, j: usize, nu: usize) -> Result<usize> {
    if j >= inst.num_servers() || nu >= inst.servers[j].num_streams {
        return Err(Error::Dimension(format!("no stream ({j}, {nu})")));
    }
    Ok(inst.stream_index(j, nu))
}

pub fn utilization(inst: &Instance, x: &PolicyVars, j: usize, nu: usize) -> Result<f64> {
    x.check_dims(inst)?;
    let s = check_stream(inst, j, nu)?;
    Ok(LoadState::new(inst, x).rho[s])
}

/// Mixture MGF of the whole-job service time at stream `(j, nu)`.
pub fn file_service_mgf(inst: &Instance, x: &PolicyVars, j: usize, nu: usize, t: f64) -> Result<f64> {
    x.check_dims(inst)?;
    let s = check_stream(inst, j, nu)?;
    let load = LoadState::new(inst, x);
    if load.lambda[s] == 0.0 {
        return Err(Error::Domain(format!(
            "service mixture undefined: stream ({j}, {nu}) receives no requests"
        )));
    }
    let sa = load.stream_at(s, t);
    if !sa.p.is_finite() {
        return Err(Error::Domain(format!(
            "MGF does not exist at t = {t} on stream ({j}, {nu})"
        )));
    }
    Ok(sa.p / load.lambda[s])
}

fn transform_at(inst: &Instance, x: &PolicyVars, j: usize, nu: usize, t: f64) -> Result<(usize, LoadState)> {
    x.check_dims(inst)?;
    let s = check_stream(inst, j, nu)?;
    let load = LoadState::new(inst, x);
    if load.lambda[s] > 0.0 {
        if !(load.rho[s] < 1.0) {
            return Err(Error::Unstable { server: j, stream: nu, rho: load.rho[s] });
        }
        let sa = load.stream_at(s, t);
        if !sa.p.is_finite() {
            return Err(Error::Domain(format!(
                "MGF does not exist at t = {t} on stream ({j}, {nu})"
            )));
        }
        if !(sa.den > 0.0) {
            return Err(Error::Domain(format!(
                "waiting-time transform undefined at t = {t} on stream ({j}, {nu})"
            )));
        }
    }
    Ok((s, load))
}

/// MGF of the download time of the `u`-th chunk of video `i` at quality `l`
/// served by stream `(j, nu)`: queue wait plus `u` chunk times.
#[allow(clippy::too_many_arguments)]
pub fn download_mgf(
    inst: &Instance,
    x: &PolicyVars,
    _video: usize,
    j: usize,
    nu: usize,
    l: usize,
    u: usize,
    t: f64,
) -> Result<f64> {
    let (s, load) = transform_at(inst, x, j, nu, t)?;
    let sa = load.stream_at(s, t);
    let lm = sa.log_m[l];
    if !lm.is_finite() {
        return Err(Error::Domain(format!(
            "MGF does not exist: t = {t} >= rate {}",
            load.alpha[s][l]
        )));
    }
    Ok(sa.g * (u as f64 * lm).exp())
}

/// Mean stationary wait at stream `(j, nu)` (Pollaczek-Khinchine mean).
pub fn mean_waiting_time(inst: &Instance, x: &PolicyVars, j: usize, nu: usize) -> Result<f64> {
    x.check_dims(inst)?;
    let s = check_stream(inst, j, nu)?;
    let load = LoadState::new(inst, x);
    if load.lambda[s] == 0.0 {
        return Ok(0.0);
    }
    let rho = load.rho[s];
    if !(rho < 1.0) {
        return Err(Error::Unstable { server: j, stream: nu, rho });
    }
    let mut second = 0.0;
    for c in &load.classes[s] {
        if c.rate > 0.0 {
            let a = load.alpha[s][c.quality];
            let mean = c.segments * (load.beta[s][c.quality] + 1.0 / a);
            second += c.rate * (c.segments / (a * a) + mean * mean);
        }
    }
    Ok(second / (2.0 * (1.0 - rho)))
}

/// Tail sum `sum_v exp(-t (d_s + (v-1) tau)) Z(v)` in closed form.
#[allow(clippy::too_many_arguments)]
pub fn segment_tail_h(
    inst: &Instance,
    x: &PolicyVars,
    i: usize,
    j: usize,
    nu: usize,
    l: usize,
    t: f64,
) -> Result<f64> {
    let (s, load) = transform_at(inst, x, j, nu, t)?;
    let sa = load.stream_at(s, t);
    let lm = sa.log_m[l];
    if !lm.is_finite() {
        return Err(Error::Domain(format!(
            "MGF does not exist: t = {t} >= rate {}",
            load.alpha[s][l]
        )));
    }
    let tau = inst.streaming.segment_seconds;
    let ds = inst.streaming.startup_delay;
    let y = lm - t * tau;
    Ok(sa.g * (-t * (ds - tau)).exp() * geometric_sum(y, inst.videos[i].num_segments))
}

fn require_feasible(inst: &Instance, x: &PolicyVars) -> Result<()> {
    let v = validate_policy(x, inst)?;
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::Infeasible(v))
    }
}

/// Upper bound on the mean stall duration of video `i` streamed at quality
/// `l`; the policy must be feasible.
pub fn stall_bound(inst: &Instance, x: &PolicyVars, i: usize, l: usize) -> Result<f64> {
    require_feasible(inst, x)?;
    let load = LoadState::new(inst, x);
    let fw = forward(inst, x, &load, false);
    let b = fw.files[i].bound[l];
    if b.is_nan() {
        return Err(Error::Domain(format!("stall bound of video {i} at quality {l} is undefined")));
    }
    Ok(b)
}

/// Trade-off objective: `theta` times the negated quality term plus
/// `1 - theta` times the weighted stall bound.
pub fn objective(inst: &Instance, x: &PolicyVars, theta: f64) -> Result<f64> {
    require_feasible(inst, x)?;
    raw_objective(inst, x, theta).ok_or_else(|| Error::Domain("objective undefined".into()))
}

/// Request-weighted, length-normalized mean segment size.
pub fn average_quality(inst: &Instance, x: &PolicyVars) -> f64 {
    let total = inst.total_arrival_rate();
    let len_total = inst.total_segments() as f64;
    let mut acc = 0.0;
    for (i, v) in inst.videos.iter().enumerate() {
        let w = v.arrival_rate / total * v.num_segments as f64 / len_total;
        for l in 0..inst.num_qualities() {
            acc += w * x.b[i][l] * inst.qualities.size(l);
        }
    }
    acc
}

/// Largest auxiliary exponent of video `i` that keeps every bound condition
/// satisfied with margin.
pub fn t_feasible_upper(inst: &Instance, x: &PolicyVars, i: usize) -> Result<f64> {
    x.check_dims(inst)?;
    let load = LoadState::new(inst, x);
    ExponentLimits::new(inst, &load).upper(x, i)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub theta: f64,
    /// Bound per `[i][l]`; `null` in JSON where undefined.
    pub per_file_quality_bound: Vec<Vec<f64>>,
    pub weighted_mean_stall: f64,
    pub average_quality: f64,
    pub objective: f64,
    pub loads: StreamLoad,
}

pub fn bound_report(inst: &Instance, x: &PolicyVars, theta: f64) -> Result<BoundReport> {
    require_feasible(inst, x)?;
    let load = LoadState::new(inst, x);
    let fw = forward(inst, x, &load, false);
    let objective = fw
        .objective(inst, x, theta)
        .ok_or_else(|| Error::Domain("objective undefined".into()))?;
    Ok(BoundReport {
        theta,
        per_file_quality_bound: fw.files.iter().map(|f| f.bound.clone()).collect(),
        weighted_mean_stall: fw.weighted_mean_stall(inst, x),
        average_quality: average_quality(inst, x),
        objective,
        loads: stream_load(inst, &load),
    })
}

impl BoundReport {
    /// One row per (video, quality).
    pub fn write_csv<W: Write>(&self, inst: &Instance, x: &PolicyVars, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["video_id", "quality", "quality_prob", "stall_bound"])?;
        for (i, row) in self.per_file_quality_bound.iter().enumerate() {
            for (l, b) in row.iter().enumerate() {
                w.write_record([
                    inst.videos[i].id.to_string(),
                    (l + 1).to_string(),
                    x.b[i][l].to_string(),
                    b.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}
