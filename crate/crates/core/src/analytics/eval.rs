//! Forward evaluation of the stall bounds together with the strict
//! feasibility checks, and the feasible range of the auxiliary exponent.

use std::collections::HashMap;

use super::load::{LoadState, StreamAt};
use super::tail::geometric_sum;
use crate::error::{Error, Result};
use crate::model::{Instance, PolicyVars, Violation};

/// Streams through which video `i` can be served: every stream of every server
/// with positive access probability for some quality.
pub(crate) fn file_servers(inst: &Instance, x: &PolicyVars, i: usize) -> Vec<usize> {
    (0..inst.num_servers())
        .filter(|&j| (0..inst.num_qualities()).any(|l| x.q[i][l][j] > 0.0))
        .collect()
}

/// `alpha (exp((beta - tau) t) - 1) + t`, divided by `t`.
#[inline]
pub(crate) fn playback_margin(alpha: f64, beta: f64, tau: f64, t: f64) -> f64 {
    alpha * ((beta - tau) * t).exp_m1() / t + 1.0
}

#[derive(Debug, Clone)]
pub(crate) struct FileBounds {
    /// Stall bound per quality; NaN where undefined.
    pub bound: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Forward {
    pub files: Vec<FileBounds>,
    pub violations: Vec<Violation>,
    /// Smallest normalized margin over the checked strict constraints.
    pub min_slack: f64,
}

impl Forward {
    /// Objective value; `None` when a required bound is undefined.
    pub fn objective(&self, inst: &Instance, x: &PolicyVars, theta: f64) -> Option<f64> {
        let total = inst.total_arrival_rate();
        let mut obj = 0.0;
        for (i, v) in inst.videos.iter().enumerate() {
            if !(v.arrival_rate > 0.0) {
                continue;
            }
            let omega = v.arrival_rate / total;
            let mut quality = 0.0;
            let mut stall = 0.0;
            for l in 0..inst.num_qualities() {
                let b = x.b[i][l];
                quality -= b * v.num_segments as f64 * inst.qualities.size(l);
                if b != 0.0 {
                    let s = self.files[i].bound[l];
                    if !s.is_finite() {
                        return None;
                    }
                    stall += b * s;
                }
            }
            obj += omega * (theta * quality + (1.0 - theta) * stall);
        }
        Some(obj)
    }

    pub fn weighted_mean_stall(&self, inst: &Instance, x: &PolicyVars) -> f64 {
        let total = inst.total_arrival_rate();
        let mut acc = 0.0;
        for (i, v) in inst.videos.iter().enumerate() {
            if !(v.arrival_rate > 0.0) {
                continue;
            }
            for l in 0..inst.num_qualities() {
                if x.b[i][l] != 0.0 {
                    acc += v.arrival_rate / total * x.b[i][l] * self.files[i].bound[l];
                }
            }
        }
        acc
    }
}

/// Evaluate every stall bound; with `check` set, also collect the violated
/// strict constraints (stability and bound-existence conditions with margin).
pub(crate) fn forward(inst: &Instance, x: &PolicyVars, load: &LoadState, check: bool) -> Forward {
    let delta = inst.solver.slack_delta;
    let tau = inst.streaming.segment_seconds;
    let ds = inst.streaming.startup_delay;
    let nq = inst.num_qualities();
    let mut violations = Vec::new();
    let mut slack = f64::INFINITY;

    if check {
        for s in 0..inst.num_streams() {
            if load.lambda[s] > 0.0 {
                slack = slack.min(1.0 - load.rho[s]);
            }
            if load.lambda[s] > 0.0 && !(load.rho[s] <= 1.0 - delta) {
                let (server, stream) = inst.stream_location(s);
                violations.push(Violation::Overload { server, stream, rho: load.rho[s] });
            }
        }
    }

    let mut memo: HashMap<(usize, u64), StreamAt> = HashMap::new();
    let mut files = Vec::with_capacity(inst.num_videos());
    for (i, v) in inst.videos.iter().enumerate() {
        let t = x.t[i];
        let active = v.arrival_rate > 0.0;
        if !(t > 0.0) {
            files.push(FileBounds { bound: vec![f64::NAN; nq] });
            continue;
        }
        let damp = (-t * (ds - tau)).exp();
        let mut a = vec![0.0; nq];
        for j in file_servers(inst, x, i) {
            for (nu, s) in inst.streams_of(j).enumerate() {
                let pis: Vec<f64> = (0..nq).map(|l| x.q[i][l][j] * x.p[l][j][nu]).collect();
                if pis.iter().all(|&p| p <= 0.0) {
                    continue;
                }
                let sa = memo.entry((s, t.to_bits())).or_insert_with(|| load.stream_at(s, t));
                if check && active {
                    let (amin, lmin) = load.min_active_alpha[s];
                    slack = slack.min(1.0 - t / amin);
                    if load.lambda[s] > 0.0 {
                        slack = slack.min(sa.den / t);
                    }
                    if t > (1.0 - delta) * amin {
                        violations.push(Violation::ExponentAboveRate {
                            video: i,
                            server: j,
                            stream: nu,
                            quality: lmin,
                            t,
                            alpha: amin,
                        });
                    } else if load.lambda[s] > 0.0 && !(sa.den / t >= delta) {
                        violations.push(Violation::WaitingTransformUndefined {
                            video: i,
                            server: j,
                            stream: nu,
                            margin: sa.den / t,
                        });
                    }
                }
                for l in 0..nq {
                    if pis[l] <= 0.0 {
                        continue;
                    }
                    let alpha = load.alpha[s][l];
                    if check && active {
                        slack = slack.min(1.0 - t / alpha);
                        if t > (1.0 - delta) * alpha {
                            violations.push(Violation::ExponentAboveRate {
                                video: i,
                                server: j,
                                stream: nu,
                                quality: l,
                                t,
                                alpha,
                            });
                        } else {
                            let margin = playback_margin(alpha, load.beta[s][l], tau, t);
                            slack = slack.min(-margin);
                            if !(margin <= -delta) {
                                violations.push(Violation::PlaybackOutpaced {
                                    video: i,
                                    server: j,
                                    stream: nu,
                                    quality: l,
                                    margin,
                                });
                            }
                        }
                    }
                    let y = sa.log_m[l] - t * tau;
                    let h = sa.g * damp * geometric_sum(y, v.num_segments);
                    a[l] += pis[l] * (1.0 + h);
                }
            }
        }
        let bound = a
            .iter()
            .map(|&al| {
                let s = al.ln() / t;
                if s.is_finite() {
                    s
                } else {
                    f64::NAN
                }
            })
            .collect();
        files.push(FileBounds { bound });
    }
    Forward {
        files,
        violations,
        min_slack: slack,
    }
}

/// Strict-constraint violations of a structurally valid policy.
pub(crate) fn strict_violations(inst: &Instance, x: &PolicyVars) -> Vec<Violation> {
    let load = LoadState::new(inst, x);
    forward(inst, x, &load, true).violations
}

const BISECT_REL_TOL: f64 = 1e-9;

/// Largest `t` in `(0, hi]` with `ok(t)` for a predicate that holds on an
/// interval starting at 0. Returns 0 when no evaluated point is feasible.
fn bisect_upper(hi: f64, ok: impl Fn(f64) -> bool) -> f64 {
    if !(hi > 0.0) {
        return 0.0;
    }
    if ok(hi) {
        return hi;
    }
    let mut lo = 0.0;
    let mut hi = hi;
    for _ in 0..200 {
        if hi - lo <= BISECT_REL_TOL * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if ok(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Per-stream and per-(stream, quality) upper limits on the auxiliary
/// exponent, shared by all videos.
pub(crate) struct ExponentLimits<'a> {
    inst: &'a Instance,
    load: &'a LoadState,
    waiting: Vec<Option<f64>>,
    playback: Vec<Vec<Option<f64>>>,
}

impl<'a> ExponentLimits<'a> {
    pub fn new(inst: &'a Instance, load: &'a LoadState) -> Self {
        let ns = inst.num_streams();
        Self {
            inst,
            load,
            waiting: vec![None; ns],
            playback: vec![vec![None; inst.num_qualities()]; ns],
        }
    }

    /// Limit from the waiting-time transform of stream `s` (infinite on an
    /// idle stream).
    fn waiting_limit(&mut self, s: usize) -> f64 {
        if let Some(v) = self.waiting[s] {
            return v;
        }
        let delta = self.inst.solver.slack_delta;
        let load = self.load;
        let v = if load.lambda[s] == 0.0 {
            f64::INFINITY
        } else if !(1.0 - load.rho[s] > delta) {
            0.0
        } else {
            let hi = (1.0 - delta) * load.min_active_alpha[s].0;
            bisect_upper(hi, |t| load.stream_at(s, t).den / t >= delta)
        };
        self.waiting[s] = Some(v);
        v
    }

    /// Limit from the service rate and the playback-pace condition of quality
    /// `l` on stream `s`.
    fn playback_limit(&mut self, s: usize, l: usize) -> f64 {
        if let Some(v) = self.playback[s][l] {
            return v;
        }
        let delta = self.inst.solver.slack_delta;
        let tau = self.inst.streaming.segment_seconds;
        let alpha = self.load.alpha[s][l];
        let beta = self.load.beta[s][l];
        let v = if !(alpha * (beta - tau) + 1.0 <= -delta) {
            0.0
        } else {
            bisect_upper((1.0 - delta) * alpha, |t| {
                playback_margin(alpha, beta, tau, t) <= -delta
            })
        };
        self.playback[s][l] = Some(v);
        v
    }

    /// Largest feasible exponent of video `i`.
    pub fn upper(&mut self, x: &PolicyVars, i: usize) -> Result<f64> {
        let inst = self.inst;
        let delta = inst.solver.slack_delta;
        let mut best = f64::INFINITY;
        let mut reason = String::new();
        for j in file_servers(inst, x, i) {
            for (nu, s) in inst.streams_of(j).enumerate() {
                let mut used = false;
                for l in 0..inst.num_qualities() {
                    if x.q[i][l][j] * x.p[l][j][nu] <= 0.0 {
                        continue;
                    }
                    used = true;
                    let v = self.playback_limit(s, l);
                    if v < best {
                        best = v;
                        reason = format!(
                            "service rate or playback pace at server {j}, stream {nu}, quality {l}"
                        );
                    }
                }
                if used {
                    let v = self.waiting_limit(s);
                    if v < best {
                        best = v;
                        reason = format!("queue load at server {j}, stream {nu}");
                    }
                }
            }
        }
        if !best.is_finite() {
            return Err(Error::EmptyInterval {
                video: i,
                reason: "video is not routed to any stream".into(),
            });
        }
        if best <= delta {
            return Err(Error::EmptyInterval { video: i, reason });
        }
        Ok(best)
    }
}
