//! Gradient of the objective with respect to all five blocks.
//!
//! One forward sweep per video computes the tail sums and their exponent
//! derivatives; the adjoints of each stream's load, arrival rate and service
//! mixture are then pushed back onto the class rates and from there onto
//! `q`, `p` and `b`. Bandwidth enters only through the service rates.

use std::collections::{BTreeMap, HashMap};
use std::rc::Rc;

use super::eval::forward;
use super::load::{LoadState, StreamAt};
use super::tail::{
    geometric_sum, log_chunk_mgf_dalpha, log_chunk_mgf_dt, weighted_geometric_sum,
};
use crate::error::{Error, Result};
use crate::model::{Instance, PolicyVars};

/// Stand-in magnitude for terms that are undefined at the current point
/// (a transform that does not exist on a stream the video does not use).
const PENALTY: f64 = 1e10;

#[inline]
fn finite_or_penalty(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        PENALTY
    }
}

struct StreamTerms {
    server: usize,
    stream: usize,
    s: usize,
    g: f64,
    den: f64,
    p: f64,
    k: Vec<f64>,
    /// `dK/dlogM` per quality.
    k_dm: Vec<f64>,
    pi: Vec<f64>,
}

/// Servers that hold video `i` at some quality or currently serve it.
fn candidate_servers(inst: &Instance, x: &PolicyVars, i: usize) -> Vec<usize> {
    let v = &inst.videos[i];
    (0..inst.num_servers())
        .filter(|&j| {
            (0..inst.num_qualities()).any(|l| v.is_placed(l, j) || x.q[i][l][j] > 0.0)
        })
        .collect()
}

/// Objective value and its gradient at `x`.
///
/// Entries of videos with zero arrival rate are left at zero.
pub fn objective_gradient(inst: &Instance, x: &PolicyVars, theta: f64) -> Result<(f64, PolicyVars)> {
    let load = LoadState::new(inst, x);
    let nq = inst.num_qualities();
    let ns = inst.num_streams();
    let tau = inst.streaming.segment_seconds;
    let ds = inst.streaming.startup_delay;
    let total = inst.total_arrival_rate();

    let mut grad = PolicyVars::zeros(inst);
    let mut obj = 0.0;
    let mut adj_rho = vec![0.0; ns];
    let mut adj_lambda = vec![0.0; ns];
    let mut adj_class: Vec<Vec<f64>> = load.classes.iter().map(|c| vec![0.0; c.len()]).collect();
    let mut adj_alpha = vec![vec![0.0; nq]; ns];
    let mut adj_p: BTreeMap<(usize, u64), f64> = BTreeMap::new();
    // stream transforms at a video's exponent, with `exp(L_c log M)` per class
    // and `dP/dt`
    let mut memo: HashMap<(usize, u64), Rc<(StreamAt, Vec<f64>, f64)>> = HashMap::new();

    for (i, v) in inst.videos.iter().enumerate() {
        if !(v.arrival_rate > 0.0) {
            continue;
        }
        let omega = v.arrival_rate / total;
        let t = x.t[i];
        if !(t > 0.0) {
            return Err(Error::Domain(format!("auxiliary exponent of video {i} is {t}")));
        }
        let len = v.num_segments;
        let damp = (-t * (ds - tau)).exp();

        let mut terms = Vec::new();
        let mut a = vec![0.0; nq];
        let mut a_dt = vec![0.0; nq];
        for j in candidate_servers(inst, x, i) {
            for (nu, s) in inst.streams_of(j).enumerate() {
                let cached = memo.entry((s, t.to_bits())).or_insert_with(|| {
                    let sa = load.stream_at(s, t);
                    let mut class_pow = Vec::with_capacity(load.classes[s].len());
                    let mut p_dt = 0.0;
                    for c in &load.classes[s] {
                        let lm = sa.log_m[c.quality];
                        let e = (c.segments * lm).exp();
                        class_pow.push(e);
                        if c.rate > 0.0 {
                            let a_s = load.alpha[s][c.quality];
                            let b_s = load.beta[s][c.quality];
                            p_dt += c.rate * c.segments * e * log_chunk_mgf_dt(a_s, b_s, t);
                        }
                    }
                    Rc::new((sa, class_pow, p_dt))
                });
                let cached = Rc::clone(cached);
                let (sa, _, p_dt) = &*cached;
                let p_dt = *p_dt;
                let lam = load.lambda[s];
                let (g, g_dt) = if lam == 0.0 {
                    (1.0, 0.0)
                } else {
                    let g = sa.g;
                    (g, g * (1.0 / t + p_dt / sa.p - (1.0 - p_dt) / sa.den))
                };
                let mut k = vec![f64::NAN; nq];
                let mut k_dt = vec![f64::NAN; nq];
                let mut k_dm = vec![f64::NAN; nq];
                let mut pi = vec![0.0; nq];
                for l in 0..nq {
                    pi[l] = x.q[i][l][j] * x.p[l][j][nu];
                    let lm = sa.log_m[l];
                    if !lm.is_finite() {
                        continue;
                    }
                    let y = lm - t * tau;
                    let s1 = geometric_sum(y, len);
                    let s2 = weighted_geometric_sum(y, len);
                    let m_dt = log_chunk_mgf_dt(load.alpha[s][l], load.beta[s][l], t);
                    k[l] = damp * s1;
                    k_dm[l] = damp * s2;
                    k_dt[l] = -(ds - tau) * k[l] + damp * s2 * (m_dt - tau);
                    if pi[l] > 0.0 {
                        a[l] += pi[l] * (1.0 + g * k[l]);
                        a_dt[l] += pi[l] * (g_dt * k[l] + g * k_dt[l]);
                    }
                }
                terms.push(StreamTerms {
                    server: j,
                    stream: nu,
                    s,
                    g,
                    den: sa.den,
                    p: sa.p,
                    k,
                    k_dm,
                    pi,
                });
            }
        }

        let mut mu = vec![0.0; nq];
        for l in 0..nq {
            let b = x.b[i][l];
            let quality = len as f64 * inst.qualities.size(l);
            let bound = a[l].ln() / t;
            if !bound.is_finite() || !a_dt[l].is_finite() {
                if b != 0.0 {
                    return Err(Error::Domain(format!(
                        "stall bound of video {i} at quality {l} is undefined at t = {t}"
                    )));
                }
                grad.b[i][l] = omega * (-theta * quality + (1.0 - theta) * PENALTY);
                continue;
            }
            obj += omega * (theta * (-b * quality) + (1.0 - theta) * b * bound);
            grad.b[i][l] = omega * (-theta * quality + (1.0 - theta) * bound);
            grad.t[i] += omega * (1.0 - theta) * b * (-a[l].ln() / (t * t) + a_dt[l] / (t * a[l]));
            mu[l] = omega * (1.0 - theta) * b / (t * a[l]);
        }

        for st in &terms {
            let s = st.s;
            let mut eta = 0.0;
            for l in 0..nq {
                let h = st.g * st.k[l];
                let phi = mu[l] * (1.0 + finite_or_penalty(h));
                grad.q[i][l][st.server] += phi * x.p[l][st.server][st.stream];
                grad.p[l][st.server][st.stream] += phi * x.q[i][l][st.server];
                if st.pi[l] > 0.0 && mu[l] != 0.0 {
                    eta += mu[l] * st.pi[l] * st.k[l];
                    adj_alpha[s][l] += mu[l]
                        * st.pi[l]
                        * st.g
                        * st.k_dm[l]
                        * log_chunk_mgf_dalpha(load.alpha[s][l], t);
                }
            }
            let lam = load.lambda[s];
            if eta == 0.0 || lam == 0.0 {
                continue;
            }
            let g = st.g;
            adj_rho[s] += eta * (-g / (1.0 - load.rho[s]));
            adj_lambda[s] += eta * g * (-1.0 / lam - 1.0 / st.den);
            *adj_p.entry((s, t.to_bits())).or_insert(0.0) += eta * g * (1.0 / st.p + 1.0 / st.den);
        }
    }

    // the class powers depend only on (stream, exponent), so the adjoint of
    // P is collected per pair and distributed once
    for (&(s, bits), &g_p) in &adj_p {
        let t = f64::from_bits(bits);
        let pows = &memo[&(s, bits)].1;
        for (ci, c) in load.classes[s].iter().enumerate() {
            let e = finite_or_penalty(pows[ci]);
            adj_class[s][ci] += g_p * e;
            if c.rate > 0.0 {
                adj_alpha[s][c.quality] +=
                    g_p * c.rate * c.segments * e * log_chunk_mgf_dalpha(load.alpha[s][c.quality], t);
            }
        }
    }

    for (j, server) in inst.servers.iter().enumerate() {
        for (nu, s) in inst.streams_of(j).enumerate() {
            for (ci, c) in load.classes[s].iter().enumerate() {
                let l = c.quality;
                let alpha = load.alpha[s][l];
                let kappa = finite_or_penalty(load.beta[s][l] + 1.0 / alpha);
                let g_c = adj_rho[s] * c.segments * kappa + adj_lambda[s] + adj_class[s][ci];
                let f = c.video;
                let lam_f = inst.videos[f].arrival_rate;
                let (b, q, p) = (x.b[f][l], x.q[f][l][j], x.p[l][j][nu]);
                grad.b[f][l] += g_c * lam_f * q * p;
                grad.q[f][l][j] += g_c * lam_f * b * p;
                grad.p[l][j][nu] += g_c * lam_f * b * q;
                if c.rate > 0.0 {
                    adj_alpha[s][l] += adj_rho[s] * c.rate * c.segments * (-1.0 / (alpha * alpha));
                }
            }
            let mut gw = 0.0;
            for l in 0..nq {
                gw += adj_alpha[s][l] * server.alpha_base / inst.qualities.size(l);
            }
            grad.w[j][nu] = gw;
        }
    }
    Ok((obj, grad))
}

/// Objective without feasibility checks; `None` where undefined.
pub(crate) fn raw_objective(inst: &Instance, x: &PolicyVars, theta: f64) -> Option<f64> {
    let load = LoadState::new(inst, x);
    forward(inst, x, &load, false).objective(inst, x, theta)
}

/// Central finite-difference gradient (second-order one-sided difference at
/// the lower boundary of non-negative coordinates).
pub fn fd_gradient(inst: &Instance, x: &PolicyVars, theta: f64) -> Result<PolicyVars> {
    let mut grad = PolicyVars::zeros(inst);
    let mut work = x.clone();
    let eval = |w: &PolicyVars| {
        raw_objective(inst, w, theta)
            .ok_or_else(|| Error::Domain("objective undefined near the evaluation point".into()))
    };
    let f0 = eval(x)?;

    macro_rules! diff {
        ($slot:expr, $gslot:expr) => {{
            let x0 = $slot;
            let h = 1e-6 * x0.abs().max(1e-3);
            let g = if x0 - h >= 0.0 {
                $slot = x0 + h;
                let fp = eval(&work);
                $slot = x0 - h;
                let fm = eval(&work);
                $slot = x0;
                (fp? - fm?) / (2.0 * h)
            } else {
                let h = 1e-6 * x0.abs().max(1.0);
                $slot = x0 + h;
                let f1 = eval(&work);
                $slot = x0 + 2.0 * h;
                let f2 = eval(&work);
                $slot = x0;
                (4.0 * f1? - f2? - 3.0 * f0) / (2.0 * h)
            };
            $gslot = g;
        }};
    }

    let nq = inst.num_qualities();
    for (i, v) in inst.videos.iter().enumerate() {
        if !(v.arrival_rate > 0.0) {
            continue;
        }
        for l in 0..nq {
            for &j in &v.placement[l] {
                diff!(work.q[i][l][j], grad.q[i][l][j]);
            }
            diff!(work.b[i][l], grad.b[i][l]);
        }
        diff!(work.t[i], grad.t[i]);
    }
    for l in 0..nq {
        for j in 0..inst.num_servers() {
            for nu in 0..inst.servers[j].num_streams {
                diff!(work.p[l][j][nu], grad.p[l][j][nu]);
            }
        }
    }
    for j in 0..inst.num_servers() {
        for nu in 0..inst.servers[j].num_streams {
            diff!(work.w[j][nu], grad.w[j][nu]);
        }
    }
    Ok(grad)
}
