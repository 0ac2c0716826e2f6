//! Per-stream traffic classes, loads and queue transforms.

use super::tail::log_chunk_mgf;
use crate::model::{Instance, PolicyVars};

/// Requests of one (video, quality) pair routed to one stream.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Class {
    pub video: usize,
    pub quality: usize,
    /// `lambda_i b_il q_ilj p_ljnu`; zero for classes that are possible under
    /// the placement but currently unused.
    pub rate: f64,
    pub segments: f64,
}

/// Loads derived from a policy, indexed by flat stream id.
#[derive(Debug, Clone)]
pub(crate) struct LoadState {
    /// Effective chunk service rate `[s][l]`.
    pub alpha: Vec<Vec<f64>>,
    /// Effective service shift `[s][l]`.
    pub beta: Vec<Vec<f64>>,
    pub classes: Vec<Vec<Class>>,
    pub lambda: Vec<f64>,
    pub rho: Vec<f64>,
    /// Smallest service rate among classes with positive rate, per stream.
    pub min_active_alpha: Vec<(f64, usize)>,
}

/// Queue transforms of one stream at a given exponent.
#[derive(Debug, Clone)]
pub(crate) struct StreamAt {
    /// Log chunk MGF per quality; `+inf` where it does not exist.
    pub log_m: Vec<f64>,
    /// `sum_c rate_c M^{L_c}` over classes with positive rate.
    pub p: f64,
    /// `t + Lambda - P`.
    pub den: f64,
    /// Waiting-time MGF; 1 for an idle stream, NaN where undefined.
    pub g: f64,
}

impl LoadState {
    pub fn new(inst: &Instance, x: &PolicyVars) -> Self {
        let ns = inst.num_streams();
        let nq = inst.num_qualities();
        let mut alpha = vec![vec![0.0; nq]; ns];
        let mut beta = vec![vec![0.0; nq]; ns];
        for (j, server) in inst.servers.iter().enumerate() {
            for (nu, s) in inst.streams_of(j).enumerate() {
                for l in 0..nq {
                    let a = inst.qualities.size(l);
                    alpha[s][l] = server.alpha_base * x.w[j][nu] / a;
                    beta[s][l] = server.beta_base * a;
                }
            }
        }

        let mut classes: Vec<Vec<Class>> = vec![Vec::new(); ns];
        for (i, v) in inst.videos.iter().enumerate() {
            if !(v.arrival_rate > 0.0) {
                continue;
            }
            for l in 0..nq {
                for j in 0..inst.num_servers() {
                    let q = x.q[i][l][j];
                    if !v.is_placed(l, j) && q == 0.0 {
                        continue;
                    }
                    let base = v.arrival_rate * x.b[i][l] * q;
                    for (nu, s) in inst.streams_of(j).enumerate() {
                        classes[s].push(Class {
                            video: i,
                            quality: l,
                            rate: (base * x.p[l][j][nu]).max(0.0),
                            segments: v.num_segments as f64,
                        });
                    }
                }
            }
        }

        let mut lambda = vec![0.0; ns];
        let mut rho = vec![0.0; ns];
        let mut min_active_alpha = vec![(f64::INFINITY, 0); ns];
        for s in 0..ns {
            for c in &classes[s] {
                if c.rate > 0.0 {
                    let a = alpha[s][c.quality];
                    lambda[s] += c.rate;
                    rho[s] += c.rate * c.segments * (beta[s][c.quality] + 1.0 / a);
                    if a < min_active_alpha[s].0 {
                        min_active_alpha[s] = (a, c.quality);
                    }
                }
            }
        }
        Self {
            alpha,
            beta,
            classes,
            lambda,
            rho,
            min_active_alpha,
        }
    }

    pub fn stream_at(&self, s: usize, t: f64) -> StreamAt {
        let log_m: Vec<f64> = self.alpha[s]
            .iter()
            .zip(&self.beta[s])
            .map(|(&a, &b)| log_chunk_mgf(a, b, t))
            .collect();
        let lam = self.lambda[s];
        if lam == 0.0 {
            return StreamAt {
                log_m,
                p: 0.0,
                den: t,
                g: 1.0,
            };
        }
        let mut p = 0.0;
        for c in &self.classes[s] {
            if c.rate > 0.0 {
                p += c.rate * (c.segments * log_m[c.quality]).exp();
            }
        }
        let den = t + lam - p;
        let g = if den > 0.0 && p.is_finite() {
            (1.0 - self.rho[s]) * t * p / (lam * den)
        } else {
            f64::NAN
        };
        StreamAt { log_m, p, den, g }
    }
}
