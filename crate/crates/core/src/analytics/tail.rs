//! Geometric sums over segment indices.

/// Log of the chunk MGF `alpha/(alpha - t) * exp(beta t)`; `+inf` when the
/// transform does not exist (`t >= alpha`).
#[inline]
pub fn log_chunk_mgf(alpha: f64, beta: f64, t: f64) -> f64 {
    if t < alpha {
        -(-t / alpha).ln_1p() + beta * t
    } else {
        f64::INFINITY
    }
}

/// Derivative of [`log_chunk_mgf`] with respect to `t`.
#[inline]
pub fn log_chunk_mgf_dt(alpha: f64, beta: f64, t: f64) -> f64 {
    1.0 / (alpha - t) + beta
}

/// Derivative of [`log_chunk_mgf`] with respect to `alpha`.
#[inline]
pub fn log_chunk_mgf_dalpha(alpha: f64, t: f64) -> f64 {
    -t / (alpha * (alpha - t))
}

/// `sum_{v=1}^{len} exp(v y)` in closed form.
pub fn geometric_sum(y: f64, len: usize) -> f64 {
    let l = len as f64;
    if y == 0.0 {
        l
    } else if y < 0.0 {
        y.exp() * (l * y).exp_m1() / y.exp_m1()
    } else {
        // factor out the largest term so huge sums overflow to +inf cleanly
        (l * y).exp() * (-l * y).exp_m1() / (-y).exp_m1()
    }
}

/// `sum_{v=1}^{len} v exp(v y)`, the derivative of [`geometric_sum`] in `y`.
pub fn weighted_geometric_sum(y: f64, len: usize) -> f64 {
    if len <= 256 || (len as f64 * y).abs() < 0.5 {
        let x = y.exp();
        let mut xv = 1.0;
        let mut acc = 0.0;
        for v in 1..=len {
            xv *= x;
            acc += v as f64 * xv;
        }
        acc
    } else {
        let l = len as f64;
        let u = y.exp_m1();
        let big = (l * y).exp_m1();
        y.exp() * (l * (l * y).exp() * u - big) / (u * u)
    }
}
