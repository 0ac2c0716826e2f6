//! Euclidean projections onto the per-block constraint sets.

use crate::error::{Error, Result};

/// Project `v` onto `{x : sum_{support} x = total, 0 <= x <= cap, x = 0 off
/// support}`.
///
/// The threshold `theta` with `sum clamp(v_i - theta, 0, cap) = total` is
/// located between consecutive breakpoints of the piecewise-linear sum and
/// solved exactly there. `cap` may be infinite.
pub fn project_capped_simplex(v: &[f64], total: f64, cap: f64, support: &[usize]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; v.len()];
    let n = support.len();
    if !(total >= 0.0) {
        return Err(Error::Domain(format!("projection target {total} must be non-negative")));
    }
    if total > cap * n as f64 * (1.0 + 1e-12) {
        return Err(Error::InfeasibleTarget {
            total,
            capacity: cap * n as f64,
        });
    }
    if n == 0 || total == 0.0 {
        return Ok(out);
    }
    let vals: Vec<f64> = support.iter().map(|&i| v[i]).collect();
    let sum_at = |theta: f64| -> f64 { vals.iter().map(|&x| (x - theta).clamp(0.0, cap)).sum() };

    let vmin = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut breaks: Vec<f64> = vals.clone();
    if cap.is_finite() {
        breaks.extend(vals.iter().map(|&x| x - cap));
    } else {
        breaks.push(vmin - total);
    }
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup();

    // sum_at is non-increasing; find the last breakpoint whose sum is >= total
    let mut k = 0;
    for (idx, &b) in breaks.iter().enumerate() {
        if sum_at(b) >= total {
            k = idx;
        } else {
            break;
        }
    }
    let lo = breaks[k];
    let s_lo = sum_at(lo);
    let theta = if k + 1 < breaks.len() {
        let hi = breaks[k + 1];
        let s_hi = sum_at(hi);
        if s_lo > s_hi {
            lo + (s_lo - total) * (hi - lo) / (s_lo - s_hi)
        } else {
            lo
        }
    } else {
        lo
    };
    for &i in support {
        out[i] = (v[i] - theta).clamp(0.0, cap);
    }
    // remove the rounding residue on a free coordinate so the sum is exact
    let sum: f64 = support.iter().map(|&i| out[i]).sum();
    let resid = total - sum;
    if resid != 0.0 {
        if let Some(&i) = support
            .iter()
            .find(|&&i| out[i] > 0.0 && out[i] < cap && (out[i] + resid) >= 0.0 && out[i] + resid <= cap)
        {
            out[i] += resid;
        }
    }
    Ok(out)
}

/// Project `v` onto `{0 <= x <= 1, sum x <= 1}`.
pub fn project_box_budget(v: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|&x| x.clamp(0.0, 1.0)).collect();
    if clipped.iter().sum::<f64>() <= 1.0 {
        return clipped;
    }
    let support: Vec<usize> = (0..v.len()).collect();
    project_capped_simplex(v, 1.0, 1.0, &support).expect("unit target fits the unit box")
}

/// Clamp an auxiliary exponent into `[lower, upper]`.
pub fn clamp_exponent(candidate: f64, lower: f64, upper: f64) -> f64 {
    if !(candidate > lower) {
        lower
    } else if candidate > upper {
        upper
    } else {
        candidate
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn symmetric_and_capped_cases() {
        let p = project_capped_simplex(&[0.2, 0.2], 1.0, 1.0, &[0, 1]).unwrap();
        assert!(close(&p, &[0.5, 0.5]));
        let p = project_capped_simplex(&[2.0, 0.0], 1.0, 1.0, &[0, 1]).unwrap();
        assert!(close(&p, &[1.0, 0.0]));
        let p = project_capped_simplex(&[0.9, 0.9, 0.9], 2.0, 1.0, &[0, 2]).unwrap();
        assert!(close(&p, &[1.0, 0.0, 1.0]));
    }

    #[test]
    fn infinite_cap_is_plain_simplex() {
        let p = project_capped_simplex(&[3.0, 1.0, -5.0], 1.0, f64::INFINITY, &[0, 1, 2]).unwrap();
        assert!(close(&p, &[1.0, 0.0, 0.0]));
        let p = project_capped_simplex(&[-3.0, -3.0], 4.0, f64::INFINITY, &[0, 1]).unwrap();
        assert!(close(&p, &[2.0, 2.0]));
    }

    #[test]
    fn target_above_capacity_is_rejected() {
        let e = project_capped_simplex(&[0.0; 3], 3.5, 1.0, &[0, 1, 2]).unwrap_err();
        assert!(matches!(e, Error::InfeasibleTarget { .. }));
    }

    #[test]
    fn box_budget_cases() {
        assert!(close(&project_box_budget(&[0.3, 0.3]), &[0.3, 0.3]));
        assert!(close(&project_box_budget(&[0.9, 0.9]), &[0.5, 0.5]));
        assert!(close(&project_box_budget(&[-1.0, 2.0]), &[0.0, 1.0]));
    }

    #[test]
    fn exponent_clamp() {
        assert_eq!(clamp_exponent(0.01, 1e-6, 0.5), 0.01);
        assert_eq!(clamp_exponent(0.9, 1e-6, 0.5), 0.5);
        assert_eq!(clamp_exponent(-1.0, 1e-6, 0.5), 1e-6);
    }
}
