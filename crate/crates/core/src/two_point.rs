//! Optimal constants on the two-point space `{−1, 1}` with `μ({1}) = α`,
//! for the inequality `Var_p(f) ≤ C (f(1) − f(−1))²`.

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::stats::golden_min;

fn check(alpha: f64, p: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(LabError::domain(format!("alpha = {alpha} outside (0, 1)")));
    }
    if !(1.0..2.0).contains(&p) {
        return Err(LabError::domain(format!("p = {p} outside [1, 2)")));
    }
    Ok(())
}

/// `C_α(p) = (α^{1−2/p} − (1−α)^{1−2/p}) / (α^{−2/p} − (1−α)^{−2/p})`,
/// with the limit `(2−p)/4` at `α = 1/2`.
pub fn optimal_constant_closed_form(alpha: f64, p: f64) -> Result<f64> {
    check(alpha, p)?;
    let beta = 1.0 - alpha;
    let l = (alpha / beta).ln();
    if l == 0.0 {
        return Ok((2.0 - p) / 4.0);
    }
    // α^k − β^k = β^k·expm1(k·ln(α/β)); the powers of β combine to β¹.
    let k1 = 1.0 - 2.0 / p;
    let k2 = -2.0 / p;
    Ok(beta * (k1 * l).exp_m1() / (k2 * l).exp_m1())
}

/// `Var_p(f) / (f(1) − f(−1))²` for `f(−1) = cos θ`, `f(1) = sin θ`.
pub fn two_point_ratio(alpha: f64, p: f64, theta: f64) -> f64 {
    let (lo, hi) = (theta.cos(), theta.sin());
    let var = two_point_p_variance(alpha, p, lo, hi);
    // (sin θ − cos θ)² = 2 sin²(θ − π/4)
    let s = (theta - std::f64::consts::FRAC_PI_4).sin();
    var / (2.0 * s * s)
}

/// `E f² − (E f^p)^{2/p}` on the two-point space, evaluated without
/// cancellation near constant `f`.
pub fn two_point_p_variance(alpha: f64, p: f64, f_minus: f64, f_plus: f64) -> f64 {
    let beta = 1.0 - alpha;
    let m = beta * f_minus * f_minus + alpha * f_plus * f_plus;
    if m == 0.0 || p == 2.0 {
        return 0.0;
    }
    let h = 0.5 * p;
    let mut eps = 0.0;
    let mut d = 0.0;
    for (w, v) in [(beta, f_minus), (alpha, f_plus)] {
        let g = v * v / m;
        let dw = g - 1.0;
        let gq = if g == 0.0 { -1.0 } else { (h * g.ln()).exp_m1() };
        eps += w * dw;
        d += w * (gq - h * dw);
    }
    (m * (eps - ((d + h * eps).ln_1p() / h).exp_m1())).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BruteForce {
    pub constant: f64,
    /// `(f(−1), f(1))` on the unit circle.
    pub maximizer: (f64, f64),
    pub theta: f64,
}

/// Maximises the ratio over `θ ∈ (0, π/2)` by a grid scan of `resolution`
/// points followed by golden-section refinement around the best node.
pub fn optimal_constant_bruteforce(alpha: f64, p: f64, resolution: usize) -> Result<BruteForce> {
    check(alpha, p)?;
    if resolution < 1000 {
        return Err(LabError::domain(format!("resolution {resolution} below 1000")));
    }
    let h = std::f64::consts::FRAC_PI_2 / resolution as f64;
    let quarter = std::f64::consts::FRAC_PI_4;
    let mut best = (0.0, f64::NEG_INFINITY);
    for k in 0..resolution {
        let theta = (k as f64 + 0.5) * h;
        if theta == quarter {
            continue;
        }
        let r = two_point_ratio(alpha, p, theta);
        if r > best.1 {
            best = (theta, r);
        }
    }
    if !(best.1 > 0.0) {
        return Err(LabError::DegenerateInstance(format!(
            "all two-point ratios vanish for alpha = {alpha}, p = {p}"
        )));
    }
    let lo = (best.0 - h).max(0.25 * h);
    let hi = (best.0 + h).min(std::f64::consts::FRAC_PI_2 - 0.25 * h);
    let neg = |t: f64| {
        if t == quarter {
            f64::INFINITY
        } else {
            -two_point_ratio(alpha, p, t)
        }
    };
    let (theta, v) = golden_min(neg, lo, hi, 1e-12);
    let (theta, constant) = if -v >= best.1 { (theta, -v) } else { best };
    Ok(BruteForce {
        constant,
        maximizer: (theta.cos(), theta.sin()),
        theta,
    })
}

/// Angle between the brute-force maximiser and `(α^{2/p}, (1−α)^{2/p})`.
pub fn maximizer_angle(alpha: f64, p: f64, maximizer: (f64, f64)) -> f64 {
    let (u0, u1) = (alpha.powf(2.0 / p), (1.0 - alpha).powf(2.0 / p));
    let (v0, v1) = maximizer;
    let cross = u0 * v1 - u1 * v0;
    let dot = u0 * v0 + u1 * v1;
    cross.atan2(dot).abs()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_limit_and_p_one() {
        assert_eq!(optimal_constant_closed_form(0.5, 1.5).unwrap(), 0.125);
        assert_eq!(optimal_constant_closed_form(0.5, 1.0).unwrap(), 0.25);
        let c = optimal_constant_closed_form(0.3, 1.0).unwrap();
        assert!((c - 0.21).abs() < 1e-15, "{c}");
    }

    #[test]
    fn symmetric_in_alpha() {
        for (a, p) in [(0.1, 1.2), (0.37, 1.9), (0.02, 1.5)] {
            let x = optimal_constant_closed_form(a, p).unwrap();
            let y = optimal_constant_closed_form(1.0 - a, p).unwrap();
            assert!((x - y).abs() <= 1e-15 * x, "{x} {y}");
        }
    }

    #[test]
    fn brute_force_agrees() {
        let bf = optimal_constant_bruteforce(0.3, 1.5, 2000).unwrap();
        let cf = optimal_constant_closed_form(0.3, 1.5).unwrap();
        assert!((bf.constant - cf).abs() < 1e-9, "{} {}", bf.constant, cf);
        assert!(maximizer_angle(0.3, 1.5, bf.maximizer) < 1e-4);
    }

    #[test]
    fn domain_errors() {
        assert!(optimal_constant_closed_form(0.0, 1.5).is_err());
        assert!(optimal_constant_closed_form(0.3, 2.0).is_err());
        assert!(optimal_constant_bruteforce(0.3, 1.5, 10).is_err());
    }
}
