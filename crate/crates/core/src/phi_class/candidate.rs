use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::functionals::TestFunction;
use crate::measures::DiscreteMeasure;

type Real = dyn Fn(f64) -> f64 + Send + Sync;

/// A convex function on `[0, ∞)` proposed as a member of Φ.
#[derive(Clone)]
pub struct PhiCandidate {
    label: String,
    eval: Arc<Real>,
    second: Option<Arc<Real>>,
    affine: bool,
}

impl fmt::Debug for PhiCandidate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhiCandidate")
            .field("label", &self.label)
            .field("analytic_second", &self.second.is_some())
            .field("affine", &self.affine)
            .finish()
    }
}

impl PhiCandidate {
    /// Candidate with an analytic second derivative.
    pub fn new<F, S>(label: impl Into<String>, eval: F, second: S) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        S: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        PhiCandidate {
            label: label.into(),
            eval: Arc::new(eval),
            second: Some(Arc::new(second)),
            affine: false,
        }
    }

    /// Candidate whose second derivative is taken by central differences.
    pub fn numeric<F>(label: impl Into<String>, eval: F) -> Self
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        PhiCandidate {
            label: label.into(),
            eval: Arc::new(eval),
            second: None,
            affine: false,
        }
    }

    /// `x ↦ x^e`.
    pub fn power(e: f64) -> Self {
        Self::new(
            format!("x^{e}"),
            move |x: f64| x.powf(e),
            move |x: f64| e * (e - 1.0) * x.powf(e - 2.0),
        )
    }

    /// `x ↦ x ln x`, extended by 0 at the origin.
    pub fn x_log_x() -> Self {
        Self::new("x*log(x)", |x: f64| if x == 0.0 { 0.0 } else { x * x.ln() }, |x: f64| 1.0 / x)
    }

    pub fn affine(slope: f64, intercept: f64) -> Self {
        PhiCandidate {
            label: format!("{slope}*x + {intercept}"),
            eval: Arc::new(move |x| slope * x + intercept),
            second: Some(Arc::new(|_| 0.0)),
            affine: true,
        }
    }

    /// `c1·self + c2·other`.
    pub fn combine(&self, c1: f64, other: &PhiCandidate, c2: f64) -> PhiCandidate {
        let (f1, f2) = (self.eval.clone(), other.eval.clone());
        let second: Option<Arc<Real>> = match (&self.second, &other.second) {
            (Some(s1), Some(s2)) => {
                let (s1, s2) = (s1.clone(), s2.clone());
                Some(Arc::new(move |x| c1 * s1(x) + c2 * s2(x)))
            }
            _ => None,
        };
        PhiCandidate {
            label: format!("{c1}*({}) + {c2}*({})", self.label, other.label),
            eval: Arc::new(move |x| c1 * f1(x) + c2 * f2(x)),
            second,
            affine: self.affine && other.affine,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn is_affine(&self) -> bool {
        self.affine
    }

    pub fn eval(&self, x: f64) -> f64 {
        (self.eval)(x)
    }

    fn step(x: f64) -> f64 {
        x * 1e-5 + 1e-8
    }

    /// `φ''(x)`, analytic when available.
    pub fn second_derivative(&self, x: f64) -> f64 {
        match &self.second {
            Some(s) => s(x),
            None => {
                let h = Self::step(x);
                (self.eval(x + h) - 2.0 * self.eval(x) + self.eval(x - h)) / (h * h)
            }
        }
    }

    /// Rounding-noise bound on [`PhiCandidate::second_derivative`].
    fn second_noise(&self, x: f64) -> f64 {
        if self.second.is_some() {
            return 0.0;
        }
        let h = Self::step(x);
        let mag = self.eval(x + h).abs() + 2.0 * self.eval(x).abs() + self.eval(x - h).abs();
        8.0 * f64::EPSILON * mag / (h * h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiVerdict {
    pub member: bool,
    pub reason: String,
    /// Smallest relative concavity margin of `1/φ''` over the tested triples.
    pub worst_margin: f64,
    /// `(left, middle, right)` of the worst triple.
    pub worst_triple: Option<(f64, f64, f64)>,
}

/// Relative slack on the concavity of `1/φ''`.
pub const CONCAVITY_REL_TOL: f64 = 1e-9;

/// Grid-relative membership test: affine, or `φ'' > tol` on the grid with
/// `1/φ''` passing midpoint and chord concavity tests.
pub fn is_in_phi(c: &PhiCandidate, grid: &[f64], tol: f64) -> Result<PhiVerdict> {
    if grid.len() < 64 {
        return Err(LabError::domain(format!("membership grid has {} < 64 points", grid.len())));
    }
    if grid.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(LabError::domain("membership grid must lie in (0, ∞)"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(LabError::domain("membership grid must be increasing"));
    }
    if c.is_affine() {
        return Ok(PhiVerdict {
            member: true,
            reason: "affine".into(),
            worst_margin: 0.0,
            worst_triple: None,
        });
    }
    let second: Vec<f64> = grid.iter().map(|&x| c.second_derivative(x)).collect();
    if let Some(i) = second.iter().position(|s| !s.is_finite()) {
        return Err(LabError::domain(format!(
            "second derivative of '{}' not finite at x = {}",
            c.label(),
            grid[i]
        )));
    }
    if let Some(i) = second.iter().position(|&s| !(s > tol)) {
        return Ok(PhiVerdict {
            member: false,
            reason: format!("second derivative {:e} <= {tol:e} at x = {}", second[i], grid[i]),
            worst_margin: f64::NEG_INFINITY,
            worst_triple: Some((grid[i], grid[i], grid[i])),
        });
    }
    let noise: Vec<f64> = grid
        .iter()
        .zip(&second)
        .map(|(&x, &s)| c.second_noise(x) / s)
        .collect();

    let mut worst = (f64::INFINITY, None);
    let mut record = |margin: f64, triple: (f64, f64, f64)| {
        if margin < worst.0 {
            worst = (margin, Some(triple));
        }
    };
    let recip = |s: f64| 1.0 / s;
    let n = grid.len();

    // chord test on consecutive triples
    for i in 1..n - 1 {
        let (x0, x1, x2) = (grid[i - 1], grid[i], grid[i + 1]);
        let (r0, r1, r2) = (recip(second[i - 1]), recip(second[i]), recip(second[i + 1]));
        let chord = r0 + (r2 - r0) * (x1 - x0) / (x2 - x0);
        let scale = r1.abs().max(chord.abs());
        let slack = noise[i - 1].max(noise[i]).max(noise[i + 1]);
        record((r1 - chord) / scale + slack, (x0, x1, x2));
    }

    // midpoint test over pairs; all pairs on small grids, power-of-two strides otherwise
    let mut pairs = Vec::new();
    if n <= 256 {
        for i in 0..n {
            for j in i + 1..n {
                pairs.push((i, j));
            }
        }
    } else {
        let mut stride = 1;
        while stride < n {
            for i in 0..n - stride {
                pairs.push((i, i + stride));
            }
            stride *= 2;
        }
    }
    for (i, j) in pairs {
        let mid = 0.5 * (grid[i] + grid[j]);
        let sm = c.second_derivative(mid);
        if !(sm > tol) {
            return Ok(PhiVerdict {
                member: false,
                reason: format!("second derivative {sm:e} <= {tol:e} at x = {mid}"),
                worst_margin: f64::NEG_INFINITY,
                worst_triple: Some((grid[i], mid, grid[j])),
            });
        }
        let rm = recip(sm);
        let avg = 0.5 * (recip(second[i]) + recip(second[j]));
        let slack = noise[i].max(noise[j]).max(c.second_noise(mid) / sm);
        record((rm - avg) / rm.abs().max(avg.abs()) + slack, (grid[i], mid, grid[j]));
    }

    let member = worst.0 >= -CONCAVITY_REL_TOL;
    Ok(PhiVerdict {
        member,
        reason: if member {
            "second derivative positive and reciprocal concave on the grid".into()
        } else {
            "reciprocal of the second derivative fails the concavity test".into()
        },
        worst_margin: worst.0,
        worst_triple: worst.1,
    })
}

/// Log-spaced grid of `n` points on `[lo, hi]`.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// `F_t(x, y) = tφ(x) + (1−t)φ(y) − φ(tx + (1−t)y)`.
pub fn ft_deficit(c: &PhiCandidate, t: f64, x: f64, y: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(LabError::domain(format!("t = {t} outside [0, 1]")));
    }
    if x < 0.0 || y < 0.0 {
        return Err(LabError::domain("F_t needs x, y >= 0"));
    }
    if t == 0.0 || t == 1.0 || x == y {
        return Ok(0.0);
    }
    Ok(t * c.eval(x) + (1.0 - t) * c.eval(y) - c.eval(t * x + (1.0 - t) * y))
}

/// `Ψ_φ(Z) = E φ(Z) − φ(E Z)` for values `z` on atoms with weights `w`,
/// with the magnitude of the terms as a rounding scale.
pub(crate) fn psi_values(c: &PhiCandidate, w: &[f64], z: &[f64]) -> (f64, f64) {
    let mut e_phi = 0.0;
    let mut mag = 0.0;
    let mut ez = 0.0;
    for (wi, zi) in w.iter().zip(z) {
        let v = c.eval(*zi);
        e_phi += wi * v;
        mag += wi * v.abs();
        ez += wi * zi;
    }
    let phi_mean = c.eval(ez);
    (e_phi - phi_mean, mag + phi_mean.abs())
}

/// `tΨ(X) + (1−t)Ψ(Y) − Ψ(tX + (1−t)Y)` with its rounding scale.
pub(crate) fn psi_margin_values(c: &PhiCandidate, w: &[f64], x: &[f64], y: &[f64], t: f64) -> (f64, f64) {
    let mix: Vec<f64> = x.iter().zip(y).map(|(a, b)| t * a + (1.0 - t) * b).collect();
    let (px, sx) = psi_values(c, w, x);
    let (py, sy) = psi_values(c, w, y);
    let (pm, sm) = psi_values(c, w, &mix);
    (t * px + (1.0 - t) * py - pm, t * sx + (1.0 - t) * sy + sm)
}

/// Convexity margin of `Ψ_φ` along the segment from `Y` to `X`; nonnegative
/// when `Ψ_φ` is convex there.
pub fn psi_convexity_check(
    c: &PhiCandidate,
    m: &DiscreteMeasure,
    x: &TestFunction,
    y: &TestFunction,
    t: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(LabError::domain(format!("t = {t} outside [0, 1]")));
    }
    let xs: Vec<f64> = m.points().iter().map(|p| x.eval(p)).collect();
    let ys: Vec<f64> = m.points().iter().map(|p| y.eval(p)).collect();
    if xs.iter().chain(&ys).any(|v| *v < 0.0) {
        return Err(LabError::domain("Ψ_φ needs nonnegative X and Y"));
    }
    if t == 0.0 || t == 1.0 || xs == ys {
        return Ok(0.0);
    }
    Ok(psi_margin_values(c, m.weights(), &xs, &ys, t).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Vec<f64> {
        log_grid(1e-3, 1e3, 64)
    }

    #[test]
    fn powers_between_one_and_two_are_members() {
        for e in [1.1, 2.0 / 1.4, 2.0] {
            let v = is_in_phi(&PhiCandidate::power(e), &grid(), 1e-300).unwrap();
            assert!(v.member, "x^{e}: {v:?}");
        }
        assert!(is_in_phi(&PhiCandidate::x_log_x(), &grid(), 1e-300).unwrap().member);
    }

    #[test]
    fn affine_is_member() {
        assert!(is_in_phi(&PhiCandidate::affine(3.0, -7.0), &grid(), 1e-12).unwrap().member);
    }

    #[test]
    fn quartic_is_not_member() {
        let v = is_in_phi(&PhiCandidate::power(4.0), &grid(), 1e-300).unwrap();
        assert!(!v.member);
        assert!(v.worst_triple.is_some());
    }

    #[test]
    fn numeric_second_derivative_agrees() {
        let e = 1.5;
        let c = PhiCandidate::numeric("x^1.5", move |x: f64| x.powf(e));
        let v = is_in_phi(&c, &log_grid(1e-2, 1e2, 64), 1e-12).unwrap();
        assert!(v.member, "{v:?}");
        let q = PhiCandidate::numeric("x^4", |x: f64| x.powi(4));
        assert!(!is_in_phi(&q, &log_grid(1e-2, 1e2, 64), 1e-12).unwrap().member);
    }

    #[test]
    fn small_grid_rejected() {
        assert!(is_in_phi(&PhiCandidate::power(1.5), &log_grid(1.0, 2.0, 10), 1e-12).is_err());
    }

    #[test]
    fn deficit_examples() {
        let sq = PhiCandidate::power(2.0);
        assert_eq!(ft_deficit(&sq, 0.5, 0.0, 2.0).unwrap(), 1.0);
        assert_eq!(ft_deficit(&sq, 0.0, 3.0, 2.0).unwrap(), 0.0);
        assert_eq!(ft_deficit(&sq, 0.4, 2.0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn psi_margin_matches_direct_expansion() {
        let c = PhiCandidate::power(1.5);
        let w = [0.1, 0.2, 0.3, 0.4];
        let x = [0.5, 2.0, 1.0, 3.0];
        let y = [1.5, 0.2, 4.0, 0.7];
        let t = 0.35;
        let psi = |z: &[f64]| {
            let e: f64 = w.iter().zip(z).map(|(a, b)| a * b.powf(1.5)).sum();
            let m: f64 = w.iter().zip(z).map(|(a, b)| a * b).sum();
            e - m.powf(1.5)
        };
        let mix: Vec<f64> = x.iter().zip(&y).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let direct = t * psi(&x) + (1.0 - t) * psi(&y) - psi(&mix);
        let (m, _) = psi_margin_values(&c, &w, &x, &y, t);
        assert!((m - direct).abs() < 1e-14 && m >= 0.0, "{m} {direct}");
    }
}
