//! The metric ρ_s and the technical inequalities behind the extension from
//! the endpoint exponents to general `a`.
//!
//! Margins are "claimed larger side minus claimed smaller side", so a
//! negative margin is a violation. Homogeneous inequalities are rescaled to
//! unit size before the margin is taken; the quadrature-based ones report
//! margins relative to the size of the two sides.

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::functionals::TestFunction;
use crate::quadrature::{integrate, integrate_vec, DEFAULT_PANEL_BUDGET};

fn check_s(s: f64, lo_open: bool) -> Result<()> {
    let ok = if lo_open { s > 1.0 && s <= 2.0 } else { (1.0..=2.0).contains(&s) };
    if !ok {
        return Err(LabError::domain(format!("s = {s} outside the admissible range")));
    }
    Ok(())
}

/// `((x^s + y^s)/2 − ((x+y)/2)^s)^{1/2}` for `s ∈ (1, 2]`.
pub fn rho_s(x: f64, y: f64, s: f64) -> Result<f64> {
    check_s(s, true)?;
    if x < 0.0 || y < 0.0 {
        return Err(LabError::domain("ρ_s is defined on [0, ∞)"));
    }
    Ok(rho_unchecked(x, y, s))
}

/// Evaluated as `m^s·[((1+u)^s + (1−u)^s)/2 − 1]` with `m = (x+y)/2`,
/// `u = (x−y)/(x+y)`, using the binomial series in `u²` for small `|u|`.
pub(crate) fn rho_unchecked(x: f64, y: f64, s: f64) -> f64 {
    if x == y {
        return 0.0;
    }
    let m = 0.5 * (x + y);
    let u = (x - y) / (x + y);
    let bracket = if u.abs() <= 0.5 {
        let u2 = u * u;
        let mut coef = 1.0; // C(s, j) built incrementally
        let mut pow = 1.0;
        let mut sum = 0.0;
        for k in 1..400 {
            let j = 2 * k;
            coef *= (s - (j - 2) as f64) / (j - 1) as f64;
            coef *= (s - (j - 1) as f64) / j as f64;
            pow *= u2;
            let term = coef * pow;
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    } else {
        0.5 * ((1.0 + u).powf(s) + (1.0 - u).powf(s)) - 1.0
    };
    (m.powf(s) * bracket.max(0.0)).sqrt()
}

/// Worst triangle-inequality margin of ρ_s over the three orderings of a
/// triple, after rescaling the triple so its largest entry is 1.
pub fn rho_triangle_margin(x: f64, y: f64, z: f64, s: f64) -> Result<f64> {
    check_s(s, true)?;
    let top = x.max(y).max(z);
    if top == 0.0 {
        return Ok(0.0);
    }
    let (x, y, z) = (x / top, y / top, z / top);
    let r = |a: f64, b: f64| rho_unchecked(a, b, s);
    let (xy, yz, xz) = (r(x, y), r(y, z), r(x, z));
    Ok((xy + yz - xz).min(xy + xz - yz).min(xz + yz - xy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Lemma8Regime {
    /// `x` outside the open interval between `c` and `d`, `K = 1`.
    Outside,
    /// `t = 1/2`, `K = 2`.
    Half,
    /// `t ≤ 1/2` and `c ≥ d`, `K = 12`.
    SmallT,
}

impl Lemma8Regime {
    pub fn constant(self) -> f64 {
        match self {
            Lemma8Regime::Outside => 1.0,
            Lemma8Regime::Half => 2.0,
            Lemma8Regime::SmallT => 12.0,
        }
    }
}

/// `F_t(x, y) = t x^s + (1−t) y^s − (t x + (1−t) y)^s`.
fn f_t(s: f64, t: f64, x: f64, y: f64) -> f64 {
    if x == y {
        return 0.0;
    }
    t * x.powf(s) + (1.0 - t) * y.powf(s) - (t * x + (1.0 - t) * y).powf(s)
}

/// `K[F_t(d, x) + F_t(x, c)] − F_t(d, c)` on the rescaled triple.
pub fn lemma8_check(s: f64, t: f64, c: f64, d: f64, x: f64, regime: Lemma8Regime) -> Result<f64> {
    check_s(s, false)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(LabError::domain(format!("t = {t} outside [0, 1]")));
    }
    if c < 0.0 || d < 0.0 || x < 0.0 {
        return Err(LabError::domain("c, d, x must be nonnegative"));
    }
    match regime {
        Lemma8Regime::Outside => {
            if x > c.min(d) && x < c.max(d) {
                return Err(LabError::Regime(format!("x = {x} lies strictly between c = {c} and d = {d}")));
            }
        }
        Lemma8Regime::Half => {
            if t != 0.5 {
                return Err(LabError::Regime(format!("regime needs t = 1/2, got {t}")));
            }
        }
        Lemma8Regime::SmallT => {
            if t > 0.5 || c < d {
                return Err(LabError::Regime(format!("regime needs t <= 1/2 and c >= d; got t = {t}, c = {c}, d = {d}")));
            }
        }
    }
    let top = c.max(d).max(x);
    if top == 0.0 {
        return Ok(0.0);
    }
    let (c, d, x) = (c / top, d / top, x / top);
    let k = regime.constant();
    Ok(k * (f_t(s, t, d, x) + f_t(s, t, x, c)) - f_t(s, t, d, c))
}

fn relative(big: f64, small: f64) -> f64 {
    let scale = big.abs() + small.abs();
    if scale == 0.0 {
        0.0
    } else {
        (big - small) / scale
    }
}

/// `∫_{x1}^{x2} max(1, x^a) g'(x)² dλ(x)`.
/// `abs_tol` is the absolute accuracy requested from the quadrature.
pub fn weighted_energy_on(x1: f64, x2: f64, a: f64, g: &TestFunction, abs_tol: f64) -> Result<f64> {
    let mut edges = vec![x1];
    if x1 < 1.0 && x2 > 1.0 {
        edges.push(1.0);
    }
    edges.push(x2);
    let failure = std::cell::Cell::new(false);
    let est = integrate_vec(
        |x| {
            let d = g.gradient(&[x]).map(|v| v[0]).unwrap_or_else(|_| {
                failure.set(true);
                0.0
            });
            [x.powf(a).max(1.0) * d * d * 0.5 * (-x.abs()).exp()]
        },
        &edges,
        4,
        abs_tol,
        1e-11,
        4 * DEFAULT_PANEL_BUDGET,
    )?;
    if failure.get() {
        return Err(LabError::Unsupported(format!("'{}' has no gradient", g.label())));
    }
    Ok(est.value[0])
}

/// Relative margin of
/// `∫_{x1}^{x2} max(1,x^a) g'² dλ ≥ (y2−y1)² max(1, x2^a) / (4(e^{x2} − e^{x1}))`.
pub fn lemma9_check(x1: f64, x2: f64, y1: f64, y2: f64, a: f64, g: &TestFunction) -> Result<f64> {
    if !(0.0 <= x1 && x1 < x2) {
        return Err(LabError::Regime(format!("need 0 <= x1 < x2, got {x1}, {x2}")));
    }
    if !(0.0..=1.0).contains(&a) {
        return Err(LabError::domain(format!("a = {a} outside [0, 1]")));
    }
    for (x, y) in [(x1, y1), (x2, y2)] {
        let gx = g.eval(&[x]);
        if (gx - y).abs() > 1e-9 * y.abs().max(1.0) {
            return Err(LabError::Regime(format!("g({x}) = {gx} but the endpoint value is {y}")));
        }
    }
    // endpoint values carry evaluation error on the scale of the intermediate
    // terms, which for expressions in x can be as large as x itself
    let noise = 16.0 * f64::EPSILON * y1.abs().max(y2.abs()).max(x2).max(1.0);
    let dy = ((y2 - y1).abs() - noise).max(0.0);
    let bound = dy * dy * x2.powf(a).max(1.0) / (4.0 * (x2.exp() - x1.exp()));
    let energy = weighted_energy_on(x1, x2, a, g, (1e-13 * bound).max(1e-300))?;
    Ok(relative(energy, bound))
}

/// The piecewise function equal to `y1` up to `x1` and linear in `e^x` on
/// `[x1, x2]` up to `y2`.
pub fn lemma10_profile(x1: f64, x2: f64, y1: f64, y2: f64) -> impl Fn(f64) -> f64 {
    let k = (y2 - y1) / (x2.exp() - x1.exp());
    move |x: f64| if x <= x1 { y1 } else { y1 + (x.exp() - x1.exp()) * k }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma10Margins {
    /// `|quadrature energy − closed form| / closed form`.
    pub energy_gap: f64,
    /// Relative margin of the moment bound.
    pub est3_margin: f64,
}

/// Checks the explicit profile's energy identity and its `p`-th moment bound
/// on `(−∞, x2]`. Values are scaled so that `y2 = 1` (both claims are
/// homogeneous in `y`).
pub fn lemma10_check(x1: f64, x2: f64, y1: f64, y2: f64, p: f64) -> Result<Lemma10Margins> {
    if !(0.0 <= y1 && y1 < y2) || !(0.0 <= x1 && x1 < x2) || !(p >= 1.0) {
        return Err(LabError::Regime(format!(
            "need 0 <= y1 < y2, 0 <= x1 < x2, p >= 1; got y = ({y1}, {y2}), x = ({x1}, {x2}), p = {p}"
        )));
    }
    let (y1, y2) = (y1 / y2, 1.0);
    let de = x2.exp() - x1.exp();
    let k = (y2 - y1) / de;
    // g' = k e^x on (x1, x2], so g'² dλ = (k²/2) e^x dx there.
    let energy = integrate(|x| 0.5 * k * k * x.exp(), x1, x2, 1e-300, 1e-13)?.scalar();
    let closed = (y2 - y1).powi(2) / (2.0 * de);
    let energy_gap = (energy - closed).abs() / closed;

    let g = lemma10_profile(x1, x2, y1, y2);
    let head = y1.powf(p) * (1.0 - 0.5 * (-x1).exp());
    let body = integrate(|x| g(x).powf(p) * 0.5 * (-x).exp(), x1, x2, 1e-300, 1e-13)?.scalar();
    let lhs = head + body;
    let mass = 1.0 - 0.5 * (-x2).exp();
    let w = 0.5 * x2 * (-x2).exp();
    let rhs = mass * ((1.0 - w) * y1.powf(p) + w * y2.powf(p));
    Ok(Lemma10Margins {
        energy_gap,
        est3_margin: relative(rhs, lhs),
    })
}

/// `u = s/(4(s−1)) · e^{−s/(2(s−1))}`.
pub fn lemma11_u(s: f64) -> Result<f64> {
    check_s(s, true)?;
    Ok(s / (4.0 * (s - 1.0)) * (-s / (2.0 * (s - 1.0))).exp())
}

/// Parameters of the two-block inequality with constant 8.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Lemma11Input {
    pub s: f64,
    pub t: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub a_tilde: f64,
    pub c_tilde: f64,
    pub x: f64,
}

/// `8[(1−t)ã + tb − ((1−t)c̃ + td)^s + (1−t)a + t x^s − ((1−t)c + tx)^s]
///  − [(1−t)a + tb − ((1−t)c + td)^s]`, after rescaling to `d = 1`.
pub fn lemma11_check(v: &Lemma11Input) -> Result<f64> {
    let Lemma11Input {
        s,
        t,
        a,
        b,
        c,
        d,
        a_tilde,
        c_tilde,
        x,
    } = *v;
    let u = lemma11_u(s)?;
    if !(t > 0.0 && t < 1.0) {
        return Err(LabError::Regime(format!("t = {t} outside (0, 1)")));
    }
    if [a, b, c, d, a_tilde, c_tilde, x].iter().any(|v| !(*v > 0.0)) {
        return Err(LabError::Regime("all of a, b, c, d, ã, c̃, x must be positive".into()));
    }
    // tiny relative allowance so boundary cases built in floating point pass
    let slack = 1.0 + 1e-12;
    let conditions = [
        (c < x && x < d, "c < x < d"),
        (c.powf(s) <= a * slack, "c^s <= a"),
        (d.powf(s) <= b * slack, "d^s <= b"),
        (c_tilde.powf(s) <= a_tilde * slack, "c̃^s <= ã"),
        (c_tilde <= ((1.0 - u) * c + u * x) * slack, "c̃ <= (1-u)c + ux"),
    ];
    for (ok, what) in conditions {
        if !ok {
            return Err(LabError::Regime(format!("precondition {what} fails")));
        }
    }
    let ds = d.powf(s);
    let (a, b, a_tilde) = (a / ds, b / ds, a_tilde / ds);
    let (c, x, c_tilde, d) = (c / d, x / d, c_tilde / d, 1.0);
    let lhs = (1.0 - t) * a + t * b - ((1.0 - t) * c + t * d).powf(s);
    let rhs = (1.0 - t) * a_tilde + t * b - ((1.0 - t) * c_tilde + t * d).powf(s) + (1.0 - t) * a
        + t * x.powf(s)
        - ((1.0 - t) * c + t * x).powf(s);
    Ok(8.0 * rhs - lhs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_two_is_half_distance() {
        for (x, y) in [(0.0, 1.0), (3.0, 1.25), (7.5, 7.25), (1e3, 1e-3)] {
            let r = rho_s(x, y, 2.0).unwrap();
            assert!((r - 0.5 * (x - y).abs()).abs() <= 4.0 * f64::EPSILON * x.max(y), "{x} {y} {r}");
        }
        assert_eq!(rho_s(2.0, 2.0, 1.5).unwrap(), 0.0);
        assert!(rho_s(1.0, 2.0, 1.0).is_err());
        assert!(rho_s(1.0, 2.0, 2.5).is_err());
    }

    #[test]
    fn rho_series_matches_direct_form() {
        let s = 1.37;
        let (x, y) = (1.2f64, 0.9f64);
        let direct = (0.5 * (x.powf(s) + y.powf(s)) - (0.5 * (x + y)).powf(s)).sqrt();
        let r = rho_s(x, y, s).unwrap();
        assert!((r - direct).abs() < 1e-7 * direct, "{r} {direct}");
        assert_eq!(r, rho_s(y, x, s).unwrap());
    }

    #[test]
    fn lemma8_boundary_is_tight() {
        let m = lemma8_check(1.5, 0.3, 2.0, 1.0, 2.0, Lemma8Regime::Outside).unwrap();
        assert!(m.abs() < 1e-15, "{m}");
        assert!(matches!(
            lemma8_check(1.5, 0.3, 2.0, 1.0, 1.5, Lemma8Regime::Outside),
            Err(LabError::Regime(_))
        ));
        assert!(matches!(
            lemma8_check(1.5, 0.6, 2.0, 1.0, 1.5, Lemma8Regime::SmallT),
            Err(LabError::Regime(_))
        ));
    }

    #[test]
    fn lemma10_unit_square() {
        let m = lemma10_check(0.0, 1.0, 0.0, 1.0, 1.0).unwrap();
        assert!(m.energy_gap < 1e-8);
        assert!(m.est3_margin >= 0.0);
    }

    #[test]
    fn lemma10_constant_limit() {
        let m = lemma10_check(0.5, 2.0, 1.0 - 1e-9, 1.0, 2.0).unwrap();
        assert!(m.est3_margin.abs() < 1e-8, "{m:?}");
    }

    #[test]
    fn lemma11_u_at_two() {
        assert!((lemma11_u(2.0).unwrap() - 0.5 * (-1f64).exp()).abs() < 1e-16);
    }

    #[test]
    fn lemma9_on_extremal_profile() {
        let (x1, x2, y1, y2) = (0.2f64, 1.7f64, 0.5, 2.0);
        let k = (y2 - y1) / (x2.exp() - x1.exp());
        let g = TestFunction::univariate(
            "profile",
            move |x: f64| y1 + (x.exp() - x1.exp()) * k,
            move |x: f64| k * x.exp(),
        )
        .unwrap();
        let m = lemma9_check(x1, x2, y1, y2, 0.5, &g).unwrap();
        assert!((0.0..1.0).contains(&m), "{m}");
    }
}
