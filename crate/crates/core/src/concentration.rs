//! Moment generating function and tail bounds obtained from I(a) by the
//! Herbst argument, and Monte Carlo tail experiments under `μ_r^n`.

use rand::Rng;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::functionals::TestFunction;
use crate::measures::{product, Continuous1D, Measure};
use crate::quadrature::QuadratureSpec;
use crate::rng::Seed;
use crate::stats::{clopper_pearson_upper, golden_min, weighted_line_fit, LineFit};

/// Exponent constant that the tail bound is stated with.
pub const TAIL_K: f64 = 1.0 / 3.0;
/// Probe pairs used by the Lipschitz guard.
pub const LIPSCHITZ_PROBES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HerbstParams {
    /// The I(a) constant `C`.
    pub c: f64,
    pub a: f64,
}

impl HerbstParams {
    pub fn new(c: f64, a: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(LabError::domain(format!("C = {c} must be positive")));
        }
        if !(0.0..=1.0).contains(&a) {
            return Err(LabError::domain(format!("a = {a} outside [0, 1]")));
        }
        Ok(HerbstParams { c, a })
    }

    /// `r = 2/(2−a)`.
    pub fn r(&self) -> f64 {
        2.0 / (2.0 - self.a)
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(1.0..2.0).contains(&p) {
        return Err(LabError::domain(format!("p = {p} outside [1, 2)")));
    }
    Ok(())
}

/// `x = Cλ²(2−p)^a/4`, the quantity that must stay below 1.
fn herbst_x(hp: &HerbstParams, p: f64, lambda: f64) -> f64 {
    0.25 * hp.c * lambda * lambda * (2.0 - p).powf(hp.a)
}

/// `ln (1 − Cλ²(2−p)^a/4)^{−2/(2−p)}`.
pub fn herbst_log_mgf_bound(hp: &HerbstParams, p: f64, lambda: f64) -> Result<f64> {
    check_p(p)?;
    let x = herbst_x(hp, p, lambda);
    if !(x < 1.0) {
        return Err(LabError::domain(format!(
            "lambda = {lambda} at or beyond the singularity 2/sqrt(C (2-p)^a) for p = {p}"
        )));
    }
    Ok(-2.0 / (2.0 - p) * (-x).ln_1p())
}

/// `(1 − Cλ²(2−p)^a/4)^{−2/(2−p)}`.
pub fn herbst_mgf_bound(hp: &HerbstParams, p: f64, lambda: f64) -> Result<f64> {
    Ok(herbst_log_mgf_bound(hp, p, lambda)?.exp())
}

/// Finite unrolling of `H(λ) ≤ H(pλ/2)^{2/p} / (1 − x)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HerbstTrace {
    pub p: f64,
    pub lambda: f64,
    pub depth: usize,
    /// `ln Π_{k<m} (1 − x q^{2k})^{−q^{−k}}` for `m = 1..=depth`, `q = p/2`.
    pub log_products: Vec<f64>,
    /// `ln Π_{k<m} (1 − x)^{−q^k}`, accumulated factor by factor.
    pub log_telescoped: Vec<f64>,
    /// `−(1 − q^m)/(1 − q) · ln(1 − x)` at `m = depth`.
    pub log_telescoped_closed: f64,
    /// `ln` of the closed-form bound.
    pub log_closed_form: f64,
    /// Upper bound on `log_closed_form − log_telescoped[depth−1]`:
    /// `−q^m/(1−q) · ln(1 − x)`.
    pub log_remainder: f64,
    /// Largest violation of `(1 − x)^{q^{2k}} ≤ 1 − x q^{2k}` over `k < depth`
    /// (nonpositive up to rounding when every step holds).
    pub worst_bernoulli_gap: f64,
}

pub fn herbst_iteration(hp: &HerbstParams, p: f64, lambda: f64, depth: usize) -> Result<HerbstTrace> {
    let log_closed_form = herbst_log_mgf_bound(hp, p, lambda)?;
    if depth == 0 {
        return Err(LabError::domain("iteration depth must be positive"));
    }
    let q = 0.5 * p;
    let x = herbst_x(hp, p, lambda);
    let l1x = (-x).ln_1p();
    let mut log_products = Vec::with_capacity(depth);
    let mut log_telescoped = Vec::with_capacity(depth);
    let (mut lp, mut lt) = (0.0, 0.0);
    let mut worst_bernoulli_gap = f64::NEG_INFINITY;
    for k in 0..depth {
        let q2k = q.powi(2 * k as i32);
        let qk = q.powi(k as i32);
        lp += -(-x * q2k).ln_1p() / qk;
        lt += -qk * l1x;
        log_products.push(lp);
        log_telescoped.push(lt);
        // (1−x)^{q^{2k}} − (1 − x q^{2k})
        let gap = (q2k * l1x).exp_m1() + x * q2k;
        worst_bernoulli_gap = worst_bernoulli_gap.max(gap);
    }
    let qm = q.powi(depth as i32);
    let geometric = if q == 1.0 { depth as f64 } else { (1.0 - qm) / (1.0 - q) };
    Ok(HerbstTrace {
        p,
        lambda,
        depth,
        log_products,
        log_telescoped,
        log_telescoped_closed: -geometric * l1x,
        log_closed_form,
        log_remainder: -qm / (1.0 - q) * l1x,
        worst_bernoulli_gap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TailMode {
    /// `p = 1, λ = t/√C` for `t ≤ 1`; `p = 2 − t^{−r}, λ = t^{a/(2−a)}/√C` beyond.
    Canonical,
    /// Numerical minimisation over admissible `(p, λ)`.
    Optimized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailBound {
    pub t: f64,
    pub bound: f64,
    pub p: f64,
    pub lambda: f64,
}

/// `ln(e^{−μt} · mgf)` in the scaled variable `μ = λ√C`, which removes `C`.
fn log_chernoff(a: f64, p: f64, mu: f64, t: f64) -> f64 {
    let x = 0.25 * mu * mu * (2.0 - p).powf(a);
    if !(x < 1.0) {
        return f64::INFINITY;
    }
    -mu * t - 2.0 / (2.0 - p) * (-x).ln_1p()
}

fn canonical_choice(hp: &HerbstParams, t: f64) -> (f64, f64) {
    if t <= 1.0 {
        (1.0, t)
    } else {
        let r = hp.r();
        (2.0 - t.powf(-r), t.powf(hp.a / (2.0 - hp.a)))
    }
}

/// Bound on `μ(h − E h ≥ t√C)`.
pub fn tail_bound(hp: &HerbstParams, t: f64, mode: TailMode) -> Result<TailBound> {
    if !(t >= 0.0) {
        return Err(LabError::domain(format!("t = {t} must be nonnegative")));
    }
    if t == 0.0 {
        return Ok(TailBound {
            t,
            bound: 1.0,
            p: 1.0,
            lambda: 0.0,
        });
    }
    let sc = hp.c.sqrt();
    let (p0, mu0) = canonical_choice(hp, t);
    let canonical = log_chernoff(hp.a, p0, mu0, t);
    match mode {
        TailMode::Canonical => Ok(TailBound {
            t,
            bound: canonical.exp(),
            p: p0,
            lambda: mu0 / sc,
        }),
        TailMode::Optimized => {
            let a = hp.a;
            // inner problem is convex in μ on [0, μ_max(p))
            let inner = |p: f64| -> (f64, f64) {
                let mu_max = 2.0 * (2.0 - p).powf(-0.5 * a);
                let (mu, v) = golden_min(|mu| log_chernoff(a, p, mu, t), 0.0, mu_max * (1.0 - 1e-12), 1e-13 * mu_max);
                if v <= 0.0 {
                    (mu, v)
                } else {
                    (0.0, 0.0)
                }
            };
            let p_hi = 2.0 - 1e-12;
            let grid = 96;
            let mut best = (p0, mu0, canonical);
            let mut best_k = None;
            for k in 0..=grid {
                let s = k as f64 / grid as f64;
                // dense toward p = 2, where large t wants to be
                let p = 1.0 + (p_hi - 1.0) * (1.0 - (1.0 - s).powi(3));
                let (mu, v) = inner(p);
                if v < best.2 {
                    best = (p, mu, v);
                    best_k = Some(k);
                }
            }
            if let Some(k) = best_k {
                let at = |k: usize| 1.0 + (p_hi - 1.0) * (1.0 - (1.0 - k.min(grid) as f64 / grid as f64).powi(3));
                let (lo, hi) = (at(k.saturating_sub(1)), at(k + 1));
                let (p, v) = golden_min(|p| inner(p).1, lo, hi, 1e-12);
                if v < best.2 {
                    best = (p, inner(p).0, v);
                }
            }
            Ok(TailBound {
                t,
                bound: best.2.exp(),
                p: best.0,
                lambda: best.1 / sc,
            })
        }
    }
}

/// Checks `|h(x) − h(y)| ≤ ‖x − y‖(1 + 1e−9)` on random probe pairs. This is
/// a guard against obvious mistakes, not a certificate.
pub fn lipschitz_guard(h: &TestFunction, seed: Seed) -> Result<()> {
    let d = h.arity();
    let mut rng = seed.rng();
    for k in 0..LIPSCHITZ_PROBES {
        // alternate between far pairs and close pairs
        let spread = if k % 2 == 0 { 10.0 } else { 1e-3 };
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-10.0..10.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-spread..spread)).collect();
        let dist = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let gap = (h.eval(&x) - h.eval(&y)).abs();
        if gap > dist * (1.0 + 1e-9) {
            return Err(LabError::LipschitzViolation { gap, dist });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MgfRow {
    pub p: f64,
    pub lambda: f64,
    pub mgf: f64,
    pub bound: f64,
    /// `bound − mgf`.
    pub margin: f64,
}

/// Compares `E e^{λ(h − E h)}` under `m` with the Herbst bound on a `p × λ` grid.
pub fn mgf_verify(
    m: &Measure,
    h: &TestFunction,
    hp: &HerbstParams,
    ps: &[f64],
    lambdas: &[f64],
    q: &QuadratureSpec,
) -> Result<Vec<MgfRow>> {
    if h.arity() != m.dim() {
        return Err(LabError::domain("h and the measure differ in dimension"));
    }
    lipschitz_guard(h, Seed::new(0).derive(0x4c49_5053))?;
    let mean = m.expect(|x| h.eval(x), q)?;
    let mut rows = Vec::with_capacity(ps.len() * lambdas.len());
    for &lambda in lambdas {
        let mgf = m.expect(|x| (lambda * (h.eval(x) - mean)).exp(), q)?;
        for &p in ps {
            let bound = herbst_mgf_bound(hp, p, lambda)?;
            rows.push(MgfRow {
                p,
                lambda,
                mgf,
                bound,
                margin: bound - mgf,
            });
        }
    }
    Ok(rows)
}

/// Empirical and theoretical tails of `h − E h` under `μ_r^n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCurve {
    pub r: f64,
    pub a: f64,
    pub dimension: usize,
    pub samples: u64,
    pub c_assumed: f64,
    pub t: Vec<f64>,
    /// `e^{−t^{2/(2−a)}/3}`.
    pub bound: Vec<f64>,
    /// Draws with `h − mean ≥ t√C`.
    pub counts: Vec<u64>,
    pub empirical: Vec<f64>,
    /// 95% Clopper–Pearson upper limits, computed from counts at the
    /// threshold lowered by the centering half-width.
    pub cp_upper: Vec<f64>,
    /// `2·sd/√samples`, the allowance for estimating `E h` by the sample mean.
    pub centering_halfwidth: f64,
}

pub fn mc_tail_experiment(
    r: f64,
    n: usize,
    h: &TestFunction,
    ts: &[f64],
    samples: usize,
    seed: Seed,
    c_assumed: f64,
) -> Result<TailCurve> {
    if samples < 10_000 {
        return Err(LabError::domain(format!("tail experiment needs >= 10^4 samples, got {samples}")));
    }
    if n == 0 || h.arity() != n {
        return Err(LabError::domain(format!("h has arity {} but the dimension is {n}", h.arity())));
    }
    if !(c_assumed > 0.0) {
        return Err(LabError::domain("C_assumed must be positive"));
    }
    lipschitz_guard(h, seed.derive(u64::MAX))?;
    let law = Continuous1D::exp_power(r)?;
    let mut values: Vec<f64> = if n == 1 {
        law.sample(samples, seed)?.into_iter().map(|x| h.eval(&[x])).collect()
    } else {
        let pm: Measure = product(vec![law.into(); n])?.into();
        pm.sample(samples, seed)?.iter().map(|x| h.eval(x)).collect()
    };
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1.0);
    let halfwidth = 2.0 * (var / count).sqrt();
    for v in values.iter_mut() {
        *v -= mean;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let exceed = |thr: f64| (values.len() - values.partition_point(|&v| v < thr)) as u64;
    let a = 2.0 - 2.0 / r;
    let sc = c_assumed.sqrt();
    let mut curve = TailCurve {
        r,
        a,
        dimension: n,
        samples: samples as u64,
        c_assumed,
        t: ts.to_vec(),
        bound: Vec::with_capacity(ts.len()),
        counts: Vec::with_capacity(ts.len()),
        empirical: Vec::with_capacity(ts.len()),
        cp_upper: Vec::with_capacity(ts.len()),
        centering_halfwidth: halfwidth,
    };
    for &t in ts {
        let k = exceed(t * sc);
        let k_wide = exceed(t * sc - halfwidth);
        curve.bound.push((-TAIL_K * t.powf(r)).exp());
        curve.counts.push(k);
        curve.empirical.push(k as f64 / count);
        curve.cp_upper.push(clopper_pearson_upper(k_wide, samples as u64, 0.95)?);
    }
    Ok(curve)
}

/// Fitted tail exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SharpnessFit {
    /// Exponent `s` in `−ln P(t) ≈ κ t^s + A`.
    pub exponent: f64,
    pub stderr: f64,
    /// Profiled offset `A`.
    pub offset: f64,
    /// Slope of the unweighted, offset-free fit of `ln(−ln P)` against `ln t`.
    pub raw_slope: f64,
    pub raw_stderr: f64,
    pub points: usize,
}

pub const SHARPNESS_WINDOW: (f64, f64) = (1.5, 3.5);

/// Fits `ln(−ln P̂ − A) = ln κ + s ln t` over `t ∈ [1.5, 3.5]` with inverse
/// variance weights, choosing the offset `A` that minimises the weighted
/// residual. The offset absorbs the polynomial prefactor of the tail, which
/// otherwise biases the slope toward smaller values.
pub fn sharpness_fit(curve: &TailCurve) -> Result<SharpnessFit> {
    let n = curve.samples as f64;
    let mut lt = Vec::new();
    let mut y = Vec::new();
    let mut phat = Vec::new();
    for (i, &t) in curve.t.iter().enumerate() {
        let k = curve.counts[i];
        if t >= SHARPNESS_WINDOW.0 && t <= SHARPNESS_WINDOW.1 && k > 0 && k < curve.samples {
            let p = k as f64 / n;
            lt.push(t.ln());
            y.push(-p.ln());
            phat.push(p);
        }
    }
    if lt.len() < 5 {
        return Err(LabError::InsufficientData(format!(
            "sharpness fit needs >= 5 points with nonzero counts in t in [1.5, 3.5], got {}",
            lt.len()
        )));
    }
    let raw = weighted_line_fit(&lt, &y.iter().map(|v| v.ln()).collect::<Vec<_>>(), &vec![1.0; lt.len()])?;
    let y_min = y.iter().cloned().fold(f64::INFINITY, f64::min);
    let fit_at = |offset: f64| -> Result<LineFit> {
        let z: Vec<f64> = y.iter().map(|v| (v - offset).ln()).collect();
        let w: Vec<f64> = y
            .iter()
            .zip(&phat)
            .map(|(v, p)| n * p * (v - offset).powi(2) / (1.0 - p))
            .collect();
        weighted_line_fit(&lt, &z, &w)
    };
    let objective = |offset: f64| fit_at(offset).map(|f| f.rss).unwrap_or(f64::INFINITY);
    let lo = -5.0;
    let hi = y_min - 1e-6 * y_min.abs().max(1.0);
    let scan = 200;
    let mut best = (lo, objective(lo));
    for k in 1..=scan {
        let a = lo + (hi - lo) * k as f64 / scan as f64;
        let v = objective(a);
        if v < best.1 {
            best = (a, v);
        }
    }
    let step = (hi - lo) / scan as f64;
    let (a, v) = golden_min(objective, (best.0 - step).max(lo), (best.0 + step).min(hi), 1e-10);
    let offset = if v < best.1 { a } else { best.0 };
    let fit = fit_at(offset)?;
    Ok(SharpnessFit {
        exponent: fit.slope,
        stderr: fit.slope_stderr,
        offset,
        raw_slope: raw.slope,
        raw_stderr: raw.slope_stderr,
        points: lt.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mgf_bound_values() {
        let hp = HerbstParams::new(1.0, 0.0).unwrap();
        assert_eq!(herbst_mgf_bound(&hp, 1.5, 0.0).unwrap(), 1.0);
        let v = herbst_mgf_bound(&hp, 1.0, 1.0).unwrap();
        assert!((v - 16.0 / 9.0).abs() < 1e-15);
        assert!(herbst_mgf_bound(&hp, 1.0, 2.0).is_err());
        let g = HerbstParams::new(1.0, 1.0).unwrap();
        let v = herbst_mgf_bound(&g, 1.999, 0.7).unwrap();
        assert!((v / (0.245f64).exp() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn canonical_choice_values() {
        let hp = HerbstParams::new(1.0, 0.0).unwrap();
        let b = tail_bound(&hp, 1.0, TailMode::Canonical).unwrap().bound;
        assert!((b - 16.0 / (9.0 * std::f64::consts::E)).abs() < 1e-15);
        for a in [0.3, 1.0] {
            let hp = HerbstParams::new(2.0, a).unwrap();
            let b = tail_bound(&hp, 1.0, TailMode::Canonical).unwrap().bound;
            assert!((b - 16.0 / (9.0 * std::f64::consts::E)).abs() < 1e-15);
        }
        assert_eq!(tail_bound(&hp, 0.0, TailMode::Optimized).unwrap().bound, 1.0);
        assert!(tail_bound(&hp, -1.0, TailMode::Canonical).is_err());
    }

    #[test]
    fn optimized_never_worse() {
        for a in [0.0, 0.5, 1.0] {
            let hp = HerbstParams::new(1.0, a).unwrap();
            for t in [0.1, 0.5, 1.0, 2.0, 4.0, 8.0] {
                let o = tail_bound(&hp, t, TailMode::Optimized).unwrap().bound;
                let q = tail_bound(&hp, t, TailMode::Canonical).unwrap().bound;
                assert!(o <= q + 1e-12, "{a} {t} {o} {q}");
            }
        }
    }

    #[test]
    fn iteration_telescopes() {
        let hp = HerbstParams::new(1.0, 1.0).unwrap();
        let tr = herbst_iteration(&hp, 1.2, 1.5, 64).unwrap();
        let last = *tr.log_telescoped.last().unwrap();
        assert!((last - tr.log_telescoped_closed).abs() <= 1e-12 * last);
        assert!((tr.log_closed_form - last).abs() <= 1e-10 * tr.log_closed_form);
        assert!(*tr.log_products.last().unwrap() <= last);
        assert!(tr.worst_bernoulli_gap <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn lipschitz_guard_catches_steep_function() {
        let h = TestFunction::without_gradient("2x", 1, |x| 2.0 * x[0]);
        assert!(matches!(lipschitz_guard(&h, Seed::new(1)), Err(LabError::LipschitzViolation { .. })));
        let ok = TestFunction::without_gradient("sin", 1, |x| x[0].sin());
        assert!(lipschitz_guard(&ok, Seed::new(1)).is_ok());
    }

    fn synthetic(tail: impl Fn(f64) -> f64) -> TailCurve {
        let ts: Vec<f64> = (0..=20).map(|i| 1.5 + 0.1 * i as f64).collect();
        let samples = 1u64 << 40;
        let counts: Vec<u64> = ts.iter().map(|&t| (tail(t) * samples as f64).round() as u64).collect();
        TailCurve {
            r: 1.0,
            a: 0.0,
            dimension: 1,
            samples,
            c_assumed: 1.0,
            empirical: counts.iter().map(|&k| k as f64 / samples as f64).collect(),
            bound: vec![0.0; ts.len()],
            cp_upper: vec![0.0; ts.len()],
            t: ts,
            counts,
            centering_halfwidth: 0.0,
        }
    }

    #[test]
    fn synthetic_exponents() {
        let e = sharpness_fit(&synthetic(|t| (-t).exp())).unwrap();
        assert!((e.exponent - 1.0).abs() < 1e-3, "{e:?}");
        let g = sharpness_fit(&synthetic(|t| (-t * t).exp())).unwrap();
        assert!((g.exponent - 2.0).abs() < 1e-3, "{g:?}");
    }

    #[test]
    fn constant_h_never_exceeds() {
        let h = TestFunction::constant(3.0, 1);
        let c = mc_tail_experiment(1.5, 1, &h, &[0.5, 1.0], 10_000, Seed::new(2), 1.0).unwrap();
        assert_eq!(c.counts, vec![0, 0]);
    }
}
