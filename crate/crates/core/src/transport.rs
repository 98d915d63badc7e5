//! The increasing map `z_r` carrying `μ_r` onto the symmetric exponential
//! law `λ(dx) = ½e^{−|x|}dx`, defined by equal upper tails:
//! `½ e^{−z_r(x)} = μ_r((x, ∞))` for `x ≥ 0`, extended as an odd function.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::functionals::{ia_ratio, InequalityReport, TestFunction};
use crate::measures::{exp_power_normalizer, Continuous1D, Measure};
use crate::phi_class::LemmaVerdict;
use crate::rng::Seed;
use crate::stats::{ks_statistic, KS_CRITICAL_999};

pub const TRANSPORT_NODES: usize = 4096;
pub const TRANSPORT_RADIUS: f64 = 40.0;
/// Lower and upper constants of the Jacobian bound.
pub const JACOBIAN_LO: f64 = 1.0 / 50.0;
pub const JACOBIAN_HI: f64 = 600.0;

const TANH_STRETCH: f64 = 3.0;
const HEAD_REGION: f64 = 0.5;

/// Tabulated `z_r` on `[0, R]` with monotone cubic Hermite interpolation.
#[derive(Debug, Clone)]
pub struct TransportMap {
    r: f64,
    c_r: f64,
    measure: Continuous1D,
    x: Vec<f64>,
    z: Vec<f64>,
    /// `z_r'` at the nodes from the closed formula.
    dz: Vec<f64>,
    /// Slopes used by the interpolant after the monotonicity limiter.
    slope: Vec<f64>,
}

/// `z_r(x)` for `x ≥ 0` straight from the tail of `μ_r`.
fn z_direct(m: &Continuous1D, x: f64) -> Result<f64> {
    if x == 0.0 {
        Ok(0.0)
    } else if x <= HEAD_REGION {
        // ½e^{−z} = ½ − head
        Ok(-(-2.0 * m.standard_head(x)?).ln_1p())
    } else {
        Ok(-std::f64::consts::LN_2 - m.standard_log_tail(x)?)
    }
}

/// `n` nodes on `[0, radius]`, dense near both ends.
pub fn tanh_nodes(n: usize, radius: f64) -> Vec<f64> {
    let t = TANH_STRETCH.tanh();
    let mut nodes: Vec<f64> = (0..n)
        .map(|i| {
            let s = 2.0 * i as f64 / (n - 1) as f64 - 1.0;
            0.5 * radius * (1.0 + (TANH_STRETCH * s).tanh() / t)
        })
        .collect();
    nodes[0] = 0.0;
    nodes[n - 1] = radius;
    nodes
}

/// Builds `z_r` on the default 4096-node grid over `[0, 40]`.
pub fn build_z_r(r: f64) -> Result<TransportMap> {
    build_z_r_on(r, TRANSPORT_NODES, TRANSPORT_RADIUS)
}

pub fn build_z_r_on(r: f64, nodes: usize, radius: f64) -> Result<TransportMap> {
    let measure = Continuous1D::exp_power(r)?;
    let c_r = exp_power_normalizer(r)?;
    if nodes < 16 || !(radius > 1.0) {
        return Err(LabError::domain(format!("transport grid needs >= 16 nodes and radius > 1, got {nodes}, {radius}")));
    }
    let x = tanh_nodes(nodes, radius);
    let z = x
        .par_iter()
        .map(|&xi| {
            z_direct(&measure, xi).map_err(|e| match e {
                LabError::NonConvergent { routine, detail } => LabError::NonConvergent {
                    routine,
                    detail: format!("{detail} (node x = {xi})"),
                },
                other => other,
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    if z.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(LabError::non_convergent("transport", "tabulated z_r is not strictly increasing"));
    }
    let ln2c = (2.0 * c_r).ln();
    let dz: Vec<f64> = x.iter().zip(&z).map(|(&xi, &zi)| (ln2c + zi - xi.powf(r)).exp()).collect();
    let slope = fritsch_carlson(&x, &z, &dz);
    Ok(TransportMap {
        r,
        c_r,
        measure,
        x,
        z,
        dz,
        slope,
    })
}

/// Scales node slopes so every Hermite segment is monotone.
fn fritsch_carlson(x: &[f64], z: &[f64], dz: &[f64]) -> Vec<f64> {
    let mut m = dz.to_vec();
    for i in 0..x.len() - 1 {
        let delta = (z[i + 1] - z[i]) / (x[i + 1] - x[i]);
        let (a, b) = (m[i] / delta, m[i + 1] / delta);
        let s = a * a + b * b;
        if s > 9.0 {
            let tau = 3.0 / s.sqrt();
            m[i] = tau * a * delta;
            m[i + 1] = tau * b * delta;
        }
    }
    m
}

fn hermite(t: f64, h: f64, z0: f64, z1: f64, m0: f64, m1: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    (2.0 * t3 - 3.0 * t2 + 1.0) * z0 + (t3 - 2.0 * t2 + t) * h * m0 + (-2.0 * t3 + 3.0 * t2) * z1 + (t3 - t2) * h * m1
}

fn hermite_dt(t: f64, h: f64, z0: f64, z1: f64, m0: f64, m1: f64) -> f64 {
    let t2 = t * t;
    (6.0 * t2 - 6.0 * t) * z0 + (3.0 * t2 - 4.0 * t + 1.0) * h * m0 + (-6.0 * t2 + 6.0 * t) * z1 + (3.0 * t2 - 2.0 * t) * h * m1
}

impl TransportMap {
    pub fn r(&self) -> f64 {
        self.r
    }

    /// `a = 2 − 2/r`.
    pub fn a(&self) -> f64 {
        2.0 - 2.0 / self.r
    }

    pub fn c_r(&self) -> f64 {
        self.c_r
    }

    pub fn measure(&self) -> &Continuous1D {
        &self.measure
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn node_values(&self) -> &[f64] {
        &self.z
    }

    pub fn node_derivatives(&self) -> &[f64] {
        &self.dz
    }

    pub fn radius(&self) -> f64 {
        *self.x.last().unwrap()
    }

    /// Largest tabulated value, `z_r(R)`.
    pub fn image_radius(&self) -> f64 {
        *self.z.last().unwrap()
    }

    fn segment(&self, ax: f64) -> usize {
        self.x.partition_point(|&v| v <= ax).clamp(1, self.x.len() - 1) - 1
    }

    /// `z_r(x)`; beyond the grid the tail equation is solved directly.
    pub fn eval(&self, x: f64) -> Result<f64> {
        let ax = x.abs();
        let v = if ax > self.radius() {
            z_direct(&self.measure, ax)?
        } else {
            let i = self.segment(ax);
            let h = self.x[i + 1] - self.x[i];
            let t = (ax - self.x[i]) / h;
            hermite(t, h, self.z[i], self.z[i + 1], self.slope[i], self.slope[i + 1])
        };
        Ok(v.copysign(x))
    }

    /// Derivative of the interpolant itself.
    pub fn interpolant_derivative(&self, x: f64) -> Result<f64> {
        let ax = x.abs();
        if ax > self.radius() {
            return Err(LabError::domain(format!("x = {x} outside the tabulated range")));
        }
        let i = self.segment(ax);
        let h = self.x[i + 1] - self.x[i];
        let t = (ax - self.x[i]) / h;
        Ok(hermite_dt(t, h, self.z[i], self.z[i + 1], self.slope[i], self.slope[i + 1]) / h)
    }

    /// `z_r'(x) = 2c_r e^{|z_r(x)| − |x|^r}`, using the interpolated `z_r`.
    pub fn derivative(&self, x: f64) -> Result<f64> {
        let z = self.eval(x)?;
        Ok(((2.0 * self.c_r).ln() + z.abs() - x.abs().powf(self.r)).exp())
    }

    /// `z_r^{−1}(y)` for `|y| ≤ z_r(R)`.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        let ay = y.abs();
        if ay > self.image_radius() {
            return Err(LabError::domain(format!(
                "y = {y} outside the tabulated image [-{0}, {0}]",
                self.image_radius()
            )));
        }
        let i = self.z.partition_point(|&v| v <= ay).clamp(1, self.z.len() - 1) - 1;
        let (z0, z1, m0, m1) = (self.z[i], self.z[i + 1], self.slope[i], self.slope[i + 1]);
        let h = self.x[i + 1] - self.x[i];
        // safeguarded Newton on the monotone segment
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut t = ((ay - z0) / (z1 - z0)).clamp(0.0, 1.0);
        for _ in 0..100 {
            let f = hermite(t, h, z0, z1, m0, m1) - ay;
            if f == 0.0 {
                break;
            }
            if f < 0.0 {
                lo = t;
            } else {
                hi = t;
            }
            let d = hermite_dt(t, h, z0, z1, m0, m1);
            let mut next = t - f / d;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - t).abs() <= 1e-16 {
                t = next;
                break;
            }
            t = next;
        }
        Ok((self.x[i] + t * h).copysign(y))
    }

    /// `(z_r'(z_r^{−1}(y)))²`.
    pub fn jacobian_sq_at_image(&self, y: f64) -> Result<f64> {
        let d = self.derivative(self.inverse(y)?)?;
        Ok(d * d)
    }
}

/// Lemma-style verdict for `max(1,|x|^a)/50 ≤ (z_r'(z_r^{−1}(x)))² ≤ 600 max(1,|x|^a)`
/// at the given points. Margins are `min(ln(v/lo), ln(hi/v))`; the observed
/// range of `v / max(1,|x|^a)` is reported in `auxiliary`.
pub fn jacobian_bound_check(tm: &TransportMap, xs: &[f64]) -> Result<LemmaVerdict> {
    let a = tm.a();
    let mut violations = 0;
    let mut worst = (f64::INFINITY, 0.0, 0.0);
    let (mut lo_obs, mut hi_obs) = (f64::INFINITY, 0.0f64);
    for &x in xs {
        let v = tm.jacobian_sq_at_image(x)?;
        let w = x.abs().powf(a).max(1.0);
        let margin = (v / (JACOBIAN_LO * w)).ln().min((JACOBIAN_HI * w / v).ln());
        if !(margin >= 0.0) {
            violations += 1;
        }
        if margin < worst.0 {
            worst = (margin, x, v);
        }
        lo_obs = lo_obs.min(v / w);
        hi_obs = hi_obs.max(v / w);
    }
    let params_of_worst = BTreeMap::from([
        ("r".to_string(), tm.r()),
        ("x".to_string(), worst.1),
        ("jacobian_sq".to_string(), worst.2),
    ]);
    let auxiliary = BTreeMap::from([
        ("min_normalized_jacobian_sq".to_string(), lo_obs),
        ("max_normalized_jacobian_sq".to_string(), hi_obs),
    ]);
    Ok(LemmaVerdict {
        lemma_id: "jacobian".into(),
        trials: xs.len() as u64,
        violations,
        worst_margin: worst.0,
        params_of_worst,
        tolerance: 0.0,
        distribution: "caller-supplied points in the image of z_r".into(),
        auxiliary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KsReport {
    /// Shape of the law that was sampled.
    pub source_r: f64,
    /// Shape of the map that was applied.
    pub map_r: f64,
    pub n: usize,
    pub statistic: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// CDF of the symmetric exponential law.
pub fn sym_exp_cdf(z: f64) -> f64 {
    if z < 0.0 {
        0.5 * z.exp()
    } else {
        1.0 - 0.5 * (-z).exp()
    }
}

/// Samples `μ_r`, pushes the draws through `z_r` and compares with `λ`.
pub fn pushforward_check(tm: &TransportMap, n: usize, seed: Seed) -> Result<KsReport> {
    pushforward_ks(tm, tm.measure(), n, seed)
}

/// Pushes draws of `source` through `tm`; with a mismatched source this is
/// the negative control.
pub fn pushforward_ks(tm: &TransportMap, source: &Continuous1D, n: usize, seed: Seed) -> Result<KsReport> {
    if n < 10_000 {
        return Err(LabError::domain(format!("pushforward check needs n >= 10^4, got {n}")));
    }
    let draws = source.sample(n, seed)?;
    let mut z = draws.iter().map(|&x| tm.eval(x)).collect::<Result<Vec<f64>>>()?;
    let statistic = ks_statistic(&mut z, sym_exp_cdf);
    let threshold = KS_CRITICAL_999 / (n as f64).sqrt();
    Ok(KsReport {
        source_r: source.shape(),
        map_r: tm.r(),
        n,
        statistic,
        threshold,
        passed: statistic < threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TransferDirection {
    /// `g` on the exponential side is given; `f = g ∘ z_r`.
    Forward,
    /// `f` on the `μ_r` side is given; `g = f ∘ z_r^{−1}`.
    Converse,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    pub direction: TransferDirection,
    pub r: f64,
    /// Unweighted ratio of `f` under `μ_r`.
    pub mu_side: InequalityReport,
    /// Ratio of `g` under `λ` with energy weight `max(1, |x|^a)`.
    pub lambda_side: InequalityReport,
    /// 600 for the forward direction, 50 for the converse.
    pub factor: f64,
    /// Forward: `λ-ratio ≤ 600·μ-ratio`. Converse: `μ-ratio ≤ 50·λ-ratio`.
    pub holds: bool,
}

/// Evaluates both witnessed ratios for a function pair related by `z_r`,
/// with `a = 2 − 2/r`.
pub fn equivalence_transfer(
    tm: &TransportMap,
    given: &TestFunction,
    p: f64,
    direction: TransferDirection,
) -> Result<TransferReport> {
    if given.arity() != 1 {
        return Err(LabError::domain("transfer needs a function of one variable"));
    }
    let a = tm.a();
    let given_c = given.clone();
    let (f, g) = match direction {
        TransferDirection::Forward => {
            let m = tm.clone();
            let m2 = tm.clone();
            let g = given.clone();
            let f = TestFunction::new(
                format!("({}) o z_{}", given.label(), tm.r()),
                1,
                move |x: &[f64]| given_c.eval(&[m.eval(x[0]).unwrap_or(f64::NAN)]),
                Some(move |x: &[f64], out: &mut [f64]| {
                    let z = m2.eval(x[0]).unwrap_or(f64::NAN);
                    let dg = g.gradient(&[z]).map(|v| v[0]).unwrap_or(f64::NAN);
                    out[0] = dg * m2.derivative(x[0]).unwrap_or(f64::NAN);
                }),
            )?;
            (f, given.clone())
        }
        TransferDirection::Converse => {
            let m = tm.clone();
            let m2 = tm.clone();
            let f = given.clone();
            // beyond the tabulated image the λ-mass is below e^{-z_r(R)}, which is negligible
            let clamp = tm.image_radius();
            let g = TestFunction::new(
                format!("({}) o z_{}^-1", given.label(), tm.r()),
                1,
                move |y: &[f64]| given_c.eval(&[m.inverse(y[0].clamp(-clamp, clamp)).unwrap_or(f64::NAN)]),
                Some(move |y: &[f64], out: &mut [f64]| {
                    let x = m2.inverse(y[0].clamp(-clamp, clamp)).unwrap_or(f64::NAN);
                    let df = f.gradient(&[x]).map(|v| v[0]).unwrap_or(f64::NAN);
                    out[0] = df / m2.derivative(x).unwrap_or(f64::NAN);
                }),
            )?;
            (given.clone(), g)
        }
    };
    let mu_q = *tm.measure().quadrature();
    let lambda_law = Continuous1D::sym_exp();
    let lambda_q = *lambda_law.quadrature();
    let mu: Measure = tm.measure().clone().into();
    let lambda: Measure = lambda_law.into();
    let weight = move |x: f64| x.abs().powf(a).max(1.0);
    let mu_side = ia_ratio(&mu, &f, p, a, None, &mu_q)?;
    let lambda_side = ia_ratio(&lambda, &g, p, a, Some(&weight), &lambda_q)?;
    let slack = |v: f64| v * (1.0 + 1e-9) + 1e-12;
    let (factor, holds) = match direction {
        TransferDirection::Forward => (JACOBIAN_HI, lambda_side.ratio <= slack(JACOBIAN_HI * mu_side.ratio)),
        TransferDirection::Converse => (1.0 / JACOBIAN_LO, mu_side.ratio <= slack(lambda_side.ratio / JACOBIAN_LO)),
    };
    Ok(TransferReport {
        direction,
        r: tm.r(),
        mu_side,
        lambda_side,
        factor,
        holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn r_one_is_identity() {
        let tm = build_z_r(1.0).unwrap();
        for &x in &[0.0, 1e-3, 0.3, 0.5, 0.7, 2.0, 13.0, 39.0, -5.5] {
            let z = tm.eval(x).unwrap();
            assert!((z - x).abs() < 1e-10 * x.abs().max(1.0), "{x} {z}");
            assert!((tm.derivative(x).unwrap() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn origin_and_oddness() {
        let tm = build_z_r(1.6).unwrap();
        assert_eq!(tm.eval(0.0).unwrap(), 0.0);
        for &x in &[0.2, 1.0, 3.3] {
            assert_eq!(tm.eval(-x).unwrap(), -tm.eval(x).unwrap());
        }
        let d0 = tm.derivative(0.0).unwrap();
        assert!((d0 - 2.0 * tm.c_r()).abs() < 1e-15);
    }

    #[test]
    fn interpolant_matches_direct_solution() {
        let tm = build_z_r(2.0).unwrap();
        for &x in &[0.123, 0.77, 1.0, 2.5, 4.9, 11.1] {
            let direct = z_direct(tm.measure(), x).unwrap();
            let z = tm.eval(x).unwrap();
            assert!((z - direct).abs() <= 1e-11 * direct.max(1.0), "{x} {z} {direct}");
        }
        assert!(tm.eval(1.0).unwrap() >= 1.0);
    }

    #[test]
    fn inverse_round_trip() {
        let tm = build_z_r(1.3).unwrap();
        for &y in &[-25.0, -1.0, 0.0, 0.01, 3.0, 29.9] {
            let x = tm.inverse(y).unwrap();
            assert!((tm.eval(x).unwrap() - y).abs() < 1e-12 * y.abs().max(1.0));
        }
    }

    #[test]
    fn derivative_formula_matches_interpolant() {
        let tm = build_z_r(1.5).unwrap();
        for &x in &[0.05, 0.9, 3.0, 8.0, 20.0] {
            let a = tm.derivative(x).unwrap();
            let b = tm.interpolant_derivative(x).unwrap();
            assert!((a - b).abs() < 1e-7 * a, "{x} {a} {b}");
        }
    }
}
