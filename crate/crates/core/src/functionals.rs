//! p-variance, entropy, Dirichlet energies and witnessed I(a) ratios.
//!
//! With `m = E f²` and `g = f²/m`, both
//!
//! ```text
//! Var_p(f) = E f² − (E f^p)^{2/p}
//! Ent(f²)  = E f² ln f² − E f² ln E f²
//! ```
//!
//! are evaluated from the pointwise nonnegative (or nonpositive) integrands
//! `g^q − 1 − q(g−1)` and `g ln g − (g−1)`, with `q = p/2`. This avoids
//! subtracting two nearly equal moments when p is close to 2 or f is
//! nearly constant.

use std::cell::Cell;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::measures::{DiscreteMeasure, Measure};
use crate::quadrature::QuadratureSpec;

type EvalFn = dyn Fn(&[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &mut [f64]) + Send + Sync;

/// A real function on `R^n` with an optional gradient callback.
#[derive(Clone)]
pub struct TestFunction {
    label: String,
    arity: usize,
    eval: Arc<EvalFn>,
    grad: Option<Arc<GradFn>>,
}

impl fmt::Debug for TestFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestFunction")
            .field("label", &self.label)
            .field("arity", &self.arity)
            .field("has_gradient", &self.grad.is_some())
            .finish()
    }
}

/// Deterministic probe points used for gradient validation.
pub fn default_probes(arity: usize) -> Vec<Vec<f64>> {
    const BASE: [f64; 8] = [0.37, -1.13, 2.21, -0.61, 0.83, -2.47, 1.59, -0.29];
    (0..8)
        .map(|k| (0..arity).map(|i| BASE[(k + 3 * i) % 8] * (1.0 + 0.1 * i as f64)).collect())
        .collect()
}

impl TestFunction {
    /// Builds a function and, when a gradient is supplied, validates it
    /// against central differences at [`default_probes`].
    pub fn new<F, G>(label: impl Into<String>, arity: usize, eval: F, grad: Option<G>) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        if arity == 0 {
            return Err(LabError::domain("test function arity must be >= 1"));
        }
        let tf = TestFunction {
            label: label.into(),
            arity,
            eval: Arc::new(eval),
            grad: grad.map(|g| Arc::new(g) as Arc<GradFn>),
        };
        if tf.grad.is_some() {
            tf.validate_gradient(&default_probes(arity))?;
        }
        Ok(tf)
    }

    /// One-dimensional function with derivative `df`.
    pub fn univariate<F, D>(label: impl Into<String>, f: F, df: D) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
        D: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        Self::new(
            label,
            1,
            move |x: &[f64]| f(x[0]),
            Some(move |x: &[f64], g: &mut [f64]| g[0] = df(x[0])),
        )
    }

    pub fn constant(c: f64, arity: usize) -> Self {
        TestFunction {
            label: format!("{c}"),
            arity,
            eval: Arc::new(move |_| c),
            grad: Some(Arc::new(|_, g: &mut [f64]| g.fill(0.0))),
        }
    }

    /// Function without a gradient; only value-based functionals accept it.
    pub fn without_gradient<F>(label: impl Into<String>, arity: usize, eval: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        TestFunction {
            label: label.into(),
            arity,
            eval: Arc::new(eval),
            grad: None,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn has_gradient(&self) -> bool {
        self.grad.is_some()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let g = self
            .grad
            .as_ref()
            .ok_or_else(|| LabError::Unsupported(format!("'{}' has no gradient", self.label)))?;
        let mut out = vec![0.0; x.len()];
        g(x, &mut out);
        Ok(out)
    }

    /// Squared gradient norm at `x`.
    pub fn grad_norm_sq(&self, x: &[f64]) -> Result<f64> {
        Ok(self.gradient(x)?.iter().map(|v| v * v).sum())
    }

    /// Checks the gradient against central differences, within `1e-5`
    /// relative to `max(1, |∂f|)`.
    pub fn validate_gradient(&self, probes: &[Vec<f64>]) -> Result<()> {
        for x in probes {
            let g = self.gradient(x)?;
            let mut y = x.clone();
            for i in 0..self.arity {
                let h = 1e-6 * x[i].abs().max(1.0);
                y[i] = x[i] + h;
                let fp = self.eval(&y);
                y[i] = x[i] - h;
                let fm = self.eval(&y);
                y[i] = x[i];
                let fd = (fp - fm) / (2.0 * h);
                if !fd.is_finite() || !g[i].is_finite() {
                    continue;
                }
                if (fd - g[i]).abs() > 1e-5 * g[i].abs().max(1.0) {
                    return Err(LabError::domain(format!(
                        "gradient of '{}' disagrees with central differences at {x:?}: component {i} is {} vs {fd}",
                        self.label, g[i]
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One (p, a) evaluation of the I(a) ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InequalityReport {
    pub p: f64,
    pub a: f64,
    pub var_p: f64,
    pub energy: f64,
    pub ratio: f64,
    pub measure_key: String,
    pub function_label: String,
}

fn check_arity(m: &Measure, f: &TestFunction) -> Result<()> {
    if m.dim() != f.arity() {
        return Err(LabError::domain(format!(
            "function '{}' has arity {} but the measure has dimension {}",
            f.label(),
            f.arity(),
            m.dim()
        )));
    }
    Ok(())
}

/// `E F(f(x))` for a vector-valued `F`, failing with a domain error as soon
/// as `f` is negative somewhere it is evaluated.
fn expect_of_nonneg<const N: usize, G>(
    m: &Measure,
    f: &TestFunction,
    q: &QuadratureSpec,
    g: G,
) -> Result<[f64; N]>
where
    G: Fn(f64) -> [f64; N],
{
    let negative = Cell::new(None::<f64>);
    let est = m.expect_vec(
        |x| {
            let v = f.eval(x);
            if v < 0.0 {
                if negative.get().is_none() {
                    negative.set(Some(x[0]));
                }
                return [0.0; N];
            }
            g(v)
        },
        q,
    );
    if let Some(x0) = negative.get() {
        return Err(LabError::domain(format!(
            "'{}' is negative at a probed point (first coordinate {x0})",
            f.label()
        )));
    }
    Ok(est?.value)
}

/// `E f²`.
pub fn second_moment(m: &Measure, f: &TestFunction, q: &QuadratureSpec) -> Result<f64> {
    check_arity(m, f)?;
    Ok(expect_of_nonneg(m, f, q, |v| [v * v])?[0])
}

/// `Var_p(f) = E f² − (E f^p)^{2/p}` for `p ∈ [1, 2]`.
pub fn p_variance(m: &Measure, f: &TestFunction, p: f64, q: &QuadratureSpec) -> Result<f64> {
    if !(1.0..=2.0).contains(&p) {
        return Err(LabError::domain(format!("p = {p} outside [1, 2]")));
    }
    let mean_sq = second_moment(m, f, q)?;
    if p == 2.0 || mean_sq == 0.0 {
        return Ok(0.0);
    }
    let h = 0.5 * p;
    let [eps, d] = expect_of_nonneg(m, f, q, |v| {
        let g = v * v / mean_sq;
        let w = g - 1.0;
        let gq_minus_1 = if g == 0.0 { -1.0 } else { (h * g.ln()).exp_m1() };
        [w, gq_minus_1 - h * w]
    })?;
    // E g^h = 1 + d + h·eps; Var = m[(1 + eps) − (E g^h)^{1/h}]
    let var = mean_sq * (eps - ((d + h * eps).ln_1p() / h).exp_m1());
    Ok(var.max(0.0))
}

/// `Ent(f²) = E f² ln f² − E f² ln E f²`, with `0·ln 0 = 0`.
pub fn entropy(m: &Measure, f: &TestFunction, q: &QuadratureSpec) -> Result<f64> {
    let mean_sq = second_moment(m, f, q)?;
    if mean_sq == 0.0 {
        return Err(LabError::domain(format!("E f² = 0 for '{}'", f.label())));
    }
    let [eps, h] = expect_of_nonneg(m, f, q, |v| {
        let g = v * v / mean_sq;
        let w = g - 1.0;
        let glng = if g == 0.0 { 0.0 } else { g * g.ln() };
        // g ln g − (g − 1), written with ln_1p near g = 1
        let core = if w.abs() < 0.5 { (1.0 + w) * w.ln_1p() - w } else { glng - w };
        [w, core]
    })?;
    let ent = mean_sq * (h + eps - (1.0 + eps) * eps.ln_1p());
    Ok(ent.max(0.0))
}

/// `φ(p) = Var_p(f)/(1/p − 1/2)` along an increasing grid in `[1, 2)`.
pub fn phi_curve(m: &Measure, f: &TestFunction, p_grid: &[f64], q: &QuadratureSpec) -> Result<Vec<(f64, f64)>> {
    if p_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(LabError::domain("p grid must be strictly increasing"));
    }
    p_grid
        .iter()
        .map(|&p| {
            if !(1.0..2.0).contains(&p) {
                return Err(LabError::domain(format!("p = {p} outside [1, 2)")));
            }
            Ok((p, p_variance(m, f, p, q)? / (1.0 / p - 0.5)))
        })
        .collect()
}

/// True when each value is at least its predecessor minus `rel_slack` times
/// the larger magnitude of the two.
pub fn is_nondecreasing(values: &[f64], rel_slack: f64) -> bool {
    values
        .windows(2)
        .all(|w| w[1] >= w[0] - rel_slack * w[0].abs().max(w[1].abs()))
}

fn is_two_point(d: &DiscreteMeasure) -> bool {
    d.len() == 2 && d.dim() == 1 && d.points()[0] == [-1.0] && d.points()[1] == [1.0]
}

/// `E[w ‖∇f‖²]`. On the two-point space `{−1, 1}` (and products of it) the
/// gradient is the difference quotient, so the energy is
/// `((f(1) − f(−1))/2)²` summed over coordinates.
pub fn dirichlet_energy(
    m: &Measure,
    f: &TestFunction,
    weight: Option<&(dyn Fn(f64) -> f64 + Sync)>,
    q: &QuadratureSpec,
) -> Result<f64> {
    check_arity(m, f)?;
    match m {
        Measure::Discrete(d) => {
            if !is_two_point(d) {
                return Err(LabError::Unsupported(
                    "energy on a discrete measure is defined only for the two-point space {-1, 1}".into(),
                ));
            }
            if weight.is_some() {
                return Err(LabError::Unsupported("weighted two-point energy".into()));
            }
            let diff = f.eval(&[1.0]) - f.eval(&[-1.0]);
            Ok(0.25 * diff * diff)
        }
        Measure::Product(p) if p.all_discrete() => {
            let factors = p.discrete_factors()?;
            if !factors.iter().all(|d| is_two_point(d)) {
                return Err(LabError::Unsupported(
                    "discrete product energy needs two-point factors on {-1, 1}".into(),
                ));
            }
            if weight.is_some() {
                return Err(LabError::Unsupported("weighted two-point energy".into()));
            }
            let grid = p.enumerate(crate::measures::PRODUCT_ATOM_LIMIT)?;
            let mut total = 0.0;
            for (x, w) in grid.atoms() {
                let mut y = x.to_vec();
                for i in 0..y.len() {
                    y[i] = 1.0;
                    let hi = f.eval(&y);
                    y[i] = -1.0;
                    let lo = f.eval(&y);
                    y[i] = x[i];
                    total += w * 0.25 * (hi - lo) * (hi - lo);
                }
            }
            Ok(total)
        }
        _ => {
            if !f.has_gradient() {
                return Err(LabError::Unsupported(format!("'{}' has no gradient", f.label())));
            }
            if weight.is_some() && m.dim() != 1 {
                return Err(LabError::Unsupported("weights are one-dimensional".into()));
            }
            let failure = Cell::new(false);
            let est = m.expect_vec(
                |x| {
                    let g = f.grad_norm_sq(x).unwrap_or_else(|_| {
                        failure.set(true);
                        0.0
                    });
                    let w = weight.map_or(1.0, |w| w(x[0]));
                    if w < 0.0 {
                        failure.set(true);
                    }
                    [w * g]
                },
                q,
            )?;
            if failure.get() {
                return Err(LabError::domain("negative weight or missing gradient in energy"));
            }
            Ok(est.value[0])
        }
    }
}

/// The constant `C` witnessed by `f` in `Var_p(f) ≤ C (2−p)^a E(f)`.
pub fn ia_ratio(
    m: &Measure,
    f: &TestFunction,
    p: f64,
    a: f64,
    weight: Option<&(dyn Fn(f64) -> f64 + Sync)>,
    q: &QuadratureSpec,
) -> Result<InequalityReport> {
    if !(1.0..2.0).contains(&p) {
        return Err(LabError::domain(format!("p = {p} outside [1, 2)")));
    }
    if !(0.0..=1.0).contains(&a) {
        return Err(LabError::domain(format!("a = {a} outside [0, 1]")));
    }
    let var_p = p_variance(m, f, p, q)?;
    let energy = dirichlet_energy(m, f, weight, q)?;
    let ratio = ratio_of(var_p, energy, p, a)?;
    Ok(InequalityReport {
        p,
        a,
        var_p,
        energy,
        ratio,
        measure_key: m.key(),
        function_label: f.label().to_string(),
    })
}

/// `var_p / ((2−p)^a · energy)`, with the degenerate cases spelled out.
pub fn ratio_of(var_p: f64, energy: f64, p: f64, a: f64) -> Result<f64> {
    if energy > 0.0 {
        Ok(var_p / ((2.0 - p).powf(a) * energy))
    } else if var_p > 0.0 {
        Err(LabError::DegenerateWitness { var_p })
    } else {
        Ok(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{product, Continuous1D};

    fn two_point_fn(lo: f64, hi: f64) -> TestFunction {
        TestFunction::without_gradient("tp", 1, move |x| if x[0] > 0.0 { hi } else { lo })
    }

    #[test]
    fn hand_computed_two_point_variance() {
        let m: Measure = DiscreteMeasure::two_point(0.5).unwrap().into();
        let f = two_point_fn(1.0, 2.0);
        let q = QuadratureSpec::default();
        let v = p_variance(&m, &f, 1.0, &q).unwrap();
        assert!((v - 0.25).abs() < 1e-15, "{v}");
        assert_eq!(p_variance(&m, &f, 2.0, &q).unwrap(), 0.0);
    }

    #[test]
    fn constants_have_no_variance_or_entropy() {
        let q = QuadratureSpec::default();
        let m: Measure = Continuous1D::sym_exp().into();
        let c = TestFunction::constant(3.0, 1);
        for p in [1.0, 1.3, 1.9] {
            assert_eq!(p_variance(&m, &c, p, &q).unwrap(), 0.0);
        }
        assert_eq!(entropy(&m, &c, &q).unwrap(), 0.0);
        let r = ia_ratio(&m, &c, 1.5, 1.0, None, &q).unwrap();
        assert_eq!(r.ratio, 0.0);
    }

    #[test]
    fn negative_function_is_rejected() {
        let q = QuadratureSpec::default();
        let m: Measure = Continuous1D::gauss(1.0).unwrap().into();
        let f = TestFunction::without_gradient("x", 1, |x| x[0]);
        assert!(matches!(p_variance(&m, &f, 1.5, &q), Err(LabError::Domain(_))));
    }

    #[test]
    fn entropy_is_two_homogeneous() {
        let d = DiscreteMeasure::new(vec![(vec![0.0], 0.2), (vec![1.0], 0.5), (vec![2.0], 0.3)]).unwrap();
        let m: Measure = d.into();
        let q = QuadratureSpec::default();
        let f = TestFunction::without_gradient("f", 1, |x| 0.5 + x[0] * x[0]);
        let g = TestFunction::without_gradient("2f", 1, |x| 2.0 * (0.5 + x[0] * x[0]));
        let ef = entropy(&m, &f, &q).unwrap();
        let eg = entropy(&m, &g, &q).unwrap();
        assert!((eg - 4.0 * ef).abs() < 1e-13 * eg);
    }

    #[test]
    fn entropy_matches_direct_formula_on_atoms() {
        let atoms = [(0.0, 0.1, 0.0), (1.0, 0.4, 1.5), (2.0, 0.5, 0.7)];
        let d = DiscreteMeasure::new(atoms.iter().map(|&(x, w, _)| (vec![x], w)).collect()).unwrap();
        let vals: Vec<f64> = atoms.iter().map(|a| a.2).collect();
        let f = TestFunction::without_gradient("f", 1, move |x| vals[x[0] as usize]);
        let m2: f64 = atoms.iter().map(|a| a.1 * a.2 * a.2).sum();
        let direct: f64 = atoms
            .iter()
            .filter(|a| a.2 > 0.0)
            .map(|a| a.1 * a.2 * a.2 * (a.2 * a.2).ln())
            .sum::<f64>()
            - m2 * m2.ln();
        let e = entropy(&d.into(), &f, &QuadratureSpec::default()).unwrap();
        assert!((e - direct).abs() < 1e-14, "{e} vs {direct}");
    }

    #[test]
    fn gaussian_linear_energy_is_one() {
        let m: Measure = Continuous1D::gauss(1.0).unwrap().into();
        let f = TestFunction::univariate("x", |x| x, |_| 1.0).unwrap();
        let e = dirichlet_energy(&m, &f, None, &QuadratureSpec::default()).unwrap();
        assert!((e - 1.0).abs() < 1e-9, "{e}");
    }

    #[test]
    fn weighted_energy_on_sym_exp() {
        // weight max(1,|x|), f = x: λ([-1,1]) + E[|x| 1{|x|>1}] = (1 - 1/e) + 2/e
        let m: Measure = Continuous1D::sym_exp().into();
        let f = TestFunction::univariate("x", |x| x, |_| 1.0).unwrap();
        let w = |x: f64| x.abs().max(1.0);
        let e = dirichlet_energy(&m, &f, Some(&w), &QuadratureSpec::default()).unwrap();
        let e_inv = (-1f64).exp();
        assert!((e - (1.0 - e_inv + 2.0 * e_inv)).abs() < 1e-9, "{e}");
    }

    #[test]
    fn bad_gradient_is_caught() {
        let r = TestFunction::univariate("x^2", |x| x * x, |x| 3.0 * x);
        assert!(matches!(r, Err(LabError::Domain(_))));
    }

    #[test]
    fn degenerate_witness() {
        assert!(matches!(ratio_of(1.0, 0.0, 1.5, 1.0), Err(LabError::DegenerateWitness { .. })));
        assert_eq!(ratio_of(0.0, 0.0, 1.5, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn two_point_product_energy_tensorises() {
        let tp: Measure = DiscreteMeasure::two_point(0.5).unwrap().into();
        let m: Measure = product(vec![tp.clone(), tp]).unwrap().into();
        let f = TestFunction::without_gradient("x1+2x2", 2, |x| x[0] + 2.0 * x[1]);
        let e = dirichlet_energy(&m, &f, None, &QuadratureSpec::default()).unwrap();
        assert!((e - 5.0).abs() < 1e-14, "{e}");
    }
}
