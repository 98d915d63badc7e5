//! Probability measures: finite atom lists, symmetric exponential-power laws
//! on the line, and finite products of these.
//!
//! Every continuous law here is a scaled member of the exponential-power
//! family, with density `(c_r / s)·exp(-|x/s|^r)`:
//!
//! | key                 | r | s      |
//! |---------------------|---|--------|
//! | `exp_power:r=<r>`   | r | 1      |
//! | `sym_exp`           | 1 | 1      |
//! | `gauss:sigma=<σ>`   | 2 | σ·√2   |
//!
//! so one tail routine serves all of them.

use std::sync::{Arc, OnceLock};

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{LabError, Result};
use crate::quadrature::{integrate, integrate_vec, Estimate, QuadratureSpec};
use crate::rng::Seed;

/// Largest atom grid a discrete product may enumerate.
pub const PRODUCT_ATOM_LIMIT: usize = 1_000_000;

/// Draws per deterministic sampling block.
const SAMPLE_BLOCK: usize = 4096;

/// Standardised tail routines aim for this relative accuracy.
const TAIL_REL_TOL: f64 = 1e-14;

/// Below this standardised abscissa the tail is computed as 1/2 minus the head mass.
const HEAD_SWITCH: f64 = 0.5;

const SAMPLER_NODES: usize = 2048;

/// `c_r = 1/(2Γ(1+1/r))`, the normaliser of `exp(-|x|^r)`.
pub fn exp_power_normalizer(r: f64) -> Result<f64> {
    check_shape(r)?;
    Ok(1.0 / (2.0 * gamma(1.0 + 1.0 / r)))
}

/// Both closed forms of the normaliser: `1/(2Γ(1+1/r))` and `r/(2Γ(1/r))`.
pub fn exp_power_normalizer_variants(r: f64) -> Result<(f64, f64)> {
    check_shape(r)?;
    Ok((1.0 / (2.0 * gamma(1.0 + 1.0 / r)), r / (2.0 * gamma(1.0 / r))))
}

fn check_shape(r: f64) -> Result<()> {
    if !(1.0..=2.0).contains(&r) {
        return Err(LabError::domain(format!("shape r = {r} outside [1, 2]")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Family {
    ExpPower { r: f64 },
    SymExp,
    Gauss { sigma: f64 },
}

/// A symmetric continuous law on the real line.
#[derive(Debug, Clone)]
pub struct Continuous1D {
    family: Family,
    r: f64,
    scale: f64,
    c_r: f64,
    quad: QuadratureSpec,
    sampler: OnceLock<Arc<TailTable>>,
}

impl Continuous1D {
    pub fn exp_power(r: f64) -> Result<Self> {
        Self::build(Family::ExpPower { r }, r, 1.0)
    }

    /// The symmetric exponential law `(1/2)e^{-|x|}dx`.
    pub fn sym_exp() -> Self {
        Self::build(Family::SymExp, 1.0, 1.0).expect("r = 1 is valid")
    }

    pub fn gauss(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(LabError::domain(format!("gauss sigma = {sigma} must be positive")));
        }
        Self::build(Family::Gauss { sigma }, 2.0, sigma * std::f64::consts::SQRT_2)
    }

    fn build(family: Family, r: f64, scale: f64) -> Result<Self> {
        let c_r = exp_power_normalizer(r)?;
        Ok(Continuous1D {
            family,
            r,
            scale,
            c_r,
            quad: QuadratureSpec::default(),
            sampler: OnceLock::new(),
        })
    }

    /// Replace the quadrature configuration used by [`Continuous1D::integrate`].
    pub fn with_quadrature(mut self, quad: QuadratureSpec) -> Result<Self> {
        quad.validate()?;
        self.quad = quad;
        Ok(self)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn quadrature(&self) -> &QuadratureSpec {
        &self.quad
    }

    /// Shape exponent r of `exp(-|x/s|^r)`.
    pub fn shape(&self) -> f64 {
        self.r
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn key(&self) -> String {
        match self.family {
            Family::ExpPower { r } => format!("exp_power:r={r}"),
            Family::SymExp => "sym_exp".to_string(),
            Family::Gauss { sigma } => format!("gauss:sigma={sigma}"),
        }
    }

    pub fn support(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn log_density(&self, x: f64) -> f64 {
        (self.c_r / self.scale).ln() - (x / self.scale).abs().powf(self.r)
    }

    pub fn density(&self, x: f64) -> f64 {
        self.c_r / self.scale * (-(x / self.scale).abs().powf(self.r)).exp()
    }

    /// `∫ f dμ` over the truncated window `[-R·s, R·s]`, split at the origin.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F, q: &QuadratureSpec) -> Result<Estimate<1>> {
        self.expect_vec(|x| [f(x)], q)
    }

    pub fn expect_vec<const N: usize, F>(&self, f: F, q: &QuadratureSpec) -> Result<Estimate<N>>
    where
        F: Fn(f64) -> [f64; N],
    {
        q.validate()?;
        let half = q.truncation_radius * self.scale;
        integrate_vec(
            |x| {
                let w = self.density(x);
                let mut v = f(x);
                for c in v.iter_mut() {
                    // 0·∞ from an unbounded integrand far in the tail is treated as 0.
                    *c = if w == 0.0 { 0.0 } else { *c * w };
                }
                v
            },
            &[-half, 0.0, half],
            q.panel_count,
            q.abs_tol,
            q.rel_tol,
            q.panel_budget,
        )
    }

    /// μ((x, ∞)).
    pub fn upper_tail(&self, x: f64) -> Result<f64> {
        let u = x / self.scale;
        if u >= 0.0 {
            self.standard_tail(u)
        } else {
            Ok(1.0 - self.standard_tail(-u)?)
        }
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        let u = x / self.scale;
        if u <= 0.0 {
            self.standard_tail(-u)
        } else {
            Ok(1.0 - self.standard_tail(u)?)
        }
    }

    /// `c_r ∫_0^u e^{-t^r} dt` for `u ≥ 0`, in standardised units.
    pub fn standard_head(&self, u: f64) -> Result<f64> {
        if u <= 0.0 {
            return Ok(0.0);
        }
        let r = self.r;
        let est = integrate(|t| (-t.powf(r)).exp(), 0.0, u, 1e-300, TAIL_REL_TOL)?;
        Ok(self.c_r * est.scalar())
    }

    /// `ln ∫_u^∞ e^{-(t^r - u^r)} dt` for `u ≥ 0`, together with the
    /// quadrature error estimate (relative) including the truncation bound.
    fn log_tail_integral(&self, u: f64) -> Result<(f64, f64)> {
        let r = self.r;
        let radius = self.quad.truncation_radius;
        let ur = u.powf(r);
        let excess = |v: f64| -> f64 {
            if u == 0.0 {
                v.powf(r)
            } else {
                // (u+v)^r - u^r without cancellation for v << u
                ur * (r * (v / u).ln_1p()).exp_m1()
            }
        };
        let decay = if u > 0.0 { 1.0 / (r * u.powf(r - 1.0)) } else { 1.0 };
        let mut edges = vec![0.0];
        let mut w = 0.5 * decay.min(1.0);
        while w < radius {
            edges.push(w);
            w *= 4.0;
        }
        edges.push(radius);
        let est = integrate_vec(
            |v| [(-excess(v)).exp()],
            &edges,
            1,
            1e-300,
            TAIL_REL_TOL,
            self.quad.panel_budget,
        )?;
        let value = est.scalar();
        // For v ≥ 1 the excess is at least v, so the truncated mass is below e^{-R}.
        let remainder = (-radius).exp();
        Ok((value.ln(), (est.error + remainder) / value))
    }

    /// `ln μ((u·s, ∞))` for standardised `u ≥ 0`.
    pub fn standard_log_tail(&self, u: f64) -> Result<f64> {
        if u < 0.0 {
            return Err(LabError::domain("standard_log_tail expects u >= 0"));
        }
        if u <= HEAD_SWITCH {
            let head = self.standard_head(u)?;
            return Ok((0.5 - head).ln());
        }
        let (log_j, _) = self.log_tail_integral(u)?;
        Ok(self.c_r.ln() - u.powf(self.r) + log_j)
    }

    /// `μ((u·s, ∞))` for standardised `u ≥ 0`.
    pub fn standard_tail(&self, u: f64) -> Result<f64> {
        if u <= HEAD_SWITCH {
            Ok(0.5 - self.standard_head(u)?)
        } else {
            Ok(self.standard_log_tail(u)?.exp())
        }
    }

    /// Upper tail with its absolute error estimate.
    pub fn upper_tail_with_error(&self, x: f64) -> Result<(f64, f64)> {
        let u = (x / self.scale).abs();
        let (tail, err) = if u <= HEAD_SWITCH {
            let r = self.r;
            let est = integrate(|t| (-t.powf(r)).exp(), 0.0, u.max(0.0), 1e-300, TAIL_REL_TOL)?;
            (0.5 - self.c_r * est.scalar(), self.c_r * est.error)
        } else {
            let (log_j, rel) = self.log_tail_integral(u)?;
            let t = (self.c_r.ln() - u.powf(self.r) + log_j).exp();
            (t, t * rel)
        };
        if x >= 0.0 {
            Ok((tail, err))
        } else {
            Ok((1.0 - tail, err))
        }
    }

    fn sampler(&self) -> Result<Arc<TailTable>> {
        if let Some(t) = self.sampler.get() {
            return Ok(t.clone());
        }
        let table = Arc::new(TailTable::build(self)?);
        Ok(self.sampler.get_or_init(|| table).clone())
    }

    /// The point `x` with `μ((x, ∞)) = p`, for `p ∈ (0, 1)`.
    pub fn inverse_upper_tail(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(LabError::domain(format!("tail probability {p} outside (0,1)")));
        }
        let table = self.sampler()?;
        if p <= 0.5 {
            Ok(self.scale * table.invert(self, p)?)
        } else {
            Ok(-self.scale * table.invert(self, 1.0 - p)?)
        }
    }

    /// `n` i.i.d. draws by inversion of the upper tail.
    pub fn sample(&self, n: usize, seed: Seed) -> Result<Vec<f64>> {
        let table = self.sampler()?;
        let blocks = n.div_ceil(SAMPLE_BLOCK);
        let chunks: Vec<Result<Vec<f64>>> = (0..blocks)
            .into_par_iter()
            .map(|b| {
                let len = SAMPLE_BLOCK.min(n - b * SAMPLE_BLOCK);
                let mut rng = seed.rng_at_block(b as u64, 2 * SAMPLE_BLOCK as u64);
                (0..len)
                    .map(|_| {
                        let p = open_unit(rng.next_u64());
                        if p <= 0.5 {
                            table.invert(self, p).map(|u| self.scale * u)
                        } else {
                            table.invert(self, 1.0 - p).map(|u| -self.scale * u)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut out = Vec::with_capacity(n);
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }
}

/// Maps 64 random bits to a double in the open interval (0, 1).
fn open_unit(bits: u64) -> f64 {
    ((bits >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standardised tail values on a uniform grid, used to bracket inversions.
#[derive(Debug)]
struct TailTable {
    step: f64,
    tails: Vec<f64>,
}

impl TailTable {
    fn build(m: &Continuous1D) -> Result<Self> {
        let step = m.quad.truncation_radius / SAMPLER_NODES as f64;
        let tails: Result<Vec<f64>> = (0..=SAMPLER_NODES)
            .into_par_iter()
            .map(|k| m.standard_tail(k as f64 * step))
            .collect();
        Ok(TailTable { step, tails: tails? })
    }

    /// Standardised `u ≥ 0` with tail `p ≤ 1/2`: table bracket, then
    /// safeguarded Newton steps inside the bracket.
    fn invert(&self, m: &Continuous1D, p: f64) -> Result<f64> {
        let last = *self.tails.last().expect("table is nonempty");
        if p < last {
            return Err(LabError::non_convergent(
                "inverse tail",
                format!("probability {p:e} below the table floor {last:e}; cannot bracket"),
            ));
        }
        // tails are nonincreasing: first index with tail < p
        let k = self.tails.partition_point(|&t| t >= p).max(1) - 1;
        let base = k as f64 * self.step;
        let base_tail = self.tails[k];
        let mut lo = base;
        let mut hi = (base + self.step).min(self.step * SAMPLER_NODES as f64);
        let r = m.r;
        let local_tail = |u: f64| -> Result<f64> {
            if u <= base {
                return Ok(base_tail);
            }
            let est = integrate(|t| (-t.powf(r)).exp(), base, u, 1e-300, TAIL_REL_TOL)?;
            Ok(base_tail - m.c_r * est.scalar())
        };
        let mut u = 0.5 * (lo + hi);
        for _ in 0..200 {
            let g = local_tail(u)? - p;
            if g > 0.0 {
                lo = u;
            } else {
                hi = u;
            }
            if hi - lo <= 1e-13 * hi.max(1.0) || g.abs() <= 1e-16 * p {
                return Ok(u);
            }
            let slope = -m.c_r * (-u.powf(r)).exp();
            let newton = u - g / slope;
            u = if slope < 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        Err(LabError::non_convergent(
            "inverse tail",
            format!("no convergence for p = {p:e}"),
        ))
    }
}

/// Finite list of weighted atoms in `R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(LabError::domain("a discrete measure needs at least one atom"));
        }
        let dim = atoms[0].0.len();
        if dim == 0 {
            return Err(LabError::domain("atom points must have dimension >= 1"));
        }
        let mut total = 0.0;
        for (pt, w) in &atoms {
            if pt.len() != dim {
                return Err(LabError::domain("atom points differ in dimension"));
            }
            if !(*w > 0.0) || !w.is_finite() {
                return Err(LabError::domain(format!("atom weight {w} must be positive")));
            }
            total += w;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(LabError::domain(format!("weights sum to {total}, not 1")));
        }
        for i in 0..atoms.len() {
            for j in 0..i {
                if atoms[i].0 == atoms[j].0 {
                    return Err(LabError::domain(format!("duplicate atom {:?}", atoms[i].0)));
                }
            }
        }
        let (points, weights) = atoms.into_iter().unzip();
        Ok(DiscreteMeasure { points, weights })
    }

    /// `μ({1}) = alpha`, `μ({-1}) = 1 - alpha`.
    pub fn two_point(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(LabError::domain(format!("two-point alpha = {alpha} outside (0,1)")));
        }
        Self::new(vec![(vec![-1.0], 1.0 - alpha), (vec![1.0], alpha)])
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points.iter().map(|p| p.as_slice()).zip(self.weights.iter().copied())
    }

    pub fn expect_vec<const N: usize, F>(&self, f: F) -> [f64; N]
    where
        F: Fn(&[f64]) -> [f64; N],
    {
        let mut acc = [0.0; N];
        for (x, w) in self.atoms() {
            let v = f(x);
            for i in 0..N {
                acc[i] += w * v[i];
            }
        }
        acc
    }

    pub fn sample(&self, n: usize, seed: Seed) -> Vec<Vec<f64>> {
        let mut cum = Vec::with_capacity(self.weights.len());
        let mut s = 0.0;
        for w in &self.weights {
            s += w;
            cum.push(s);
        }
        let blocks = n.div_ceil(SAMPLE_BLOCK);
        (0..blocks)
            .into_par_iter()
            .flat_map_iter(|b| {
                let len = SAMPLE_BLOCK.min(n - b * SAMPLE_BLOCK);
                let mut rng = seed.rng_at_block(b as u64, 2 * SAMPLE_BLOCK as u64);
                let cum = &cum;
                (0..len)
                    .map(move |_| {
                        let u = open_unit(rng.next_u64()) * s;
                        let i = cum.partition_point(|&c| c < u).min(cum.len() - 1);
                        self.points[i].clone()
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }
}

/// Finite product of one-dimensional measures.
#[derive(Debug, Clone)]
pub struct ProductMeasure {
    factors: Vec<Measure>,
}

impl ProductMeasure {
    pub fn factors(&self) -> &[Measure] {
        &self.factors
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn all_discrete(&self) -> bool {
        self.factors.iter().all(|f| matches!(f, Measure::Discrete(_)))
    }

    /// Atom lists of each (discrete) factor.
    pub fn discrete_factors(&self) -> Result<Vec<&DiscreteMeasure>> {
        self.factors
            .iter()
            .map(|f| match f {
                Measure::Discrete(d) => Ok(d),
                _ => Err(LabError::Unsupported(
                    "operation needs every product factor to be discrete".into(),
                )),
            })
            .collect()
    }

    /// Full atom grid of an all-discrete product, capped at `limit` atoms.
    pub fn enumerate(&self, limit: usize) -> Result<DiscreteMeasure> {
        let factors = self.discrete_factors()?;
        let total = factors
            .iter()
            .try_fold(1usize, |acc, f| acc.checked_mul(f.len()))
            .unwrap_or(usize::MAX);
        if total > limit {
            return Err(LabError::Size {
                what: "discrete product grid",
                requested: total,
                limit,
            });
        }
        let mut points = Vec::with_capacity(total);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; factors.len()];
        for _ in 0..total {
            let mut pt = Vec::with_capacity(factors.len());
            let mut w = 1.0;
            for (k, f) in factors.iter().enumerate() {
                pt.push(f.points()[idx[k]][0]);
                w *= f.weights()[idx[k]];
            }
            points.push(pt);
            weights.push(w);
            // last coordinate varies fastest
            for k in (0..factors.len()).rev() {
                idx[k] += 1;
                if idx[k] < factors[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
        // renormalise away the rounding of the weight products
        let s: f64 = weights.iter().sum();
        for w in weights.iter_mut() {
            *w /= s;
        }
        Ok(DiscreteMeasure { points, weights })
    }
}

/// Builds `m_1 ⊗ … ⊗ m_n`; nested products are flattened.
pub fn product(ms: Vec<Measure>) -> Result<ProductMeasure> {
    if ms.is_empty() {
        return Err(LabError::domain("product of zero measures"));
    }
    let mut factors = Vec::new();
    for m in ms {
        match m {
            Measure::Product(p) => factors.extend(p.factors),
            other => {
                if other.dim() != 1 {
                    return Err(LabError::domain("product factors must be one-dimensional"));
                }
                factors.push(other)
            }
        }
    }
    Ok(ProductMeasure { factors })
}

#[derive(Debug, Clone)]
pub enum Measure {
    Discrete(DiscreteMeasure),
    Continuous(Continuous1D),
    Product(ProductMeasure),
}

impl From<DiscreteMeasure> for Measure {
    fn from(m: DiscreteMeasure) -> Self {
        Measure::Discrete(m)
    }
}

impl From<Continuous1D> for Measure {
    fn from(m: Continuous1D) -> Self {
        Measure::Continuous(m)
    }
}

impl From<ProductMeasure> for Measure {
    fn from(m: ProductMeasure) -> Self {
        Measure::Product(m)
    }
}

/// Keys accepted by [`Measure::from_key`].
pub const CATALOG: &[&str] = &[
    "exp_power:r=<x>",
    "sym_exp",
    "gauss:sigma=<x>",
    "two_point:alpha=<x>",
    "product:<key>^<n>",
];

fn parse_param(key: &str, prefix: &str, name: &str) -> Result<f64> {
    let rest = key
        .strip_prefix(prefix)
        .and_then(|r| r.strip_prefix(name))
        .and_then(|r| r.strip_prefix('='))
        .ok_or_else(|| LabError::domain(format!("malformed measure key '{key}'")))?;
    rest.trim()
        .parse::<f64>()
        .map_err(|_| LabError::domain(format!("bad number '{rest}' in measure key '{key}'")))
}

impl Measure {
    pub fn from_key(key: &str) -> Result<Measure> {
        let key = key.trim();
        if let Some(rest) = key.strip_prefix("product:") {
            let (inner, n) = rest
                .rsplit_once('^')
                .ok_or_else(|| LabError::domain(format!("product key '{key}' lacks ^<n>")))?;
            let n: usize = n
                .parse()
                .map_err(|_| LabError::domain(format!("bad product power in '{key}'")))?;
            if n == 0 {
                return Err(LabError::domain("product power must be >= 1"));
            }
            let base = Measure::from_key(inner)?;
            return Ok(Measure::Product(product(vec![base; n])?));
        }
        if key == "sym_exp" {
            return Ok(Continuous1D::sym_exp().into());
        }
        if key.starts_with("exp_power:") {
            return Ok(Continuous1D::exp_power(parse_param(key, "exp_power:", "r")?)?.into());
        }
        if key.starts_with("gauss:") {
            return Ok(Continuous1D::gauss(parse_param(key, "gauss:", "sigma")?)?.into());
        }
        if key.starts_with("two_point:") {
            return Ok(DiscreteMeasure::two_point(parse_param(key, "two_point:", "alpha")?)?.into());
        }
        Err(LabError::domain(format!("unknown measure key '{key}'")))
    }

    pub fn key(&self) -> String {
        match self {
            Measure::Continuous(c) => c.key(),
            Measure::Discrete(d) => {
                let two_point = d.len() == 2
                    && d.dim() == 1
                    && d.points()[0] == [-1.0]
                    && d.points()[1] == [1.0];
                if two_point {
                    format!("two_point:alpha={}", d.weights()[1])
                } else {
                    format!("discrete:{}atoms", d.len())
                }
            }
            Measure::Product(p) => {
                let keys: Vec<String> = p.factors.iter().map(|f| f.key()).collect();
                if keys.iter().all(|k| *k == keys[0]) {
                    format!("product:{}^{}", keys[0], keys.len())
                } else {
                    format!("product:({})", keys.join(","))
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Measure::Discrete(d) => d.dim(),
            Measure::Continuous(_) => 1,
            Measure::Product(p) => p.dim(),
        }
    }

    /// `E f` for a vector-valued `f`, by enumeration over discrete factors and
    /// nested quadrature over continuous ones (at most three).
    pub fn expect_vec<const N: usize, F>(&self, f: F, q: &QuadratureSpec) -> Result<Estimate<N>>
    where
        F: Fn(&[f64]) -> [f64; N],
    {
        match self {
            Measure::Discrete(d) => Ok(Estimate {
                value: d.expect_vec(f),
                error: 0.0,
                panels: 0,
                evals: d.len(),
            }),
            Measure::Continuous(c) => c.expect_vec(|x| f(&[x]), q),
            Measure::Product(p) => {
                let continuous = p
                    .factors
                    .iter()
                    .filter(|m| matches!(m, Measure::Continuous(_)))
                    .count();
                if continuous > 3 {
                    return Err(LabError::Unsupported(format!(
                        "nested quadrature over {continuous} continuous factors; use sampling"
                    )));
                }
                if continuous == 0 && p.factors.len() > 1 {
                    let grid = p.enumerate(PRODUCT_ATOM_LIMIT)?;
                    return Ok(Estimate {
                        value: grid.expect_vec(f),
                        error: 0.0,
                        panels: 0,
                        evals: grid.len(),
                    });
                }
                let mut prefix = Vec::with_capacity(p.factors.len());
                nested_expect(&p.factors, &mut prefix, &f, q)
            }
        }
    }

    pub fn expect<F: Fn(&[f64]) -> f64>(&self, f: F, q: &QuadratureSpec) -> Result<f64> {
        Ok(self.expect_vec(|x| [f(x)], q)?.value[0])
    }

    /// `n` draws; product coordinates use independent derived streams.
    pub fn sample(&self, n: usize, seed: Seed) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(LabError::domain("sample size must be >= 1"));
        }
        match self {
            Measure::Discrete(d) => Ok(d.sample(n, seed)),
            Measure::Continuous(c) => Ok(c.sample(n, seed)?.into_iter().map(|x| vec![x]).collect()),
            Measure::Product(p) => {
                let mut out = vec![Vec::with_capacity(p.dim()); n];
                for (j, f) in p.factors.iter().enumerate() {
                    let col = f.sample(n, seed.derive(j as u64))?;
                    for (row, v) in out.iter_mut().zip(col) {
                        row.push(v[0]);
                    }
                }
                Ok(out)
            }
        }
    }
}

fn nested_expect<const N: usize, F>(
    factors: &[Measure],
    prefix: &mut Vec<f64>,
    f: &F,
    q: &QuadratureSpec,
) -> Result<Estimate<N>>
where
    F: Fn(&[f64]) -> [f64; N],
{
    let Some((first, rest)) = factors.split_first() else {
        return Ok(Estimate {
            value: f(prefix),
            error: 0.0,
            panels: 0,
            evals: 1,
        });
    };
    match first {
        Measure::Discrete(d) => {
            let mut acc = [0.0; N];
            let mut err = 0.0;
            let mut evals = 0;
            for (x, w) in d.atoms() {
                prefix.push(x[0]);
                let inner = nested_expect(rest, prefix, f, q);
                prefix.pop();
                let inner = inner?;
                for (a, v) in acc.iter_mut().zip(inner.value) {
                    *a += w * v;
                }
                err += w * inner.error;
                evals += inner.evals;
            }
            Ok(Estimate {
                value: acc,
                error: err,
                panels: 0,
                evals,
            })
        }
        Measure::Continuous(c) => {
            let failure = std::cell::RefCell::new(None);
            let inner_err = std::cell::Cell::new(0.0f64);
            let base = prefix.clone();
            let est = c.expect_vec(
                |x| {
                    let mut pre = base.clone();
                    pre.push(x);
                    match nested_expect(rest, &mut pre, f, q) {
                        Ok(e) => {
                            inner_err.set(inner_err.get().max(e.error));
                            e.value
                        }
                        Err(e) => {
                            failure.borrow_mut().get_or_insert(e);
                            [0.0; N]
                        }
                    }
                },
                q,
            );
            if let Some(e) = failure.into_inner() {
                return Err(e);
            }
            let mut est = est?;
            est.error += inner_err.get();
            Ok(est)
        }
        Measure::Product(_) => Err(LabError::domain("nested product factor")),
    }
}
