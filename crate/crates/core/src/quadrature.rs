//! Globally adaptive Gauss–Kronrod (7/15) quadrature on finite panels.
//!
//! The integrand may be vector valued (`[f64; N]`), in which case every
//! component is evaluated on the same nodes. Functionals built from several
//! moments of one function (p-variance, entropy) then share their
//! discretisation error, which matters when the moments nearly cancel.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_225,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the odd-indexed Kronrod nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Default maximum number of panels held by one adaptive run.
pub const DEFAULT_PANEL_BUDGET: usize = 1 << 14;

/// Quadrature configuration for integrals against continuous laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Half-width of the truncated integration window, in units of the law's scale.
    pub truncation_radius: f64,
    /// Number of initial panels on each half line.
    pub panel_count: usize,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Maximum number of panels before giving up.
    pub panel_budget: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            truncation_radius: 40.0,
            panel_count: 8,
            abs_tol: 1e-10,
            rel_tol: 1e-9,
            panel_budget: DEFAULT_PANEL_BUDGET,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.truncation_radius > 0.0) || !self.truncation_radius.is_finite() {
            return Err(LabError::domain("truncation_radius must be positive"));
        }
        if !(self.abs_tol > 0.0) || !(self.rel_tol > 0.0) {
            return Err(LabError::domain("quadrature tolerances must be positive"));
        }
        if self.panel_count == 0 || self.panel_budget < self.panel_count {
            return Err(LabError::domain("panel_count must be in 1..=panel_budget"));
        }
        Ok(())
    }

    /// A copy with both tolerances replaced.
    pub fn with_tolerances(mut self, abs_tol: f64, rel_tol: f64) -> Self {
        self.abs_tol = abs_tol;
        self.rel_tol = rel_tol;
        self
    }
}

/// Value of an integral together with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate<const N: usize> {
    pub value: [f64; N],
    /// Sum of per-panel |K15 - G7| differences, maximised over components.
    pub error: f64,
    pub panels: usize,
    pub evals: usize,
}

impl Estimate<1> {
    pub fn scalar(&self) -> f64 {
        self.value[0]
    }
}

#[derive(Debug, Clone, Copy)]
struct Panel<const N: usize> {
    a: f64,
    b: f64,
    value: [f64; N],
    error: [f64; N],
}

impl<const N: usize> Panel<N> {
    fn worst(&self) -> f64 {
        self.error.iter().copied().fold(0.0, f64::max)
    }
}

impl<const N: usize> PartialEq for Panel<N> {
    fn eq(&self, other: &Self) -> bool {
        self.worst() == other.worst()
    }
}

impl<const N: usize> Eq for Panel<N> {}

impl<const N: usize> PartialOrd for Panel<N> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<const N: usize> Ord for Panel<N> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.worst().total_cmp(&other.worst())
    }
}

fn kronrod<const N: usize, F>(f: &mut F, a: f64, b: f64) -> Result<Panel<N>>
where
    F: FnMut(f64) -> [f64; N],
{
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut k15 = [0.0; N];
    let mut g7 = [0.0; N];

    let mut eval = |x: f64| -> Result<[f64; N]> {
        let y = f(x);
        if y.iter().any(|v| !v.is_finite()) {
            return Err(LabError::domain(format!("integrand not finite at x = {x}")));
        }
        Ok(y)
    };

    let fc = eval(centre)?;
    for i in 0..N {
        k15[i] = WGK[7] * fc[i];
        g7[i] = WG[3] * fc[i];
    }
    for j in 0..7 {
        let dx = half * XGK[j];
        let lo = eval(centre - dx)?;
        let hi = eval(centre + dx)?;
        for i in 0..N {
            let s = lo[i] + hi[i];
            k15[i] += WGK[j] * s;
            if j % 2 == 1 {
                g7[i] += WG[j / 2] * s;
            }
        }
    }
    let mut value = [0.0; N];
    let mut error = [0.0; N];
    for i in 0..N {
        value[i] = k15[i] * half;
        error[i] = ((k15[i] - g7[i]) * half).abs();
    }
    Ok(Panel { a, b, value, error })
}

/// Integrates a vector-valued `f` over the union of `[edges[i], edges[i+1]]`,
/// each edge interval first split into `split` equal panels.
pub fn integrate_vec<const N: usize, F>(
    mut f: F,
    edges: &[f64],
    split: usize,
    abs_tol: f64,
    rel_tol: f64,
    budget: usize,
) -> Result<Estimate<N>>
where
    F: FnMut(f64) -> [f64; N],
{
    if edges.len() < 2 {
        return Err(LabError::domain("need at least two panel edges"));
    }
    if edges.windows(2).any(|w| !(w[1] >= w[0])) || edges.iter().any(|e| !e.is_finite()) {
        return Err(LabError::domain("panel edges must be finite and nondecreasing"));
    }
    let split = split.max(1);
    let mut heap = BinaryHeap::new();
    let mut evals = 0usize;
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b == a {
            continue;
        }
        let h = (b - a) / split as f64;
        for k in 0..split {
            let lo = a + h * k as f64;
            let hi = if k + 1 == split { b } else { a + h * (k + 1) as f64 };
            heap.push(kronrod(&mut f, lo, hi)?);
            evals += 15;
        }
    }

    // Panels too narrow to split further are retired here.
    let mut retired: Vec<Panel<N>> = Vec::new();

    loop {
        let mut total = [0.0; N];
        let mut err = [0.0; N];
        for p in heap.iter().chain(retired.iter()) {
            for i in 0..N {
                total[i] += p.value[i];
                err[i] += p.error[i];
            }
        }
        let converged = (0..N).all(|i| err[i] <= abs_tol.max(rel_tol * total[i].abs()));
        let panels = heap.len() + retired.len();
        if converged || heap.is_empty() {
            if !converged {
                let worst = err.iter().copied().fold(0.0, f64::max);
                // Every panel is at floating-point resolution; accept only if the
                // residual is at rounding level.
                let scale = total.iter().map(|v| v.abs()).fold(0.0, f64::max);
                if worst > 1e3 * f64::EPSILON * scale.max(abs_tol) {
                    return Err(LabError::non_convergent(
                        "quadrature",
                        format!("panels exhausted at resolution with error {worst:e}"),
                    ));
                }
            }
            return Ok(Estimate {
                value: total,
                error: err.iter().copied().fold(0.0, f64::max),
                panels,
                evals,
            });
        }
        if panels >= budget {
            return Err(LabError::non_convergent(
                "quadrature",
                format!(
                    "panel budget {budget} exhausted; error {:e}",
                    err.iter().copied().fold(0.0, f64::max)
                ),
            ));
        }
        let worst = heap.pop().expect("heap is nonempty");
        let mid = 0.5 * (worst.a + worst.b);
        if !(mid > worst.a && mid < worst.b) || (worst.b - worst.a) <= 4.0 * f64::EPSILON * mid.abs().max(1e-300) {
            retired.push(worst);
            continue;
        }
        heap.push(kronrod(&mut f, worst.a, mid)?);
        heap.push(kronrod(&mut f, mid, worst.b)?);
        evals += 30;
    }
}

/// Scalar convenience wrapper around [`integrate_vec`] on a single interval.
pub fn integrate<F>(mut f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<Estimate<1>>
where
    F: FnMut(f64) -> f64,
{
    integrate_vec(|x| [f(x)], &[a, b], 1, abs_tol, rel_tol, DEFAULT_PANEL_BUDGET)
}
