//! Randomised property suites. Every trial draws its parameters from its
//! own derived seed, so a verdict is reproducible from `(id, trials, seed)`
//! regardless of how the trials are scheduled.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{LabError, Result};
use crate::expr::{parse_expression, random_smooth_source};
use crate::rng::Seed;

use super::candidate::{ft_deficit, is_in_phi, log_grid, psi_margin_values, PhiCandidate};
use super::lemmas::{
    lemma10_check, lemma11_check, lemma11_u, lemma8_check, lemma9_check, rho_triangle_margin, rho_unchecked,
    Lemma11Input, Lemma8Regime,
};
use super::tensor::ProductGrid;

/// Aggregated outcome of a randomised suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaVerdict {
    pub lemma_id: String,
    pub trials: u64,
    /// Trials whose margin fell below `−tolerance`, or whose side check failed.
    pub violations: u64,
    pub worst_margin: f64,
    pub params_of_worst: BTreeMap<String, f64>,
    pub tolerance: f64,
    /// How the trial parameters are drawn.
    pub distribution: String,
    /// Suite-specific side measurements (largest observed value of each).
    pub auxiliary: BTreeMap<String, f64>,
}

impl LemmaVerdict {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

/// Identifiers accepted by [`run_suite`].
pub const SUITE_IDS: &[&str] = &[
    "phi-cone",
    "ft-convex",
    "psi-convex",
    "subadd",
    "varp-subadd",
    "cn",
    "rho-metric",
    "lemma8",
    "lemma8-outside",
    "lemma8-half",
    "lemma8-small",
    "lemma9",
    "lemma10",
    "lemma11",
    "selftest-fail",
];

struct Trial {
    margin: f64,
    params: Vec<(&'static str, f64)>,
    /// Side measurement, maximised over trials.
    aux: Option<f64>,
    /// False when a side check (not the margin) fails.
    side_ok: bool,
}

impl Trial {
    fn new(margin: f64, params: Vec<(&'static str, f64)>) -> Self {
        Trial {
            margin,
            params,
            aux: None,
            side_ok: true,
        }
    }
}

/// Margin, trial index and parameters of a trial.
type Worst = (f64, u64, Vec<(&'static str, f64)>);

struct Acc {
    trials: u64,
    violations: u64,
    worst: Option<Worst>,
    aux: Option<f64>,
}

impl Acc {
    fn empty() -> Self {
        Acc {
            trials: 0,
            violations: 0,
            worst: None,
            aux: None,
        }
    }

    fn merge(self, other: Acc) -> Acc {
        let worst = match (self.worst, other.worst) {
            (Some(a), Some(b)) => {
                // ties go to the lower trial index so the report is schedule independent
                if b.0 < a.0 || (b.0 == a.0 && b.1 < a.1) {
                    Some(b)
                } else {
                    Some(a)
                }
            }
            (a, b) => a.or(b),
        };
        let aux = match (self.aux, other.aux) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        };
        Acc {
            trials: self.trials + other.trials,
            violations: self.violations + other.violations,
            worst,
            aux,
        }
    }
}

fn log_uniform(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> f64 {
    (rng.random_range(lo.ln()..=hi.ln())).exp()
}

fn magnitude(rng: &mut ChaCha20Rng) -> f64 {
    log_uniform(rng, 1e-3, 1e3)
}

fn simplex(rng: &mut ChaCha20Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// A random element of Φ from a small catalogue, with a code for the report.
fn random_member(rng: &mut ChaCha20Rng) -> (PhiCandidate, f64) {
    match rng.random_range(0..5) {
        0 => {
            let e = rng.random_range(1.05..=2.0);
            (PhiCandidate::power(e), e)
        }
        1 => (PhiCandidate::x_log_x(), -1.0),
        2 => {
            let e = rng.random_range(1.05..=2.0);
            let b = rng.random_range(0.0..2.0);
            (
                PhiCandidate::new(
                    format!("(x+{b})^{e}"),
                    move |x: f64| (x + b).powf(e),
                    move |x: f64| e * (e - 1.0) * (x + b).powf(e - 2.0),
                ),
                e + 10.0,
            )
        }
        3 => {
            let e = rng.random_range(1.05..=2.0);
            let p = PhiCandidate::power(e).combine(1.0, &PhiCandidate::affine(rng.random_range(-2.0..2.0), 1.0), 1.0);
            (p, e + 20.0)
        }
        _ => {
            let e = rng.random_range(1.05..=2.0);
            let c = rng.random_range(0.1..2.0);
            (PhiCandidate::power(e).combine(c, &PhiCandidate::x_log_x(), 1.0), e + 30.0)
        }
    }
}

const MEMBER_CODES: &str = "member code: e in (1,2] is x^e, -1 is x ln x, 10+e is (x+b)^e, \
                            20+e is x^e plus affine, 30+e is c x^e + x ln x";

fn phi_cone(rng: &mut ChaCha20Rng) -> Result<Trial> {
    let (p1, k1) = random_member(rng);
    let (p2, k2) = random_member(rng);
    let (c1, c2) = (magnitude(rng), magnitude(rng));
    let sum = p1.combine(c1, &p2, c2);
    let v = is_in_phi(&sum, &log_grid(1e-3, 1e3, 64), 0.0)?;
    let mut t = Trial::new(
        if v.member { v.worst_margin.max(0.0) } else { v.worst_margin },
        vec![("member1", k1), ("member2", k2), ("c1", c1), ("c2", c2)],
    );
    t.side_ok = v.member;
    Ok(t)
}

fn ft_convex(rng: &mut ChaCha20Rng) -> Result<Trial> {
    let (phi, k) = random_member(rng);
    let t = rng.random_range(0.0..=1.0);
    let (x1, y1, x2, y2) = (magnitude(rng), magnitude(rng), magnitude(rng), magnitude(rng));
    let f = |x: f64, y: f64| ft_deficit(&phi, t, x, y);
    let mid = f(0.5 * (x1 + x2), 0.5 * (y1 + y2))?;
    let avg = 0.5 * (f(x1, y1)? + f(x2, y2)?);
    let scale: f64 = [x1, y1, x2, y2, 0.5 * (x1 + x2), 0.5 * (y1 + y2)]
        .iter()
        .map(|&v| phi.eval(v).abs())
        .sum::<f64>()
        .max(f64::MIN_POSITIVE);
    Ok(Trial::new(
        (avg - mid) / scale,
        vec![("member", k), ("t", t), ("x1", x1), ("y1", y1), ("x2", x2), ("y2", y2)],
    ))
}

fn psi_convex(rng: &mut ChaCha20Rng) -> Result<Trial> {
    let (phi, k) = random_member(rng);
    let w = simplex(rng, 4);
    let xs: Vec<f64> = (0..4).map(|_| magnitude(rng)).collect();
    let ys: Vec<f64> = (0..4).map(|_| magnitude(rng)).collect();
    let t = rng.random_range(0.0..=1.0);
    let (m, scale) = psi_margin_values(&phi, &w, &xs, &ys, t);
    let mut params = vec![("member", k), ("t", t)];
    params.extend(["w1", "w2", "w3", "w4"].into_iter().zip(w.iter().copied()));
    params.extend(["x1", "x2", "x3", "x4"].into_iter().zip(xs.iter().copied()));
    params.extend(["y1", "y2", "y3", "y4"].into_iter().zip(ys.iter().copied()));
    Ok(Trial::new(m / scale.max(f64::MIN_POSITIVE), params))
}

fn random_grid(rng: &mut ChaCha20Rng, factors: usize) -> Result<ProductGrid> {
    let mut points = Vec::with_capacity(factors);
    let mut weights = Vec::with_capacity(factors);
    for _ in 0..factors {
        let atoms = rng.random_range(2..=3);
        points.push((0..atoms).map(|i| i as f64).collect());
        weights.push(simplex(rng, atoms));
    }
    ProductGrid::new(points, weights)
}

fn subadd(rng: &mut ChaCha20Rng, power_of_p: bool) -> Result<Trial> {
    let n = rng.random_range(2..=3);
    let grid = random_grid(rng, n)?;
    let (phi, code, z) = if power_of_p {
        let p = rng.random_range(1.0..=2.0);
        let z: Vec<f64> = (0..grid.len()).map(|_| magnitude(rng).powf(p)).collect();
        (PhiCandidate::power(2.0 / p), p, z)
    } else {
        let (phi, k) = random_member(rng);
        let z: Vec<f64> = (0..grid.len()).map(|_| magnitude(rng)).collect();
        (phi, k, z)
    };
    let (lhs, rhs, scale) = grid.subadditivity(&phi, &z);
    let tag = if power_of_p { "p" } else { "member" };
    Ok(Trial::new(
        (rhs - lhs) / scale.max(f64::MIN_POSITIVE),
        vec![("factors", n as f64), (tag, code), ("lhs", lhs), ("rhs", rhs)],
    ))
}

fn cn(rng: &mut ChaCha20Rng) -> Result<Trial> {
    match rng.random_range(0..3) {
        0 => {
            // C_1: convex functions
            let grid = random_grid(rng, 1)?;
            let e = rng.random_range(1.0..=3.0);
            let z: Vec<f64> = (0..grid.len()).map(|_| magnitude(rng)).collect();
            let (s, scale) = grid.alternating_sum(|v| v[0].powf(e), &z, 1)?;
            Ok(Trial::new(s / scale.max(f64::MIN_POSITIVE), vec![("n", 1.0), ("exponent", e)]))
        }
        1 => {
            // quadratic-affine f(v) = |Av|² + ℓ·v + y on R², n = 3
            let grid = random_grid(rng, 3)?;
            let a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let l: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y = rng.random_range(-1.0..1.0);
            let f = |v: &[f64]| {
                let u0 = a[0] * v[0] + a[1] * v[1];
                let u1 = a[2] * v[0] + a[3] * v[1];
                u0 * u0 + u1 * u1 + l[0] * v[0] + l[1] * v[1] + y
            };
            let z: Vec<f64> = (0..2 * grid.len()).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (s, scale) = grid.alternating_sum(f, &z, 2)?;
            Ok(Trial::new(
                s / scale.max(f64::MIN_POSITIVE),
                vec![("n", 3.0), ("a11", a[0]), ("a12", a[1]), ("a21", a[2]), ("a22", a[3])],
            ))
        }
        _ => {
            // C_2 and Φ: members of Φ on two factors
            let grid = random_grid(rng, 2)?;
            let (phi, k) = random_member(rng);
            let z: Vec<f64> = (0..grid.len()).map(|_| magnitude(rng)).collect();
            let (s, scale) = grid.alternating_sum(|v| phi.eval(v[0]), &z, 1)?;
            Ok(Trial::new(s / scale.max(f64::MIN_POSITIVE), vec![("n", 2.0), ("member", k)]))
        }
    }
}

fn rho_metric(rng: &mut ChaCha20Rng) -> Result<Trial> {
    let s = 1.1 + 0.1 * rng.random_range(0..=9) as f64;
    let (x, y, z) = (magnitude(rng), magnitude(rng), magnitude(rng));
    let margin = rho_triangle_margin(x, y, z, s)?;
    let symmetric = rho_unchecked(x, y, s) == rho_unchecked(y, x, s) && rho_unchecked(x, x, s) == 0.0;
    // ρ_2 against |x−y|/2, in units of the larger argument
    let gap = (rho_unchecked(x, y, 2.0) - 0.5 * (x - y).abs()).abs() / x.max(y);
    let mut t = Trial::new(margin, vec![("s", s), ("x", x), ("y", y), ("z", z)]);
    t.aux = Some(gap);
    t.side_ok = symmetric && gap <= 4.0 * f64::EPSILON;
    Ok(t)
}

fn lemma8(rng: &mut ChaCha20Rng, regime: Lemma8Regime) -> Result<Trial> {
    let s = rng.random_range(1.0..=2.0);
    let (mut c, mut d) = (magnitude(rng), magnitude(rng));
    let mut x = magnitude(rng);
    let t = match regime {
        Lemma8Regime::Outside => {
            let (lo, hi) = (c.min(d), c.max(d));
            if x > lo && x < hi {
                // move x to the boundary-adjacent region outside (c, d)
                x = if rng.random_bool(0.5) {
                    lo * rng.random_range(0.0..=1.0)
                } else {
                    hi / rng.random_range(1e-3..=1.0)
                };
            }
            rng.random_range(0.0..=1.0)
        }
        Lemma8Regime::Half => 0.5,
        Lemma8Regime::SmallT => {
            if c < d {
                std::mem::swap(&mut c, &mut d);
            }
            rng.random_range(0.0..=0.5)
        }
    };
    let margin = lemma8_check(s, t, c, d, x, regime)?;
    Ok(Trial::new(
        margin,
        vec![("K", regime.constant()), ("s", s), ("t", t), ("c", c), ("d", d), ("x", x)],
    ))
}

fn lemma9(rng: &mut ChaCha20Rng) -> Result<Trial> {
    let x1 = rng.random_range(0.0..3.0);
    let x2 = x1 + rng.random_range(0.01..3.0);
    let a = rng.random_range(0.0..=1.0);
    let mut last = None;
    for _ in 0..16 {
        let src = random_smooth_source(rng, 1, 3);
        let parsed = parse_expression(&src, 1)?;
        match parsed.to_test_function() {
            Ok(g) => {
                let (y1, y2) = (g.eval(&[x1]), g.eval(&[x2]));
                let margin = lemma9_check(x1, x2, y1, y2, a, &g)?;
                return Ok(Trial::new(
                    margin,
                    vec![("x1", x1), ("x2", x2), ("y1", y1), ("y2", y2), ("a", a)],
                ));
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| LabError::Unsupported("no usable random expression".into())))
}

fn lemma10(rng: &mut ChaCha20Rng) -> Result<Trial> {
    let x1 = if rng.random_bool(0.25) { 0.0 } else { rng.random_range(0.0..5.0) };
    let x2 = x1 + log_uniform(rng, 1e-2, 5.0);
    let y2 = magnitude(rng);
    let y1 = y2 * rng.random_range(0.0..1.0);
    let p = rng.random_range(1.0..=3.0);
    let m = lemma10_check(x1, x2, y1, y2, p)?;
    let mut t = Trial::new(
        m.est3_margin,
        vec![("x1", x1), ("x2", x2), ("y1", y1), ("y2", y2), ("p", p)],
    );
    t.aux = Some(m.energy_gap);
    t.side_ok = m.energy_gap <= 1e-8;
    Ok(t)
}

fn lemma11(rng: &mut ChaCha20Rng) -> Result<Trial> {
    let s = 2.0 - rng.random_range(0.0..0.9);
    let u = lemma11_u(s)?;
    let t = rng.random_range(0.0..1.0_f64).max(1e-6);
    let d = magnitude(rng);
    let c = d * rng.random_range(0.001..0.999);
    let x = if rng.random_bool(0.1) {
        d * (1.0 - 1e-9)
    } else {
        c + (d - c) * rng.random_range(0.001..0.999)
    };
    let exact = rng.random_bool(0.5);
    let lift = |rng: &mut ChaCha20Rng| if exact { 1.0 } else { 1.0 + rng.random_range(0.0..1.0) };
    let cap = (1.0 - u) * c + u * x;
    let c_tilde = if exact || rng.random_bool(0.3) { cap } else { cap * rng.random_range(0.01..1.0) };
    let v = Lemma11Input {
        s,
        t,
        a: c.powf(s) * lift(rng),
        b: d.powf(s) * lift(rng),
        c,
        d,
        a_tilde: c_tilde.powf(s) * lift(rng),
        c_tilde,
        x,
    };
    let margin = lemma11_check(&v)?;
    Ok(Trial::new(
        margin,
        vec![
            ("s", v.s),
            ("t", v.t),
            ("a", v.a),
            ("b", v.b),
            ("c", v.c),
            ("d", v.d),
            ("a_tilde", v.a_tilde),
            ("c_tilde", v.c_tilde),
            ("x", v.x),
        ],
    ))
}

/// The outside-interval inequality with its constant halved, which fails
/// whenever `x` sits on an endpoint.
fn selftest_fail(rng: &mut ChaCha20Rng) -> Result<Trial> {
    let s = rng.random_range(1.2..=2.0);
    let t = rng.random_range(0.1..0.9);
    let (c, d) = (magnitude(rng), magnitude(rng));
    // with x = c the bracket is F_t(d, c) + F_t(c, c) = F_t(d, c)
    let f = lemma8_bracket(s, t, c, d);
    let halved = 0.5 * f - f;
    Ok(Trial::new(halved, vec![("s", s), ("t", t), ("c", c), ("d", d)]))
}

fn lemma8_bracket(s: f64, t: f64, c: f64, d: f64) -> f64 {
    let top = c.max(d);
    let (c, d) = (c / top, d / top);
    t * d.powf(s) + (1.0 - t) * c.powf(s) - (t * d + (1.0 - t) * c).powf(s)
}

struct SuiteSpec {
    tolerance: f64,
    distribution: &'static str,
    aux_name: Option<&'static str>,
}

fn suite_config(id: &str) -> Result<SuiteSpec> {
    let (tolerance, distribution, aux_name) = match id {
        "phi-cone" => (
            super::candidate::CONCAVITY_REL_TOL,
            "two random members, coefficients log-uniform on [1e-3, 1e3], 64-point log grid on [1e-3, 1e3]",
            None,
        ),
        "ft-convex" => (1e-10, "random member, t uniform on [0,1], coordinates log-uniform on [1e-3, 1e3]; margin relative to sum of |phi| terms", None),
        "psi-convex" => (1e-10, "random member, 4 atoms with random weights, X and Y log-uniform on [1e-3, 1e3], t uniform; margin relative", None),
        "subadd" => (1e-10, "n in {2,3} factors of 2-3 atoms, random weights, Z log-uniform on [1e-3, 1e3], random member; margin relative", None),
        "varp-subadd" => (1e-10, "n in {2,3} factors of 2-3 atoms, random weights, f log-uniform on [1e-3, 1e3], p uniform on [1,2]; margin relative", None),
        "cn" => (1e-10, "thirds: n=1 with x^e, e in [1,3]; n=3 quadratic-affine on R^2; n=2 with a random member; margin relative to term magnitudes", None),
        "rho-metric" => (1e-12, "s in {1.1,...,2.0}, x, y, z log-uniform on [1e-3, 1e3], rescaled to max 1", Some("rho2_relative_gap")),
        "lemma8" => (1e-10, "regime cycles with trial index; s uniform on [1,2], c, d, x log-uniform on [1e-3, 1e3], rescaled to max 1", None),
        "lemma8-outside" => (1e-10, "K=1; s uniform on [1,2], t uniform on [0,1], c, d, x log-uniform on [1e-3, 1e3] with x moved outside (c,d)", None),
        "lemma8-half" => (1e-10, "K=2; t=1/2, s uniform on [1,2], c, d, x log-uniform on [1e-3, 1e3]", None),
        "lemma8-small" => (1e-10, "K=12; t uniform on [0,1/2], c >= d, s uniform on [1,2], magnitudes log-uniform on [1e-3, 1e3]", None),
        "lemma9" => (1e-10, "x1 uniform on [0,3], gap uniform on [0.01,3], a uniform on [0,1], g a random smooth expression of depth <= 3; margin relative", None),
        "lemma10" => (1e-10, "x1 = 0 w.p. 1/4 else uniform on [0,5], gap log-uniform on [1e-2,5], y1/y2 uniform on [0,1], p uniform on [1,3]; margin relative", Some("energy_relative_gap")),
        "lemma11" => (1e-10, "s uniform on (1.1,2], t uniform on (0,1), d log-uniform, c/d and x uniform in range, half the trials at the reduced case a=c^s etc.; rescaled to d=1", None),
        "selftest-fail" => (1e-10, "lemma 8 outside regime with K=1/2 and x=c", None),
        other => {
            return Err(LabError::Unsupported(format!(
                "unknown suite '{other}'; expected one of {}",
                SUITE_IDS.join(", ")
            )))
        }
    };
    Ok(SuiteSpec {
        tolerance,
        distribution,
        aux_name,
    })
}

fn run_trial(id: &str, index: u64, rng: &mut ChaCha20Rng) -> Result<Trial> {
    match id {
        "phi-cone" => phi_cone(rng),
        "ft-convex" => ft_convex(rng),
        "psi-convex" => psi_convex(rng),
        "subadd" => subadd(rng, false),
        "varp-subadd" => subadd(rng, true),
        "cn" => cn(rng),
        "rho-metric" => rho_metric(rng),
        "lemma8" => {
            let regime = [Lemma8Regime::Outside, Lemma8Regime::Half, Lemma8Regime::SmallT][(index % 3) as usize];
            lemma8(rng, regime)
        }
        "lemma8-outside" => lemma8(rng, Lemma8Regime::Outside),
        "lemma8-half" => lemma8(rng, Lemma8Regime::Half),
        "lemma8-small" => lemma8(rng, Lemma8Regime::SmallT),
        "lemma9" => lemma9(rng),
        "lemma10" => lemma10(rng),
        "lemma11" => lemma11(rng),
        "selftest-fail" => selftest_fail(rng),
        other => Err(LabError::Unsupported(format!("unknown suite '{other}'"))),
    }
}

/// Runs `trials` randomised trials of suite `id`. Trial `i` draws from
/// `seed.derive(i)`.
pub fn run_suite(id: &str, trials: u64, seed: Seed) -> Result<LemmaVerdict> {
    let cfg = suite_config(id)?;
    if trials == 0 {
        return Err(LabError::domain("a suite needs at least one trial"));
    }
    let tol = cfg.tolerance;
    let acc = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed.derive(i).rng();
            let t = run_trial(id, i, &mut rng)?;
            let bad = !(t.margin >= -tol) || !t.side_ok;
            Ok(Acc {
                trials: 1,
                violations: bad as u64,
                worst: Some((t.margin, i, t.params)),
                aux: t.aux,
            })
        })
        .try_reduce(Acc::empty, |a, b| Ok(a.merge(b)))?;
    let (worst_margin, params) = match acc.worst {
        Some((m, i, p)) => {
            let mut map: BTreeMap<String, f64> = p.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
            map.insert("trial".into(), i as f64);
            (m, map)
        }
        None => (f64::INFINITY, BTreeMap::new()),
    };
    let mut auxiliary = BTreeMap::new();
    if let (Some(name), Some(v)) = (cfg.aux_name, acc.aux) {
        auxiliary.insert(name.to_string(), v);
    }
    let mut distribution = cfg.distribution.to_string();
    if matches!(id, "phi-cone" | "ft-convex" | "psi-convex" | "subadd" | "cn") {
        distribution.push_str("; ");
        distribution.push_str(MEMBER_CODES);
    }
    Ok(LemmaVerdict {
        lemma_id: id.to_string(),
        trials: acc.trials,
        violations: acc.violations,
        worst_margin,
        params_of_worst: params,
        tolerance: tol,
        distribution,
        auxiliary,
    })
}
