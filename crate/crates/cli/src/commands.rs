use serde_json::{json, Value};

use interpolab_core::concentration::{
    mc_tail_experiment, mgf_verify, sharpness_fit, tail_bound, HerbstParams, TailMode,
};
use interpolab_core::expr::parse_expression;
use interpolab_core::functionals::ia_ratio;
use interpolab_core::measures::{Measure, CATALOG};
use interpolab_core::phi_class::{run_suite, SUITE_IDS};
use interpolab_core::quadrature::QuadratureSpec;
use interpolab_core::rng::Seed;
use interpolab_core::transport::{build_z_r, jacobian_bound_check, pushforward_check, JACOBIAN_HI, JACOBIAN_LO};
use interpolab_core::two_point::{maximizer_angle, optimal_constant_bruteforce, optimal_constant_closed_form};
use interpolab_core::{LabError, Result};

use crate::args::*;
use crate::output::Table;

/// Oracle agreement demanded by `constant two-point --oracle`.
pub const TWO_POINT_GAP_TOL: f64 = 1e-6;
pub const TWO_POINT_ANGLE_TOL: f64 = 1e-4;
/// Slack on `bound − mgf` in `mgf verify`.
pub const MGF_MARGIN_TOL: f64 = -1e-8;

pub struct Outcome {
    pub payload: Value,
    pub table: Table,
    pub passed: bool,
    /// The table is the requested artefact regardless of `--format`.
    pub force_csv: bool,
}

impl Outcome {
    fn new(payload: Value, table: Table, passed: bool) -> Self {
        Outcome {
            payload,
            table,
            passed,
            force_csv: false,
        }
    }
}

fn value<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serialisable")
}

/// Parses `a:b:step` (inclusive of `b` up to rounding) or a comma list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = |what: &str| LabError::Domain(format!("bad grid '{text}': {what}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("'{}' is not a number", s.trim())));
    let parts: Vec<&str> = text.split(':').collect();
    let grid = match parts.len() {
        1 => text.split(',').map(num).collect::<Result<Vec<_>>>()?,
        3 => {
            let (a, b, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
            if !(step > 0.0) || !(b >= a) || !a.is_finite() || !b.is_finite() {
                return Err(bad("need a <= b and step > 0"));
            }
            let n = ((b - a) / step + 1e-9).floor() as usize;
            if n > 10_000_000 {
                return Err(bad("too many points"));
            }
            (0..=n).map(|k| a + k as f64 * step).collect()
        }
        _ => return Err(bad("expected a:b:step or a comma list")),
    };
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
        return Err(bad("empty or non-finite"));
    }
    Ok(grid)
}

pub fn run(cmd: &Command, seed: Seed) -> Result<Outcome> {
    match cmd {
        Command::Catalog => Ok(catalog()),
        Command::Constant(ConstantCmd::TwoPoint(a)) => two_point(a),
        Command::Verify(VerifyCmd::Lemma(a)) => lemma(a, seed),
        Command::IaRatio(a) => ia(a),
        Command::Transport(TransportCmd::Build(a)) => transport_build(a),
        Command::Transport(TransportCmd::Check(a)) => transport_check(a, seed),
        Command::Tail(TailCmd::Mc(a)) => tail_mc(a, seed),
        Command::Tail(TailCmd::Bound(a)) => tail_bound_cmd(a),
        Command::Mgf(MgfCmd::Verify(a)) => mgf(a),
    }
}

fn catalog() -> Outcome {
    let mut table = Table::new(&["kind", "key"]);
    for k in CATALOG {
        table.push(vec!["measure".into(), (*k).into()]);
    }
    for k in SUITE_IDS {
        table.push(vec!["suite".into(), (*k).into()]);
    }
    Outcome::new(json!({ "measures": CATALOG, "suites": SUITE_IDS }), table, true)
}

fn two_point(a: &TwoPointArgs) -> Result<Outcome> {
    let closed = optimal_constant_closed_form(a.alpha, a.p)?;
    let mut table = Table::new(&["alpha", "p", "closed_form", "bruteforce", "gap", "angle"]);
    if !a.oracle {
        table.push(vec![a.alpha.into(), a.p.into(), closed.into(), f64::NAN.into(), f64::NAN.into(), f64::NAN.into()]);
        let payload = json!({ "alpha": a.alpha, "p": a.p, "closed_form": closed });
        return Ok(Outcome::new(payload, table, true));
    }
    let bf = optimal_constant_bruteforce(a.alpha, a.p, a.resolution)?;
    let gap = (bf.constant - closed).abs();
    let angle = maximizer_angle(a.alpha, a.p, bf.maximizer);
    let passed = gap <= TWO_POINT_GAP_TOL && angle <= TWO_POINT_ANGLE_TOL;
    table.push(vec![a.alpha.into(), a.p.into(), closed.into(), bf.constant.into(), gap.into(), angle.into()]);
    let payload = json!({
        "alpha": a.alpha,
        "p": a.p,
        "closed_form": closed,
        "bruteforce": bf,
        "gap": gap,
        "maximizer_angle": angle,
        "gap_tolerance": TWO_POINT_GAP_TOL,
        "angle_tolerance": TWO_POINT_ANGLE_TOL,
    });
    Ok(Outcome::new(payload, table, passed))
}

fn lemma(a: &LemmaArgs, seed: Seed) -> Result<Outcome> {
    let v = run_suite(&a.id, a.trials, seed)?;
    let mut table = Table::new(&["lemma_id", "trials", "violations", "worst_margin", "tolerance"]);
    table.push(vec![
        v.lemma_id.clone().into(),
        v.trials.into(),
        v.violations.into(),
        v.worst_margin.into(),
        v.tolerance.into(),
    ]);
    Ok(Outcome::new(value(&v), table, v.passed()))
}

fn ia(a: &IaRatioArgs) -> Result<Outcome> {
    let m = Measure::from_key(&a.measure)?;
    let f = parse_expression(&a.f, m.dim())?.to_test_function()?;
    let w = a.weight.as_deref().map(|s| parse_expression(s, 1)).transpose()?;
    let wf = w.as_ref().map(|e| move |x: f64| e.eval(&[x]));
    let weight: Option<&(dyn Fn(f64) -> f64 + Sync)> = wf.as_ref().map(|g| g as _);
    let q = QuadratureSpec::default();
    let mut table = Table::new(&["p", "a", "var_p", "energy", "ratio"]);
    let mut reports = Vec::new();
    for p in parse_grid(&a.p)? {
        let rep = ia_ratio(&m, &f, p, a.a, weight, &q)?;
        table.push(vec![rep.p.into(), rep.a.into(), rep.var_p.into(), rep.energy.into(), rep.ratio.into()]);
        reports.push(rep);
    }
    let max_ratio = reports.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let violations = a.claim.map_or(0, |c| reports.iter().filter(|r| r.ratio > c).count());
    let payload = json!({
        "measure": m.key(),
        "function": a.f,
        "weight": a.weight,
        "claim": a.claim,
        "max_ratio": max_ratio,
        "violations": violations,
        "reports": reports,
    });
    Ok(Outcome::new(payload, table, violations == 0))
}

fn transport_build(a: &TransportBuildArgs) -> Result<Outcome> {
    let tm = build_z_r(a.r)?;
    let mut table = Table::new(&["x", "z", "dz", "jacobian_sq", "bound_lo", "bound_hi"]);
    for ((&x, &z), &dz) in tm.nodes().iter().zip(tm.node_values()).zip(tm.node_derivatives()) {
        let w = x.abs().powf(tm.a()).max(1.0);
        let jac = if x <= tm.image_radius() {
            tm.jacobian_sq_at_image(x)?
        } else {
            f64::NAN
        };
        table.push(vec![x.into(), z.into(), dz.into(), jac.into(), (JACOBIAN_LO * w).into(), (JACOBIAN_HI * w).into()]);
    }
    let payload = json!({
        "r": tm.r(),
        "a": tm.a(),
        "c_r": tm.c_r(),
        "nodes": tm.nodes().len(),
        "radius": tm.radius(),
        "image_radius": tm.image_radius(),
    });
    Ok(Outcome {
        payload,
        table,
        passed: true,
        force_csv: a.dump.is_some(),
    })
}

fn transport_check(a: &TransportCheckArgs, seed: Seed) -> Result<Outcome> {
    if !(a.xmax > 0.0) {
        return Err(LabError::Domain("--xmax must be positive".into()));
    }
    let tm = build_z_r(a.r)?;
    let xs = parse_grid(&format!("{}:{}:{}", -a.xmax, a.xmax, a.step))?;
    let verdict = jacobian_bound_check(&tm, &xs)?;
    let below_power = tm
        .nodes()
        .iter()
        .zip(tm.node_values())
        .filter(|(x, z)| **z < x.powf(tm.r()) * (1.0 - 1e-12))
        .count();
    let ks = if a.samples > 0 {
        Some(pushforward_check(&tm, a.samples, seed)?)
    } else {
        None
    };
    let passed = verdict.passed() && below_power == 0 && ks.as_ref().is_none_or(|k| k.passed);
    let mut table = Table::new(&["r", "points", "violations", "worst_margin", "below_power", "ks_statistic", "ks_threshold"]);
    table.push(vec![
        a.r.into(),
        xs.len().into(),
        verdict.violations.into(),
        verdict.worst_margin.into(),
        below_power.into(),
        ks.as_ref().map_or(f64::NAN, |k| k.statistic).into(),
        ks.as_ref().map_or(f64::NAN, |k| k.threshold).into(),
    ]);
    let payload = json!({
        "r": a.r,
        "jacobian": verdict,
        "nodes_below_power": below_power,
        "pushforward": ks,
    });
    Ok(Outcome::new(payload, table, passed))
}

fn tail_mc(a: &TailMcArgs, seed: Seed) -> Result<Outcome> {
    let h = parse_expression(&a.h, a.n)?.to_test_function()?;
    let ts = parse_grid(&a.t)?;
    let curve = mc_tail_experiment(a.r, a.n, &h, &ts, a.samples, seed, a.c)?;
    let fit = match sharpness_fit(&curve) {
        Ok(f) => Some(f),
        Err(LabError::InsufficientData(_)) => None,
        Err(e) => return Err(e),
    };
    let mut table = Table::new(&["t", "bound", "empirical", "cp_upper"]);
    let mut exceed = 0usize;
    for i in 0..curve.t.len() {
        if curve.empirical[i] > curve.bound[i] {
            exceed += 1;
        }
        table.push(vec![curve.t[i].into(), curve.bound[i].into(), curve.empirical[i].into(), curve.cp_upper[i].into()]);
    }
    let payload = json!({ "curve": curve, "sharpness": fit, "points_above_bound": exceed });
    Ok(Outcome::new(payload, table, exceed == 0))
}

fn tail_bound_cmd(a: &TailBoundArgs) -> Result<Outcome> {
    let hp = HerbstParams::new(a.c, a.a)?;
    let mode = if a.optimized { TailMode::Optimized } else { TailMode::Canonical };
    let r = hp.r();
    let mut table = Table::new(&["t", "bound", "reference", "p", "lambda"]);
    let mut rows = Vec::new();
    let mut above = 0usize;
    for t in parse_grid(&a.t)? {
        let b = tail_bound(&hp, t, mode)?;
        let reference = if t <= 1.0 { (-t * t / 3.0).exp() } else { (-t.powf(r) / 3.0).exp() };
        if b.bound > reference * (1.0 + 1e-12) {
            above += 1;
        }
        table.push(vec![t.into(), b.bound.into(), reference.into(), b.p.into(), b.lambda.into()]);
        rows.push(json!({ "t": t, "bound": b.bound, "reference": reference, "p": b.p, "lambda": b.lambda }));
    }
    let payload = json!({
        "a": a.a,
        "r": r,
        "C": a.c,
        "mode": mode,
        "rows": rows,
        "points_above_reference": above,
    });
    Ok(Outcome::new(payload, table, above == 0))
}

fn mgf(a: &MgfVerifyArgs) -> Result<Outcome> {
    let m = Measure::from_key(&a.measure)?;
    let h = parse_expression(&a.h, m.dim())?.to_test_function()?;
    let hp = HerbstParams::new(a.c, a.a)?;
    let rows = mgf_verify(&m, &h, &hp, &parse_grid(&a.p)?, &parse_grid(&a.lambda)?, &QuadratureSpec::default())?;
    let mut table = Table::new(&["p", "lambda", "mgf", "bound", "margin"]);
    for r in &rows {
        table.push(vec![r.p.into(), r.lambda.into(), r.mgf.into(), r.bound.into(), r.margin.into()]);
    }
    let worst = rows.iter().map(|r| r.margin).fold(f64::INFINITY, f64::min);
    let passed = worst >= MGF_MARGIN_TOL;
    let payload = json!({ "measure": m.key(), "h": a.h, "rows": rows, "worst_margin": worst, "tolerance": MGF_MARGIN_TOL });
    Ok(Outcome::new(payload, table, passed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("1,1.5, 2").unwrap(), vec![1.0, 1.5, 2.0]);
        let g = parse_grid("0:1:0.1").unwrap();
        assert_eq!(g.len(), 11);
        assert!((g[10] - 1.0).abs() < 1e-12);
        assert_eq!(parse_grid("2:2:1").unwrap(), vec![2.0]);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0:1:0").is_err());
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("a,b").is_err());
    }
}
