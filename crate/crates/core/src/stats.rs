//! Goodness-of-fit and interval helpers used by the Monte Carlo experiments.

use statrs::distribution::{Beta, ContinuousCDF};

use crate::error::{LabError, Result};

/// Asymptotic 99.9% critical value of the one-sample Kolmogorov–Smirnov
/// statistic scaled by √n.
pub const KS_CRITICAL_999: f64 = 1.95;

/// Kolmogorov–Smirnov distance between the empirical law of `samples` and `cdf`.
/// Sorts `samples` in place.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &mut [f64], cdf: F) -> f64 {
    samples.sort_by(|a, b| a.total_cmp(b));
    let n = samples.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in samples.iter().enumerate() {
        let fx = cdf(x);
        d = d.max(fx - i as f64 / n).max((i + 1) as f64 / n - fx);
    }
    d
}

/// Upper end of the two-sided Clopper–Pearson interval for `k` successes in
/// `n` trials at confidence `conf`.
pub fn clopper_pearson_upper(k: u64, n: u64, conf: f64) -> Result<f64> {
    if n == 0 || k > n || !(conf > 0.0 && conf < 1.0) {
        return Err(LabError::domain(format!(
            "clopper_pearson_upper needs 0 <= k <= n, n > 0, conf in (0,1); got k={k}, n={n}, conf={conf}"
        )));
    }
    if k == n {
        return Ok(1.0);
    }
    let beta = Beta::new((k + 1) as f64, (n - k) as f64)
        .map_err(|e| LabError::domain(format!("beta parameters: {e}")))?;
    Ok(beta.inverse_cdf(1.0 - 0.5 * (1.0 - conf)))
}

pub fn clopper_pearson_lower(k: u64, n: u64, conf: f64) -> Result<f64> {
    if n == 0 || k > n || !(conf > 0.0 && conf < 1.0) {
        return Err(LabError::domain("clopper_pearson_lower arguments out of range"));
    }
    if k == 0 {
        return Ok(0.0);
    }
    let beta = Beta::new(k as f64, (n - k + 1) as f64)
        .map_err(|e| LabError::domain(format!("beta parameters: {e}")))?;
    Ok(beta.inverse_cdf(0.5 * (1.0 - conf)))
}

/// Weighted least-squares line `y ≈ intercept + slope·x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    /// Weighted residual sum of squares.
    pub rss: f64,
}

pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() || x.len() != w.len() {
        return Err(LabError::domain("line fit inputs differ in length"));
    }
    if x.len() < 3 {
        return Err(LabError::InsufficientData(format!(
            "line fit needs at least 3 points, got {}",
            x.len()
        )));
    }
    let sw: f64 = w.iter().sum();
    let xm = x.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let ym = y.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(a, b)| b * (a - xm).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(LabError::InsufficientData("abscissae are all equal".into()));
    }
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, c), b)| b * (a - xm) * (c - ym))
        .sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let rss: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((a, c), b)| b * (c - intercept - slope * a).powi(2))
        .sum();
    let dof = (x.len() - 2) as f64;
    // Residual-scaled standard error, so it stays meaningful when the
    // weights are only known up to a constant factor.
    let slope_stderr = (rss / dof / sxx).sqrt();
    Ok(LineFit {
        intercept,
        slope,
        slope_stderr,
        rss,
    })
}

pub fn line_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    weighted_line_fit(x, y, &vec![1.0; x.len()])
}

/// Golden-section search for the minimum of a unimodal `f` on `[lo, hi]`.
pub fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..200 {
        if (hi - lo).abs() <= tol {
            break;
        }
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_exact_quantiles_is_small() {
        let n = 1000;
        let mut xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let d = ks_statistic(&mut xs, |x| x.clamp(0.0, 1.0));
        assert!((d - 0.5 / n as f64).abs() < 1e-12);
    }

    #[test]
    fn clopper_pearson_known_values() {
        // zero successes: upper = 1 - (0.025)^(1/n)
        let u = clopper_pearson_upper(0, 100, 0.95).unwrap();
        assert!((u - (1.0 - 0.025f64.powf(0.01))).abs() < 1e-9, "{u}");
        assert_eq!(clopper_pearson_upper(5, 5, 0.95).unwrap(), 1.0);
        let lo = clopper_pearson_lower(50, 100, 0.95).unwrap();
        let hi = clopper_pearson_upper(50, 100, 0.95).unwrap();
        assert!(lo < 0.5 && hi > 0.5 && (0.5 - lo - (hi - 0.5)).abs() < 1e-9);
    }

    #[test]
    fn line_fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 - 0.5 * v).collect();
        let fit = line_fit(&x, &y).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12 && (fit.intercept - 2.0).abs() < 1e-12);
        assert!(fit.slope_stderr < 1e-10);
    }

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, fx) = golden_min(|x| (x - 0.3).powi(2) + 1.0, -2.0, 2.0, 1e-10);
        // a flat minimum is located only to about sqrt(eps)
        assert!((x - 0.3).abs() < 1e-7 && (fx - 1.0).abs() < 1e-14);
    }
}
