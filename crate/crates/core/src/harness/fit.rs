//! Least-squares rate fits in log-log coordinates.

use serde::Serialize;

use crate::error::{FhnError, Result};

/// `log y = intercept + slope log x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in `log y`.
    pub residual: f64,
}

impl LogLogFit {
    pub fn predict(&self, x: f64) -> f64 {
        (self.intercept + self.slope * x.ln()).exp()
    }
}

/// Needs at least three points with positive coordinates.
pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<LogLogFit> {
    if x.len() != y.len() {
        return Err(FhnError::SizeMismatch { expected: x.len(), found: y.len() });
    }
    if x.len() < 3 {
        return Err(FhnError::TooFewRecords { needed: 3, found: x.len() });
    }
    if let Some((a, b)) = x.iter().zip(y).find(|(a, b)| !(**a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())) {
        return Err(FhnError::InvalidInput(format!("log-log fit needs positive finite data, got ({a}, {b})")));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(FhnError::InvalidInput("log-log fit needs at least two distinct abscissae".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (lx.iter().zip(&ly).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum::<f64>() / n).sqrt();
    Ok(LogLogFit { slope, intercept, residual })
}

/// Slope between consecutive points; `None` for the first point or when the
/// data cannot be logged.
pub fn partial_slopes(x: &[f64], y: &[f64]) -> Vec<Option<f64>> {
    (0..x.len())
        .map(|k| {
            if k == 0 || !(x[k] > 0.0 && x[k - 1] > 0.0 && y[k] > 0.0 && y[k - 1] > 0.0) || x[k] == x[k - 1] {
                None
            } else {
                Some((y[k] / y[k - 1]).ln() / (x[k] / x[k - 1]).ln())
            }
        })
        .collect()
}

/// True when `values` never increases, up to at most one increase smaller
/// than `rel_tol` relative to the preceding value.
pub fn non_increasing_with_tolerance(values: &[f64], rel_tol: f64) -> bool {
    let mut inversions = 0;
    for p in values.windows(2) {
        if p[1] > p[0] {
            inversions += 1;
            if inversions > 1 || p[1] - p[0] >= rel_tol * p[0].abs() {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];

    #[test]
    fn recovers_linear_rate() {
        let f = fit_loglog(&EPS, &EPS).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-10);
        assert!(f.residual < 1e-10);
    }

    #[test]
    fn recovers_seventh_root() {
        let y: Vec<f64> = EPS.iter().map(|e| e.powf(1.0 / 7.0)).collect();
        assert!((fit_loglog(&EPS, &y).unwrap().slope - 1.0 / 7.0).abs() < 1e-10);
    }

    #[test]
    fn needs_three_positive_points() {
        assert!(matches!(fit_loglog(&[1.0, 2.0], &[1.0, 2.0]), Err(FhnError::TooFewRecords { .. })));
        assert!(fit_loglog(&[1.0, 2.0, 3.0], &[1.0, 0.0, 2.0]).is_err());
    }

    #[test]
    fn partial_slopes_of_power_law() {
        let y: Vec<f64> = EPS.iter().map(|e| 3.0 * e * e).collect();
        let s = partial_slopes(&EPS, &y);
        assert_eq!(s[0], None);
        assert!(s[1..].iter().all(|v| (v.unwrap() - 2.0).abs() < 1e-12));
    }

    #[test]
    fn monotonicity_tolerance() {
        assert!(non_increasing_with_tolerance(&[4.0, 3.0, 3.0, 1.0], 0.05));
        assert!(non_increasing_with_tolerance(&[4.0, 3.0, 3.1, 1.0], 0.05));
        assert!(!non_increasing_with_tolerance(&[4.0, 3.0, 3.3, 1.0], 0.05));
        assert!(!non_increasing_with_tolerance(&[4.0, 4.1, 3.0, 3.1], 0.05));
    }
}
