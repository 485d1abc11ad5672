//! Empirical-versus-theoretical comparison of one statistic.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{HarnessError, Result};

/// Fewest records accepted for a distributional comparison.
pub const MIN_RECORDS: usize = 30;

/// `|z| ≤ 4` for the mean check.
pub const Z_LIMIT: f64 = 4.0;

/// 5% asymptotic Kolmogorov–Smirnov constant.
pub const KS_CONSTANT: f64 = 1.358;

/// Relative tolerance of first-order (mean) limits.
pub const FIRST_ORDER_TOL: f64 = 0.02;

/// Theoretical variances at or below this are treated as degenerate.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NotApplicable,
}

impl Verdict {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn failed(self) -> bool {
        self == Verdict::Fail
    }
}

/// One-pass mean and variance in input order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    count: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            f64::NAN
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }
}

impl FromIterator<f64> for Welford {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut w = Welford::default();
        for x in iter {
            w.push(x);
        }
        w
    }
}

/// Two-sided Kolmogorov–Smirnov distance to `N(mean, variance)`.
pub fn ks_statistic(values: &[f64], mean: f64, variance: f64) -> f64 {
    let normal = Normal::new(mean, variance.sqrt()).expect("positive variance");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal.cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Acceptance band for `empirical / theoretical` variance.
pub fn variance_ratio_band(count: usize) -> (f64, f64) {
    if count >= 500 {
        (0.8, 1.25)
    } else {
        let half = 4.0 * (2.0 / (count as f64 - 1.0)).sqrt();
        ((1.0 - half).max(0.0), 1.0 + half)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatSummary {
    pub statistic: String,
    pub kind: String,
    pub count: usize,
    pub mean: f64,
    pub variance: f64,
    pub theory_mean: f64,
    pub theory_variance: f64,
    pub z_score: f64,
    pub variance_ratio: Option<f64>,
    pub variance_band: Option<(f64, f64)>,
    pub ks: Option<f64>,
    pub ks_critical: f64,
    pub mean_check: Verdict,
    pub variance_check: Verdict,
    pub ks_check: Verdict,
    pub passed: bool,
}

/// Compares `values` with `N(theory_mean, theory_variance)`.
///
/// When the theoretical variance is degenerate the statistic has no
/// `√n`-scale fluctuation; the mean check then only asks the empirical mean to
/// be within four empirical standard deviations of the target, and the
/// variance and KS checks do not apply.
pub fn summarize_values(
    statistic: &str,
    kind: &str,
    values: &[f64],
    theory_mean: f64,
    theory_variance: f64,
) -> Result<StatSummary> {
    let count = values.len();
    if count < MIN_RECORDS {
        return Err(HarnessError::InsufficientData {
            statistic: format!("{kind}/{statistic}"),
            count,
            needed: MIN_RECORDS,
        });
    }
    let acc: Welford = values.iter().copied().collect();
    let (mean, variance) = (acc.mean(), acc.variance());
    let stderr = (variance / count as f64).sqrt();
    let z_score = if stderr > 0.0 {
        (mean - theory_mean) / stderr
    } else if mean == theory_mean {
        0.0
    } else {
        f64::INFINITY
    };
    let ks_critical = KS_CONSTANT / (count as f64).sqrt();

    let (mean_check, variance_check, ks_check, variance_ratio, variance_band, ks);
    if theory_variance <= DEGENERATE_VARIANCE {
        mean_check = Verdict::from_bool((mean - theory_mean).abs() <= Z_LIMIT * variance.sqrt());
        variance_check = Verdict::NotApplicable;
        ks_check = Verdict::NotApplicable;
        variance_ratio = None;
        variance_band = None;
        ks = None;
    } else {
        let ratio = variance / theory_variance;
        let band = variance_ratio_band(count);
        let d = ks_statistic(values, theory_mean, theory_variance);
        mean_check = Verdict::from_bool(z_score.abs() <= Z_LIMIT);
        variance_check = Verdict::from_bool(ratio >= band.0 && ratio <= band.1);
        ks_check = Verdict::from_bool(d <= ks_critical);
        variance_ratio = Some(ratio);
        variance_band = Some(band);
        ks = Some(d);
    }
    let passed = !(mean_check.failed() || variance_check.failed() || ks_check.failed());
    Ok(StatSummary {
        statistic: statistic.to_string(),
        kind: kind.to_string(),
        count,
        mean,
        variance,
        theory_mean,
        theory_variance,
        z_score,
        variance_ratio,
        variance_band,
        ks,
        ks_critical,
        mean_check,
        variance_check,
        ks_check,
        passed,
    })
}

/// Empirical mean of a first-order quantity against its limit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirstOrderSummary {
    pub statistic: String,
    pub kind: String,
    pub mean: f64,
    pub limit: f64,
    pub relative_error: Option<f64>,
    pub tolerance: f64,
    pub check: Verdict,
}

pub fn first_order(statistic: &str, kind: &str, values: &[f64], limit: f64) -> FirstOrderSummary {
    let mean = values.iter().copied().collect::<Welford>().mean();
    let (relative_error, check) = if limit.abs() > DEGENERATE_VARIANCE {
        let rel = (mean / limit - 1.0).abs();
        (Some(rel), Verdict::from_bool(rel <= FIRST_ORDER_TOL))
    } else {
        (None, Verdict::NotApplicable)
    };
    FirstOrderSummary {
        statistic: statistic.to_string(),
        kind: kind.to_string(),
        mean,
        limit,
        relative_error,
        tolerance: FIRST_ORDER_TOL,
        check,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, -2.5, 7.25, 0.0, 3.5];
        let w: Welford = xs.iter().copied().collect();
        let mean = xs.iter().sum::<f64>() / 6.0;
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 5.0;
        assert!((w.mean() - mean).abs() < 1e-14);
        assert!((w.variance() - var).abs() < 1e-13);
    }

    #[test]
    fn ks_of_quantiles_is_small() {
        let normal = Normal::new(0.0, 2.0).unwrap();
        let values: Vec<f64> = (0..1000)
            .map(|i| normal.inverse_cdf((i as f64 + 0.5) / 1000.0))
            .collect();
        let d = ks_statistic(&values, 0.0, 4.0);
        assert!((d - 0.0005).abs() < 1e-9);
        assert!(ks_statistic(&values, 3.0, 4.0) > 0.5);
    }

    #[test]
    fn zeros_fail_variance_ratio() {
        let s = summarize_values("theta_1", "covariance_matrix", &[0.0; 100], 0.0, 1.0).unwrap();
        assert_eq!(s.variance_check, Verdict::Fail);
        assert_eq!(s.mean_check, Verdict::Pass);
        assert!(!s.passed);
    }

    #[test]
    fn too_few_records() {
        let err =
            summarize_values("theta_1", "covariance_matrix", &[0.0; 10], 0.0, 1.0).unwrap_err();
        assert!(matches!(
            err,
            HarnessError::InsufficientData { count: 10, .. }
        ));
    }

    #[test]
    fn degenerate_theory() {
        let values: Vec<f64> = (0..50).map(|i| 0.01 + 0.001 * (i % 5) as f64).collect();
        let s = summarize_values("proj", "covariance_matrix", &values, 0.0, 0.0).unwrap();
        assert_eq!(s.variance_check, Verdict::NotApplicable);
        assert_eq!(s.ks_check, Verdict::NotApplicable);
        assert_eq!(s.mean_check, Verdict::Fail);
        let centred: Vec<f64> = values.iter().map(|v| v - 0.012).collect();
        let s = summarize_values("proj", "covariance_matrix", &centred, 0.0, 0.0).unwrap();
        assert!(s.passed);
    }

    #[test]
    fn band_widths() {
        assert_eq!(variance_ratio_band(500), (0.8, 1.25));
        let (lo, hi) = variance_ratio_band(101);
        assert!((hi - 1.0 - 4.0 * 0.02f64.sqrt()).abs() < 1e-12);
        assert!((1.0 - lo - 4.0 * 0.02f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn first_order_relative_error() {
        let f = first_order("lambda_1", "covariance_matrix", &[4.7, 4.6], 4.666667);
        assert_eq!(f.check, Verdict::Pass);
        let f = first_order("proj", "covariance_matrix", &[0.01], 0.0);
        assert_eq!(f.check, Verdict::NotApplicable);
    }
}
