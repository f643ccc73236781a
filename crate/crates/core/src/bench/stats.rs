use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("need at least {need} usable points, got {got}")]
    InsufficientPoints { need: usize, got: usize },
}

/// Linear-interpolation quantile of sorted data (the `(n - 1) p` rule).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty data");
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

pub fn median(xs: &[f64]) -> f64 {
    quantile_sorted(&sorted(xs), 0.5)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Tukey boxplot summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoxplotStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    /// Most extreme samples within `1.5 IQR` of the quartiles, never inside
    /// the box.
    pub whisker_lo: f64,
    pub whisker_hi: f64,
    pub outlier_fraction: f64,
}

pub fn boxplot_stats(samples: &[f64]) -> Result<BoxplotStats, StatsError> {
    if samples.len() < 4 {
        return Err(StatsError::TooFewSamples {
            need: 4,
            got: samples.len(),
        });
    }
    Ok(tukey(&sorted(samples)))
}

/// Boxplot summary of already sorted, non-empty data.
pub(crate) fn tukey(s: &[f64]) -> BoxplotStats {
    let q1 = quantile_sorted(s, 0.25);
    let median = quantile_sorted(s, 0.5);
    let q3 = quantile_sorted(s, 0.75);
    let iqr = q3 - q1;
    let lo_fence = q1 - 1.5 * iqr;
    let hi_fence = q3 + 1.5 * iqr;
    let inside = |x: &f64| *x >= lo_fence && *x <= hi_fence;
    // interpolated quartiles can lie beyond every inlier; clamp to the box
    let whisker_lo = s.iter().copied().find(inside).map_or(q1, |x| x.min(q1));
    let whisker_hi = s.iter().rev().copied().find(inside).map_or(q3, |x| x.max(q3));
    let outliers = s.iter().filter(|x| !inside(x)).count();
    BoxplotStats {
        median,
        q1,
        q3,
        whisker_lo,
        whisker_hi,
        outlier_fraction: outliers as f64 / s.len() as f64,
    }
}

/// Empirical convergence order from `log|e_{n+1}| = log C + alpha log|e_n|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceFit {
    pub alpha: f64,
    pub log_c: f64,
    pub r_squared: f64,
    pub points_used: usize,
}

impl ConvergenceFit {
    pub fn c(&self) -> f64 {
        self.log_c.exp()
    }
}

/// Least-squares fit over successive error pairs pooled from `traces`.
///
/// Only pairs whose errors both exceed `10 eps` enter the fit.
pub fn convergence_fit(traces: &[Vec<f64>], truth: f64, eps: f64) -> Result<ConvergenceFit, StatsError> {
    let floor = 10.0 * eps;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for trace in traces {
        for w in trace.windows(2) {
            let e0 = (w[0] - truth).abs();
            let e1 = (w[1] - truth).abs();
            if e0 > floor && e1 > floor && e0.is_finite() && e1.is_finite() {
                xs.push(e0.ln());
                ys.push(e1.ln());
            }
        }
    }
    let n = xs.len();
    if n < 3 {
        return Err(StatsError::InsufficientPoints { need: 3, got: n });
    }
    let mx = mean(&xs);
    let my = mean(&ys);
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(&ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if !(sxx > 0.0) {
        return Err(StatsError::InsufficientPoints { need: 3, got: 0 });
    }
    let alpha = sxy / sxx;
    let log_c = my - alpha * mx;
    let r_squared = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    Ok(ConvergenceFit {
        alpha,
        log_c,
        r_squared,
        points_used: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartiles_of_one_to_hundred() {
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        let b = boxplot_stats(&xs).unwrap();
        assert_eq!(b.median, 50.5);
        assert_eq!(b.q1, 25.75);
        assert_eq!(b.q3, 75.25);
        assert_eq!(b.outlier_fraction, 0.0);
        assert_eq!(b.whisker_lo, 1.0);
        assert_eq!(b.whisker_hi, 100.0);
    }

    #[test]
    fn constant_samples() {
        let b = boxplot_stats(&[3.0; 10]).unwrap();
        assert_eq!((b.q1, b.q3, b.outlier_fraction), (3.0, 3.0, 0.0));
    }

    #[test]
    fn single_extreme_point() {
        let mut xs = vec![0.0; 99];
        xs.push(10.0);
        let b = boxplot_stats(&xs).unwrap();
        assert_eq!(b.outlier_fraction, 0.01);
        assert_eq!(b.whisker_hi, 0.0);
    }

    #[test]
    fn too_few_samples() {
        assert_eq!(
            boxplot_stats(&[1.0, 2.0, 3.0]),
            Err(StatsError::TooFewSamples { need: 4, got: 3 })
        );
    }

    #[test]
    fn quadratic_sequence_fit() {
        let mut e = 0.1f64;
        let mut trace = vec![e];
        for _ in 0..4 {
            e = 0.5 * e * e;
            trace.push(e);
        }
        let fit = convergence_fit(&[trace], 0.0, 1e-300).unwrap();
        assert!((fit.alpha - 2.0).abs() < 1e-8, "{fit:?}");
        assert!((fit.log_c - 0.5f64.ln()).abs() < 1e-8);
        assert_eq!(fit.points_used, 4);
    }

    #[test]
    fn linear_sequence_fit() {
        let trace: Vec<f64> = (0..8).map(|i| 0.3f64.powi(i)).collect();
        let fit = convergence_fit(&[trace], 0.0, 1e-300).unwrap();
        assert!((fit.alpha - 1.0).abs() < 1e-8);
        assert!((fit.c() - 0.3).abs() < 1e-8);
    }

    #[test]
    fn fit_needs_points() {
        let trace = vec![1.0, 1e-3, 1e-12, 0.0];
        assert!(matches!(
            convergence_fit(&[trace], 0.0, 1e-10),
            Err(StatsError::InsufficientPoints { .. })
        ));
    }
}
