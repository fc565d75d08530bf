//! Small statistics helpers: means, least squares and bootstrap intervals.

use crate::error::{invalid, Result};
use crate::rng::StreamRng;

/// Number of bootstrap resamples used by every CI in the crate.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance (0 for fewer than two values).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_err(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Ordinary least squares `y ≈ intercept + slope·x`; returns (slope, intercept).
pub fn ols(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return invalid("least squares needs at least two paired points");
    }
    let (mx, my) = (mean(xs), mean(ys));
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return invalid("least squares needs distinct abscissae");
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Empirical quantile by linear interpolation of order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// 95% percentile interval of bootstrap statistics.
pub fn percentile_interval(mut stats: Vec<f64>) -> (f64, f64) {
    stats.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    (quantile(&stats, 0.025), quantile(&stats, 0.975))
}

/// 95% percentile bootstrap interval of the mean.
pub fn bootstrap_mean_ci(xs: &[f64], rng: &mut StreamRng) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len();
    let stats = (0..BOOTSTRAP_RESAMPLES)
        .map(|_| (0..n).map(|_| xs[rng.index(n)]).sum::<f64>() / n as f64)
        .collect();
    percentile_interval(stats)
}

/// Log-log slope fit with a replica bootstrap interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Fits `ln mean(samples[k]) ≈ a + slope · ln ns[k]`.
///
/// The interval resamples replicas within each abscissa. Points whose mean is
/// not positive are rejected.
pub fn fit_loglog(ns: &[f64], samples: &[Vec<f64>], rng: &mut StreamRng) -> Result<SlopeFit> {
    if ns.len() != samples.len() || ns.len() < 2 {
        return invalid("slope fit needs at least two sweep points");
    }
    if samples.iter().any(|s| s.is_empty()) {
        return invalid("every sweep point needs at least one replica");
    }
    let lx: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let means: Vec<f64> = samples.iter().map(|s| mean(s)).collect();
    if means.iter().any(|&m| !(m > 0.0)) {
        return invalid("log-log fit needs positive estimates");
    }
    let ly: Vec<f64> = means.iter().map(|m| m.ln()).collect();
    let (slope, intercept) = ols(&lx, &ly)?;
    let mut stats = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    for _ in 0..BOOTSTRAP_RESAMPLES {
        let ly_b: Vec<f64> = samples
            .iter()
            .map(|s| {
                let n = s.len();
                let m = (0..n).map(|_| s[rng.index(n)]).sum::<f64>() / n as f64;
                m.max(f64::MIN_POSITIVE).ln()
            })
            .collect();
        stats.push(ols(&lx, &ly_b)?.0);
    }
    let (ci_lo, ci_hi) = percentile_interval(stats);
    Ok(SlopeFit {
        slope,
        intercept,
        ci_lo: ci_lo.min(slope),
        ci_hi: ci_hi.max(slope),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn ols_recovers_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let (s, i) = ols(&xs, &ys).unwrap();
        assert!((s + 0.5).abs() < 1e-15 && (i - 2.0).abs() < 1e-15);
        assert!(ols(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn loglog_fit_of_power_law() {
        let ns = [10.0, 100.0, 1000.0];
        let samples: Vec<Vec<f64>> = ns.iter().map(|n: &f64| vec![1.0 / n, 1.0 / n]).collect();
        let mut rng = RngStream::new(1).rng();
        let f = fit_loglog(&ns, &samples, &mut rng).unwrap();
        assert!((f.slope + 1.0).abs() < 1e-12);
        assert!(f.ci_lo <= f.slope && f.slope <= f.ci_hi);
    }

    #[test]
    fn bootstrap_interval_brackets_mean() {
        let mut rng = RngStream::new(2).rng();
        let xs: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let (lo, hi) = bootstrap_mean_ci(&xs, &mut rng);
        assert!(lo < 49.5 && 49.5 < hi);
    }
}
