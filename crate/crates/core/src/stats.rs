//! Monte Carlo summary statistics and the statistical tests used by the
//! experiments.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
}

impl Estimate {
    /// Mean and standard error of `values`; the sum runs in slice order so the
    /// result is reproducible bit for bit.
    pub fn from_samples(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { mean: f64::NAN, std_error: f64::NAN, samples: 0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_error = if n > 1 {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (n as f64 - 1.0)).sqrt() / (n as f64).sqrt()
        } else {
            0.0
        };
        Self { mean, std_error, samples: n }
    }

    pub fn exact(value: f64) -> Self {
        Self { mean: value, std_error: 0.0, samples: 1 }
    }

    pub fn ci95(&self) -> (f64, f64) {
        (self.mean - Z95 * self.std_error, self.mean + Z95 * self.std_error)
    }

    /// Sum of independent estimates; standard errors add in quadrature.
    pub fn add_independent(&self, other: &Estimate) -> Estimate {
        Estimate {
            mean: self.mean + other.mean,
            std_error: (self.std_error * self.std_error + other.std_error * other.std_error).sqrt(),
            samples: self.samples.min(other.samples),
        }
    }
}

/// Outcome of one check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    /// The 95% interval straddles the bound.
    Warn,
    Fail,
    /// Reported only; no assertion attached.
    Info,
}

impl Verdict {
    pub fn is_failure(self) -> bool {
        self == Verdict::Fail
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Warn => "warn",
            Verdict::Fail => "fail",
            Verdict::Info => "info",
        }
    }
}

/// One-sided upper-bound check: pass when `mean + 1.96 se <= bound`, fail when
/// even `mean - 1.96 se` exceeds the bound, warn in between.
pub fn upper_bound_verdict(estimate: &Estimate, bound: f64) -> Verdict {
    let (lo, hi) = estimate.ci95();
    if hi <= bound {
        Verdict::Pass
    } else if lo <= bound {
        Verdict::Warn
    } else {
        Verdict::Fail
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Acceptance band for the sample variance of `samples` i.i.d. draws with true
/// variance `sigma2`, at two-sided level `1 - alpha`.
pub fn chi_square_variance_band(samples: usize, sigma2: f64, alpha: f64) -> (f64, f64) {
    assert!(samples >= 2, "need at least two samples");
    let dof = (samples - 1) as f64;
    let chi = ChiSquared::new(dof).expect("positive degrees of freedom");
    let lo = chi.inverse_cdf(alpha / 2.0) / dof * sigma2;
    let hi = chi.inverse_cdf(1.0 - alpha / 2.0) / dof * sigma2;
    (lo, hi)
}

/// Unbiased sample variance.
pub fn sample_variance(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

/// Kolmogorov survival function `Q(lambda) = 2 sum (-1)^{j-1} exp(-2 j^2 lambda^2)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov test result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsTest {
    pub statistic: f64,
    pub p_value: f64,
    /// Statistic value at which the test rejects for the requested level.
    pub critical_value: f64,
}

impl KsTest {
    pub fn rejects(&self) -> bool {
        self.statistic > self.critical_value
    }
}

fn ks_scale(n1: usize, n2: usize) -> f64 {
    let en = (n1 as f64 * n2 as f64) / (n1 + n2) as f64;
    let s = en.sqrt();
    s + 0.12 + 0.11 / s
}

/// Two-sample KS test with the asymptotic Kolmogorov distribution
/// (Stephens' small-sample correction).
pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> KsTest {
    assert!(!a.is_empty() && !b.is_empty(), "KS test needs non-empty samples");
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    let (n1, n2) = (x.len(), y.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n1 && j < n2 {
        let v = x[i].min(y[j]);
        while i < n1 && x[i] <= v {
            i += 1;
        }
        while j < n2 && y[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let scale = ks_scale(n1, n2);
    let p_value = kolmogorov_survival(scale * d);
    // Q is decreasing; bisect for Q(lambda) = alpha.
    let (mut lo, mut hi) = (0.0, 10.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_survival(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    KsTest { statistic: d, p_value, critical_value: hi / scale }
}

/// Least-squares line through `(ln x, ln y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
}

/// Fit on the points with positive coordinates; `None` with fewer than two.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> Option<LogLogFit> {
    let pts: Vec<(f64, f64)> = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0)
        .map(|(a, b)| (a.ln(), b.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some(LogLogFit { slope, intercept: my - slope * mx })
}
