//! Distribution tests used by the experiments.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

/// Smallest sample any test accepts.
pub const MIN_SAMPLES: usize = 20;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("need at least {MIN_SAMPLES} samples, got {0}")]
    TooFew(usize),
    #[error("sample variance is zero")]
    Degenerate,
    #[error("non-finite sample value")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
    pub alpha: f64,
    /// `p_value > alpha`.
    pub passed: bool,
}

impl TestReport {
    fn new(statistic: f64, p_value: f64, n: usize, alpha: f64) -> TestReport {
        let p_value = p_value.clamp(0.0, 1.0);
        TestReport { statistic, p_value, n, alpha, passed: p_value > alpha }
    }
}

fn checked(samples: &[f64]) -> Result<Vec<f64>, StatsError> {
    if samples.len() < MIN_SAMPLES {
        return Err(StatsError::TooFew(samples.len()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Asymptotic p-value with the small-sample correction `√n + 0.12 + 0.11/√n`.
fn ks_p_value(d: f64, n_eff: f64) -> f64 {
    let rn = n_eff.sqrt();
    kolmogorov_survival((rn + 0.12 + 0.11 / rn) * d)
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F, alpha: f64) -> Result<TestReport, StatsError> {
    let xs = checked(samples)?;
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    Ok(TestReport::new(d, ks_p_value(d, n), xs.len(), alpha))
}

/// Two-sample Kolmogorov–Smirnov test.
pub fn ks_two_sample(a: &[f64], b: &[f64], alpha: f64) -> Result<TestReport, StatsError> {
    let (xs, ys) = (checked(a)?, checked(b)?);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < n && j < m {
        let t = xs[i].min(ys[j]);
        while i < n && xs[i] <= t {
            i += 1;
        }
        while j < m && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let n_eff = (n * m) as f64 / (n + m) as f64;
    Ok(TestReport::new(d, ks_p_value(d, n_eff), n.min(m), alpha))
}

fn mean_var(samples: &[f64]) -> Result<(f64, f64), StatsError> {
    let xs = checked(samples)?;
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    if var <= 0.0 {
        return Err(StatsError::Degenerate);
    }
    Ok((mean, var))
}

/// Method-of-moments Gamma shape, `mean² / variance`.
pub fn gamma_shape_moment(samples: &[f64]) -> Result<f64, StatsError> {
    let (mean, var) = mean_var(samples)?;
    Ok(mean * mean / var)
}

pub fn mean(samples: &[f64]) -> f64 {
    samples.iter().sum::<f64>() / samples.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
    pub confidence: f64,
}

/// Variance-to-mean ratio of counts, with the chi-square interval that holds
/// for Poisson data.
pub fn poisson_dispersion(counts: &[u64], confidence: f64) -> Result<IntervalEstimate, StatsError> {
    let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let (mean, var) = mean_var(&xs)?;
    let df = (xs.len() - 1) as f64;
    let chi = ChiSquared::new(df).expect("positive degrees of freedom");
    let tail = (1.0 - confidence) / 2.0;
    Ok(IntervalEstimate {
        estimate: var / mean,
        lower: chi.inverse_cdf(tail) / df,
        upper: chi.inverse_cdf(1.0 - tail) / df,
        n: xs.len(),
        confidence,
    })
}

/// Pearson correlation with a Fisher-z interval.
pub fn correlation(x: &[f64], y: &[f64], confidence: f64) -> Result<IntervalEstimate, StatsError> {
    if x.len() != y.len() || x.len() < MIN_SAMPLES {
        return Err(StatsError::TooFew(x.len().min(y.len())));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(StatsError::Degenerate);
    }
    let rho = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let z = rho.clamp(-0.999_999_999, 0.999_999_999).atanh();
    let q = Normal::standard().inverse_cdf(0.5 + confidence / 2.0);
    let half = q / ((x.len() - 3) as f64).sqrt();
    Ok(IntervalEstimate { estimate: rho, lower: (z - half).tanh(), upper: (z + half).tanh(), n: x.len(), confidence })
}

/// Empirical CDF points `(x_(i), i/n)`.
pub fn ecdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut xs: Vec<f64> = samples.iter().copied().filter(|x| x.is_finite()).collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.into_iter().enumerate().map(|(i, x)| (x, (i + 1) as f64 / n)).collect()
}
