use serde::{Deserialize, Serialize};

use super::special::{tail_probability, Distribution};
use super::{mean_and_sd, StatsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleResult {
    pub t: f64,
    /// Degrees of freedom. Integral for the pooled test, fractional for Welch.
    pub df: f64,
    pub p_two_sided: f64,
}

/// Student's two-sample t-test with pooled variance, from summary statistics.
pub fn pooled_t_from_summary(
    mean1: f64,
    sd1: f64,
    n1: usize,
    mean2: f64,
    sd2: f64,
    n2: usize,
) -> Result<TwoSampleResult, StatsError> {
    if n1 < 2 || n2 < 2 {
        return Err(StatsError::SampleTooSmall(n1.min(n2)));
    }
    if !(sd1 >= 0.0 && sd2 >= 0.0) || !mean1.is_finite() || !mean2.is_finite() {
        return Err(StatsError::InvalidInput(
            "means must be finite and standard deviations nonnegative".into(),
        ));
    }
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let df = n1f + n2f - 2.0;
    let pooled_var = ((n1f - 1.0) * sd1 * sd1 + (n2f - 1.0) * sd2 * sd2) / df;
    let diff = mean1 - mean2;
    // both samples constant: the standard error is zero, whatever the means
    if pooled_var == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    let t = diff / (pooled_var * (1.0 / n1f + 1.0 / n2f)).sqrt();
    let p_two_sided = tail_probability(Distribution::StudentT(df), t, true)?;
    Ok(TwoSampleResult { t, df, p_two_sided })
}

/// Pooled t-test on raw samples.
pub fn t_test(samples1: &[f64], samples2: &[f64]) -> Result<TwoSampleResult, StatsError> {
    if samples1.len() < 2 || samples2.len() < 2 {
        return Err(StatsError::SampleTooSmall(samples1.len().min(samples2.len())));
    }
    let (m1, s1) = mean_and_sd(samples1);
    let (m2, s2) = mean_and_sd(samples2);
    pooled_t_from_summary(m1, s1, samples1.len(), m2, s2, samples2.len())
}

/// Welch's unequal-variance t-test with Welch–Satterthwaite degrees of freedom.
pub fn welch_t_test(samples1: &[f64], samples2: &[f64]) -> Result<TwoSampleResult, StatsError> {
    if samples1.len() < 2 || samples2.len() < 2 {
        return Err(StatsError::SampleTooSmall(samples1.len().min(samples2.len())));
    }
    let (m1, s1) = mean_and_sd(samples1);
    let (m2, s2) = mean_and_sd(samples2);
    let v1 = s1 * s1 / samples1.len() as f64;
    let v2 = s2 * s2 / samples2.len() as f64;
    if v1 + v2 == 0.0 {
        return Err(StatsError::DegenerateVariance);
    }
    let t = (m1 - m2) / (v1 + v2).sqrt();
    let df = (v1 + v2).powi(2)
        / (v1 * v1 / (samples1.len() as f64 - 1.0) + v2 * v2 / (samples2.len() as f64 - 1.0));
    let p_two_sided = tail_probability(Distribution::StudentT(df.max(1.0)), t, true)?;
    Ok(TwoSampleResult { t, df, p_two_sided })
}
