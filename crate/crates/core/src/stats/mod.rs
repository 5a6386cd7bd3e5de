//! Statistics used by the analysis pipeline, written without external
//! numerical libraries: pooled and Welch t-tests, the exact two-sided binomial
//! test, logistic regression by Newton/IRLS with a likelihood-ratio test,
//! ordinary least squares, and the distribution tails behind their p-values.

mod binomial;
mod linalg;
mod regression;
mod special;
mod ttest;

use thiserror::Error;

pub use binomial::{binomial_pmf, binomial_two_sided, ln_choose};
pub use linalg::Matrix;
pub use regression::{fit_logistic, fit_ols, logistic_log_likelihood, DesignMatrix};
pub use special::{
    ln_beta, ln_gamma, regularized_beta, regularized_beta_complement, regularized_gamma_p,
    regularized_gamma_q, tail_probability, Distribution,
};
pub use ttest::{pooled_t_from_summary, t_test, welch_t_test, TwoSampleResult};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("both samples have zero variance; t is undefined")]
    DegenerateVariance,
    #[error("each sample needs at least two observations (got {0})")]
    SampleTooSmall(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("outcome has a single class; both 0 and 1 are required")]
    MissingClass,
    #[error("maximum likelihood estimate does not exist (separation): {0}")]
    Separation(String),
    #[error("{0} did not converge")]
    NotConverged(&'static str),
}

/// Neumaier's variant of Kahan compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, value: f64) {
        let t = self.sum + value;
        if self.sum.abs() >= value.abs() {
            self.compensation += (self.sum - t) + value;
        } else {
            self.compensation += (value - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = NeumaierSum::default();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

pub(crate) fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().collect::<NeumaierSum>().total()
}

/// Sample mean and standard deviation with the n-1 denominator.
pub fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, (ss / (n - 1.0)).sqrt())
}

/// Quantile with linear interpolation between order statistics
/// (`(n - 1) * q` positioning). `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_small_terms() {
        let values = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(values), 2.0);
    }

    #[test]
    fn quantiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 0.25), 1.75);
        assert_eq!(quantile_sorted(&v, 0.5), 2.5);
        assert_eq!(quantile_sorted(&v, 1.0), 4.0);
    }

    #[test]
    fn sample_sd_uses_n_minus_one() {
        let (m, sd) = mean_and_sd(&[2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0]);
        assert_eq!(m, 5.0);
        assert!((sd - (32.0f64 / 7.0).sqrt()).abs() < 1e-14);
    }
}
