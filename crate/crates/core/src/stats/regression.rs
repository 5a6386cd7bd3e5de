//! Logistic regression by Newton/IRLS and ordinary least squares.

use super::linalg::{Matrix, Qr};
use super::special::{tail_probability, Distribution};
use super::{compensated_sum, StatsError};
use crate::model::RegressionFit;

const MAX_NEWTON_ITER: usize = 100;
const STEP_TOLERANCE: f64 = 1e-10;
const DIVERGENCE_LIMIT: f64 = 1e6;
const RANK_TOLERANCE: f64 = 1e-10;
// Weighted information below this fraction of the unweighted Gram diagonal
// means the fitted probabilities have saturated at 0 or 1.
const SATURATION_TOLERANCE: f64 = 1e-12;

/// Regression design: `n` rows, `p` columns, the first column all ones.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    matrix: Matrix,
    names: Vec<String>,
}

impl DesignMatrix {
    /// Validates the intercept column, `n > p`, and full column rank.
    pub fn new(matrix: Matrix, names: Vec<String>) -> Result<Self, StatsError> {
        if names.len() != matrix.cols() {
            return Err(StatsError::InvalidInput(format!(
                "{} column names for {} columns",
                names.len(),
                matrix.cols()
            )));
        }
        if matrix.cols() == 0 {
            return Err(StatsError::InvalidInput("design has no columns".into()));
        }
        if matrix.rows() <= matrix.cols() {
            return Err(StatsError::InvalidInput(format!(
                "need more rows than columns (n = {}, p = {})",
                matrix.rows(),
                matrix.cols()
            )));
        }
        if (0..matrix.rows()).any(|r| matrix[(r, 0)] != 1.0) {
            return Err(StatsError::InvalidInput(
                "first design column must be the all-ones intercept".into(),
            ));
        }
        if (0..matrix.rows()).any(|r| matrix.row(r).iter().any(|v| !v.is_finite())) {
            return Err(StatsError::InvalidInput("design contains non-finite values".into()));
        }
        if !Qr::new(&matrix).is_full_rank(&matrix, RANK_TOLERANCE) {
            return Err(StatsError::RankDeficient);
        }
        Ok(Self { matrix, names })
    }

    /// Intercept followed by the given predictor columns.
    pub fn with_intercept(predictors: &[(&str, &[f64])]) -> Result<Self, StatsError> {
        let n = predictors.first().map_or(0, |(_, col)| col.len());
        if predictors.iter().any(|(_, col)| col.len() != n) {
            return Err(StatsError::InvalidInput("predictor columns differ in length".into()));
        }
        Self::intercept_only_or_with(n, predictors)
    }

    /// Intercept-only design with `n` rows.
    pub fn intercept_only(n: usize) -> Result<Self, StatsError> {
        Self::intercept_only_or_with(n, &[])
    }

    fn intercept_only_or_with(n: usize, predictors: &[(&str, &[f64])]) -> Result<Self, StatsError> {
        let p = predictors.len() + 1;
        let mut data = Vec::with_capacity(n * p);
        for r in 0..n {
            data.push(1.0);
            data.extend(predictors.iter().map(|(_, col)| col[r]));
        }
        let mut names = vec!["Intercept".to_string()];
        names.extend(predictors.iter().map(|(name, _)| name.to_string()));
        Self::new(Matrix::new(n, p, data), names)
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

fn sigmoid(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

fn softplus(eta: f64) -> f64 {
    eta.max(0.0) + (-eta.abs()).exp().ln_1p()
}

/// Bernoulli log-likelihood of coefficients `beta` under the logit link.
pub fn logistic_log_likelihood(x: &DesignMatrix, y: &[f64], beta: &[f64]) -> f64 {
    let eta = x.matrix.mul_vec(beta);
    compensated_sum(eta.iter().zip(y).map(|(e, yi)| yi * e - softplus(*e)))
}

/// Maximum-likelihood logistic regression with Wald z inference and a
/// likelihood-ratio test against the intercept-only model.
pub fn fit_logistic(x: &DesignMatrix, y: &[f64]) -> Result<RegressionFit, StatsError> {
    let n = x.rows();
    let p = x.cols();
    if y.len() != n {
        return Err(StatsError::InvalidInput(format!(
            "outcome has {} entries for {n} design rows",
            y.len()
        )));
    }
    if y.iter().any(|v| *v != 0.0 && *v != 1.0) {
        return Err(StatsError::InvalidInput("outcome must be coded 0/1".into()));
    }
    let ones = y.iter().filter(|v| **v == 1.0).count();
    if ones == 0 || ones == n {
        return Err(StatsError::MissingClass);
    }

    let gram = x.matrix.weighted_gram(None);
    let information = |beta: &[f64]| -> Result<(Matrix, Vec<f64>), StatsError> {
        let mu: Vec<f64> = x.matrix.mul_vec(beta).into_iter().map(sigmoid).collect();
        let w: Vec<f64> = mu.iter().map(|m| m * (1.0 - m)).collect();
        let h = x.matrix.weighted_gram(Some(&w));
        if (0..p).any(|j| h[(j, j)] < SATURATION_TOLERANCE * gram[(j, j)]) {
            return Err(StatsError::Separation(
                "fitted probabilities saturated at 0 or 1".into(),
            ));
        }
        let resid: Vec<f64> = y.iter().zip(&mu).map(|(yi, m)| yi - m).collect();
        Ok((h, x.matrix.transpose_mul_vec(&resid)))
    };

    let mut beta = vec![0.0; p];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_NEWTON_ITER {
        iterations += 1;
        let (h, grad) = information(&beta)?;
        let chol = h.cholesky(1e-14).ok_or_else(|| {
            StatsError::Separation("information matrix is numerically singular".into())
        })?;
        let step = chol.cholesky_solve(&grad);
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += s;
        }
        if beta.iter().any(|b| !b.is_finite() || b.abs() > DIVERGENCE_LIMIT) {
            return Err(StatsError::Separation(format!(
                "coefficients diverged beyond {DIVERGENCE_LIMIT:e}"
            )));
        }
        if step.iter().all(|s| s.abs() < STEP_TOLERANCE) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(StatsError::Separation(format!(
            "Newton iterations did not converge within {MAX_NEWTON_ITER} steps"
        )));
    }

    let (h, _) = information(&beta)?;
    let cov = h
        .cholesky(1e-14)
        .ok_or_else(|| StatsError::Separation("information matrix is numerically singular".into()))?
        .cholesky_inverse();
    let se: Vec<f64> = (0..p).map(|j| cov[(j, j)].sqrt()).collect();
    let stat: Vec<f64> = beta.iter().zip(&se).map(|(b, s)| b / s).collect();
    let pvals = stat
        .iter()
        .map(|z| tail_probability(Distribution::Normal, *z, true))
        .collect::<Result<Vec<_>, _>>()?;

    let ll = logistic_log_likelihood(x, y, &beta);
    let (k, nf) = (ones as f64, n as f64);
    let ll_null = k * (k / nf).ln() + (nf - k) * ((nf - k) / nf).ln();
    let llr_p = if p > 1 {
        let llr = (2.0 * (ll - ll_null)).max(0.0);
        Some(tail_probability(Distribution::ChiSquare((p - 1) as f64), llr, false)?)
    } else {
        None
    };

    Ok(RegressionFit {
        terms: x.names.clone(),
        coef: beta,
        se,
        stat,
        p: pvals,
        log_likelihood: Some(ll),
        null_log_likelihood: Some(ll_null),
        llr_p,
        residual_sum_squares: None,
        residual_df: None,
        n,
        iterations: Some(iterations),
        degenerate: false,
    })
}

/// Ordinary least squares via Householder QR with t-based inference.
///
/// When the residual variance is zero the standard errors are reported as 0,
/// the statistics as 0 and the p-values as 1, with `degenerate` set.
pub fn fit_ols(x: &DesignMatrix, y: &[f64]) -> Result<RegressionFit, StatsError> {
    let n = x.rows();
    let p = x.cols();
    if y.len() != n {
        return Err(StatsError::InvalidInput(format!(
            "outcome has {} entries for {n} design rows",
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::InvalidInput("outcome contains non-finite values".into()));
    }
    let qr = Qr::new(&x.matrix);
    if !qr.is_full_rank(&x.matrix, RANK_TOLERANCE) {
        return Err(StatsError::RankDeficient);
    }
    let coef = qr.solve(y);
    let fitted = x.matrix.mul_vec(&coef);
    let rss = compensated_sum(y.iter().zip(&fitted).map(|(a, b)| (a - b) * (a - b)));
    let df = n - p;
    let sigma2 = rss / df as f64;
    let scale = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let degenerate = sigma2.sqrt() <= 1e-12 * scale;

    let (se, stat, pvals) = if degenerate {
        (vec![0.0; p], vec![0.0; p], vec![1.0; p])
    } else {
        let ginv = qr.gram_inverse();
        let se: Vec<f64> = (0..p).map(|j| (sigma2 * ginv[(j, j)]).sqrt()).collect();
        let stat: Vec<f64> = coef.iter().zip(&se).map(|(b, s)| b / s).collect();
        let pvals = stat
            .iter()
            .map(|t| tail_probability(Distribution::StudentT(df as f64), *t, true))
            .collect::<Result<Vec<_>, _>>()?;
        (se, stat, pvals)
    };

    Ok(RegressionFit {
        terms: x.names.clone(),
        coef,
        se,
        stat,
        p: pvals,
        log_likelihood: None,
        null_log_likelihood: None,
        llr_p: None,
        residual_sum_squares: Some(rss),
        residual_df: Some(df),
        n,
        iterations: None,
        degenerate,
    })
}
