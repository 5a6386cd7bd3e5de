use super::{NeumaierSum, StatsError};

// Relative slack when comparing point probabilities, so outcomes that tie
// with the observed one in exact arithmetic are not lost to rounding.
const TIE_TOLERANCE: f64 = 1e-7;

/// ln C(n, k), summed term by term with compensation.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    assert!(k <= n, "k must not exceed n");
    let k = k.min(n - k);
    let mut acc = NeumaierSum::default();
    for i in 1..=k {
        acc.add(((n - k + i) as f64 / i as f64).ln());
    }
    acc.total()
}

/// Binomial point probability, evaluated in the log domain.
pub fn binomial_pmf(x: u64, n: u64, p0: f64) -> f64 {
    ln_pmf(x, n, p0).exp()
}

fn ln_pmf(x: u64, n: u64, p0: f64) -> f64 {
    let mut ln = ln_choose(n, x);
    if x > 0 {
        ln += x as f64 * p0.ln();
    }
    if n > x {
        ln += (n - x) as f64 * (-p0).ln_1p();
    }
    ln
}

/// Exact two-sided binomial test: the total probability of every outcome no
/// more likely than the observed count `k` under Binomial(n, p0).
pub fn binomial_two_sided(k: u64, n: u64, p0: f64) -> Result<f64, StatsError> {
    if k > n {
        return Err(StatsError::InvalidInput(format!("k = {k} exceeds n = {n}")));
    }
    if !(p0 > 0.0 && p0 < 1.0) {
        return Err(StatsError::InvalidInput(format!("p0 must lie in (0, 1), got {p0}")));
    }
    let observed = ln_pmf(k, n, p0);
    let cutoff = observed + TIE_TOLERANCE.ln_1p();
    let mut acc = NeumaierSum::default();
    for x in 0..=n {
        let ln = ln_pmf(x, n, p0);
        if ln <= cutoff {
            acc.add(ln.exp());
        }
    }
    Ok(acc.total().clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_cases() {
        assert_eq!(binomial_two_sided(1, 2, 0.5).unwrap(), 1.0);
        assert!((binomial_two_sided(0, 10, 0.5).unwrap() - 2.0 / 1024.0).abs() < 1e-15);
        assert!((binomial_two_sided(10, 10, 0.5).unwrap() - 2.0 / 1024.0).abs() < 1e-15);
        assert_eq!(binomial_two_sided(0, 0, 0.3).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(binomial_two_sided(3, 2, 0.5).is_err());
        assert!(binomial_two_sided(1, 2, 0.0).is_err());
        assert!(binomial_two_sided(1, 2, 1.0).is_err());
    }

    #[test]
    fn choose_is_symmetric_and_exact_on_small_values() {
        assert!((ln_choose(10, 3) - 120f64.ln()).abs() < 1e-14);
        assert_eq!(ln_choose(40, 7), ln_choose(40, 33));
        assert_eq!(ln_choose(5, 0), 0.0);
    }

    #[test]
    fn pmf_sums_to_one() {
        let total: f64 = (0..=37).map(|x| binomial_pmf(x, 37, 0.3)).sum();
        assert!((total - 1.0).abs() < 1e-13);
    }
}
