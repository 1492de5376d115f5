//! Statistical validation utilities: empirical CDFs, chi-square
//! goodness-of-fit tests (exponential and discrete-uniform), and percent
//! error.

use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum StatError {
    #[error("too few samples: expected at least {needed} per bin, worst bin has {found:.3}")]
    TooFewSamples { needed: f64, found: f64 },
    #[error("reference value must be nonzero")]
    ZeroReference,
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Empirical distribution function over a sample.
#[derive(Clone, Debug)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut samples: Vec<f64>) -> Result<Self, StatError> {
        if samples.is_empty() {
            return Err(StatError::Invalid("empty sample".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(StatError::Invalid("non-finite sample".into()));
        }
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(EmpiricalCdf { sorted: samples })
    }

    /// Fraction of samples `<= t`.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.sorted.partition_point(|&x| x <= t);
        k as f64 / self.sorted.len() as f64
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }
}

/// Outcome of a chi-square goodness-of-fit test. For the exponential fit,
/// where one parameter is estimated from the data, the orthodox
/// degrees-of-freedom reduction (`bins - 2`) is the primary verdict and
/// the unreduced convention (`bins - 1`) is reported alongside.
#[derive(Clone, Debug, PartialEq)]
pub struct ChiSquareReport {
    pub statistic: f64,
    pub bins: usize,
    pub dof: usize,
    pub critical_value: f64,
    pub passed: bool,
    /// Degrees of freedom without the fitted-parameter reduction; equal
    /// to `dof` for tests that fit no parameter.
    pub dof_unreduced: usize,
    pub critical_value_unreduced: f64,
    pub passed_unreduced: bool,
    /// Significance level the critical values correspond to.
    pub alpha_level: f64,
    /// Fitted exponential rate, when applicable.
    pub fitted_rate: Option<f64>,
}

fn chi_square_critical(dof: usize, alpha_level: f64) -> f64 {
    let dist = ChiSquared::new(dof as f64).expect("positive dof");
    dist.inverse_cdf(1.0 - alpha_level)
}

fn check_alpha(alpha_level: f64) -> Result<(), StatError> {
    if !(alpha_level > 0.0 && alpha_level < 1.0) {
        return Err(StatError::Invalid(format!("significance level {alpha_level}")));
    }
    Ok(())
}

/// Chi-square test of exponentiality with equal-probability bins under
/// the fitted rate `1/mean`. The fitted parameter costs one degree of
/// freedom (`dof = bins - 2`); the unreduced `bins - 1` verdict is
/// reported side by side.
pub fn chi_square_exponential(
    samples: &[f64],
    bins: usize,
    alpha_level: f64,
) -> Result<ChiSquareReport, StatError> {
    check_alpha(alpha_level)?;
    if bins < 3 {
        return Err(StatError::Invalid(format!("need at least 3 bins, got {bins}")));
    }
    if samples.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(StatError::Invalid("samples must be finite and non-negative".into()));
    }
    let n = samples.len();
    let expected = n as f64 / bins as f64;
    if expected < 5.0 {
        return Err(StatError::TooFewSamples { needed: 5.0, found: expected });
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    if mean <= 0.0 {
        return Err(StatError::Invalid("sample mean must be positive".into()));
    }
    let rate = 1.0 / mean;

    // Equal-probability bin edges of Exp(rate): the k-th edge is the
    // k/bins quantile, -ln(1 - k/bins)/rate.
    let mut observed = vec![0u64; bins];
    for &x in samples {
        // Bin index straight from the CDF value, avoiding edge tables.
        let u = 1.0 - (-rate * x).exp();
        let k = ((u * bins as f64) as usize).min(bins - 1);
        observed[k] += 1;
    }
    let statistic = observed
        .iter()
        .map(|&o| {
            let d = o as f64 - expected;
            d * d / expected
        })
        .sum::<f64>();

    let dof = bins - 2;
    let dof_unreduced = bins - 1;
    let critical_value = chi_square_critical(dof, alpha_level);
    let critical_value_unreduced = chi_square_critical(dof_unreduced, alpha_level);
    Ok(ChiSquareReport {
        statistic,
        bins,
        dof,
        critical_value,
        passed: statistic < critical_value,
        dof_unreduced,
        critical_value_unreduced,
        passed_unreduced: statistic < critical_value_unreduced,
        alpha_level,
        fitted_rate: Some(rate),
    })
}

/// Chi-square test of uniformity for a histogram of counts over `{1..K}`
/// (no parameter fitted, `dof = K - 1`).
pub fn chi_square_uniform_discrete(
    counts: &[u64],
    alpha_level: f64,
) -> Result<ChiSquareReport, StatError> {
    check_alpha(alpha_level)?;
    let k = counts.len();
    if k < 2 {
        return Err(StatError::Invalid(format!("need at least 2 cells, got {k}")));
    }
    let total: u64 = counts.iter().sum();
    let expected = total as f64 / k as f64;
    if expected < 5.0 {
        return Err(StatError::TooFewSamples { needed: 5.0, found: expected });
    }
    let statistic = counts
        .iter()
        .map(|&o| {
            let d = o as f64 - expected;
            d * d / expected
        })
        .sum::<f64>();
    let dof = k - 1;
    let critical_value = chi_square_critical(dof, alpha_level);
    Ok(ChiSquareReport {
        statistic,
        bins: k,
        dof,
        critical_value,
        passed: statistic < critical_value,
        dof_unreduced: dof,
        critical_value_unreduced: critical_value,
        passed_unreduced: statistic < critical_value,
        alpha_level,
        fitted_rate: None,
    })
}

/// `100 * |model - reference| / |reference|`.
pub fn percent_error(model_value: f64, reference_value: f64) -> Result<f64, StatError> {
    if reference_value == 0.0 {
        return Err(StatError::ZeroReference);
    }
    Ok(100.0 * (model_value - reference_value).abs() / reference_value.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn exp_draws(rate: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln() / rate).collect()
    }

    #[test]
    fn empirical_cdf_limits() {
        let cdf = EmpiricalCdf::new(vec![3.0, 1.0, 2.0]).unwrap();
        assert_eq!(cdf.eval(0.999), 0.0);
        assert_eq!(cdf.eval(1.0), 1.0 / 3.0);
        assert_eq!(cdf.eval(2.5), 2.0 / 3.0);
        assert_eq!(cdf.eval(3.0), 1.0);
        assert_eq!(cdf.eval(100.0), 1.0);
        assert!(EmpiricalCdf::new(vec![]).is_err());
    }

    #[test]
    fn critical_values_match_textbook_quantiles() {
        // Chi-square upper 1% points.
        assert!((chi_square_critical(39, 0.01) - 62.43).abs() < 0.01);
        assert!((chi_square_critical(38, 0.01) - 61.162).abs() < 0.01);
        assert!((chi_square_critical(13, 0.01) - 27.688).abs() < 0.01);
    }

    #[test]
    fn exponential_fit_accepts_exponential_data() {
        let samples = exp_draws(2.586e-4, 10_000, 1);
        let report = chi_square_exponential(&samples, 40, 0.01).unwrap();
        assert_eq!(report.bins, 40);
        assert_eq!(report.dof, 38);
        assert_eq!(report.dof_unreduced, 39);
        assert!(report.passed, "statistic {}", report.statistic);
        assert!(report.passed_unreduced);
        let rate = report.fitted_rate.unwrap();
        assert!((rate - 2.586e-4).abs() / 2.586e-4 < 0.05);
    }

    #[test]
    fn exponential_fit_rejects_uniform_data() {
        let rate = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let samples: Vec<f64> =
            (0..10_000).map(|_| rng.gen::<f64>() * 2.0 / rate).collect();
        let report = chi_square_exponential(&samples, 40, 0.01).unwrap();
        assert!(!report.passed, "statistic {}", report.statistic);
        assert!(!report.passed_unreduced);
    }

    /// Monte-Carlo calibration: on true exponential data the test should
    /// pass in at least 95% of replications at significance 0.01.
    #[test]
    fn exponential_test_is_calibrated() {
        let mut passes = 0;
        let reps = 200;
        for seed in 0..reps {
            let samples = exp_draws(1.0, 10_000, 1000 + seed);
            if chi_square_exponential(&samples, 40, 0.01).unwrap().passed {
                passes += 1;
            }
        }
        assert!(passes * 100 >= reps * 95, "only {passes}/{reps} passed");
    }

    #[test]
    fn exponential_fit_input_validation() {
        let samples = exp_draws(1.0, 100, 3);
        assert!(matches!(
            chi_square_exponential(&samples, 40, 0.01),
            Err(StatError::TooFewSamples { .. })
        ));
        assert!(chi_square_exponential(&samples, 10, 1.5).is_err());
        assert!(chi_square_exponential(&[1.0, -2.0], 3, 0.01).is_err());
    }

    #[test]
    fn uniform_test_exact_statistic() {
        // Counts (30, 20, 25, 25): expected 25 each, statistic = 1 + 1 = 2.
        let report = chi_square_uniform_discrete(&[30, 20, 25, 25], 0.01).unwrap();
        assert!((report.statistic - 2.0).abs() < 1e-12);
        assert_eq!(report.dof, 3);
        assert!(report.passed);
        assert_eq!(report.fitted_rate, None);
    }

    #[test]
    fn uniform_test_verdicts() {
        let mut degenerate = vec![0u64; 14];
        degenerate[0] = 1000;
        let report = chi_square_uniform_discrete(&degenerate, 0.01).unwrap();
        assert!(!report.passed);

        let exact = vec![100u64; 14];
        let report = chi_square_uniform_discrete(&exact, 0.01).unwrap();
        assert_eq!(report.statistic, 0.0);
        assert!(report.passed);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = vec![0u64; 14];
        for _ in 0..8000 {
            counts[rng.gen_range(0..14)] += 1;
        }
        let report = chi_square_uniform_discrete(&counts, 0.01).unwrap();
        assert!(report.passed, "statistic {}", report.statistic);
    }

    #[test]
    fn uniform_test_input_validation() {
        assert!(matches!(
            chi_square_uniform_discrete(&[3, 2, 1], 0.01),
            Err(StatError::TooFewSamples { .. })
        ));
        assert!(chi_square_uniform_discrete(&[100], 0.01).is_err());
    }

    #[test]
    fn statistic_is_permutation_invariant() {
        let mut samples = exp_draws(0.1, 2_000, 5);
        let a = chi_square_exponential(&samples, 20, 0.01).unwrap();
        samples.reverse();
        samples.swap(0, 700);
        let b = chi_square_exponential(&samples, 20, 0.01).unwrap();
        assert_eq!(a.statistic, b.statistic);
    }

    #[test]
    fn percent_error_examples() {
        let pe = percent_error(1272.72, 1253.50).unwrap();
        assert!((pe - 1.53).abs() < 0.005, "got {pe}");
        let pe = percent_error(570.16, 536.05).unwrap();
        assert!((pe - 6.36).abs() < 0.005, "got {pe}");
        assert_eq!(percent_error(42.0, 42.0).unwrap(), 0.0);
        assert!(matches!(percent_error(1.0, 0.0), Err(StatError::ZeroReference)));
    }
}
