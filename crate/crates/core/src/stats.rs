//! Small statistical tests used by the validation experiments.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{invalid, Result};

/// One-sided sign test: probability of at least `wins` successes out of
/// `trials` fair coin flips.
pub fn sign_test_p(wins: usize, trials: usize) -> f64 {
    let mut p = 0.0;
    for k in wins..=trials {
        p += binomial(trials, k);
    }
    p / 2f64.powi(trials as i32)
}

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Pearson chi-square goodness-of-fit of samples against the standard
/// normal using `bins` equiprobable bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

pub fn chi_square_standard_normal(samples: &[f64], bins: usize) -> Result<ChiSquareResult> {
    if bins < 2 || samples.len() < 5 * bins {
        return invalid(format!("need at least 5 samples per bin ({} samples, {bins} bins)", samples.len()));
    }
    let normal = Normal::standard();
    let mut counts = vec![0usize; bins];
    for &x in samples {
        let b = ((normal.cdf(x) * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let expected = samples.len() as f64 / bins as f64;
    let statistic = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dof = bins - 1;
    let p_value = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(statistic);
    Ok(ChiSquareResult { statistic, dof, p_value })
}

/// Median of a non-empty slice (mean of the middle two for even lengths).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
