use statrs::distribution::{ContinuousCDF, Normal};

use super::DenseGrad;
use crate::error::{Error, Result};

/// Inverse of the standard normal CDF.
pub fn inverse_normal_cdf(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Mean and standard deviation of a gradient's raw values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianFit {
    pub mean: f64,
    pub std: f64,
}

impl GaussianFit {
    pub fn fit(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("a Gaussian fit needs n >= 2"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std == 0.0 || !std.is_finite() {
            return Err(Error::DegenerateDistribution);
        }
        Ok(Self { mean, std })
    }

    /// Two-tailed cutoff expected to leave `k` of `n` values outside:
    /// `mean + std * Phi^-1(1 - k / 2n)`, floored at zero.
    pub fn threshold(&self, k: usize, n: usize) -> f64 {
        let z = inverse_normal_cdf(1.0 - k as f64 / (2.0 * n as f64));
        (self.mean + self.std * z).max(0.0)
    }
}

/// Gaussiank threshold estimate for selecting about `k` components of `g`.
pub fn gaussian_threshold(g: &DenseGrad, k: usize) -> Result<f64> {
    let n = g.len();
    if k < 1 || k > n {
        return Err(Error::invalid(format!(
            "need 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    Ok(GaussianFit::fit(g.values())?.threshold(k, n))
}
