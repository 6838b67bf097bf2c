//! Alpha-beta cost model for one allreduce of `n` components with `k`
//! selected per rank.

use crate::baselines::Algorithm;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostModelParams {
    /// Seconds per message.
    pub alpha: f64,
    /// Seconds per word.
    pub beta: f64,
}

impl CostModelParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::invalid(format!(
                "cost parameters must be positive, got alpha = {alpha}, beta = {beta}"
            )));
        }
        Ok(Self { alpha, beta })
    }
}

impl Default for CostModelParams {
    fn default() -> Self {
        Self {
            alpha: 1e-6,
            beta: 4e-9,
        }
    }
}

/// Closed interval; point predictions have `lo == hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn point(x: f64) -> Self {
        Self { lo: x, hi: x }
    }

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, x: f64, rel_tol: f64) -> bool {
        let slack = rel_tol * self.hi.abs().max(1.0);
        x >= self.lo - slack && x <= self.hi + slack
    }

    fn scale(self, s: f64) -> Self {
        Self::new(self.lo * s, self.hi * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostPrediction {
    /// Messages on the critical path (the coefficient of alpha).
    pub messages: Interval,
    /// Words per rank (the coefficient of beta).
    pub words: Interval,
    pub latency_s: Interval,
    pub bandwidth_s: Interval,
    pub total_s: Interval,
}

/// Evaluates the cost row for `alg`. Logarithms are base 2.
pub fn cost_predict(
    alg: Algorithm,
    n: usize,
    k: usize,
    world: usize,
    params: CostModelParams,
) -> Result<CostPrediction> {
    if world == 0 {
        return Err(Error::invalid("world size must be >= 1"));
    }
    let (n, k, p) = (n as f64, k as f64, world as f64);
    let lg = p.log2();
    let frac = (p - 1.0) / p;
    let (messages, words) = match alg {
        Algorithm::Dense => (Interval::point(2.0 * lg), Interval::point(2.0 * n * frac)),
        Algorithm::TopkA => (Interval::point(lg), Interval::point(2.0 * k * (p - 1.0))),
        Algorithm::TopkDsa => (
            Interval::point(p + 2.0 * lg),
            Interval::new(4.0 * k * frac, (2.0 * k + n) * frac),
        ),
        Algorithm::GTopk => (Interval::point(2.0 * lg), Interval::point(4.0 * k * lg)),
        Algorithm::Gaussiank => (
            Interval::point(2.0 * lg),
            Interval::point(2.0 * k * (p - 1.0)),
        ),
        Algorithm::OkTopk => (
            Interval::point(2.0 * p + 2.0 * lg),
            Interval::new(2.0 * k * frac, 6.0 * k * frac),
        ),
    };
    let latency_s = messages.scale(params.alpha);
    let bandwidth_s = words.scale(params.beta);
    Ok(CostPrediction {
        messages,
        words,
        latency_s,
        bandwidth_s,
        total_s: Interval::new(latency_s.lo + bandwidth_s.lo, latency_s.hi + bandwidth_s.hi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> CostModelParams {
        CostModelParams::new(1.0, 1.0).unwrap()
    }

    #[test]
    fn dense_row() {
        let c = cost_predict(Algorithm::Dense, 1_000_000, 0, 128, unit()).unwrap();
        assert_eq!(c.words, Interval::point(1_984_375.0));
        assert_eq!(c.messages, Interval::point(14.0));
    }

    #[test]
    fn oktopk_row_is_an_interval() {
        let c = cost_predict(Algorithm::OkTopk, 1_000_000, 10_000, 128, unit()).unwrap();
        assert_eq!(c.words.lo, 2e4 * 127.0 / 128.0);
        assert_eq!(c.words.hi, 6e4 * 127.0 / 128.0);
        assert_eq!(c.total_s.hi, c.words.hi + 2.0 * 128.0 + 14.0);
    }

    #[test]
    fn topka_overtakes_dense_at_scale() {
        let topka = cost_predict(Algorithm::TopkA, 1_000_000, 10_000, 128, unit()).unwrap();
        let dense = cost_predict(Algorithm::Dense, 1_000_000, 10_000, 128, unit()).unwrap();
        assert_eq!(topka.words.hi, 2e4 * 127.0);
        assert!(topka.words.lo > dense.words.hi);
        let small = cost_predict(Algorithm::TopkA, 1_000_000, 10_000, 8, unit()).unwrap();
        assert!(small.words.hi < dense.words.lo);
    }

    #[test]
    fn params_must_be_positive() {
        assert!(CostModelParams::new(0.0, 1.0).is_err());
        assert!(CostModelParams::new(1.0, f64::NAN).is_err());
    }
}
