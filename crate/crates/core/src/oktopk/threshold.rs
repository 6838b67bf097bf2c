use crate::error::{Error, Result};
use crate::sparse::{kth_largest_abs, DenseGrad, SparseGrad};

/// Anything whose stored values a threshold can be computed over.
pub trait GradValues {
    fn grad_values(&self) -> &[f64];
}

impl GradValues for DenseGrad {
    fn grad_values(&self) -> &[f64] {
        self.values()
    }
}

impl GradValues for SparseGrad {
    fn grad_values(&self) -> &[f64] {
        self.values()
    }
}

impl GradValues for [f64] {
    fn grad_values(&self) -> &[f64] {
        self
    }
}

/// Exact k-th largest magnitude. A sparse input with fewer than `k` entries
/// yields its smallest magnitude.
pub fn th_re_evaluate<G: GradValues + ?Sized>(g: &G, k: usize) -> Result<f64> {
    kth_largest_abs(g.grad_values(), k)
}

/// Cached local and global thresholds with their refresh periods.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdState {
    pub local_th: f64,
    pub global_th: f64,
    tau: u64,
    tau_prime: u64,
    /// Iteration of the last refresh; 0 before the first one.
    pub last_eval_iter: u64,
}

impl ThresholdState {
    pub fn new(tau: u64, tau_prime: u64) -> Result<Self> {
        if tau == 0 || tau_prime == 0 {
            return Err(Error::invalid("tau and tau' must be >= 1"));
        }
        Ok(Self {
            local_th: 0.0,
            global_th: 0.0,
            tau,
            tau_prime,
            last_eval_iter: 0,
        })
    }

    pub fn tau(&self) -> u64 {
        self.tau
    }

    pub fn tau_prime(&self) -> u64 {
        self.tau_prime
    }

    /// Thresholds are due at t = 1, 1 + tau', 1 + 2 tau', ...
    pub fn thresholds_due(&self, t: u64) -> bool {
        (t - 1).is_multiple_of(self.tau_prime) || self.last_eval_iter == 0
    }

    pub fn boundaries_due(&self, t: u64) -> bool {
        (t - 1).is_multiple_of(self.tau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_examples() {
        let g = DenseGrad::new(vec![0.5, -2.0, 0.1, 1.0]).unwrap();
        assert_eq!(th_re_evaluate(&g, 2).unwrap(), 1.0);
        let s = SparseGrad::from_pairs(8, [(0, 5.0), (1, 3.0), (4, 4.0), (6, 2.0)]).unwrap();
        assert_eq!(th_re_evaluate(&s, 2).unwrap(), 4.0);
        assert_eq!(th_re_evaluate(&s, 10).unwrap(), 2.0);
        assert!(th_re_evaluate(&SparseGrad::empty(8), 1).is_err());
    }

    #[test]
    fn matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let v: Vec<f64> = (0..4096).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut mags: Vec<f64> = v.iter().map(|x: &f64| x.abs()).collect();
        mags.sort_by(|a, b| b.total_cmp(a));
        assert_eq!(th_re_evaluate(v.as_slice(), 41).unwrap(), mags[40]);
    }

    #[test]
    fn refresh_schedule() {
        let mut s = ThresholdState::new(64, 32).unwrap();
        s.last_eval_iter = 1;
        let due: Vec<u64> = (1..=100).filter(|&t| s.thresholds_due(t)).collect();
        assert_eq!(due, vec![1, 33, 65, 97]);
        let due: Vec<u64> = (1..=130).filter(|&t| s.boundaries_due(t)).collect();
        assert_eq!(due, vec![1, 65, 129]);
        assert!(ThresholdState::new(0, 1).is_err());
    }
}
