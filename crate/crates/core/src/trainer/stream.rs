//! Gradient streams that are fed straight into an allreduce, without a
//! model behind them.

use crate::error::{Error, Result};
use crate::sparse::DenseGrad;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn hash3(a: u64, b: u64, c: u64) -> u64 {
    splitmix(splitmix(splitmix(a) ^ b) ^ c)
}

/// Uniform in (0, 1].
fn unit(h: u64) -> f64 {
    ((h >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// A slowly changing synthetic gradient.
///
/// Coordinate `j` carries a Pareto-distributed magnitude with a random sign.
/// Each coordinate redraws its magnitude once every `period` iterations, at
/// its own offset, so a fraction `1/period` of positions changes per step.
/// The whole vector shrinks as `1 / (1 + t / decay)`. Positions are shared
/// by all ranks; each rank adds its own Gaussian noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftingProcess {
    pub seed: u64,
    pub n: usize,
    pub period: u64,
    pub decay: f64,
    pub tail_alpha: f64,
    pub noise: f64,
}

impl DriftingProcess {
    pub fn new(seed: u64, n: usize) -> Self {
        Self {
            seed,
            n,
            period: 256,
            decay: 4096.0,
            tail_alpha: 2.0,
            noise: 0.1,
        }
    }

    pub fn scale(&self, t: u64) -> f64 {
        1.0 / (1.0 + t as f64 / self.decay)
    }

    /// Noise-free component at coordinate `j`.
    pub fn shared_value(&self, j: usize, t: u64) -> f64 {
        let j = j as u64;
        let offset = if self.period == u64::MAX {
            0
        } else {
            hash3(self.seed, j, u64::MAX) % self.period
        };
        let epoch = (t + offset) / self.period;
        let h = hash3(self.seed, j, epoch);
        let m = unit(h).powf(-1.0 / self.tail_alpha);
        let sign = if h & 1 == 0 { 1.0 } else { -1.0 };
        self.scale(t) * sign * m
    }

    pub fn shared(&self, t: u64) -> DenseGrad {
        DenseGrad::new((0..self.n).map(|j| self.shared_value(j, t)).collect())
            .expect("finite by construction")
    }

    pub fn gradient(&self, rank: usize, t: u64) -> DenseGrad {
        let mut v: Vec<f64> = (0..self.n).map(|j| self.shared_value(j, t)).collect();
        if self.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(hash3(self.seed ^ 0x5EED, rank as u64, t));
            for x in &mut v {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x += self.noise * z;
            }
        }
        DenseGrad::new(v).expect("finite by construction")
    }
}

/// The shared (noise-free) drifting gradient at iteration `t`.
pub fn drifting_gradient_process(t: u64, seed: u64, n: usize) -> DenseGrad {
    DriftingProcess::new(seed, n).shared(t)
}

/// Inputs on which the O(k) allreduce moves exactly `2k(P-1)/P` words per
/// rank after the first iteration.
///
/// At `t = 1` every rank holds the same `k` unit entries spaced `n/k`
/// apart, which yields equal-width regions, a local threshold of 1 and a
/// global threshold of `P`. From then on rank `i` holds `k` entries inside
/// its own region, `k/P` of them equal to `P` and the rest equal to 1: no
/// split traffic, and exactly `k/P` global winners per rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TightCase {
    pub n: usize,
    pub k: usize,
    pub world: usize,
}

impl TightCase {
    pub fn new(n: usize, k: usize, world: usize) -> Result<Self> {
        if world == 0 || k == 0 || !k.is_multiple_of(world) || !n.is_multiple_of(k) || k > n / world
        {
            return Err(Error::invalid(format!(
                "tight case needs P | k, k | n and k <= n/P (n = {n}, k = {k}, P = {world})"
            )));
        }
        Ok(Self { n, k, world })
    }

    pub fn gradient(&self, rank: usize, t: u64) -> DenseGrad {
        let mut v = vec![0.0; self.n];
        if t <= 1 {
            let stride = self.n / self.k;
            for j in 0..self.k {
                v[j * stride] = 1.0;
            }
        } else {
            let lo = rank * self.n / self.world;
            let width = (rank + 1) * self.n / self.world - lo;
            let stride = width / self.k;
            let heavy = self.k / self.world;
            for j in 0..self.k {
                v[lo + j * stride] = if j < heavy { self.world as f64 } else { 1.0 };
            }
        }
        DenseGrad::new(v).expect("finite by construction")
    }

    pub fn steady_words(&self) -> u64 {
        (2 * self.k * (self.world - 1) / self.world) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::{select_by_threshold, topk_exact};

    #[test]
    fn zero_lag_ratio_is_one() {
        let p = DriftingProcess::new(7, 5000);
        let a = topk_exact(&p.gradient(0, 100), 50).unwrap().1;
        let b = topk_exact(&p.gradient(0, 100), 50).unwrap().1;
        assert_eq!(a / b, 1.0);
    }

    #[test]
    fn stale_threshold_stays_close() {
        let p = DriftingProcess::new(3, 20_000);
        let k = 200;
        let mut dev = 0.0;
        let mut trials = 0.0;
        for t0 in (1..512).step_by(32) {
            let (_, th) = topk_exact(&p.gradient(0, t0), k).unwrap();
            let (_, th_late) = topk_exact(&p.gradient(0, t0 + 31), k).unwrap();
            assert!(
                (th_late / th - 1.0).abs() < 0.2,
                "t0 = {t0}: {th} -> {th_late}"
            );
            let sel = select_by_threshold(&p.gradient(0, t0 + 31), th).nnz();
            dev += (sel as f64 - k as f64).abs() / k as f64;
            trials += 1.0;
        }
        assert!(dev / trials < 0.15, "mean deviation {}", dev / trials);
    }

    #[test]
    fn pure_decay_keeps_the_selection() {
        let mut p = DriftingProcess::new(11, 3000);
        p.period = u64::MAX;
        p.noise = 0.0;
        let (first, th) = topk_exact(&p.gradient(0, 1), 30).unwrap();
        for t in [2, 10, 31] {
            let (later, _) = topk_exact(&p.gradient(0, t), 30).unwrap();
            assert_eq!(later.indices(), first.indices());
        }
        // the stale cut only ever loses members as the scale decays
        let stale = select_by_threshold(&p.gradient(0, 31), th);
        assert!(stale.indices().iter().all(|i| first.indices().contains(i)));
    }

    #[test]
    fn ranks_share_positions_but_not_noise() {
        let p = DriftingProcess::new(5, 1000);
        let a = p.gradient(0, 9);
        let b = p.gradient(1, 9);
        assert_ne!(a, b);
        let big = |g: &DenseGrad| topk_exact(g, 10).unwrap().0.indices().to_vec();
        let (ia, ib) = (big(&a), big(&b));
        let common = ia.iter().filter(|i| ib.contains(i)).count();
        assert!(common >= 8, "{ia:?} vs {ib:?}");
    }

    #[test]
    fn tight_case_layout() {
        let tc = TightCase::new(64, 8, 4).unwrap();
        let g = tc.gradient(2, 5);
        let nz: Vec<(usize, f64)> = g
            .values()
            .iter()
            .copied()
            .enumerate()
            .filter(|e| e.1 != 0.0)
            .collect();
        assert_eq!(nz.len(), 8);
        assert!(nz.iter().all(|&(i, _)| (32..48).contains(&i)));
        assert_eq!(nz.iter().filter(|e| e.1 == 4.0).count(), 2);
        assert_eq!(tc.steady_words(), 12);
        assert!(TightCase::new(64, 6, 4).is_err());
    }
}
