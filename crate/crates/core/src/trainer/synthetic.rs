//! Synthetic gradient vectors for selection experiments.

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

pub fn normal<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Laplace(0, scale): a symmetric exponential.
pub fn laplace<R: Rng + ?Sized>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| signed_exp(rng, scale)).collect()
}

/// Spike-and-slab: each coordinate is Laplace(0,1) with probability
/// `slab_fraction`, otherwise a narrow N(0, 0.01^2) bulk. The fitted normal
/// puts its tail cut well inside the slab, so a Gaussian threshold
/// selects fewer than the requested count.
pub fn laplace_tailed<R: Rng + ?Sized>(rng: &mut R, n: usize, slab_fraction: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            if rng.random::<f64>() < slab_fraction {
                signed_exp(rng, 1.0)
            } else {
                0.01 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
            }
        })
        .collect()
}

fn signed_exp<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    let e: f64 = Exp1.sample(rng);
    if rng.random::<bool>() {
        scale * e
    } else {
        -scale * e
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(v: &[f64]) -> (f64, f64) {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (
            m,
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64,
        )
    }

    #[test]
    fn moments_are_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (m, var) = moments(&normal(&mut rng, 50_000, 2.0));
        assert!(m.abs() < 0.05 && (var - 4.0).abs() < 0.15);
        let (m, var) = moments(&laplace(&mut rng, 50_000, 1.0));
        assert!(m.abs() < 0.05 && (var - 2.0).abs() < 0.15);
        let v = laplace_tailed(&mut rng, 50_000, 0.01);
        let big = v.iter().filter(|x| x.abs() > 0.1).count();
        assert!((350..=560).contains(&big), "{big}");
    }

    #[test]
    fn same_seed_same_vector() {
        let a = laplace_tailed(&mut ChaCha8Rng::seed_from_u64(3), 100, 0.1);
        let b = laplace_tailed(&mut ChaCha8Rng::seed_from_u64(3), 100, 0.1);
        assert_eq!(a, b);
    }
}
