use super::stream::{DriftingProcess, TightCase};
use crate::error::{Error, Result};
use crate::oktopk::RegionBoundaries;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    Quadratic,
    LeastSquares,
    Mlp,
    Drifting,
    TightCase,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 5] = [
        ProblemKind::Quadratic,
        ProblemKind::LeastSquares,
        ProblemKind::Mlp,
        ProblemKind::Drifting,
        ProblemKind::TightCase,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ProblemKind::Quadratic => "quadratic",
            ProblemKind::LeastSquares => "least-squares",
            ProblemKind::Mlp => "mlp",
            ProblemKind::Drifting => "drifting",
            ProblemKind::TightCase => "tight-case",
        }
    }

    /// Streams produce gradients directly; there is no model to update.
    pub fn is_stream(self) -> bool {
        matches!(self, ProblemKind::Drifting | ProblemKind::TightCase)
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemKind::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown problem {s:?}")))
    }
}

fn normals(rng: &mut ChaCha8Rng, len: usize, scale: f64) -> Vec<f64> {
    (0..len)
        .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Rows `[lo, hi)` of `rows` owned by `rank` under contiguous equal sharding.
pub fn shard(rows: usize, rank: usize, world: usize) -> (usize, usize) {
    let b = RegionBoundaries::equal_width(rows, world);
    b.region(rank)
}

/// `min_w (1/2m) |A w - b|^2` with a seeded Gaussian design.
#[derive(Debug, Clone)]
pub struct LeastSquares {
    pub rows: usize,
    pub n: usize,
    a: Vec<f64>,
    b: Vec<f64>,
}

impl LeastSquares {
    pub fn new(seed: u64, rows: usize, n: usize, noise: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = normals(&mut rng, rows * n, 1.0);
        let w_star = normals(&mut rng, n, 1.0 / (n as f64).sqrt());
        let eps = normals(&mut rng, rows, noise);
        let b = (0..rows)
            .map(|i| dot(&a[i * n..(i + 1) * n], &w_star) + eps[i])
            .collect();
        Self { rows, n, a, b }
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.a[i * self.n..(i + 1) * self.n]
    }

    pub fn objective_rows(&self, w: &[f64], lo: usize, hi: usize) -> f64 {
        let s: f64 = (lo..hi)
            .map(|i| (dot(self.row(i), w) - self.b[i]).powi(2))
            .sum();
        s / (2.0 * (hi - lo) as f64)
    }

    pub fn gradient_rows(&self, w: &[f64], lo: usize, hi: usize) -> Vec<f64> {
        let mut g = vec![0.0; self.n];
        for i in lo..hi {
            let r = dot(self.row(i), w) - self.b[i];
            for (gj, aj) in g.iter_mut().zip(self.row(i)) {
                *gj += r * aj;
            }
        }
        let m = (hi - lo) as f64;
        g.iter_mut().for_each(|x| *x /= m);
        g
    }

    /// Largest eigenvalue of `A^T A / m` by power iteration.
    pub fn smoothness(&self) -> f64 {
        let mut v = vec![1.0 / (self.n as f64).sqrt(); self.n];
        let mut lambda = 0.0;
        for _ in 0..200 {
            let mut next = vec![0.0; self.n];
            for i in 0..self.rows {
                let r = dot(self.row(i), &v);
                for (x, aj) in next.iter_mut().zip(self.row(i)) {
                    *x += r * aj;
                }
            }
            next.iter_mut().for_each(|x| *x /= self.rows as f64);
            lambda = dot(&next, &v);
            let norm = dot(&next, &next).sqrt();
            v = next.into_iter().map(|x| x / norm).collect();
        }
        lambda
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub const MLP_IN: usize = 8;
pub const MLP_HIDDEN: usize = 16;
pub const MLP_PARAMS: usize = MLP_IN * MLP_HIDDEN + MLP_HIDDEN + MLP_HIDDEN + 1;

/// An 8-16-1 tanh network regressing a fixed random teacher of the same
/// shape.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub rows: usize,
    x: Vec<f64>,
    y: Vec<f64>,
    init: Vec<f64>,
}

struct Layers<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: f64,
}

fn layers(w: &[f64]) -> Layers<'_> {
    let (w1, rest) = w.split_at(MLP_IN * MLP_HIDDEN);
    let (b1, rest) = rest.split_at(MLP_HIDDEN);
    let (w2, rest) = rest.split_at(MLP_HIDDEN);
    Layers {
        w1,
        b1,
        w2,
        b2: rest[0],
    }
}

fn forward(l: &Layers, x: &[f64], hidden: &mut [f64]) -> f64 {
    for (h, hv) in hidden.iter_mut().enumerate() {
        *hv = (dot(&l.w1[h * MLP_IN..(h + 1) * MLP_IN], x) + l.b1[h]).tanh();
    }
    dot(l.w2, hidden) + l.b2
}

impl Mlp {
    pub fn new(seed: u64, rows: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = normals(&mut rng, rows * MLP_IN, 1.0);
        let teacher = Self::random_params(&mut rng, 1.0);
        let tl = layers(&teacher);
        let mut hidden = [0.0; MLP_HIDDEN];
        let y = (0..rows)
            .map(|i| forward(&tl, &x[i * MLP_IN..(i + 1) * MLP_IN], &mut hidden))
            .collect();
        let init = Self::random_params(&mut rng, 0.5);
        Self { rows, x, y, init }
    }

    fn random_params(rng: &mut ChaCha8Rng, gain: f64) -> Vec<f64> {
        let mut w = normals(rng, MLP_IN * MLP_HIDDEN, gain / (MLP_IN as f64).sqrt());
        w.extend(vec![0.0; MLP_HIDDEN]);
        w.extend(normals(rng, MLP_HIDDEN, gain / (MLP_HIDDEN as f64).sqrt()));
        w.push(0.0);
        w
    }

    pub fn initial(&self) -> Vec<f64> {
        self.init.clone()
    }

    pub fn objective_rows(&self, w: &[f64], lo: usize, hi: usize) -> f64 {
        let l = layers(w);
        let mut hidden = [0.0; MLP_HIDDEN];
        let s: f64 = (lo..hi)
            .map(|i| {
                (forward(&l, &self.x[i * MLP_IN..(i + 1) * MLP_IN], &mut hidden) - self.y[i])
                    .powi(2)
            })
            .sum();
        s / (2.0 * (hi - lo) as f64)
    }

    pub fn gradient_rows(&self, w: &[f64], lo: usize, hi: usize) -> Vec<f64> {
        let l = layers(w);
        let mut g = vec![0.0; MLP_PARAMS];
        let mut hidden = [0.0; MLP_HIDDEN];
        let (o_w1, o_b1, o_w2) = (0, MLP_IN * MLP_HIDDEN, MLP_IN * MLP_HIDDEN + MLP_HIDDEN);
        let o_b2 = o_w2 + MLP_HIDDEN;
        for i in lo..hi {
            let x = &self.x[i * MLP_IN..(i + 1) * MLP_IN];
            let r = forward(&l, x, &mut hidden) - self.y[i];
            g[o_b2] += r;
            for h in 0..MLP_HIDDEN {
                g[o_w2 + h] += r * hidden[h];
                let d = r * l.w2[h] * (1.0 - hidden[h] * hidden[h]);
                g[o_b1 + h] += d;
                for (c, xc) in x.iter().enumerate() {
                    g[o_w1 + h * MLP_IN + c] += d * xc;
                }
            }
        }
        let m = (hi - lo) as f64;
        g.iter_mut().for_each(|v| *v /= m);
        g
    }
}

/// Desk-scale stand-ins for real training workloads. Gradient evaluation
/// is a pure function of `(w, rank, world, t)`.
#[derive(Debug, Clone)]
pub enum ToyProblem {
    /// `f(w) = |w|^2 / 2`, the same on every rank.
    Quadratic {
        n: usize,
    },
    LeastSquares(LeastSquares),
    Mlp(Mlp),
    Drifting(DriftingProcess),
    TightCase(TightCase),
}

pub const LEAST_SQUARES_ROWS: usize = 800;
pub const LEAST_SQUARES_NOISE: f64 = 0.01;
pub const MLP_ROWS: usize = 256;

impl ToyProblem {
    /// Builds a problem of the given kind. Problems with a fixed shape
    /// (the MLP) ignore `n`; the tight case needs `k` and `world`.
    pub fn build(kind: ProblemKind, n: usize, k: usize, world: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("n must be >= 1"));
        }
        Ok(match kind {
            ProblemKind::Quadratic => ToyProblem::Quadratic { n },
            ProblemKind::LeastSquares => ToyProblem::LeastSquares(LeastSquares::new(
                seed,
                LEAST_SQUARES_ROWS,
                n,
                LEAST_SQUARES_NOISE,
            )),
            ProblemKind::Mlp => ToyProblem::Mlp(Mlp::new(seed, MLP_ROWS)),
            ProblemKind::Drifting => ToyProblem::Drifting(DriftingProcess::new(seed, n)),
            ProblemKind::TightCase => ToyProblem::TightCase(TightCase::new(n, k, world)?),
        })
    }

    pub fn kind(&self) -> ProblemKind {
        match self {
            ToyProblem::Quadratic { .. } => ProblemKind::Quadratic,
            ToyProblem::LeastSquares(_) => ProblemKind::LeastSquares,
            ToyProblem::Mlp(_) => ProblemKind::Mlp,
            ToyProblem::Drifting(_) => ProblemKind::Drifting,
            ToyProblem::TightCase(_) => ProblemKind::TightCase,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ToyProblem::Quadratic { n } => *n,
            ToyProblem::LeastSquares(ls) => ls.n,
            ToyProblem::Mlp(_) => MLP_PARAMS,
            ToyProblem::Drifting(d) => d.n,
            ToyProblem::TightCase(tc) => tc.n,
        }
    }

    pub fn initial_weights(&self) -> Vec<f64> {
        match self {
            ToyProblem::Quadratic { n } => vec![1.0; *n],
            ToyProblem::Mlp(m) => m.initial(),
            _ => vec![0.0; self.dim()],
        }
    }

    /// This rank's gradient at `w` on iteration `t`.
    pub fn gradient(&self, w: &[f64], rank: usize, world: usize, t: u64) -> Vec<f64> {
        match self {
            ToyProblem::Quadratic { .. } => w.to_vec(),
            ToyProblem::LeastSquares(ls) => {
                let (lo, hi) = shard(ls.rows, rank, world);
                ls.gradient_rows(w, lo, hi)
            }
            ToyProblem::Mlp(m) => {
                let (lo, hi) = shard(m.rows, rank, world);
                m.gradient_rows(w, lo, hi)
            }
            ToyProblem::Drifting(d) => d.gradient(rank, t).into_values(),
            ToyProblem::TightCase(tc) => tc.gradient(rank, t).into_values(),
        }
    }

    /// Full-data objective; streams have none.
    pub fn objective(&self, w: &[f64]) -> Option<f64> {
        match self {
            ToyProblem::Quadratic { .. } => Some(0.5 * dot(w, w)),
            ToyProblem::LeastSquares(ls) => Some(ls.objective_rows(w, 0, ls.rows)),
            ToyProblem::Mlp(m) => Some(m.objective_rows(w, 0, m.rows)),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn numeric_grad(f: impl Fn(&[f64]) -> f64, w: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..w.len())
            .map(|j| {
                let mut a = w.to_vec();
                let mut b = w.to_vec();
                a[j] += h;
                b[j] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn least_squares_gradient_matches_finite_differences() {
        let ls = LeastSquares::new(1, 40, 6, 0.1);
        let w = vec![0.3, -0.1, 0.2, 0.0, 1.0, -0.5];
        let g = ls.gradient_rows(&w, 5, 25);
        let num = numeric_grad(|w| ls.objective_rows(w, 5, 25), &w);
        for (a, b) in g.iter().zip(&num) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn mlp_gradient_matches_finite_differences() {
        let m = Mlp::new(4, 32);
        let w = m.initial();
        let g = m.gradient_rows(&w, 0, 32);
        let num = numeric_grad(|w| m.objective_rows(w, 0, 32), &w);
        for (a, b) in g.iter().zip(&num) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
        assert_eq!(w.len(), 161);
    }

    #[test]
    fn equal_shards_average_to_the_full_gradient() {
        let ls = LeastSquares::new(2, 80, 5, 0.1);
        let w = vec![0.1; 5];
        let full = ls.gradient_rows(&w, 0, 80);
        let parts: Vec<Vec<f64>> = (0..4)
            .map(|r| {
                let (lo, hi) = shard(80, r, 4);
                ls.gradient_rows(&w, lo, hi)
            })
            .collect();
        for j in 0..5 {
            let mean = parts.iter().map(|p| p[j]).sum::<f64>() / 4.0;
            assert!((mean - full[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn smoothness_estimate_is_sane() {
        let ls = LeastSquares::new(3, 800, 200, 0.01);
        let l = ls.smoothness();
        // Marchenko-Pastur edge (1 + sqrt(1/4))^2 = 2.25
        assert!(l > 1.8 && l < 2.7, "{l}");
    }

    #[test]
    fn names_round_trip() {
        for k in ProblemKind::ALL {
            assert_eq!(k.as_str().parse::<ProblemKind>().unwrap(), k);
        }
    }
}
