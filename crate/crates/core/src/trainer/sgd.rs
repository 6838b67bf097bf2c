use super::problem::ToyProblem;
use crate::baselines::dense_allreduce;
use crate::error::{Error, Result};
use crate::oktopk::{ok_sparse_allreduce, OkOutput, OkState};
use crate::sparse::{butterfly_sum_dense, topk_exact, DenseGrad, SparseGrad};
use crate::transport::WorkerCtx;
use std::collections::BTreeMap;
use std::sync::Mutex;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrSchedule {
    Constant(f64),
    /// `alpha / sqrt(t)`
    InvSqrt(f64),
}

impl LrSchedule {
    pub fn rate(self, t: u64) -> f64 {
        match self {
            LrSchedule::Constant(a) => a,
            LrSchedule::InvSqrt(a) => a / (t.max(1) as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub w: Vec<f64>,
    /// Number of completed steps; the next step is iteration `t + 1`.
    pub t: u64,
    pub schedule: LrSchedule,
}

impl ModelState {
    pub fn new(w: Vec<f64>, schedule: LrSchedule) -> Self {
        Self { w, t: 0, schedule }
    }
}

/// Error-feedback accumulator: gradient mass not yet applied.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub eps: Vec<f64>,
}

impl Residual {
    pub fn zeros(n: usize) -> Self {
        Self { eps: vec![0.0; n] }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OkStep {
    pub out: OkOutput,
    /// `eps + alpha * G` before the residual update.
    pub acc: Vec<f64>,
    /// `alpha * G` for this rank.
    pub scaled_grad: Vec<f64>,
}

fn local_gradient(
    ctx: &WorkerCtx,
    state: &ModelState,
    problem: &ToyProblem,
    t: u64,
) -> Result<Vec<f64>> {
    let g = problem.gradient(&state.w, ctx.rank(), ctx.world_size(), t);
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite gradient at iteration {t}"
        )));
    }
    Ok(g)
}

/// One step of sparse SGD with residual accumulation.
pub fn oktopk_sgd_step(
    ctx: &mut WorkerCtx,
    state: &mut ModelState,
    residual: &mut Residual,
    ok: &mut OkState,
    problem: &ToyProblem,
    k: usize,
) -> Result<OkStep> {
    let t = state.t + 1;
    let alpha = state.schedule.rate(t);
    let g = local_gradient(ctx, state, problem, t)?;
    let scaled_grad: Vec<f64> = g.iter().map(|x| alpha * x).collect();
    let acc: Vec<f64> = residual
        .eps
        .iter()
        .zip(&scaled_grad)
        .map(|(e, s)| e + s)
        .collect();
    let out = ok_sparse_allreduce(ctx, ok, &DenseGrad::new(acc.clone())?, t, k)?;

    residual.eps.copy_from_slice(&acc);
    for &i in &out.indexes {
        residual.eps[i as usize] = 0.0;
    }
    let p = ctx.world_size() as f64;
    for (i, u) in out.u.iter() {
        state.w[i as usize] -= u / p;
    }
    state.t = t;
    Ok(OkStep {
        out,
        acc,
        scaled_grad,
    })
}

/// One step of dense SGD: allreduce `alpha * G` and apply the mean.
pub fn dense_sgd_step(
    ctx: &mut WorkerCtx,
    state: &mut ModelState,
    problem: &ToyProblem,
) -> Result<()> {
    let t = state.t + 1;
    let alpha = state.schedule.rate(t);
    let g = local_gradient(ctx, state, problem, t)?;
    let scaled = DenseGrad::new(g.iter().map(|x| alpha * x).collect())?;
    let sum = dense_allreduce(ctx, &scaled)?;
    let p = ctx.world_size() as f64;
    for (w, s) in state.w.iter_mut().zip(sum.values()) {
        *w -= s / p;
    }
    state.t = t;
    Ok(())
}

fn mean(parts: &[Vec<f64>]) -> Vec<f64> {
    let refs: Vec<&[f64]> = parts.iter().map(|p| p.as_slice()).collect();
    let p = parts.len() as f64;
    butterfly_sum_dense(&refs)
        .into_iter()
        .map(|x| x / p)
        .collect()
}

fn sparse_diff_norm(a: &SparseGrad, b: &SparseGrad) -> f64 {
    let da = a.to_dense();
    let db = b.to_dense();
    da.iter()
        .zip(&db)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// How far composing per-rank top-k from the true global top-k lands,
/// relative to the size of the true step:
///
/// `|Topk(mean acc) - Topk(mean Topk(acc_i))| / |mean alpha G_i|`.
pub fn measure_xi(acc_all: &[Vec<f64>], scaled_grads: &[Vec<f64>], k: usize) -> Result<f64> {
    if acc_all.is_empty() || acc_all.len() != scaled_grads.len() {
        return Err(Error::invalid(
            "need one accumulator and one gradient per rank",
        ));
    }
    let step = mean(scaled_grads);
    let denom = step.iter().map(|x| x * x).sum::<f64>().sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedRatio("true gradient is zero".into()));
    }
    let global = topk_exact(&DenseGrad::new(mean(acc_all))?, k)?.0;
    let locals: Vec<Vec<f64>> = acc_all
        .iter()
        .map(|a| Ok(topk_exact(&DenseGrad::new(a.clone())?, k)?.0.to_dense()))
        .collect::<Result<_>>()?;
    let composed = topk_exact(&DenseGrad::new(mean(&locals))?, k)?.0;
    Ok(sparse_diff_norm(&global, &composed) / denom)
}

type Deposit = (Vec<f64>, Vec<f64>);

/// Central collection point for xi: ranks deposit their accumulators and
/// the last rank to arrive for an iteration computes the sample. Traffic
/// through the collector bypasses the ledger.
#[derive(Debug)]
pub struct XiCollector {
    world: usize,
    k: usize,
    pending: Mutex<BTreeMap<u64, Vec<Option<Deposit>>>>,
    samples: Mutex<BTreeMap<u64, f64>>,
}

impl XiCollector {
    pub fn new(world: usize, k: usize) -> Self {
        Self {
            world,
            k,
            pending: Mutex::new(BTreeMap::new()),
            samples: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn deposit(&self, t: u64, rank: usize, acc: Vec<f64>, scaled_grad: Vec<f64>) -> Result<()> {
        let complete = {
            let mut pending = self.pending.lock().expect("collector poisoned");
            let slots = pending.entry(t).or_insert_with(|| vec![None; self.world]);
            slots[rank] = Some((acc, scaled_grad));
            if slots.iter().all(Option::is_some) {
                pending.remove(&t)
            } else {
                None
            }
        };
        if let Some(slots) = complete {
            let (acc, grads): (Vec<_>, Vec<_>) =
                slots.into_iter().map(|s| s.expect("complete")).unzip();
            let xi = measure_xi(&acc, &grads, self.k)?;
            self.samples
                .lock()
                .expect("collector poisoned")
                .insert(t, xi);
        }
        Ok(())
    }

    pub fn sample(&self, t: u64) -> Option<f64> {
        self.samples
            .lock()
            .expect("collector poisoned")
            .get(&t)
            .copied()
    }

    pub fn samples(&self) -> Vec<(u64, f64)> {
        self.samples
            .lock()
            .expect("collector poisoned")
            .iter()
            .map(|(&t, &x)| (t, x))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oktopk::OkConfig;
    use crate::trainer::problem::{LeastSquares, ToyProblem};
    use crate::transport::{run_inproc, InProcOptions};

    fn exact_cfg() -> OkConfig {
        OkConfig {
            tau: 1,
            tau_prime: 1,
            bucket: 4,
        }
    }

    #[test]
    fn quadratic_halves_under_dense_sgd() {
        let prob = ToyProblem::Quadratic { n: 4 };
        let (out, _) = run_inproc(2, InProcOptions::default(), |ctx| {
            let mut st = ModelState::new(prob.initial_weights(), LrSchedule::Constant(0.5));
            for _ in 0..3 {
                dense_sgd_step(ctx, &mut st, &prob)?;
            }
            Ok(st.w)
        })
        .unwrap();
        assert_eq!(out[0], vec![0.125; 4]);
        assert_eq!(out[1], out[0]);
    }

    #[test]
    fn full_density_single_rank_is_dense_sgd() {
        let prob = ToyProblem::LeastSquares(LeastSquares::new(5, 40, 10, 0.1));
        run_inproc(1, InProcOptions::default(), |ctx| {
            let mut a = ModelState::new(prob.initial_weights(), LrSchedule::Constant(0.1));
            let mut b = a.clone();
            let mut res = Residual::zeros(10);
            let mut ok = OkState::new(exact_cfg())?;
            for _ in 0..20 {
                oktopk_sgd_step(ctx, &mut a, &mut res, &mut ok, &prob, 10)?;
                dense_sgd_step(ctx, &mut b, &prob)?;
                assert_eq!(a.w, b.w);
                assert!(res.eps.iter().all(|&e| e == 0.0));
            }
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn full_density_four_ranks_is_bitwise_dense() {
        let prob = ToyProblem::LeastSquares(LeastSquares::new(6, 80, 16, 0.1));
        let (out, _) = run_inproc(4, InProcOptions::default(), |ctx| {
            let mut a = ModelState::new(prob.initial_weights(), LrSchedule::Constant(0.2));
            let mut b = a.clone();
            let mut res = Residual::zeros(16);
            let mut ok = OkState::new(exact_cfg())?;
            for _ in 0..30 {
                oktopk_sgd_step(ctx, &mut a, &mut res, &mut ok, &prob, 16)?;
                dense_sgd_step(ctx, &mut b, &prob)?;
                if a.w != b.w {
                    return Err(Error::Numeric("trajectories diverged".into()));
                }
            }
            Ok(a.w)
        })
        .unwrap();
        assert!(out.iter().all(|w| w == &out[0]));
    }

    #[test]
    fn nothing_selected_leaves_weights_alone() {
        let prob = ToyProblem::Quadratic { n: 6 };
        let (out, _) = run_inproc(2, InProcOptions::default(), |ctx| {
            let mut st = ModelState::new(prob.initial_weights(), LrSchedule::Constant(0.1));
            let mut res = Residual::zeros(6);
            let mut ok = OkState::new(OkConfig {
                tau: 50,
                tau_prime: 50,
                bucket: 1,
            })?;
            oktopk_sgd_step(ctx, &mut st, &mut res, &mut ok, &prob, 2)?;
            ok.thresholds.local_th = f64::MAX;
            let before = (st.w.clone(), res.eps.clone());
            let step = oktopk_sgd_step(ctx, &mut st, &mut res, &mut ok, &prob, 2)?;
            Ok((before, st.w, res.eps, step))
        })
        .unwrap();
        let ((w0, _), w1, eps, step) = &out[0];
        assert_eq!(w0, w1);
        assert_eq!(eps, &step.acc);
        assert!(step.out.indexes.is_empty());
    }

    #[test]
    fn residual_conserves_the_accumulator() {
        let prob = ToyProblem::LeastSquares(LeastSquares::new(8, 80, 20, 0.1));
        let (out, _) = run_inproc(4, InProcOptions::default(), |ctx| {
            let mut st = ModelState::new(prob.initial_weights(), LrSchedule::Constant(0.1));
            let mut res = Residual::zeros(20);
            let mut ok = OkState::new(OkConfig {
                tau: 4,
                tau_prime: 2,
                bucket: 2,
            })?;
            for _ in 0..10 {
                let step = oktopk_sgd_step(ctx, &mut st, &mut res, &mut ok, &prob, 3)?;
                for j in 0..20 {
                    let sent = if step.out.indexes.contains(&(j as u32)) {
                        step.acc[j]
                    } else {
                        0.0
                    };
                    assert_eq!(res.eps[j] + sent, step.acc[j]);
                }
            }
            Ok(st.w)
        })
        .unwrap();
        assert!(out.iter().all(|w| w == &out[0]));
    }

    #[test]
    fn xi_is_zero_for_identical_ranks_and_full_k() {
        let acc = vec![vec![1.0, -3.0, 0.5, 2.0]; 4];
        let g = vec![vec![0.1, 0.2, 0.3, 0.4]; 4];
        assert_eq!(measure_xi(&acc, &g, 2).unwrap(), 0.0);
        let acc = vec![vec![1.0, -3.0, 0.5, 2.0], vec![-1.0, 0.0, 4.0, 2.0]];
        assert_eq!(measure_xi(&acc, &g[..2], 4).unwrap(), 0.0);
        assert!(measure_xi(&acc, &g[..2], 1).unwrap() > 0.0);
        assert!(matches!(
            measure_xi(&acc, &[vec![0.0; 4], vec![0.0; 4]], 1),
            Err(Error::UndefinedRatio(_))
        ));
    }

    #[test]
    fn collector_computes_once_all_ranks_arrive() {
        let c = XiCollector::new(2, 1);
        c.deposit(1, 0, vec![1.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(c.sample(1), None);
        c.deposit(1, 1, vec![1.0, 0.0], vec![1.0, 0.0]).unwrap();
        assert_eq!(c.sample(1), Some(0.0));
    }
}
