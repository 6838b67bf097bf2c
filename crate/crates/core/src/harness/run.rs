use super::config::{ExperimentConfig, TransportKind};
use super::cost::{cost_predict, CostPrediction};
use super::metrics::{emit_metrics, MetricsRow};
use crate::baselines::{gaussiank_select, run_baseline, Accumulated, Algorithm, GaussiankOptions};
use crate::error::{Error, Result};
use crate::oktopk::{ok_sparse_allreduce, OkConfig, OkState};
use crate::sparse::{topk_exact, DenseGrad};
use crate::trainer::{
    dense_sgd_step, oktopk_sgd_step, ModelState, ProblemKind, Residual, ToyProblem, XiCollector,
};
use crate::transport::tcp::{bind_loopback, run_tcp, run_tcp_with, RankMap};
use crate::transport::{run_inproc, InProcOptions, LedgerSnapshot, Phase, RankTraffic, WorkerCtx};
use std::collections::hash_map::DefaultHasher;
use std::hash::Hasher;
use std::time::Instant;

/// Allowance over the upper volume bound for stale-threshold drift.
pub const DRIFT_ALLOWANCE: f64 = 0.3;

/// What one rank observed in one iteration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RankIteration {
    pub traffic: RankTraffic,
    pub local_selected: usize,
    /// Entries in the reduced output.
    pub global_selected: usize,
    pub local_refreshed: bool,
    pub repartitioned: bool,
    pub balanced: bool,
    /// Digest of the reduced output, for cross-rank agreement checks.
    pub digest: u64,
    pub wall_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iter: u64,
    pub objective: Option<f64>,
    pub xi: Option<f64>,
    pub ranks: Vec<RankIteration>,
}

impl IterationRecord {
    /// Iterations that refresh thresholds or boundaries carry one-off
    /// traffic and are left out of steady-state volume figures.
    pub fn is_refresh(&self) -> bool {
        self.ranks
            .iter()
            .any(|r| r.local_refreshed || r.repartitioned)
    }

    pub fn words_sent(&self, rank: usize, phases: &[Phase]) -> u64 {
        self.ranks[rank].traffic.sum_over(phases).words_sent
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub n: usize,
    pub k: usize,
    pub records: Vec<IterationRecord>,
    /// Final model replicas, one per rank; empty for gradient streams.
    pub weights: Vec<Vec<f64>>,
    pub ledger: LedgerSnapshot,
    pub prediction: CostPrediction,
    pub checks: Vec<Check>,
}

/// Phases that count towards an algorithm's per-iteration volume.
pub fn counted_phases(alg: Algorithm) -> &'static [Phase] {
    match alg {
        Algorithm::Dense => &[Phase::Dense],
        Algorithm::TopkA | Algorithm::Gaussiank => &[Phase::Allgatherv],
        Algorithm::TopkDsa => &[Phase::Split, Phase::Allgatherv],
        Algorithm::GTopk => &[Phase::Split],
        Algorithm::OkTopk => &[
            Phase::Split,
            Phase::Balance,
            Phase::Allgatherv,
            Phase::Consensus,
        ],
    }
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Iterations that count towards steady-state volume. For the O(k)
    /// allreduce this drops refresh iterations and, on training problems,
    /// the first threshold window while the residual is still filling up.
    pub fn steady(&self) -> impl Iterator<Item = &IterationRecord> {
        let alg = self.config.algorithm;
        let warmup = if self.config.problem.is_stream() {
            0
        } else {
            self.config.tau_prime
        };
        self.records
            .iter()
            .filter(move |r| alg != Algorithm::OkTopk || (!r.is_refresh() && r.iter > warmup))
    }

    /// Mean words sent per rank per iteration over `records`.
    pub fn mean_words<'a>(
        &self,
        records: impl Iterator<Item = &'a IterationRecord>,
        phases: &[Phase],
    ) -> Option<f64> {
        let (mut total, mut count) = (0u64, 0u64);
        for r in records {
            for rank in 0..r.ranks.len() {
                total += r.words_sent(rank, phases);
            }
            count += r.ranks.len() as u64;
        }
        (count > 0).then(|| total as f64 / count as f64)
    }

    /// Largest per-rank, per-iteration volume over `records`.
    pub fn max_words<'a>(
        &self,
        records: impl Iterator<Item = &'a IterationRecord>,
        phases: &[Phase],
    ) -> u64 {
        records
            .flat_map(|r| (0..r.ranks.len()).map(move |rank| r.words_sent(rank, phases)))
            .max()
            .unwrap_or(0)
    }

    pub fn xi_samples(&self) -> Vec<(u64, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.xi.map(|x| (r.iter, x)))
            .collect()
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.records.last().and_then(|r| r.objective)
    }

    /// Per-(iteration, phase, rank) rows in a fixed order.
    pub fn rows(&self) -> Vec<MetricsRow> {
        let mut rows =
            Vec::with_capacity(self.records.len() * self.config.workers * Phase::ALL.len());
        for rec in &self.records {
            for phase in Phase::ALL {
                for (rank, ri) in rec.ranks.iter().enumerate() {
                    let t = ri.traffic.phase(phase);
                    rows.push(MetricsRow {
                        iter: rec.iter,
                        objective: rec.objective,
                        phase,
                        rank,
                        words_sent: t.words_sent,
                        words_recv: t.words_recv,
                        msgs: t.msgs_sent,
                        selected_k: ri.local_selected as u64,
                        exact_k: self.k as u64,
                        xi: rec.xi,
                        wall_ns: ri.wall_ns,
                    });
                }
            }
        }
        rows
    }
}

struct RankRun {
    iters: Vec<RankIteration>,
    objectives: Vec<Option<f64>>,
    weights: Option<Vec<f64>>,
}

fn digest(acc: &Accumulated) -> u64 {
    let mut h = DefaultHasher::new();
    match acc {
        Accumulated::Dense(d) => d.values().iter().for_each(|v| h.write_u64(v.to_bits())),
        Accumulated::Sparse(s) => s.iter().for_each(|(i, v)| {
            h.write_u32(i);
            h.write_u64(v.to_bits());
        }),
    }
    h.finish()
}

struct Worker<'a> {
    cfg: &'a ExperimentConfig,
    problem: &'a ToyProblem,
    k: usize,
    xi: Option<&'a XiCollector>,
}

impl Worker<'_> {
    fn run(&self, ctx: &mut WorkerCtx) -> Result<RankRun> {
        let cfg = self.cfg;
        let rank = ctx.rank();
        let world = ctx.world_size();
        let n = self.problem.dim();
        let stream = self.problem.kind().is_stream();
        let mut model = ModelState::new(self.problem.initial_weights(), cfg.schedule());
        let mut residual = Residual::zeros(n);
        let mut ok = OkState::new(OkConfig {
            tau: cfg.tau,
            tau_prime: cfg.tau_prime,
            bucket: cfg.bucket,
        })?;
        let gk = GaussiankOptions::default();
        let mut iters = Vec::with_capacity(cfg.steps as usize);
        let mut objectives = Vec::with_capacity(cfg.steps as usize);

        for t in 1..=cfg.steps {
            let before = ctx.ledger().rank_snapshot(rank);
            let start = cfg.wall_time.then(Instant::now);
            let mut rec = RankIteration::default();
            match (stream, cfg.algorithm) {
                (true, Algorithm::OkTopk) => {
                    let g = DenseGrad::new(self.problem.gradient(&[], rank, world, t))?;
                    let out = ok_sparse_allreduce(ctx, &mut ok, &g, t, self.k)?;
                    rec.local_selected = out.local_selected;
                    rec.global_selected = out.u.nnz();
                    rec.local_refreshed = out.local_refreshed;
                    rec.repartitioned = out.repartitioned;
                    rec.balanced = out.balanced;
                    rec.digest = digest(&Accumulated::Sparse(out.u));
                }
                (true, alg) => {
                    let g = DenseGrad::new(self.problem.gradient(&[], rank, world, t))?;
                    let res = run_baseline(ctx, alg, &g, self.k, gk)?;
                    rec.local_selected = res.local_selected;
                    rec.global_selected = res.accumulated.nnz();
                    rec.digest = digest(&res.accumulated);
                }
                (false, Algorithm::Dense) => {
                    dense_sgd_step(ctx, &mut model, self.problem)?;
                    rec.local_selected = n;
                    rec.global_selected = n;
                    let mut h = DefaultHasher::new();
                    model.w.iter().for_each(|v| h.write_u64(v.to_bits()));
                    rec.digest = h.finish();
                }
                (false, Algorithm::OkTopk) => {
                    let step = oktopk_sgd_step(
                        ctx,
                        &mut model,
                        &mut residual,
                        &mut ok,
                        self.problem,
                        self.k,
                    )?;
                    rec.local_selected = step.out.local_selected;
                    rec.global_selected = step.out.u.nnz();
                    rec.local_refreshed = step.out.local_refreshed;
                    rec.repartitioned = step.out.repartitioned;
                    rec.balanced = step.out.balanced;
                    rec.digest = digest(&Accumulated::Sparse(step.out.u));
                    if let Some(c) = self.xi {
                        c.deposit(t, rank, step.acc, step.scaled_grad)?;
                    }
                }
                (false, alg) => {
                    // error-feedback SGD around a baseline collective
                    let alpha = model.schedule.rate(t);
                    let g = self.problem.gradient(&model.w, rank, world, t);
                    if g.iter().any(|v| !v.is_finite()) {
                        return Err(Error::Numeric(format!(
                            "non-finite gradient at iteration {t}"
                        )));
                    }
                    let scaled: Vec<f64> = g.iter().map(|x| alpha * x).collect();
                    let acc: Vec<f64> = residual
                        .eps
                        .iter()
                        .zip(&scaled)
                        .map(|(e, s)| e + s)
                        .collect();
                    let acc_g = DenseGrad::new(acc.clone())?;
                    let res = run_baseline(ctx, alg, &acc_g, self.k, gk)?;
                    let sent = match alg {
                        Algorithm::Gaussiank => gaussiank_select(&acc_g, self.k, gk)?.selected,
                        _ => topk_exact(&acc_g, self.k)?.0,
                    };
                    residual.eps.copy_from_slice(&acc);
                    for &i in sent.indices() {
                        residual.eps[i as usize] = 0.0;
                    }
                    let p = world as f64;
                    for (w, s) in model.w.iter_mut().zip(res.accumulated.to_dense()) {
                        *w -= s / p;
                    }
                    model.t = t;
                    rec.local_selected = res.local_selected;
                    rec.global_selected = res.accumulated.nnz();
                    rec.digest = digest(&res.accumulated);
                    if let Some(c) = self.xi {
                        c.deposit(t, rank, acc, scaled)?;
                    }
                }
            }
            rec.traffic = ctx.ledger().rank_snapshot(rank).since(&before);
            rec.wall_ns = start.map_or(0, |s| s.elapsed().as_nanos() as u64);
            objectives.push(if stream || rank != 0 {
                None
            } else {
                self.problem.objective(&model.w)
            });
            iters.push(rec);
        }
        Ok(RankRun {
            iters,
            objectives,
            weights: (!stream).then_some(model.w),
        })
    }
}

/// Runs the configured experiment to completion and evaluates the post-run
/// checks. Metrics are written to `cfg.out` when set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let n = cfg.effective_n();
    let k = cfg.k();
    let problem = ToyProblem::build(cfg.problem, n, k, cfg.workers, cfg.seed)?;
    let collector =
        (cfg.instrument_xi && !cfg.problem.is_stream() && cfg.algorithm != Algorithm::Dense)
            .then(|| XiCollector::new(cfg.workers, k));
    let worker = Worker {
        cfg,
        problem: &problem,
        k,
        xi: collector.as_ref(),
    };
    let f = |ctx: &mut WorkerCtx| worker.run(ctx);
    let (runs, ledger) = match cfg.transport {
        TransportKind::InProc => run_inproc(
            cfg.workers,
            InProcOptions {
                jitter_seed: cfg.jitter_seed,
                ..Default::default()
            },
            f,
        )?,
        TransportKind::Tcp => match &cfg.rank_map {
            Some(path) => run_tcp(&RankMap::load(path)?, f)?,
            None => {
                let (listeners, map) = bind_loopback(cfg.workers)?;
                run_tcp_with(&map, listeners, f)?
            }
        },
    };

    let mut runs = runs;
    let objectives = std::mem::take(&mut runs[0].objectives);
    let weights: Vec<Vec<f64>> = runs.iter_mut().filter_map(|r| r.weights.take()).collect();
    let mut per_rank: Vec<std::vec::IntoIter<RankIteration>> =
        runs.into_iter().map(|r| r.iters.into_iter()).collect();
    let records = (1..=cfg.steps)
        .zip(objectives)
        .map(|(iter, objective)| IterationRecord {
            iter,
            objective,
            xi: collector.as_ref().and_then(|c| c.sample(iter)),
            ranks: per_rank
                .iter_mut()
                .map(|it| it.next().expect("one record per step"))
                .collect(),
        })
        .collect();

    let mut report = RunReport {
        config: cfg.clone(),
        n,
        k,
        records,
        weights,
        ledger,
        prediction: cost_predict(cfg.algorithm, n, k, cfg.workers, cfg.cost)?,
        checks: Vec::new(),
    };
    report.checks = post_run_checks(&report);
    if let Some(path) = &cfg.out {
        emit_metrics(&report.rows(), path, cfg.format)?;
    }
    Ok(report)
}

fn check(name: &str, passed: bool, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        detail,
    }
}

/// Conservation, replica agreement and volume conformance.
pub fn post_run_checks(report: &RunReport) -> Vec<Check> {
    let cfg = &report.config;
    let (k, p) = (report.k as f64, cfg.workers as f64);
    let mut checks = vec![check(
        "ledger-conservation",
        report.ledger.is_conserved(),
        "words sent == words received per phase".into(),
    )];

    let agree = report
        .records
        .iter()
        .all(|r| r.ranks.iter().all(|x| x.digest == r.ranks[0].digest))
        && report.weights.iter().all(|w| w == &report.weights[0]);
    checks.push(check(
        "replica-agreement",
        agree,
        "identical outputs on every rank".into(),
    ));

    let phases = counted_phases(cfg.algorithm);
    let all = report.records.iter();
    let words = report.prediction.words;
    let vol = match cfg.algorithm {
        Algorithm::Dense => {
            let m = report.mean_words(all, phases).unwrap_or(0.0);
            check(
                "volume",
                (m - words.hi).abs() <= 1e-9 * words.hi.max(1.0),
                format!("mean {m} words/rank/iter, predicted {}", words.hi),
            )
        }
        Algorithm::TopkA => {
            let max = report.max_words(report.records.iter(), phases) as f64;
            let min = report
                .records
                .iter()
                .flat_map(|r| (0..r.ranks.len()).map(move |x| r.words_sent(x, phases)))
                .min()
                .unwrap_or(0) as f64;
            check(
                "volume",
                max == words.hi && min == words.hi,
                format!("per-rank words in [{min}, {max}], predicted {}", words.hi),
            )
        }
        Algorithm::GTopk => {
            let max = report.max_words(all, phases) as f64;
            check(
                "volume",
                max <= words.hi,
                format!("max {max} words/rank/iter, bound {}", words.hi),
            )
        }
        Algorithm::OkTopk => match report.mean_words(report.steady(), phases) {
            Some(m) => {
                // the bound scales with what the reused thresholds actually picked
                let (sel, cnt) = report
                    .steady()
                    .flat_map(|r| &r.ranks)
                    .fold((0.0, 0.0), |(s, c), x| {
                        (s + x.local_selected as f64, c + 1.0)
                    });
                let k_eff = (sel / cnt).max(k);
                let bound = words.hi * k_eff / k * (1.0 + DRIFT_ALLOWANCE);
                check(
                    "volume",
                    m <= bound,
                    format!(
                        "steady mean {m:.1} words/rank/iter, bound {bound:.1} at {k_eff:.1} selected per rank (k = {k})"
                    ),
                )
            }
            None => check(
                "volume",
                true,
                "no steady-state iterations to measure".into(),
            ),
        },
        Algorithm::TopkDsa | Algorithm::Gaussiank => {
            let m = report.mean_words(all, phases).unwrap_or(0.0);
            check(
                "volume",
                true,
                format!(
                    "reported only: mean {m:.1} words/rank/iter, model [{:.1}, {:.1}]",
                    words.lo, words.hi
                ),
            )
        }
    };
    checks.push(vol);

    if cfg.instrument_xi && !cfg.problem.is_stream() && cfg.algorithm != Algorithm::Dense {
        let xs = report.xi_samples();
        let finite = xs.iter().all(|(_, x)| x.is_finite());
        let max = xs.iter().map(|&(_, x)| x).fold(0.0, f64::max);
        checks.push(check(
            "xi",
            finite && xs.len() as u64 == cfg.steps,
            format!("{} samples, max {max:.4} (P = {p})", xs.len()),
        ));
    }
    if cfg.problem == ProblemKind::TightCase && cfg.algorithm == Algorithm::OkTopk {
        let want = 2.0 * k * (p - 1.0) / p;
        let steady: Vec<u64> = report
            .steady()
            .flat_map(|r| (0..r.ranks.len()).map(move |x| r.words_sent(x, phases)))
            .collect();
        checks.push(check(
            "tight-case",
            !steady.is_empty() && steady.iter().all(|&w| w as f64 == want),
            format!(
                "{} steady rank-iterations, expected {want} words each",
                steady.len()
            ),
        ));
    }
    checks
}
