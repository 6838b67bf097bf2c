use clap::Parser;
use oklab::baselines::Algorithm;
use oklab::harness::{
    run_experiment, CostModelParams, ExperimentConfig, MetricsFormat, TransportKind,
};
use oklab::trainer::ProblemKind;
use std::path::PathBuf;
use std::process::ExitCode;

/// Run one allreduce experiment and check the measured traffic.
///
/// Exits 0 when every post-run check passes, 1 when a check fails and 2 on
/// configuration or runtime errors. OKLAB_SEED overrides --seed.
#[derive(Debug, Parser)]
#[command(name = "oklab", version)]
struct Cli {
    #[arg(long, default_value = "oktopk")]
    algorithm: Algorithm,
    #[arg(long, default_value_t = 4)]
    workers: usize,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0.01)]
    density: f64,
    #[arg(long, default_value_t = 64)]
    tau: u64,
    #[arg(long = "tau-prime", default_value_t = 32)]
    tau_prime: u64,
    #[arg(long, default_value_t = 4)]
    bucket: usize,
    #[arg(long, default_value_t = 10)]
    steps: u64,
    /// quadratic, least-squares, mlp, drifting or tight-case
    #[arg(long, default_value = "least-squares")]
    problem: ProblemKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// inproc or tcp
    #[arg(long, default_value = "inproc")]
    transport: TransportKind,
    /// "rank host:port" per line; without it tcp binds loopback ports
    #[arg(long = "rank-map")]
    rank_map: Option<PathBuf>,
    #[arg(long = "instrument-xi")]
    instrument_xi: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// csv or jsonl
    #[arg(long, default_value = "csv")]
    format: MetricsFormat,
    /// seconds per message
    #[arg(long = "cost-alpha", default_value_t = 1e-6)]
    cost_alpha: f64,
    /// seconds per word
    #[arg(long = "cost-beta", default_value_t = 4e-9)]
    cost_beta: f64,
    #[arg(long)]
    lr: Option<f64>,
    /// scale the learning rate by 1/sqrt(t)
    #[arg(long = "lr-decay")]
    lr_decay: bool,
    /// record per-iteration wall time (makes output nondeterministic)
    #[arg(long = "wall-time")]
    wall_time: bool,
    #[arg(long = "jitter-seed")]
    jitter_seed: Option<u64>,
}

fn config(cli: Cli) -> Result<ExperimentConfig, Box<dyn std::error::Error>> {
    let seed = match std::env::var("OKLAB_SEED") {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|e| format!("OKLAB_SEED={s:?}: {e}"))?,
        Err(_) => cli.seed,
    };
    Ok(ExperimentConfig {
        algorithm: cli.algorithm,
        workers: cli.workers,
        n: cli.n,
        density: cli.density,
        tau: cli.tau,
        tau_prime: cli.tau_prime,
        bucket: cli.bucket,
        steps: cli.steps,
        problem: cli.problem,
        seed,
        transport: cli.transport,
        rank_map: cli.rank_map,
        instrument_xi: cli.instrument_xi,
        out: cli.out,
        format: cli.format,
        cost: CostModelParams::new(cli.cost_alpha, cli.cost_beta)?,
        lr: cli.lr,
        lr_decay: cli.lr_decay,
        wall_time: cli.wall_time,
        jitter_seed: cli.jitter_seed,
    })
}

fn main() -> ExitCode {
    let cfg = match config(Cli::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("oklab: {e}");
            return ExitCode::from(2);
        }
    };
    let report = match run_experiment(&cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("oklab: {e}");
            return ExitCode::from(2);
        }
    };
    let w = report.prediction.words;
    println!(
        "{} P={} n={} k={} steps={} seed={}",
        cfg.algorithm, cfg.workers, report.n, report.k, cfg.steps, cfg.seed
    );
    println!(
        "model words/rank: [{:.1}, {:.1}]  total seconds: [{:.3e}, {:.3e}]",
        w.lo, w.hi, report.prediction.total_s.lo, report.prediction.total_s.hi
    );
    if let Some(obj) = report.final_objective() {
        println!("final objective: {obj:.6e}");
    }
    for c in &report.checks {
        println!(
            "{} {}: {}",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}
