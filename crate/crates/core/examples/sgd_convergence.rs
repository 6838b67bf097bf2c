//! Dense SGD against O(k) sparse SGD with residuals on the least-squares
//! problem, with the xi instrumentation switched on.

use oklab::baselines::Algorithm;
use oklab::harness::{run_experiment, ExperimentConfig};
use oklab::trainer::ProblemKind;

fn main() -> oklab::Result<()> {
    for alg in [Algorithm::Dense, Algorithm::OkTopk] {
        let cfg = ExperimentConfig {
            algorithm: alg,
            workers: 4,
            n: 200,
            density: 0.05,
            steps: 500,
            problem: ProblemKind::LeastSquares,
            instrument_xi: true,
            ..Default::default()
        };
        let report = run_experiment(&cfg)?;
        let trace: Vec<String> = report
            .records
            .iter()
            .filter(|r| r.iter == 1 || r.iter % 100 == 0)
            .map(|r| format!("{}:{:.3e}", r.iter, r.objective.unwrap()))
            .collect();
        println!("{alg:<7} objective {}", trace.join(" "));
        let xs = report.xi_samples();
        if !xs.is_empty() {
            let max = xs.iter().map(|x| x.1).fold(0.0, f64::max);
            let mean = xs.iter().map(|x| x.1).sum::<f64>() / xs.len() as f64;
            println!(
                "        xi over {} steps: mean {mean:.3}, max {max:.3}",
                xs.len()
            );
        }
    }
    Ok(())
}
