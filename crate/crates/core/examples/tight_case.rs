//! The best-case input: after the first iteration every rank moves exactly
//! 2k(P-1)/P words.

use oklab::baselines::Algorithm;
use oklab::harness::{counted_phases, run_experiment, ExperimentConfig};
use oklab::trainer::ProblemKind;

fn main() -> oklab::Result<()> {
    for p in [2, 4, 8] {
        let cfg = ExperimentConfig {
            algorithm: Algorithm::OkTopk,
            workers: p,
            n: 4096,
            density: 64.0 / 4096.0,
            steps: 8,
            problem: ProblemKind::TightCase,
            ..Default::default()
        };
        let report = run_experiment(&cfg)?;
        let phases = counted_phases(Algorithm::OkTopk);
        let per_iter: Vec<u64> = report
            .records
            .iter()
            .map(|r| r.words_sent(0, phases))
            .collect();
        println!(
            "P={p} k={}: rank 0 words per iteration {per_iter:?}, bound {}",
            report.k,
            2 * report.k * (p - 1) / p
        );
    }
    Ok(())
}
