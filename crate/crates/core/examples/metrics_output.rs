//! Writes per-iteration metrics as CSV and JSON lines and reads them back.

use oklab::baselines::Algorithm;
use oklab::harness::{read_metrics, run_experiment, ExperimentConfig, MetricsFormat};
use oklab::trainer::ProblemKind;

fn main() -> oklab::Result<()> {
    let dir = std::env::temp_dir().join("oklab-metrics-example");
    std::fs::create_dir_all(&dir)?;
    for format in [MetricsFormat::Csv, MetricsFormat::Jsonl] {
        let path = dir.join(format!(
            "run.{}",
            if format == MetricsFormat::Csv {
                "csv"
            } else {
                "jsonl"
            }
        ));
        let cfg = ExperimentConfig {
            algorithm: Algorithm::OkTopk,
            workers: 4,
            n: 200,
            density: 0.05,
            steps: 20,
            problem: ProblemKind::LeastSquares,
            out: Some(path.clone()),
            format,
            ..Default::default()
        };
        let report = run_experiment(&cfg)?;
        let rows = read_metrics(&path, format)?;
        assert_eq!(rows, report.rows());
        println!("{}: {} rows", path.display(), rows.len());
    }
    let text = std::fs::read_to_string(dir.join("run.csv"))?;
    for line in text.lines().take(4) {
        println!("  {line}");
    }
    Ok(())
}
