use super::cost::CostModelParams;
use crate::baselines::Algorithm;
use crate::error::{Error, Result};
use crate::oktopk::{DEFAULT_BUCKET, DEFAULT_TAU, DEFAULT_TAU_PRIME};
use crate::trainer::{LrSchedule, ProblemKind, MLP_PARAMS};
use crate::transport::is_power_of_two;
use crate::transport::tcp::RankMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    InProc,
    Tcp,
}

impl FromStr for TransportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inproc" => Ok(TransportKind::InProc),
            "tcp" => Ok(TransportKind::Tcp),
            _ => Err(Error::invalid(format!("unknown transport {s:?}"))),
        }
    }
}

impl fmt::Display for TransportKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TransportKind::InProc => "inproc",
            TransportKind::Tcp => "tcp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MetricsFormat {
    Csv,
    Jsonl,
}

impl FromStr for MetricsFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(MetricsFormat::Csv),
            "jsonl" => Ok(MetricsFormat::Jsonl),
            _ => Err(Error::invalid(format!("unknown metrics format {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub workers: usize,
    /// Gradient length. The MLP has a fixed parameter count and ignores it.
    pub n: usize,
    /// `k / n`.
    pub density: f64,
    pub tau: u64,
    pub tau_prime: u64,
    pub bucket: usize,
    pub steps: u64,
    pub problem: ProblemKind,
    pub seed: u64,
    pub transport: TransportKind,
    pub rank_map: Option<PathBuf>,
    pub instrument_xi: bool,
    pub out: Option<PathBuf>,
    pub format: MetricsFormat,
    pub cost: CostModelParams,
    /// Learning rate; `None` picks a per-problem default.
    pub lr: Option<f64>,
    pub lr_decay: bool,
    /// Record wall-clock time per iteration. Off by default so metrics stay
    /// reproducible byte for byte.
    pub wall_time: bool,
    /// Seeded scheduling jitter for the in-process transport.
    pub jitter_seed: Option<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::OkTopk,
            workers: 4,
            n: 1000,
            density: 0.01,
            tau: DEFAULT_TAU,
            tau_prime: DEFAULT_TAU_PRIME,
            bucket: DEFAULT_BUCKET,
            steps: 10,
            problem: ProblemKind::LeastSquares,
            seed: 0,
            transport: TransportKind::InProc,
            rank_map: None,
            instrument_xi: false,
            out: None,
            format: MetricsFormat::Csv,
            cost: CostModelParams::default(),
            lr: None,
            lr_decay: false,
            wall_time: false,
            jitter_seed: None,
        }
    }
}

/// `ceil(density * n)`, clamped to `1..=n`. The small offset keeps values
/// such as `0.05 * 200` from rounding up past an exact integer.
pub fn k_for(density: f64, n: usize) -> usize {
    ((density * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

impl ExperimentConfig {
    /// Gradient length actually used by the configured problem.
    pub fn effective_n(&self) -> usize {
        match self.problem {
            ProblemKind::Mlp => MLP_PARAMS,
            _ => self.n,
        }
    }

    pub fn k(&self) -> usize {
        k_for(self.density, self.effective_n())
    }

    pub fn schedule(&self) -> LrSchedule {
        let alpha = self.lr.unwrap_or(match self.problem {
            ProblemKind::Quadratic => 0.5,
            ProblemKind::LeastSquares => 0.2,
            ProblemKind::Mlp => 0.1,
            ProblemKind::Drifting | ProblemKind::TightCase => 1.0,
        });
        if self.lr_decay {
            LrSchedule::InvSqrt(alpha)
        } else {
            LrSchedule::Constant(alpha)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(Error::invalid(format!(
                "density must be in (0, 1], got {}",
                self.density
            )));
        }
        if self.workers == 0 {
            return Err(Error::invalid("need at least one worker"));
        }
        if !is_power_of_two(self.workers) {
            return Err(Error::UnsupportedConfig(format!(
                "{} needs a power-of-two number of workers, got {}",
                self.algorithm, self.workers
            )));
        }
        if self.n == 0 || self.n > u32::MAX as usize {
            return Err(Error::invalid(format!("n = {} out of range", self.n)));
        }
        if self.steps == 0 {
            return Err(Error::invalid("steps must be >= 1"));
        }
        if self.tau == 0 || self.tau_prime == 0 || self.bucket == 0 {
            return Err(Error::invalid("tau, tau' and bucket must be >= 1"));
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::invalid(format!(
                    "learning rate must be positive, got {lr}"
                )));
            }
        }
        if self.rank_map.is_some() && self.transport != TransportKind::Tcp {
            return Err(Error::invalid(
                "--rank-map only applies to the tcp transport",
            ));
        }
        if let Some(path) = &self.rank_map {
            let map = RankMap::load(path)?;
            if map.len() != self.workers {
                return Err(Error::invalid(format!(
                    "rank map lists {} ranks but {} workers were requested",
                    map.len(),
                    self.workers
                )));
            }
        }
        Ok(())
    }
}
