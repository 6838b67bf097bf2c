//! Sparse and dense data-parallel SGD on toy problems, plus the synthetic
//! gradient streams used to exercise the allreduce in isolation.

mod problem;
mod sgd;
mod stream;
pub mod synthetic;

pub use problem::{
    shard, LeastSquares, Mlp, ProblemKind, ToyProblem, LEAST_SQUARES_NOISE, LEAST_SQUARES_ROWS,
    MLP_PARAMS, MLP_ROWS,
};
pub use sgd::{
    dense_sgd_step, measure_xi, oktopk_sgd_step, LrSchedule, ModelState, OkStep, Residual,
    XiCollector,
};
pub use stream::{drifting_gradient_process, DriftingProcess, TightCase};
