//! The comparison collectives: dense (Rabenseifner), TopkA, TopkDSA, gTopk
//! and Gaussiank.
//!
//! All of them need a power-of-two number of workers (P = 1 always works)
//! and every rank returns bitwise-identical output. Phase labels used:
//!
//! | algorithm | phases                                       |
//! |-----------|----------------------------------------------|
//! | dense     | `dense`                                      |
//! | topka     | `allgatherv`                                 |
//! | topkdsa   | `split` (reduce-scatter), `allgatherv`       |
//! | gtopk     | `split` (reduction butterfly)                |
//! | gaussiank | `allgatherv`                                 |

mod dense;
mod gaussiank;
mod gtopk;
mod topka;
mod topkdsa;

use std::fmt;
use std::str::FromStr;

pub use dense::dense_allreduce;
pub use gaussiank::{gaussiank_allreduce, gaussiank_select, GaussiankOptions, GaussiankSelection};
pub use gtopk::gtopk_allreduce;
pub use topka::topka_allreduce;
pub use topkdsa::{segment_range, topkdsa_allreduce, TopkDsaOutput};

use crate::error::{Error, Result};
use crate::sparse::{DenseGrad, SparseGrad};
use crate::transport::{RankTraffic, WorkerCtx};

/// Algorithm names as accepted on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Dense,
    TopkA,
    TopkDsa,
    GTopk,
    Gaussiank,
    OkTopk,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::Dense,
        Algorithm::TopkA,
        Algorithm::TopkDsa,
        Algorithm::GTopk,
        Algorithm::Gaussiank,
        Algorithm::OkTopk,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Dense => "dense",
            Algorithm::TopkA => "topka",
            Algorithm::TopkDsa => "topkdsa",
            Algorithm::GTopk => "gtopk",
            Algorithm::Gaussiank => "gaussiank",
            Algorithm::OkTopk => "oktopk",
        }
    }

    pub fn is_sparse(self) -> bool {
        self != Algorithm::Dense
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown algorithm {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Accumulated {
    Dense(DenseGrad),
    Sparse(SparseGrad),
}

impl Accumulated {
    pub fn n(&self) -> usize {
        match self {
            Accumulated::Dense(d) => d.len(),
            Accumulated::Sparse(s) => s.n(),
        }
    }

    pub fn to_dense(&self) -> Vec<f64> {
        match self {
            Accumulated::Dense(d) => d.values().to_vec(),
            Accumulated::Sparse(s) => s.to_dense(),
        }
    }

    pub fn nnz(&self) -> usize {
        match self {
            Accumulated::Dense(d) => d.len(),
            Accumulated::Sparse(s) => s.nnz(),
        }
    }
}

/// Uniform return shape of a baseline call: the accumulated gradient, how
/// many components this rank selected locally, and the traffic the call
/// caused on this rank.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgoResult {
    pub accumulated: Accumulated,
    pub local_selected: usize,
    pub traffic: RankTraffic,
}

/// Runs one baseline collective and snapshots this rank's traffic around it.
pub fn run_baseline(
    ctx: &mut WorkerCtx,
    alg: Algorithm,
    g: &DenseGrad,
    k: usize,
    gaussiank: GaussiankOptions,
) -> Result<AlgoResult> {
    let before = ctx.ledger().rank_snapshot(ctx.rank());
    let (accumulated, local_selected) = match alg {
        Algorithm::Dense => (Accumulated::Dense(dense_allreduce(ctx, g)?), g.len()),
        Algorithm::TopkA => (Accumulated::Sparse(topka_allreduce(ctx, g, k)?), k),
        Algorithm::TopkDsa => {
            let out = topkdsa_allreduce(ctx, g, k)?;
            (Accumulated::Sparse(out.sum), k)
        }
        Algorithm::GTopk => (Accumulated::Sparse(gtopk_allreduce(ctx, g, k)?), k),
        Algorithm::Gaussiank => {
            let (sum, sel) = gaussiank_allreduce(ctx, g, k, gaussiank)?;
            (Accumulated::Sparse(sum), sel.selected.nnz())
        }
        Algorithm::OkTopk => {
            return Err(Error::invalid(
                "oktopk is stateful; drive it through oktopk::OkState",
            ))
        }
    };
    let traffic = ctx.ledger().rank_snapshot(ctx.rank()).since(&before);
    Ok(AlgoResult {
        accumulated,
        local_selected,
        traffic,
    })
}

fn sparse_to_block(s: &SparseGrad) -> crate::transport::Block {
    crate::transport::Block {
        meta: 0,
        ints: s.indices().to_vec(),
        reals: s.values().to_vec(),
    }
}

fn sparse_from_parts(n: usize, ints: Vec<u32>, reals: Vec<f64>) -> Result<SparseGrad> {
    SparseGrad::new(n, ints, reals).map_err(|e| Error::Protocol(format!("bad sparse payload: {e}")))
}
