//! The O(k) sparse allreduce.
//!
//! One call per rank per iteration:
//!
//! 1. local selection: exact top-k on refresh iterations, otherwise every
//!    component at or above the cached local threshold;
//! 2. on boundary refresh, every rank proposes cuts that balance its own
//!    selection and the proposals are averaged;
//! 3. split and reduce: region `r` of every selection goes to rank `r`,
//!    which sums what it receives;
//! 4. on threshold refresh, the reduced regions are gathered (tag `gather`)
//!    and the exact global top-k fixes the new global threshold;
//! 5. balance and allgatherv: each rank keeps the part of its region at or
//!    above the global threshold, the parts are evened out if skewed, and
//!    everyone gathers the result `u`.
//!
//! The returned `indexes` are the local selection intersected with `u`'s
//! support: the coordinates whose residual the caller should clear.

mod balance;
mod partition;
mod split;
mod threshold;

pub use balance::{
    balance_and_allgatherv, balance_and_allgatherv_selected, balance_plan, needs_balance,
    BalanceOutput, Move, IMBALANCE_FACTOR,
};
pub use partition::{
    consensus_cuts, local_cuts, repartition_from_indices, space_repartition, RegionBoundaries,
};
pub use split::{rotation_schedule, split_and_reduce, split_and_reduce_selected, SplitOutput};
pub use threshold::{th_re_evaluate, GradValues, ThresholdState};

use crate::error::{Error, Result};
use crate::sparse::{
    intersect_sorted, select_by_threshold, topk_exact, topk_sparse, DenseGrad, SparseGrad,
};
use crate::transport::{allgather_blocks, require_power_of_two, Block, Bucket, Phase, WorkerCtx};

pub const DEFAULT_TAU: u64 = 64;
pub const DEFAULT_TAU_PRIME: u64 = 32;
pub const DEFAULT_BUCKET: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OkConfig {
    pub tau: u64,
    pub tau_prime: u64,
    pub bucket: usize,
}

impl Default for OkConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            tau_prime: DEFAULT_TAU_PRIME,
            bucket: DEFAULT_BUCKET,
        }
    }
}

/// Per-rank state carried across iterations.
#[derive(Debug, Clone)]
pub struct OkState {
    pub thresholds: ThresholdState,
    pub boundaries: Option<RegionBoundaries>,
    bucket: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OkOutput {
    pub u: SparseGrad,
    pub indexes: Vec<u32>,
    pub local_selected: usize,
    pub local_refreshed: bool,
    pub global_refreshed: bool,
    pub repartitioned: bool,
    pub balanced: bool,
}

impl OkState {
    pub fn new(cfg: OkConfig) -> Result<Self> {
        if cfg.bucket == 0 {
            return Err(Error::invalid("bucket size must be >= 1"));
        }
        Ok(Self {
            thresholds: ThresholdState::new(cfg.tau, cfg.tau_prime)?,
            boundaries: None,
            bucket: cfg.bucket,
        })
    }

    pub fn bucket(&self) -> usize {
        self.bucket
    }
}

/// One iteration of the O(k) sparse allreduce on accumulator `g`.
///
/// Thresholds refresh when `(t-1) mod tau' == 0`, boundaries when
/// `(t-1) mod tau == 0`; the first call always refreshes both.
pub fn ok_sparse_allreduce(
    ctx: &mut WorkerCtx,
    state: &mut OkState,
    g: &DenseGrad,
    t: u64,
    k: usize,
) -> Result<OkOutput> {
    let p = ctx.world_size();
    let me = ctx.rank();
    let n = g.len();
    if t == 0 {
        return Err(Error::invalid("iterations are numbered from 1"));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!("k = {k} outside 1..={n}")));
    }
    require_power_of_two(p, "oktopk")?;
    let bucket = Bucket::new(state.bucket, p)?;

    let refresh_th = state.thresholds.thresholds_due(t);
    let selected = if refresh_th {
        let (sel, th) = topk_exact(g, k)?;
        state.thresholds.local_th = th;
        sel
    } else {
        select_by_threshold(g, state.thresholds.local_th)
    };

    let stale_bounds = match &state.boundaries {
        Some(b) => b.world_size() != p || b.n() != n,
        None => true,
    };
    let repartitioned = stale_bounds || state.thresholds.boundaries_due(t);
    if repartitioned {
        state.boundaries = Some(repartition_from_indices(ctx, selected.indices(), n)?);
    }
    let boundaries = state.boundaries.as_ref().expect("set above");

    let split = split_and_reduce_selected(ctx, &selected, boundaries, bucket)?;
    let (lo, hi) = boundaries.region(me);

    let global_sel = if refresh_th {
        let (_, ints, reals) = split.region.clone().into_parts();
        let blocks = allgather_blocks(
            ctx,
            Block {
                meta: 0,
                ints,
                reals,
            },
            Phase::Gather,
        )?;
        let mut all_i = Vec::new();
        let mut all_v = Vec::new();
        for b in blocks {
            all_i.extend(b.ints);
            all_v.extend(b.reals);
        }
        let all = SparseGrad::new(n, all_i, all_v)
            .map_err(|e| Error::Protocol(format!("gathered regions overlap: {e}")))?;
        state.thresholds.global_th = th_re_evaluate(&all, k)?;
        state.thresholds.last_eval_iter = t;
        topk_sparse(&all, k).restrict(lo, hi)
    } else {
        split.region.filter_by_threshold(state.thresholds.global_th)
    };

    let out = balance_and_allgatherv_selected(ctx, global_sel)?;
    Ok(OkOutput {
        indexes: intersect_sorted(&split.local_indexes, &out.global_indexes),
        u: out.u,
        local_selected: selected.nnz(),
        local_refreshed: refresh_th,
        global_refreshed: refresh_th,
        repartitioned,
        balanced: out.balanced,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::butterfly_sum;
    use crate::transport::{run_inproc, InProcOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn seeded(p: usize, n: usize, seed: u64) -> Vec<DenseGrad> {
        (0..p)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed * 1000 + r as u64);
                DenseGrad::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
            })
            .collect()
    }

    fn oracle(inputs: &[DenseGrad], k: usize) -> SparseGrad {
        let locals: Vec<SparseGrad> = inputs.iter().map(|g| topk_exact(g, k).unwrap().0).collect();
        topk_sparse(&butterfly_sum(inputs[0].len(), &locals).unwrap(), k)
    }

    #[test]
    fn fresh_thresholds_match_oracle() {
        let cfg = OkConfig {
            tau: 1,
            tau_prime: 1,
            bucket: 2,
        };
        for seed in 0..5 {
            let inputs = seeded(4, 1000, seed);
            let (out, ledger) = run_inproc(4, InProcOptions::default(), |ctx| {
                let mut st = OkState::new(cfg)?;
                ok_sparse_allreduce(ctx, &mut st, &inputs[ctx.rank()], 1, 10)
            })
            .unwrap();
            let want = oracle(&inputs, 10);
            for o in &out {
                assert_eq!(o.u, want);
            }
            assert!(ledger.is_conserved());
        }
    }

    #[test]
    fn ties_follow_the_index_rule() {
        // every value has magnitude 1: the smallest indices must win everywhere
        let n = 64;
        let inputs: Vec<DenseGrad> = (0..4)
            .map(|r| {
                DenseGrad::new(
                    (0..n)
                        .map(|j| if (j + r) % 3 == 0 { -1.0 } else { 1.0 })
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        let cfg = OkConfig {
            tau: 1,
            tau_prime: 1,
            bucket: 4,
        };
        let (out, _) = run_inproc(4, InProcOptions::default(), |ctx| {
            let mut st = OkState::new(cfg)?;
            ok_sparse_allreduce(ctx, &mut st, &inputs[ctx.rank()], 1, 16)
        })
        .unwrap();
        let want = oracle(&inputs, 16);
        assert_eq!(out[0].u, want);
        assert_eq!(out[3].u, want);
    }

    #[test]
    fn single_rank_is_plain_topk() {
        let inputs = seeded(1, 200, 3);
        let (out, ledger) = run_inproc(1, InProcOptions::default(), |ctx| {
            let mut st = OkState::new(OkConfig::default())?;
            ok_sparse_allreduce(ctx, &mut st, &inputs[0], 1, 7)
        })
        .unwrap();
        assert_eq!(out[0].u, topk_exact(&inputs[0], 7).unwrap().0);
        assert_eq!(out[0].indexes, out[0].u.indices());
        assert_eq!(ledger.words_sent(0, &Phase::ALL), 0);
    }

    #[test]
    fn refresh_flags_follow_periods() {
        let inputs = seeded(2, 300, 8);
        let cfg = OkConfig {
            tau: 4,
            tau_prime: 2,
            bucket: 1,
        };
        let (out, _) = run_inproc(2, InProcOptions::default(), |ctx| {
            let mut st = OkState::new(cfg)?;
            let mut flags = Vec::new();
            for t in 1..=8 {
                let o = ok_sparse_allreduce(ctx, &mut st, &inputs[ctx.rank()], t, 5)?;
                flags.push((o.local_refreshed, o.repartitioned));
            }
            Ok(flags)
        })
        .unwrap();
        let th: Vec<bool> = out[0].iter().map(|f| f.0).collect();
        let rp: Vec<bool> = out[0].iter().map(|f| f.1).collect();
        assert_eq!(th, [true, false, true, false, true, false, true, false]);
        assert_eq!(rp, [true, false, false, false, true, false, false, false]);
    }

    #[test]
    fn huge_stale_threshold_selects_nothing() {
        let inputs = seeded(2, 100, 2);
        let (out, _) = run_inproc(2, InProcOptions::default(), |ctx| {
            let mut st = OkState::new(OkConfig {
                tau: 100,
                tau_prime: 100,
                bucket: 1,
            })?;
            ok_sparse_allreduce(ctx, &mut st, &inputs[ctx.rank()], 1, 5)?;
            st.thresholds.local_th = 1e9;
            ok_sparse_allreduce(ctx, &mut st, &inputs[ctx.rank()], 2, 5)
        })
        .unwrap();
        assert_eq!(out[0].u.nnz(), 0);
        assert!(out[0].indexes.is_empty());
        assert_eq!(out[0].local_selected, 0);
    }

    #[test]
    fn rejects_bad_arguments() {
        let g = DenseGrad::new(vec![1.0; 8]).unwrap();
        let err = run_inproc(3, InProcOptions::default(), |ctx| {
            let mut st = OkState::new(OkConfig::default())?;
            ok_sparse_allreduce(ctx, &mut st, &g, 1, 2)
        });
        assert!(err.is_err());
        let err = run_inproc(1, InProcOptions::default(), |ctx| {
            let mut st = OkState::new(OkConfig::default())?;
            ok_sparse_allreduce(ctx, &mut st, &g, 0, 2)
        });
        assert!(err.is_err());
    }
}
