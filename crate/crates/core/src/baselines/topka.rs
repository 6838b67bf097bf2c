use super::{sparse_from_parts, sparse_to_block};
use crate::error::Result;
use crate::sparse::{butterfly_sum, topk_exact, DenseGrad, SparseGrad};
use crate::transport::{allgather_blocks, Phase, WorkerCtx};

/// Allgather of every rank's exact top-k, then a local sparse reduction.
/// Each rank sends `2k(P-1)` words.
pub fn topka_allreduce(ctx: &mut WorkerCtx, g: &DenseGrad, k: usize) -> Result<SparseGrad> {
    let (local, _) = topk_exact(g, k)?;
    if ctx.world_size() == 1 {
        return Ok(local);
    }
    gather_and_sum(ctx, &local)
}

/// Allgathers variable-size sparse selections and sums them in butterfly
/// order. Shared with Gaussiank.
pub(crate) fn gather_and_sum(ctx: &mut WorkerCtx, local: &SparseGrad) -> Result<SparseGrad> {
    let n = local.n();
    let parts = allgather_blocks(ctx, sparse_to_block(local), Phase::Allgatherv)?
        .into_iter()
        .map(|b| sparse_from_parts(n, b.ints, b.reals))
        .collect::<Result<Vec<_>>>()?;
    butterfly_sum(n, &parts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::sparse_sum;
    use crate::transport::{run_inproc, InProcOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn two_ranks_by_hand() {
        let g = [
            vec![5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.5],
            vec![0.0, 3.0, 0.0, 0.5, 4.0, 0.0, 0.0, 0.0],
        ];
        let (out, ledger) = run_inproc(2, InProcOptions::default(), |ctx| {
            topka_allreduce(ctx, &DenseGrad::new(g[ctx.rank()].clone())?, 2)
        })
        .unwrap();
        let expect = SparseGrad::from_pairs(8, [(0, 5.0), (1, 3.0), (4, 4.0), (6, 2.0)]).unwrap();
        assert_eq!(out[0], expect);
        assert_eq!(out[1], expect);
        // 2k(P-1) = 4 payload words per rank
        for r in 0..2 {
            assert_eq!(ledger.get(r, Phase::Allgatherv).words_sent, 4);
        }
    }

    #[test]
    fn eight_ranks_match_oracle_and_formula() {
        let (n, k, p) = (256, 12, 8);
        let inputs: Vec<DenseGrad> = (0..p)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(r as u64);
                DenseGrad::new((0..n).map(|_| StandardNormal.sample(&mut rng)).collect()).unwrap()
            })
            .collect();
        let (out, ledger) = run_inproc(p, InProcOptions::default(), |ctx| {
            topka_allreduce(ctx, &inputs[ctx.rank()], k)
        })
        .unwrap();
        let locals: Vec<SparseGrad> = inputs.iter().map(|g| topk_exact(g, k).unwrap().0).collect();
        let oracle = sparse_sum(n, &locals).unwrap();
        assert_eq!(out[0].indices(), oracle.indices());
        for (a, b) in out[0].values().iter().zip(oracle.values()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        for r in 0..p {
            assert_eq!(out[r], out[0]);
            assert_eq!(
                ledger.get(r, Phase::Allgatherv).words_sent,
                (2 * k * (p - 1)) as u64
            );
        }
    }

    #[test]
    fn single_rank_is_local_topk() {
        let g = DenseGrad::new(vec![0.5, -2.0, 0.1, 1.0]).unwrap();
        let (out, ledger) = run_inproc(1, InProcOptions::default(), |ctx| {
            topka_allreduce(ctx, &g, 2)
        })
        .unwrap();
        assert_eq!(out[0], topk_exact(&g, 2).unwrap().0);
        assert_eq!(ledger.get(0, Phase::Allgatherv).words_sent, 0);
    }
}
