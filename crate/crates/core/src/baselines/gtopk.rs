use super::sparse_from_parts;
use crate::error::Result;
use crate::sparse::{merge_two, topk_exact, topk_sparse, DenseGrad, SparseGrad};
use crate::transport::{require_power_of_two, Payload, Phase, WorkerCtx};

/// gTopk: at level `l` rank `i` swaps its current k-entry set with rank
/// `i ^ 2^l`, both sum (lower rank's set first) and keep the top-k. After
/// `log2 P` levels every rank holds the same set, so the broadcast half of
/// the tree is implicit. Each rank sends at most `2k` words per level.
pub fn gtopk_allreduce(ctx: &mut WorkerCtx, g: &DenseGrad, k: usize) -> Result<SparseGrad> {
    let (mut current, _) = topk_exact(g, k)?;
    let p = ctx.world_size();
    if p == 1 {
        return Ok(current);
    }
    require_power_of_two(p, "gTopk")?;
    let me = ctx.rank();
    let n = g.len();
    let mut mask = 1;
    while mask < p {
        let partner = me ^ mask;
        let payload = Payload {
            header: vec![],
            ints: current.indices().to_vec(),
            reals: current.values().to_vec(),
        };
        let got = ctx.exchange(partner, Phase::Split, payload)?;
        let theirs = sparse_from_parts(n, got.ints, got.reals)?;
        let sum = if me < partner {
            merge_two(&current, &theirs)
        } else {
            merge_two(&theirs, &current)
        };
        current = topk_sparse(&sum, k);
        mask <<= 1;
    }
    Ok(current)
}
