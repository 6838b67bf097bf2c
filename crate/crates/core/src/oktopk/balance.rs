use super::partition::even_split;
use crate::error::{Error, Result};
use crate::sparse::SparseGrad;
use crate::transport::{allgather_blocks, Block, Payload, Phase, WorkerCtx};

/// Balancing runs when the largest selection is at least this many times
/// the mean.
pub const IMBALANCE_FACTOR: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceOutput {
    pub u: SparseGrad,
    pub global_indexes: Vec<u32>,
    pub balanced: bool,
}

/// One contiguous run of the global concatenation that changes owner.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Move {
    pub src: usize,
    pub dst: usize,
    /// Range inside `src`'s current buffer.
    pub start: usize,
    pub len: usize,
}

pub fn needs_balance(sizes: &[usize]) -> bool {
    let total: usize = sizes.iter().sum();
    let max = sizes.iter().copied().max().unwrap_or(0);
    total > 0 && max * sizes.len() >= IMBALANCE_FACTOR * total
}

/// Moves that turn the rank-ordered concatenation of `sizes` into an even
/// split with the same order.
pub fn balance_plan(sizes: &[usize]) -> Vec<Move> {
    let p = sizes.len();
    let total: usize = sizes.iter().sum();
    let mut moves = Vec::new();
    let mut offset = 0;
    for (src, &len) in sizes.iter().enumerate() {
        let (s_lo, s_hi) = (offset, offset + len);
        for dst in 0..p {
            if dst == src {
                continue;
            }
            let (t_lo, t_hi) = (even_split(total, p, dst), even_split(total, p, dst + 1));
            let (lo, hi) = (s_lo.max(t_lo), s_hi.min(t_hi));
            if lo < hi {
                moves.push(Move {
                    src,
                    dst,
                    start: lo - s_lo,
                    len: hi - lo,
                });
            }
        }
        offset = s_hi;
    }
    moves
}

/// Filters `region_reduced` by `global_th` and runs
/// [`balance_and_allgatherv_selected`].
pub fn balance_and_allgatherv(
    ctx: &mut WorkerCtx,
    region_reduced: &SparseGrad,
    global_th: f64,
) -> Result<BalanceOutput> {
    balance_and_allgatherv_selected(ctx, region_reduced.filter_by_threshold(global_th))
}

/// Evens out the selected entries across ranks when they are badly skewed,
/// then allgathers them so every rank holds the same `u`.
///
/// Selections must be ordered by rank: everything rank `r` holds precedes
/// everything rank `r + 1` holds.
pub fn balance_and_allgatherv_selected(
    ctx: &mut WorkerCtx,
    selected: SparseGrad,
) -> Result<BalanceOutput> {
    let n = selected.n();
    let size_blocks = allgather_blocks(
        ctx,
        Block {
            meta: selected.nnz() as u32,
            ..Block::default()
        },
        Phase::Consensus,
    )?;
    let sizes: Vec<usize> = size_blocks.iter().map(|b| b.meta as usize).collect();

    let balanced = needs_balance(&sizes);
    let mine = if balanced {
        rebalance(ctx, selected, &sizes)?
    } else {
        selected
    };

    let (_, ints, reals) = mine.into_parts();
    let blocks = allgather_blocks(
        ctx,
        Block {
            meta: 0,
            ints,
            reals,
        },
        Phase::Allgatherv,
    )?;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for b in blocks {
        indices.extend(b.ints);
        values.extend(b.reals);
    }
    let u = SparseGrad::new(n, indices, values)
        .map_err(|e| Error::Protocol(format!("gathered selection is not a valid vector: {e}")))?;
    Ok(BalanceOutput {
        global_indexes: u.indices().to_vec(),
        u,
        balanced,
    })
}

fn rebalance(ctx: &mut WorkerCtx, selected: SparseGrad, sizes: &[usize]) -> Result<SparseGrad> {
    let me = ctx.rank();
    let p = sizes.len();
    let n = selected.n();
    let plan = balance_plan(sizes);
    for m in plan.iter().filter(|m| m.src == me) {
        ctx.send(
            m.dst,
            Phase::Balance,
            Payload {
                header: vec![],
                ints: selected.indices()[m.start..m.start + m.len].to_vec(),
                reals: selected.values()[m.start..m.start + m.len].to_vec(),
            },
        )?;
    }
    // what stays: my buffer minus every outgoing range
    let total: usize = sizes.iter().sum();
    let offset: usize = sizes[..me].iter().sum();
    let (t_lo, t_hi) = (even_split(total, p, me), even_split(total, p, me + 1));
    let (k_lo, k_hi) = (t_lo.max(offset), t_hi.min(offset + sizes[me]));

    let mut indices = Vec::with_capacity(t_hi - t_lo);
    let mut values = Vec::with_capacity(t_hi - t_lo);
    let incoming: Vec<Move> = plan.iter().copied().filter(|m| m.dst == me).collect();
    let mut kept_done = k_lo >= k_hi;
    for m in &incoming {
        if !kept_done && m.src > me {
            indices.extend_from_slice(&selected.indices()[k_lo - offset..k_hi - offset]);
            values.extend_from_slice(&selected.values()[k_lo - offset..k_hi - offset]);
            kept_done = true;
        }
        let got = ctx.recv(m.src, Phase::Balance)?;
        if got.ints.len() != m.len || got.reals.len() != m.len {
            return Err(Error::Protocol(format!(
                "balance chunk from rank {} has the wrong length",
                m.src
            )));
        }
        indices.extend(got.ints);
        values.extend(got.reals);
    }
    if !kept_done {
        indices.extend_from_slice(&selected.indices()[k_lo - offset..k_hi - offset]);
        values.extend_from_slice(&selected.values()[k_lo - offset..k_hi - offset]);
    }
    SparseGrad::new(n, indices, values)
        .map_err(|e| Error::Protocol(format!("rebalanced selection out of order: {e}")))
}
