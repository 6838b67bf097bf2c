//! Small collectives built from point-to-point messages: recursive-doubling
//! allreduce (used for boundary consensus) and recursive-doubling allgather
//! of variable-size blocks.

use super::{Payload, Phase, WorkerCtx};
use crate::error::{Error, Result};

pub fn is_power_of_two(p: usize) -> bool {
    p.is_power_of_two()
}

pub fn require_power_of_two(p: usize, what: &str) -> Result<()> {
    if is_power_of_two(p) {
        Ok(())
    } else {
        Err(Error::UnsupportedConfig(format!(
            "{what} needs a power-of-two number of workers, got {p}"
        )))
    }
}

fn add_checked(acc: &mut [f64], theirs: &[f64], peer: usize) -> Result<()> {
    if theirs.len() != acc.len() {
        return Err(Error::Protocol(format!(
            "allreduce length mismatch: local {} vs {} from rank {peer}",
            acc.len(),
            theirs.len()
        )));
    }
    for (a, b) in acc.iter_mut().zip(theirs) {
        *a += b;
    }
    Ok(())
}

/// Element-wise sum over all ranks by recursive doubling.
///
/// Works for any world size: ranks beyond the largest power of two first
/// fold their vector into a partner and get the result back at the end.
/// Every rank ends with bitwise-identical output.
pub fn allreduce_sum(ctx: &mut WorkerCtx, vec: &[f64], phase: Phase) -> Result<Vec<f64>> {
    let p = ctx.world_size();
    let me = ctx.rank();
    let mut acc = vec.to_vec();
    if p == 1 {
        return Ok(acc);
    }
    let p2 = 1usize << (usize::BITS - 1 - p.leading_zeros());
    let extra = p - p2;

    if me >= p2 {
        ctx.send(me - p2, phase, Payload::reals(acc))?;
        let out = ctx.recv(me - p2, phase)?.reals;
        if out.len() != vec.len() {
            return Err(Error::Protocol("allreduce result length mismatch".into()));
        }
        return Ok(out);
    }
    if me < extra {
        let theirs = ctx.recv(me + p2, phase)?.reals;
        add_checked(&mut acc, &theirs, me + p2)?;
    }
    let mut mask = 1;
    while mask < p2 {
        let partner = me ^ mask;
        let theirs = ctx
            .exchange(partner, phase, Payload::reals(acc.clone()))?
            .reals;
        add_checked(&mut acc, &theirs, partner)?;
        mask <<= 1;
    }
    if me < extra {
        ctx.send(me + p2, phase, Payload::reals(acc.clone()))?;
    }
    Ok(acc)
}

/// Element-wise mean over all ranks, tagged as consensus traffic.
pub fn small_allreduce_avg(ctx: &mut WorkerCtx, vec: &[f64]) -> Result<Vec<f64>> {
    let p = ctx.world_size() as f64;
    let sum = allreduce_sum(ctx, vec, Phase::Consensus)?;
    Ok(sum.into_iter().map(|s| s / p).collect())
}

/// One rank's contribution to [`allgather_blocks`]. `meta` travels in the
/// uncounted header.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Block {
    pub meta: u32,
    pub ints: Vec<u32>,
    pub reals: Vec<f64>,
}

impl Block {
    pub fn words(&self) -> usize {
        self.ints.len() + self.reals.len()
    }
}

fn pack(blocks: &[(usize, &Block)]) -> Payload {
    let mut p = Payload::default();
    p.header.push(blocks.len() as u32);
    for (owner, b) in blocks {
        p.header.extend([
            *owner as u32,
            b.meta,
            b.ints.len() as u32,
            b.reals.len() as u32,
        ]);
        p.ints.extend_from_slice(&b.ints);
        p.reals.extend_from_slice(&b.reals);
    }
    p
}

fn unpack(p: Payload) -> Result<Vec<(usize, Block)>> {
    let bad = || Error::Protocol("malformed block header".into());
    let (&count, rest) = p.header.split_first().ok_or_else(bad)?;
    if rest.len() != 4 * count as usize {
        return Err(bad());
    }
    let (mut i_at, mut r_at) = (0, 0);
    let mut out = Vec::with_capacity(count as usize);
    for h in rest.chunks_exact(4) {
        let (ni, nr) = (h[2] as usize, h[3] as usize);
        if i_at + ni > p.ints.len() || r_at + nr > p.reals.len() {
            return Err(bad());
        }
        out.push((
            h[0] as usize,
            Block {
                meta: h[1],
                ints: p.ints[i_at..i_at + ni].to_vec(),
                reals: p.reals[r_at..r_at + nr].to_vec(),
            },
        ));
        i_at += ni;
        r_at += nr;
    }
    if i_at != p.ints.len() || r_at != p.reals.len() {
        return Err(bad());
    }
    Ok(out)
}

/// Recursive-doubling allgather of variable-size blocks. Returns every
/// rank's block in rank order. Requires a power-of-two world.
///
/// A rank sends everything it holds at each of the `log2 P` steps, so its
/// total sent volume is the sum of all other ranks' block sizes.
pub fn allgather_blocks(ctx: &mut WorkerCtx, mine: Block, phase: Phase) -> Result<Vec<Block>> {
    let p = ctx.world_size();
    require_power_of_two(p, "recursive-doubling allgather")?;
    let me = ctx.rank();
    let mut held: Vec<Option<Block>> = vec![None; p];
    held[me] = Some(mine);
    let mut mask = 1;
    while mask < p {
        let partner = me ^ mask;
        let outgoing: Vec<(usize, &Block)> = held
            .iter()
            .enumerate()
            .filter_map(|(o, b)| b.as_ref().map(|b| (o, b)))
            .collect();
        let payload = pack(&outgoing);
        let received = unpack(ctx.exchange(partner, phase, payload)?)?;
        for (owner, block) in received {
            if owner >= p || held[owner].is_some() {
                return Err(Error::Protocol(format!(
                    "allgather received duplicate or invalid block for rank {owner}"
                )));
            }
            held[owner] = Some(block);
        }
        mask <<= 1;
    }
    held.into_iter()
        .enumerate()
        .map(|(o, b)| b.ok_or_else(|| Error::Protocol(format!("allgather missing block {o}"))))
        .collect()
}
