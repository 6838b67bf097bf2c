use crate::error::Result;
use crate::sparse::DenseGrad;
use crate::transport::{require_power_of_two, Payload, Phase, WorkerCtx};

/// Rabenseifner allreduce: recursive-halving reduce-scatter followed by a
/// recursive-doubling allgather. Each rank sends `2n(P-1)/P` words when `P`
/// divides `n`.
pub fn dense_allreduce(ctx: &mut WorkerCtx, g: &DenseGrad) -> Result<DenseGrad> {
    let p = ctx.world_size();
    if p == 1 {
        return Ok(g.clone());
    }
    require_power_of_two(p, "dense allreduce")?;
    let me = ctx.rank();
    let n = g.len();
    let mut acc = g.values().to_vec();
    let (mut lo, mut hi) = (0, n);
    let mut ranges = Vec::new();

    let mut mask = p / 2;
    while mask >= 1 {
        let partner = me ^ mask;
        let mid = lo + (hi - lo) / 2;
        let (keep, give) = if me & mask == 0 {
            ((lo, mid), (mid, hi))
        } else {
            ((mid, hi), (lo, mid))
        };
        let theirs = ctx
            .exchange(
                partner,
                Phase::Dense,
                Payload::reals(acc[give.0..give.1].to_vec()),
            )?
            .reals;
        check_len(theirs.len(), keep.1 - keep.0)?;
        for (a, b) in acc[keep.0..keep.1].iter_mut().zip(&theirs) {
            *a += b;
        }
        ranges.push((lo, hi));
        (lo, hi) = keep;
        mask /= 2;
    }

    let mut mask = 1;
    while mask < p {
        let partner = me ^ mask;
        let (plo, phi) = ranges.pop().expect("one range per halving step");
        let theirs = ctx
            .exchange(partner, Phase::Dense, Payload::reals(acc[lo..hi].to_vec()))?
            .reals;
        let (olo, ohi) = if lo == plo { (hi, phi) } else { (plo, lo) };
        check_len(theirs.len(), ohi - olo)?;
        acc[olo..ohi].copy_from_slice(&theirs);
        (lo, hi) = (plo, phi);
        mask <<= 1;
    }
    DenseGrad::new(acc)
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(crate::Error::Protocol(format!(
            "dense segment of {got} words, expected {want}"
        )));
    }
    Ok(())
}
