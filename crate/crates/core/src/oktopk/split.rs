use super::partition::RegionBoundaries;
use crate::error::{Error, Result};
use crate::sparse::{butterfly_sum, select_by_threshold, DenseGrad, SparseGrad};
use crate::transport::{Bucket, Payload, Phase, WorkerCtx};

#[derive(Debug, Clone, PartialEq)]
pub struct SplitOutput {
    /// Sum over all ranks of the selections falling in this rank's region.
    pub region: SparseGrad,
    /// Indices this rank selected locally.
    pub local_indexes: Vec<u32>,
}

/// `(src, dst)` pairs active at each rotation step `s = 1..P`.
pub fn rotation_schedule(world: usize) -> Vec<Vec<(usize, usize)>> {
    (1..world)
        .map(|s| (0..world).map(|i| (i, (i + s) % world)).collect())
        .collect()
}

/// Selects `g` by `local_th` and runs [`split_and_reduce_selected`].
pub fn split_and_reduce(
    ctx: &mut WorkerCtx,
    g: &DenseGrad,
    local_th: f64,
    boundaries: &RegionBoundaries,
    bucket: Bucket,
) -> Result<SplitOutput> {
    split_and_reduce_selected(ctx, &select_by_threshold(g, local_th), boundaries, bucket)
}

/// Sends each region's slice of `selected` to the region owner and sums
/// what arrives for this rank's own region.
///
/// At step `s` rank `i` sends to `(i + s) mod P` and receives from
/// `(i - s) mod P`. Steps are grouped into buckets; all sends of a bucket go
/// out before its receives. Empty slices are still sent.
pub fn split_and_reduce_selected(
    ctx: &mut WorkerCtx,
    selected: &SparseGrad,
    boundaries: &RegionBoundaries,
    bucket: Bucket,
) -> Result<SplitOutput> {
    let p = ctx.world_size();
    let me = ctx.rank();
    let n = selected.n();
    if boundaries.world_size() != p || boundaries.n() != n {
        return Err(Error::invalid(format!(
            "boundaries for P = {}, n = {} used with P = {p}, n = {n}",
            boundaries.world_size(),
            boundaries.n()
        )));
    }
    let mut slices: Vec<Option<SparseGrad>> = vec![None; p];
    let (lo, hi) = boundaries.region(me);
    slices[me] = Some(selected.restrict(lo, hi));

    let steps: Vec<usize> = (1..p).collect();
    for chunk in steps.chunks(bucket.size()) {
        for &s in chunk {
            let dst = (me + s) % p;
            let (dlo, dhi) = boundaries.region(dst);
            let part = selected.restrict(dlo, dhi);
            let (_, ints, reals) = part.into_parts();
            ctx.send(
                dst,
                Phase::Split,
                Payload {
                    header: vec![],
                    ints,
                    reals,
                },
            )?;
        }
        for &s in chunk {
            let src = (me + p - s) % p;
            let got = ctx.recv(src, Phase::Split)?;
            let part = SparseGrad::new(n, got.ints, got.reals)
                .map_err(|e| Error::Protocol(format!("bad slice from rank {src}: {e}")))?;
            if part
                .indices()
                .iter()
                .any(|&i| (i as usize) < lo || (i as usize) >= hi)
            {
                return Err(Error::Protocol(format!(
                    "slice from rank {src} leaves region {me}"
                )));
            }
            slices[src] = Some(part);
        }
    }
    let slices: Vec<SparseGrad> = slices
        .into_iter()
        .map(|s| s.expect("all slices received"))
        .collect();
    Ok(SplitOutput {
        region: butterfly_sum(n, &slices)?,
        local_indexes: selected.indices().to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{run_inproc, InProcOptions};
    use std::collections::HashSet;

    #[test]
    fn rotation_never_repeats_a_destination_within_a_step() {
        for p in 1..=9 {
            let sched = rotation_schedule(p);
            assert_eq!(sched.len(), p.saturating_sub(1));
            for (s, step) in sched.iter().enumerate() {
                let dsts: HashSet<usize> = step.iter().map(|e| e.1).collect();
                assert_eq!(dsts.len(), p);
                assert!(step.iter().all(|&(i, d)| d == (i + s + 1) % p && d != i));
            }
        }
    }

    #[test]
    fn two_rank_hand_trace() {
        let b = RegionBoundaries::new(vec![0, 4, 8], 8).unwrap();
        let (out, ledger) = run_inproc(2, InProcOptions::default(), |ctx| {
            let sel = if ctx.rank() == 0 {
                SparseGrad::from_pairs(8, [(0, 5.0), (6, 2.0)])?
            } else {
                SparseGrad::from_pairs(8, [(1, 3.0), (4, 4.0)])?
            };
            split_and_reduce_selected(ctx, &sel, &b, Bucket::new(4, 2)?)
        })
        .unwrap();
        assert_eq!(
            out[0].region.iter().collect::<Vec<_>>(),
            vec![(0, 5.0), (1, 3.0)]
        );
        assert_eq!(
            out[1].region.iter().collect::<Vec<_>>(),
            vec![(4, 4.0), (6, 2.0)]
        );
        assert_eq!(out[0].local_indexes, vec![0, 6]);
        assert_eq!(ledger.get(0, Phase::Split).words_sent, 2);
        assert_eq!(ledger.get(0, Phase::Split).msgs_sent, 1);
    }

    #[test]
    fn every_bucket_size_sends_p_minus_one_messages() {
        let p = 8;
        let n = 64;
        let b = RegionBoundaries::equal_width(n, p);
        for bucket in [1, 3, 7, 50] {
            let (out, ledger) = run_inproc(p, InProcOptions::default(), |ctx| {
                let sel = SparseGrad::from_pairs(n, [(3 * ctx.rank() as u32, 1.0)])?;
                split_and_reduce_selected(ctx, &sel, &b, Bucket::new(bucket, p)?)
            })
            .unwrap();
            for r in 0..p {
                assert_eq!(ledger.get(r, Phase::Split).msgs_sent, (p - 1) as u64);
                assert_eq!(ledger.get(r, Phase::Split).msgs_recv, (p - 1) as u64);
            }
            let total: usize = out.iter().map(|o| o.region.nnz()).sum();
            assert_eq!(total, p);
        }
    }

    #[test]
    fn everything_in_region_zero_overloads_rank_zero() {
        let (p, n, k) = (4, 400, 10);
        let b = RegionBoundaries::equal_width(n, p);
        let (_, ledger) = run_inproc(p, InProcOptions::default(), |ctx| {
            let sel =
                SparseGrad::from_pairs(n, (0..k as u32).map(|j| (j * 9 + ctx.rank() as u32, 1.0)))?;
            split_and_reduce_selected(ctx, &sel, &b, Bucket::new(4, p)?)
        })
        .unwrap();
        assert_eq!(
            ledger.get(0, Phase::Split).words_recv,
            (2 * k * (p - 1)) as u64
        );
        assert_eq!(ledger.get(1, Phase::Split).words_recv, 0);
    }
}
