//! TopkDSA: sparse reduce-scatter by recursive halving, then an allgather
//! of the owned segments. Fill-in grows the working set as contributions
//! meet; a segment whose coordinate list would cost at least as much as the
//! dense segment (`2 * nnz >= len`) is shipped and kept dense from then on.

use super::sparse_from_parts;
use crate::error::{Error, Result};
use crate::sparse::{merge_two, topk_exact, DenseGrad, SparseGrad};
use crate::transport::{allgather_blocks, require_power_of_two, Block, Payload, Phase, WorkerCtx};

#[derive(Debug, Clone, PartialEq)]
pub struct TopkDsaOutput {
    pub sum: SparseGrad,
    /// Whether this rank's owned segment went dense during the reduction.
    pub switched_dense: bool,
}

impl TopkDsaOutput {
    pub fn density(&self) -> f64 {
        self.sum.density()
    }
}

/// Coordinate range owned by `rank` after recursive halving over `[0, n)`.
pub fn segment_range(rank: usize, world: usize, n: usize) -> (usize, usize) {
    let (mut lo, mut hi) = (0, n);
    let mut mask = world / 2;
    while mask >= 1 {
        let mid = lo + (hi - lo) / 2;
        if rank & mask == 0 {
            hi = mid;
        } else {
            lo = mid;
        }
        mask /= 2;
    }
    (lo, hi)
}

#[derive(Debug, Clone)]
enum Segment {
    Sparse(SparseGrad),
    Dense { lo: usize, values: Vec<f64> },
}

const SPARSE: u32 = 0;
const DENSE: u32 = 1;

fn prefers_dense(nnz: usize, len: usize) -> bool {
    len > 0 && 2 * nnz >= len
}

impl Segment {
    fn restrict(&self, lo: usize, hi: usize) -> Segment {
        match self {
            Segment::Sparse(s) => Segment::Sparse(s.restrict(lo, hi)),
            Segment::Dense { lo: base, values } => Segment::Dense {
                lo,
                values: values[lo - base..hi - base].to_vec(),
            },
        }
    }

    fn densify(&self, lo: usize, hi: usize) -> Segment {
        match self {
            Segment::Dense { .. } => self.clone(),
            Segment::Sparse(s) => {
                let mut values = vec![0.0; hi - lo];
                for (i, v) in s.iter() {
                    values[i as usize - lo] = v;
                }
                Segment::Dense { lo, values }
            }
        }
    }

    /// Wire form for the range `[lo, hi)`, whichever representation is
    /// smaller.
    fn encode(&self, lo: usize, hi: usize) -> (u32, Vec<u32>, Vec<f64>) {
        match self {
            Segment::Sparse(s) if !prefers_dense(s.nnz(), hi - lo) => {
                (SPARSE, s.indices().to_vec(), s.values().to_vec())
            }
            other => match other.densify(lo, hi) {
                Segment::Dense { values, .. } => (DENSE, vec![], values),
                Segment::Sparse(_) => unreachable!(),
            },
        }
    }

    fn decode(
        n: usize,
        lo: usize,
        hi: usize,
        kind: u32,
        ints: Vec<u32>,
        reals: Vec<f64>,
    ) -> Result<Segment> {
        match kind {
            SPARSE => Ok(Segment::Sparse(sparse_from_parts(n, ints, reals)?)),
            DENSE if reals.len() == hi - lo && ints.is_empty() => {
                Ok(Segment::Dense { lo, values: reals })
            }
            _ => Err(Error::Protocol("malformed TopkDSA segment".into())),
        }
    }

    fn add(&self, other: &Segment, lo: usize, hi: usize) -> Segment {
        match (self, other) {
            (Segment::Sparse(a), Segment::Sparse(b)) => Segment::Sparse(merge_two(a, b)),
            _ => {
                let Segment::Dense { values: mut a, .. } = self.densify(lo, hi) else {
                    unreachable!()
                };
                let Segment::Dense { values: b, .. } = other.densify(lo, hi) else {
                    unreachable!()
                };
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                Segment::Dense { lo, values: a }
            }
        }
    }

    fn into_sparse(self, n: usize) -> SparseGrad {
        match self {
            Segment::Sparse(s) => s,
            Segment::Dense { lo, values } => {
                let (indices, vals) = values
                    .iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, v)| ((lo + j) as u32, *v))
                    .unzip();
                SparseGrad::from_sorted_unchecked(n, indices, vals)
            }
        }
    }
}

pub fn topkdsa_allreduce(ctx: &mut WorkerCtx, g: &DenseGrad, k: usize) -> Result<TopkDsaOutput> {
    let (local, _) = topk_exact(g, k)?;
    let p = ctx.world_size();
    if p == 1 {
        return Ok(TopkDsaOutput {
            sum: local,
            switched_dense: false,
        });
    }
    require_power_of_two(p, "TopkDSA")?;
    let me = ctx.rank();
    let n = g.len();

    let mut cur = Segment::Sparse(local);
    let (mut lo, mut hi) = (0, n);
    let mut mask = p / 2;
    while mask >= 1 {
        let partner = me ^ mask;
        let mid = lo + (hi - lo) / 2;
        let (keep, give) = if me & mask == 0 {
            ((lo, mid), (mid, hi))
        } else {
            ((mid, hi), (lo, mid))
        };
        let (kind, ints, reals) = cur.restrict(give.0, give.1).encode(give.0, give.1);
        let got = ctx.exchange(
            partner,
            Phase::Split,
            Payload {
                header: vec![kind],
                ints,
                reals,
            },
        )?;
        let kind = *got
            .header
            .first()
            .ok_or_else(|| Error::Protocol("missing segment kind".into()))?;
        let theirs = Segment::decode(n, keep.0, keep.1, kind, got.ints, got.reals)?;
        cur = cur.restrict(keep.0, keep.1).add(&theirs, keep.0, keep.1);
        (lo, hi) = keep;
        if let Segment::Sparse(s) = &cur {
            if prefers_dense(s.nnz(), hi - lo) {
                cur = cur.densify(lo, hi);
            }
        }
        mask /= 2;
    }

    let switched_dense = matches!(cur, Segment::Dense { .. });
    let (kind, ints, reals) = cur.encode(lo, hi);
    let blocks = allgather_blocks(
        ctx,
        Block {
            meta: kind,
            ints,
            reals,
        },
        Phase::Allgatherv,
    )?;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for (owner, b) in blocks.into_iter().enumerate() {
        let (olo, ohi) = segment_range(owner, p, n);
        let piece = Segment::decode(n, olo, ohi, b.meta, b.ints, b.reals)?.into_sparse(n);
        if piece
            .indices()
            .iter()
            .any(|&i| (i as usize) < olo || (i as usize) >= ohi)
        {
            return Err(Error::Protocol(format!(
                "segment from rank {owner} leaves its range"
            )));
        }
        let (_, i, v) = piece.into_parts();
        indices.extend(i);
        values.extend(v);
    }
    Ok(TopkDsaOutput {
        sum: SparseGrad::new(n, indices, values)?,
        switched_dense,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sparse::butterfly_sum;
    use crate::transport::{run_inproc, InProcOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn segments_tile_the_space_in_rank_order() {
        for (p, n) in [(2, 9), (4, 1000), (8, 13)] {
            let mut next = 0;
            for r in 0..p {
                let (lo, hi) = segment_range(r, p, n);
                assert_eq!(lo, next);
                next = hi;
            }
            assert_eq!(next, n);
        }
    }

    /// Rank r holds k values at coordinates r, r+P, r+2P, ...: no overlap.
    fn disjoint(rank: usize, p: usize, n: usize, k: usize) -> DenseGrad {
        let mut rng = ChaCha8Rng::seed_from_u64(rank as u64);
        let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(-0.01..0.01)).collect();
        for j in 0..k {
            v[rank + j * p * (n / (p * k))] = 1.0 + rng.random_range(0.0..1.0);
        }
        DenseGrad::new(v).unwrap()
    }

    #[test]
    fn disjoint_supports_fill_in_to_pk() {
        let (p, n, k) = (4, 1000, 10);
        let (out, _) = run_inproc(p, InProcOptions::default(), |ctx| {
            topkdsa_allreduce(ctx, &disjoint(ctx.rank(), p, n, k), k)
        })
        .unwrap();
        for o in &out {
            assert_eq!(o.sum.nnz(), 40);
            assert_eq!(o.density(), 0.04);
            assert_eq!(o.sum, out[0].sum);
        }
    }

    #[test]
    fn shared_supports_stay_at_k() {
        let (p, n, k) = (4, 800, 8);
        let mut base = vec![0.0; n];
        for j in 0..k {
            base[j * 100 + 7] = 2.0 + j as f64;
        }
        let (out, ledger) = run_inproc(p, InProcOptions::default(), |ctx| {
            let mut v = base.clone();
            v[799] = 0.001 * ctx.rank() as f64;
            topkdsa_allreduce(ctx, &DenseGrad::new(v)?, k)
        })
        .unwrap();
        assert_eq!(out[0].sum.nnz(), k);
        // uniformly spread, fully overlapping: 4k(P-1)/P words
        for r in 0..p {
            let sent = ledger.get(r, Phase::Split).words_sent
                + ledger.get(r, Phase::Allgatherv).words_sent;
            assert_eq!(sent, (4 * k * (p - 1) / p) as u64);
        }
    }

    #[test]
    fn matches_butterfly_oracle_including_dense_switch() {
        // k/n large enough that the working sets go dense
        for (p, n, k) in [(2, 64, 20), (4, 128, 40), (8, 256, 40)] {
            let inputs: Vec<DenseGrad> = (0..p)
                .map(|r| {
                    let mut rng = ChaCha8Rng::seed_from_u64(31 * r as u64 + n as u64);
                    DenseGrad::new((0..n).map(|_| rng.random_range(-8i32..=8) as f64).collect())
                        .unwrap()
                })
                .collect();
            let (out, _) = run_inproc(p, InProcOptions::default(), |ctx| {
                topkdsa_allreduce(ctx, &inputs[ctx.rank()], k)
            })
            .unwrap();
            let locals: Vec<SparseGrad> =
                inputs.iter().map(|g| topk_exact(g, k).unwrap().0).collect();
            let oracle = butterfly_sum(n, &locals).unwrap().to_dense();
            assert!(
                out.iter().any(|o| o.switched_dense),
                "p={p}: expected a dense switch"
            );
            for o in &out {
                assert_eq!(o.sum.to_dense(), oracle);
            }
        }
    }

    #[test]
    fn single_rank_is_local_topk() {
        let g = DenseGrad::new(vec![0.5, -2.0, 0.1, 1.0]).unwrap();
        let (out, ledger) = run_inproc(1, InProcOptions::default(), |ctx| {
            topkdsa_allreduce(ctx, &g, 2)
        })
        .unwrap();
        assert_eq!(out[0].sum.indices(), &[1, 3]);
        assert_eq!(ledger.get(0, Phase::Split).words_sent, 0);
    }
}
