use crate::error::{Error, Result};
use crate::sparse::{select_by_threshold, DenseGrad};
use crate::transport::{small_allreduce_avg, WorkerCtx};

/// `P + 1` monotone cut points; region `r` is `[cuts[r], cuts[r+1])`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionBoundaries {
    cuts: Vec<usize>,
}

impl RegionBoundaries {
    pub fn new(cuts: Vec<usize>, n: usize) -> Result<Self> {
        if cuts.len() < 2 {
            return Err(Error::invalid("need at least two cut points"));
        }
        if cuts[0] != 0 || *cuts.last().unwrap() != n {
            return Err(Error::invalid(format!("cuts must run from 0 to {n}")));
        }
        if cuts.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("cuts must be non-decreasing"));
        }
        Ok(Self { cuts })
    }

    pub fn equal_width(n: usize, world: usize) -> Self {
        Self {
            cuts: (0..=world).map(|r| r * n / world).collect(),
        }
    }

    pub fn cuts(&self) -> &[usize] {
        &self.cuts
    }

    pub fn world_size(&self) -> usize {
        self.cuts.len() - 1
    }

    pub fn n(&self) -> usize {
        *self.cuts.last().unwrap()
    }

    pub fn region(&self, r: usize) -> (usize, usize) {
        (self.cuts[r], self.cuts[r + 1])
    }

    pub fn owner_of(&self, index: usize) -> usize {
        // last r with cuts[r] <= index, skipping empty regions
        self.cuts[1..].partition_point(|&c| c <= index)
    }
}

/// Start of part `r` when `m` items are split as evenly as possible into
/// `parts` consecutive parts.
pub(crate) fn even_split(m: usize, parts: usize, r: usize) -> usize {
    r * (m / parts) + r.min(m % parts)
}

/// This rank's proposal: cut so that each region holds `floor(m/P)` or
/// `ceil(m/P)` of the `m` sorted selected coordinates.
pub fn local_cuts(selected: &[u32], n: usize, world: usize) -> Vec<usize> {
    let m = selected.len();
    if m == 0 {
        return RegionBoundaries::equal_width(n, world).cuts;
    }
    let mut cuts: Vec<usize> = (0..=world)
        .map(|r| {
            let c = even_split(m, world, r);
            if c < m {
                selected[c] as usize
            } else {
                selected[m - 1] as usize + 1
            }
        })
        .collect();
    cuts[0] = 0;
    cuts[world] = n;
    cuts
}

/// Rounds averaged cut points and restores the boundary invariants.
pub fn consensus_cuts(avg: &[f64], n: usize) -> RegionBoundaries {
    let world = avg.len() - 1;
    let mut cuts: Vec<usize> = avg
        .iter()
        .map(|c| (c.round().max(0.0) as usize).min(n))
        .collect();
    cuts[0] = 0;
    cuts[world] = n;
    for r in 1..=world {
        cuts[r] = cuts[r].max(cuts[r - 1]);
    }
    RegionBoundaries { cuts }
}

/// Balanced boundaries from this rank's selected coordinates, agreed on by
/// averaging every rank's proposal.
pub fn repartition_from_indices(
    ctx: &mut WorkerCtx,
    selected: &[u32],
    n: usize,
) -> Result<RegionBoundaries> {
    let world = ctx.world_size();
    let proposal: Vec<f64> = local_cuts(selected, n, world)
        .into_iter()
        .map(|c| c as f64)
        .collect();
    let avg = small_allreduce_avg(ctx, &proposal)?;
    Ok(consensus_cuts(&avg, n))
}

/// Selects `g` by `local_th` and repartitions on the selected coordinates.
pub fn space_repartition(
    ctx: &mut WorkerCtx,
    g: &DenseGrad,
    local_th: f64,
) -> Result<RegionBoundaries> {
    let sel = select_by_threshold(g, local_th);
    repartition_from_indices(ctx, sel.indices(), g.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{run_inproc, InProcOptions, Phase};

    #[test]
    fn prefix_count_by_hand() {
        let sel = [0, 1, 2, 3, 8, 9, 10, 11];
        assert_eq!(local_cuts(&sel, 16, 2), vec![0, 8, 16]);
        // 5 over 2 regions: 3 + 2
        assert_eq!(local_cuts(&[1, 2, 3, 10, 12], 16, 2), vec![0, 10, 16]);
        assert_eq!(local_cuts(&[], 10, 4), vec![0, 2, 5, 7, 10]);
        // fewer selected than regions: trailing regions start past the last one
        assert_eq!(local_cuts(&[5], 16, 4), vec![0, 6, 6, 6, 16]);
    }

    #[test]
    fn consensus_rounds_and_clamps() {
        let b = consensus_cuts(&[0.2, 5.5, 5.2, 20.0], 16);
        assert_eq!(b.cuts(), &[0, 6, 6, 16]);
        assert_eq!(b.owner_of(0), 0);
        assert_eq!(b.owner_of(5), 0);
        assert_eq!(b.owner_of(6), 2);
        assert_eq!(b.owner_of(15), 2);
    }

    #[test]
    fn collective_repartition() {
        let (out, ledger) = run_inproc(2, InProcOptions::default(), |ctx| {
            repartition_from_indices(ctx, &[0, 1, 2, 3, 8, 9, 10, 11], 16)
        })
        .unwrap();
        assert_eq!(out[0].cuts(), &[0, 8, 16]);
        assert_eq!(out[0], out[1]);
        assert_eq!(ledger.get(0, Phase::Consensus).words_sent, 3);
    }

    #[test]
    fn crowded_low_coordinates_shrink_region_zero() {
        let (n, p) = (1000, 4);
        let (out, _) = run_inproc(p, InProcOptions::default(), |ctx| {
            let r = ctx.rank() as u32;
            let sel: Vec<u32> = (0..40).map(|j| j * 6 + r).collect();
            repartition_from_indices(ctx, &sel, n)
        })
        .unwrap();
        let max_sel = 39 * 6 + 3;
        assert!(out[0].cuts()[1] <= max_sel + 1);
        assert!(out.iter().all(|b| b == &out[0]));
    }

    #[test]
    fn validation() {
        assert!(RegionBoundaries::new(vec![0, 5, 3, 10], 10).is_err());
        assert!(RegionBoundaries::new(vec![1, 10], 10).is_err());
        assert!(RegionBoundaries::new(vec![0, 10], 10).is_ok());
    }
}
