use super::topka::gather_and_sum;
use crate::error::Result;
use crate::sparse::{gaussian_threshold, select_by_threshold, DenseGrad, SparseGrad};
use crate::transport::WorkerCtx;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussiankOptions {
    /// Lower the threshold until more than `3k/4` values are selected.
    pub rescale: bool,
    /// Multiplier applied to the threshold on each rescaling step.
    pub factor: f64,
}

impl Default for GaussiankOptions {
    fn default() -> Self {
        Self {
            rescale: true,
            factor: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussiankSelection {
    pub selected: SparseGrad,
    pub threshold: f64,
    pub rescale_steps: usize,
}

/// Local Gaussiank selection, with the optional rescaling loop.
pub fn gaussiank_select(
    g: &DenseGrad,
    k: usize,
    opts: GaussiankOptions,
) -> Result<GaussiankSelection> {
    let mut threshold = gaussian_threshold(g, k)?;
    let mut selected = select_by_threshold(g, threshold);
    let mut rescale_steps = 0;
    if opts.rescale {
        while 4 * selected.nnz() <= 3 * k {
            threshold *= opts.factor;
            if threshold < f64::MIN_POSITIVE {
                threshold = 0.0;
            }
            selected = select_by_threshold(g, threshold);
            rescale_steps += 1;
            if threshold == 0.0 {
                break;
            }
        }
    }
    Ok(GaussiankSelection {
        selected,
        threshold,
        rescale_steps,
    })
}

/// Gaussiank: threshold-estimated local selection, then the TopkA transport
/// path on the variable-size selections.
pub fn gaussiank_allreduce(
    ctx: &mut WorkerCtx,
    g: &DenseGrad,
    k: usize,
    opts: GaussiankOptions,
) -> Result<(SparseGrad, GaussiankSelection)> {
    let sel = gaussiank_select(g, k, opts)?;
    if ctx.world_size() == 1 {
        return Ok((sel.selected.clone(), sel));
    }
    let sum = gather_and_sum(ctx, &sel.selected)?;
    Ok((sum, sel))
}
