use std::cmp::Ordering;

use super::{DenseGrad, SparseGrad};
use crate::error::{Error, Result};

// Larger magnitude first; equal magnitudes go to the smaller index.
fn rank_order(values: &[f64]) -> impl Fn(&u32, &u32) -> Ordering + '_ {
    move |&a, &b| {
        values[b as usize]
            .abs()
            .total_cmp(&values[a as usize].abs())
            .then(a.cmp(&b))
    }
}

/// Exact top-k by magnitude.
///
/// Returns the `k` components with the largest `|value|` (ties go to the
/// smaller index) together with the k-th largest magnitude.
pub fn topk_exact(g: &DenseGrad, k: usize) -> Result<(SparseGrad, f64)> {
    let values = g.values();
    let n = values.len();
    if k < 1 || k > n {
        return Err(Error::invalid(format!(
            "top-k needs 1 <= k <= n, got k = {k}, n = {n}"
        )));
    }
    let mut order: Vec<u32> = (0..n as u32).collect();
    let cmp = rank_order(values);
    if k < n {
        order.select_nth_unstable_by(k - 1, &cmp);
    }
    let mut chosen = order[..k].to_vec();
    let threshold = chosen
        .iter()
        .map(|&i| values[i as usize].abs())
        .fold(f64::INFINITY, f64::min);
    chosen.sort_unstable();
    let picked = chosen.iter().map(|&i| values[i as usize]).collect();
    Ok((
        SparseGrad::from_sorted_unchecked(n, chosen, picked),
        threshold,
    ))
}

/// All components with `|value| >= th`, in index order.
///
/// The count is whatever the threshold yields; a reused threshold may select
/// more or fewer than the k it was computed for.
pub fn select_by_threshold(g: &DenseGrad, th: f64) -> SparseGrad {
    debug_assert!(th >= 0.0);
    SparseGrad::from_sorted_unchecked(
        g.len(),
        g.values()
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() >= th)
            .map(|(i, _)| i as u32)
            .collect(),
        g.values()
            .iter()
            .copied()
            .filter(|v| v.abs() >= th)
            .collect(),
    )
}

/// Top-k of a sparse vector's stored entries, same ordering rules as
/// [`topk_exact`]. Inputs with at most `k` entries come back unchanged.
pub fn topk_sparse(s: &SparseGrad, k: usize) -> SparseGrad {
    if s.nnz() <= k {
        return s.clone();
    }
    let values = s.values();
    let mut order: Vec<u32> = (0..s.nnz() as u32).collect();
    if k > 0 {
        order.select_nth_unstable_by(k - 1, rank_order(values));
    }
    let mut keep = order[..k].to_vec();
    keep.sort_unstable();
    SparseGrad::from_sorted_unchecked(
        s.n(),
        keep.iter().map(|&p| s.indices()[p as usize]).collect(),
        keep.iter().map(|&p| values[p as usize]).collect(),
    )
}

/// The k-th largest magnitude among `values`. When fewer than `k` values are
/// present the smallest magnitude is returned.
pub fn kth_largest_abs(values: &[f64], k: usize) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("threshold of an empty input"));
    }
    if k < 1 {
        return Err(Error::invalid("k must be >= 1"));
    }
    let mut mags: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    if k >= mags.len() {
        return Ok(mags.iter().copied().fold(f64::INFINITY, f64::min));
    }
    let (_, kth, _) = mags.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    Ok(*kth)
}
