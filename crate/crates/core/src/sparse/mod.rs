//! Dense and COO-sparse gradient representations, top-k selection and the
//! reductions shared by every collective.

mod gaussian;
mod select;
pub mod wire;

pub use gaussian::{gaussian_threshold, inverse_normal_cdf, GaussianFit};
pub use select::{kth_largest_abs, select_by_threshold, topk_exact, topk_sparse};
pub use wire::{wire_decode, wire_encode};

use crate::error::{Error, Result};

/// A dense gradient of `n` finite components.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    values: Vec<f64>,
}

impl DenseGrad {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("dense gradient must have n >= 1"));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient component at {pos}"
            )));
        }
        Ok(Self { values })
    }

    pub fn zeros(n: usize) -> Self {
        assert!(n > 0, "dense gradient must have n >= 1");
        Self {
            values: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl AsRef<[f64]> for DenseGrad {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

/// A sparse gradient in coordinate format: strictly increasing indices in
/// `[0, n)` paired with values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseGrad {
    n: usize,
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseGrad {
    pub fn new(n: usize, indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::invalid(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if n > u32::MAX as usize + 1 {
            return Err(Error::invalid(format!(
                "n = {n} exceeds 32-bit index range"
            )));
        }
        for w in indices.windows(2) {
            if w[0] >= w[1] {
                return Err(Error::invalid(format!(
                    "indices not strictly increasing at {} -> {}",
                    w[0], w[1]
                )));
            }
        }
        if let Some(&last) = indices.last() {
            if last as usize >= n {
                return Err(Error::invalid(format!(
                    "index {last} out of range for n = {n}"
                )));
            }
        }
        Ok(Self { n, indices, values })
    }

    pub fn empty(n: usize) -> Self {
        Self {
            n,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Builds from `(index, value)` pairs in any order. Duplicate indices are
    /// rejected.
    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (u32, f64)>) -> Result<Self> {
        let mut pairs: Vec<(u32, f64)> = pairs.into_iter().collect();
        pairs.sort_by_key(|p| p.0);
        let (indices, values) = pairs.into_iter().unzip();
        Self::new(n, indices, values)
    }

    /// Keeps the nonzero components of a dense vector.
    pub fn from_dense_nonzero(values: &[f64]) -> Self {
        let mut out = Self::empty(values.len());
        for (i, &v) in values.iter().enumerate() {
            if v != 0.0 {
                out.indices.push(i as u32);
                out.values.push(v);
            }
        }
        out
    }

    pub(crate) fn from_sorted_unchecked(n: usize, indices: Vec<u32>, values: Vec<f64>) -> Self {
        debug_assert_eq!(indices.len(), values.len());
        debug_assert!(indices.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(indices.last().is_none_or(|&i| (i as usize) < n));
        Self { n, indices, values }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn density(&self) -> f64 {
        self.nnz() as f64 / self.n as f64
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.indices
            .iter()
            .copied()
            .zip(self.values.iter().copied())
    }

    pub fn get(&self, index: u32) -> Option<f64> {
        self.indices
            .binary_search(&index)
            .ok()
            .map(|pos| self.values[pos])
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for (i, v) in self.iter() {
            out[i as usize] = v;
        }
        out
    }

    /// Entries whose index falls in `[lo, hi)`.
    pub fn restrict(&self, lo: usize, hi: usize) -> SparseGrad {
        let start = self.indices.partition_point(|&i| (i as usize) < lo);
        let end = self.indices.partition_point(|&i| (i as usize) < hi);
        Self {
            n: self.n,
            indices: self.indices[start..end].to_vec(),
            values: self.values[start..end].to_vec(),
        }
    }

    /// Entries with `|value| >= th`.
    pub fn filter_by_threshold(&self, th: f64) -> SparseGrad {
        let mut out = Self::empty(self.n);
        for (i, v) in self.iter() {
            if v.abs() >= th {
                out.indices.push(i);
                out.values.push(v);
            }
        }
        out
    }

    pub fn into_parts(self) -> (usize, Vec<u32>, Vec<f64>) {
        (self.n, self.indices, self.values)
    }
}

/// Index-wise sum of sparse parts.
///
/// For every index the contributions are added in part order, so the result
/// is a pure function of the input order. Indices whose contributions cancel
/// stay present with value zero.
pub fn sparse_sum(n: usize, parts: &[SparseGrad]) -> Result<SparseGrad> {
    if let Some(bad) = parts.iter().find(|p| p.n != n) {
        return Err(Error::invalid(format!(
            "sparse_sum over n = {n} got a part with n = {}",
            bad.n
        )));
    }
    match parts {
        [] => return Ok(SparseGrad::empty(n)),
        [only] => return Ok(only.clone()),
        [a, b] => return Ok(merge_two(a, b)),
        _ => {}
    }
    let mut entries: Vec<(u32, usize, f64)> = parts
        .iter()
        .enumerate()
        .flat_map(|(p, part)| part.iter().map(move |(i, v)| (i, p, v)))
        .collect();
    entries.sort_unstable_by_key(|e| (e.0, e.1));

    let mut indices = Vec::with_capacity(entries.len());
    let mut values: Vec<f64> = Vec::with_capacity(entries.len());
    for (i, _, v) in entries {
        if indices.last() == Some(&i) {
            *values.last_mut().unwrap() += v;
        } else {
            indices.push(i);
            values.push(v);
        }
    }
    Ok(SparseGrad::from_sorted_unchecked(n, indices, values))
}

pub(crate) fn merge_two(a: &SparseGrad, b: &SparseGrad) -> SparseGrad {
    let mut indices = Vec::with_capacity(a.nnz() + b.nnz());
    let mut values = Vec::with_capacity(a.nnz() + b.nnz());
    let (mut x, mut y) = (0, 0);
    while x < a.nnz() && y < b.nnz() {
        let (ia, ib) = (a.indices[x], b.indices[y]);
        if ia < ib {
            indices.push(ia);
            values.push(a.values[x]);
            x += 1;
        } else if ib < ia {
            indices.push(ib);
            values.push(b.values[y]);
            y += 1;
        } else {
            indices.push(ia);
            values.push(a.values[x] + b.values[y]);
            x += 1;
            y += 1;
        }
    }
    indices.extend_from_slice(&a.indices[x..]);
    values.extend_from_slice(&a.values[x..]);
    indices.extend_from_slice(&b.indices[y..]);
    values.extend_from_slice(&b.values[y..]);
    SparseGrad::from_sorted_unchecked(a.n, indices, values)
}

/// Sums per-rank parts in butterfly order: part `i` is first combined with
/// part `i + len/2`, then the halves are folded again until one remains.
///
/// This is exactly the order in which recursive halving combines
/// contributions, so every collective that reduces through this function
/// produces the same bits as the dense reduce-scatter.
pub fn butterfly_sum(n: usize, parts: &[SparseGrad]) -> Result<SparseGrad> {
    if let Some(bad) = parts.iter().find(|p| p.n != n) {
        return Err(Error::invalid(format!(
            "butterfly_sum over n = {n} got a part with n = {}",
            bad.n
        )));
    }
    if parts.is_empty() {
        return Ok(SparseGrad::empty(n));
    }
    let mut level: Vec<SparseGrad> = parts.to_vec();
    while level.len() > 1 {
        let half = level.len().div_ceil(2);
        let next = (0..half)
            .map(|i| match level.get(i + half) {
                Some(hi) => merge_two(&level[i], hi),
                None => level[i].clone(),
            })
            .collect();
        level = next;
    }
    Ok(level.pop().unwrap())
}

/// Dense counterpart of [`butterfly_sum`].
pub fn butterfly_sum_dense(parts: &[&[f64]]) -> Vec<f64> {
    assert!(!parts.is_empty());
    let mut level: Vec<Vec<f64>> = parts.iter().map(|p| p.to_vec()).collect();
    while level.len() > 1 {
        let half = level.len().div_ceil(2);
        let next = (0..half)
            .map(|i| match level.get(i + half) {
                Some(hi) => level[i].iter().zip(hi).map(|(a, b)| a + b).collect(),
                None => level[i].clone(),
            })
            .collect();
        level = next;
    }
    level.pop().unwrap()
}

/// Sorted intersection of two sorted index lists.
pub fn intersect_sorted(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::new();
    let (mut x, mut y) = (0, 0);
    while x < a.len() && y < b.len() {
        match a[x].cmp(&b[y]) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[x]);
                x += 1;
                y += 1;
            }
        }
    }
    out
}
