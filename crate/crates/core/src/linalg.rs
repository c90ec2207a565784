//! Dense symmetric storage and the working-set Cholesky factor.
//!
//! The factor keeps `R` upper triangular with `RᵀR = H[order, order]` for an ordered subset of
//! the columns of `H`. Indices are appended at the end of the order; removing an index at
//! position `p` keeps the leading `p×p` block and refactors only the trailing block, so removals
//! near the end of the order are cheap. Every update adds its operation count to a cumulative
//! flop counter (a multiply-add counts as 2, a subtraction, division or square root as 1).

use std::collections::HashSet;

use crate::error::{check_len, BqpError, Result};

/// Relative pivot tolerance: a pivot `≤ PIVOT_RTOL · max|diag(H)|` is rejected.
pub const PIVOT_RTOL: f64 = 1e-12;

/// Symmetric `n×n` matrix stored densely in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        SymMatrix { n, data: vec![0.0; n * n] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![1.0; n])
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n);
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * n + i] = d;
        }
        m
    }

    /// Builds from a full row-major array. The array must be exactly symmetric and finite.
    pub fn from_dense(n: usize, data: Vec<f64>) -> Result<Self> {
        check_len(n * n, data.len())?;
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(BqpError::InvalidInput(format!("non-finite matrix entry {v}")));
        }
        for i in 0..n {
            for j in 0..i {
                if data[i * n + j] != data[j * n + i] {
                    return Err(BqpError::InvalidInput(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(SymMatrix { n, data })
    }

    /// Builds from coordinate triplets `(i, j, v)`. An off-diagonal triplet sets both `(i, j)`
    /// and `(j, i)`, so each symmetric pair must be listed once. Duplicates are summed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut m = Self::zeros(n);
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(BqpError::InvalidInput(format!("entry ({i}, {j}) outside a {n}x{n} matrix")));
            }
            if !v.is_finite() {
                return Err(BqpError::InvalidInput(format!("non-finite entry at ({i}, {j})")));
            }
            m.add_sym(i, j, v);
        }
        Ok(m)
    }

    /// Adds `v` at `(i, j)` and, off the diagonal, at `(j, i)`.
    pub(crate) fn add_sym(&mut self, i: usize, j: usize, v: f64) {
        let n = self.n;
        self.data[i * n + j] += v;
        if i != j {
            self.data[j * n + i] += v;
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    /// Row-major view of all entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `y = H x`.
    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = dot(self.row(i), x);
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    /// `H_iᵀ x`, the inner product of row `i` with `x`.
    #[inline]
    pub fn row_dot(&self, i: usize, x: &[f64]) -> f64 {
        dot(self.row(i), x)
    }

    pub fn quad_form(&self, x: &[f64]) -> f64 {
        dot(x, &self.mul_vec(x))
    }

    pub fn max_abs_diagonal(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i).abs()).fold(0.0, f64::max)
    }

    /// Largest absolute row sum.
    pub fn inf_norm(&self) -> f64 {
        (0..self.n).map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    /// `H + s·I`.
    pub fn shifted(&self, s: f64) -> SymMatrix {
        let mut m = self.clone();
        for i in 0..self.n {
            m.data[i * self.n + i] += s;
        }
        m
    }

    /// Number of stored nonzeros in the lower triangle, diagonal included.
    pub fn lower_nnz(&self) -> usize {
        (0..self.n).map(|i| self.row(i)[..=i].iter().filter(|v| **v != 0.0).count()).sum()
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    // four accumulators let the compiler vectorize without reassociation
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let k = 4 * c;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

pub(crate) fn norm2(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

pub(crate) fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distinct column indices whose order matters.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct OrderedWorkingSet {
    indices: Vec<usize>,
}

impl OrderedWorkingSet {
    pub fn new(indices: Vec<usize>, n: usize) -> Result<Self> {
        let mut seen = HashSet::with_capacity(indices.len());
        for &j in &indices {
            if j >= n {
                return Err(BqpError::InvalidInput(format!("index {j} out of range for n={n}")));
            }
            if !seen.insert(j) {
                return Err(BqpError::InvalidInput(format!("duplicate index {j}")));
            }
        }
        Ok(OrderedWorkingSet { indices })
    }

    /// Ascending index order.
    pub fn natural(indices: &[usize]) -> Self {
        let mut v = indices.to_vec();
        v.sort_unstable();
        v.dedup();
        OrderedWorkingSet { indices: v }
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn position(&self, j: usize) -> Option<usize> {
        self.indices.iter().position(|&k| k == j)
    }

    pub fn contains(&self, j: usize) -> bool {
        self.position(j).is_some()
    }

    fn push(&mut self, j: usize) {
        self.indices.push(j);
    }

    fn remove_at(&mut self, pos: usize) -> usize {
        self.indices.remove(pos)
    }
}

/// Distance from `z` to the nearer of two bounds; an infinite bound is infinitely far away.
pub fn bound_margin(z: f64, l: f64, u: f64) -> f64 {
    let dl = if l.is_finite() { (z - l).abs() } else { f64::INFINITY };
    let du = if u.is_finite() { (z - u).abs() } else { f64::INFINITY };
    dl.min(du)
}

/// Orders the free indices by non-increasing bound margin so that indices likely to leave the
/// free set sit at the end of the order. Ties go to the smaller index first.
pub fn sort_working_set(z_hat: &[f64], l: &[f64], u: &[f64], free: &[usize]) -> OrderedWorkingSet {
    let mut keyed: Vec<(f64, usize)> = free.iter().map(|&j| (bound_margin(z_hat[j], l[j], u[j]), j)).collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut indices: Vec<usize> = keyed.into_iter().map(|(_, j)| j).collect();
    // a caller handing in duplicates gets them collapsed rather than a corrupt order
    let mut seen = HashSet::with_capacity(indices.len());
    indices.retain(|j| seen.insert(*j));
    OrderedWorkingSet { indices }
}

/// Upper-triangular Cholesky factor of `H[order, order]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkingFactor {
    order: OrderedWorkingSet,
    /// `cols[k][i] = R[i][k]` for `i ≤ k`.
    cols: Vec<Vec<f64>>,
    flops: u64,
    pivot_tol: f64,
}

impl WorkingFactor {
    /// Factor over an empty order, using the default pivot tolerance for `h`.
    pub fn empty(h: &SymMatrix) -> Self {
        Self::empty_with_tolerance(PIVOT_RTOL * h.max_abs_diagonal())
    }

    pub fn empty_with_tolerance(pivot_tol: f64) -> Self {
        WorkingFactor { order: OrderedWorkingSet::default(), cols: Vec::new(), flops: 0, pivot_tol }
    }

    /// Full factorization of `H[order, order]`; the flop counter starts at its cost.
    pub fn factorize(h: &SymMatrix, order: &OrderedWorkingSet) -> Result<Self> {
        let mut f = Self::empty(h);
        for &j in order.as_slice() {
            if j >= h.dim() {
                return Err(BqpError::InvalidInput(format!("index {j} out of range")));
            }
            f.add_index(h, j)?;
        }
        Ok(f)
    }

    pub fn order(&self) -> &OrderedWorkingSet {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn flops(&self) -> u64 {
        self.flops
    }

    pub fn pivot_tolerance(&self) -> f64 {
        self.pivot_tol
    }

    /// `R[i][k]` for `i ≤ k`, zero below the diagonal.
    pub fn r(&self, i: usize, k: usize) -> f64 {
        if i <= k {
            self.cols[k][i]
        } else {
            0.0
        }
    }

    /// Dense copy of `R`, row-major.
    pub fn r_dense(&self) -> Vec<Vec<f64>> {
        let g = self.len();
        (0..g).map(|i| (0..g).map(|k| self.r(i, k)).collect()).collect()
    }

    /// Appends `j` at the end of the order using the bordered update
    /// `Rᵀ r̃ = H[order, j]`, corner `sqrt(H_jj − r̃ᵀr̃)`.
    pub fn add_index(&mut self, h: &SymMatrix, j: usize) -> Result<()> {
        if self.order.contains(j) {
            return Err(BqpError::InvalidInput(format!("index {j} already in the working set")));
        }
        let g = self.len();
        let hrow = h.row(j);
        let mut col = Vec::with_capacity(g + 1);
        let mut flops = 0u64;
        for (i, &oi) in self.order.as_slice().iter().enumerate() {
            let s = dot(&self.cols[i][..i], &col[..i]);
            col.push((hrow[oi] - s) / self.cols[i][i]);
            flops += 2 * i as u64 + 2;
        }
        let pivot = hrow[j] - dot(&col, &col);
        flops += 2 * g as u64 + 1;
        if !(pivot > self.pivot_tol) {
            return Err(BqpError::NotPositiveDefinite { pivot: g });
        }
        col.push(pivot.sqrt());
        flops += 1;
        self.cols.push(col);
        self.order.push(j);
        self.flops += flops;
        Ok(())
    }

    /// Removes the index at position `pos`. The leading block is kept and the trailing block is
    /// refactored from `H[tail, tail] − R[head, tail]ᵀ R[head, tail]`. On failure the factor is
    /// left unchanged.
    pub fn remove_index(&mut self, h: &SymMatrix, pos: usize) -> Result<()> {
        let g = self.len();
        if pos >= g {
            return Err(BqpError::InvalidInput(format!("position {pos} out of range for a working set of {g}")));
        }
        let tail: Vec<usize> = (pos + 1..g).collect();
        let m = tail.len();
        let mut flops = 0u64;
        let mut schur = vec![0.0; m * m];
        for a in 0..m {
            let ca = &self.cols[tail[a]];
            let ja = self.order.as_slice()[tail[a]];
            for b in 0..=a {
                let cb = &self.cols[tail[b]];
                let jb = self.order.as_slice()[tail[b]];
                let v = h.get(ja, jb) - dot(&ca[..pos], &cb[..pos]);
                schur[a * m + b] = v;
                schur[b * m + a] = v;
            }
        }
        flops += (m * (m + 1) / 2) as u64 * (2 * pos as u64 + 1);
        let rbar = cholesky_columns(&schur, m, self.pivot_tol, &mut flops)
            .map_err(|p| BqpError::NotPositiveDefinite { pivot: pos + p })?;

        let mut new_cols = Vec::with_capacity(g - 1);
        new_cols.extend(self.cols.drain(..pos));
        let old_tail: Vec<Vec<f64>> = self.cols.drain(..).skip(1).collect();
        for (a, (mut col, rb)) in old_tail.into_iter().zip(rbar).enumerate() {
            col.truncate(pos);
            col.extend_from_slice(&rb[..=a]);
            new_cols.push(col);
        }
        self.cols = new_cols;
        self.order.remove_at(pos);
        self.flops += flops;
        Ok(())
    }

    /// Solves `H[order, order] x = rhs` with the current factor.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len(), rhs.len())?;
        let g = self.len();
        // Rᵀ y = rhs
        let mut y = vec![0.0; g];
        for k in 0..g {
            let s = dot(&self.cols[k][..k], &y[..k]);
            y[k] = (rhs[k] - s) / self.cols[k][k];
        }
        // R x = y, column-oriented
        for k in (0..g).rev() {
            y[k] /= self.cols[k][k];
            let xk = y[k];
            for (yi, r) in y[..k].iter_mut().zip(&self.cols[k][..k]) {
                *yi -= r * xk;
            }
        }
        Ok(y)
    }

    /// `‖RᵀR − H[order, order]‖_F / ‖H[order, order]‖_F` (absolute when the block is zero).
    pub fn reconstruction_error(&self, h: &SymMatrix) -> f64 {
        let o = self.order.as_slice();
        let g = o.len();
        let mut diff = 0.0;
        let mut base = 0.0;
        for a in 0..g {
            for b in 0..g {
                let k = a.min(b);
                let rr = dot(&self.cols[a][..=k], &self.cols[b][..=k]);
                let hv = h.get(o[a], o[b]);
                diff += (rr - hv) * (rr - hv);
                base += hv * hv;
            }
        }
        if base > 0.0 {
            (diff / base).sqrt()
        } else {
            diff.sqrt()
        }
    }
}

/// Cholesky factorization of a dense `m×m` row-major SPD matrix, returning columns of `R`.
/// On failure returns the failing pivot position.
fn cholesky_columns(a: &[f64], m: usize, tol: f64, flops: &mut u64) -> std::result::Result<Vec<Vec<f64>>, usize> {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(m);
    for k in 0..m {
        let mut col = Vec::with_capacity(k + 1);
        for i in 0..k {
            let s = dot(&cols[i][..i], &col[..i]);
            col.push((a[i * m + k] - s) / cols[i][i]);
            *flops += 2 * i as u64 + 2;
        }
        let pivot = a[k * m + k] - dot(&col, &col);
        *flops += 2 * k as u64 + 2;
        if !(pivot > tol) {
            return Err(k);
        }
        col.push(pivot.sqrt());
        cols.push(col);
    }
    Ok(cols)
}
