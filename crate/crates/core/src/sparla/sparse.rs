//! Compressed sparse row storage shared by the real and complex operators.

use std::fmt::Debug;
use std::ops::{AddAssign, Mul, Sub};

use num_complex::Complex64;
use num_traits::Zero;

/// Entry type for sparse matrices: `f64` or `Complex64`.
pub trait Scalar:
    Copy + Zero + AddAssign + Mul<Output = Self> + Sub<Output = Self> + PartialEq + Debug + Send + Sync
{
    fn magnitude(self) -> f64;
}

impl Scalar for f64 {
    fn magnitude(self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    fn magnitude(self) -> f64 {
        self.norm()
    }
}

/// CSR matrix with sorted, duplicate-free column indices within each row.
///
/// Explicit zeros are retained: structural patterns matter for factorization.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Assembles from `(row, col, value)` triplets, summing duplicates.
    ///
    /// Panics if an index is out of range; callers validate user input first.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut counts = vec![0usize; nrows + 1];
        for &(r, c, _) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of range {nrows}x{ncols}");
            counts[r + 1] += 1;
        }
        for i in 0..nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut cols = vec![0usize; triplets.len()];
        let mut vals = vec![T::zero(); triplets.len()];
        for &(r, c, v) in triplets {
            let slot = next[r];
            cols[slot] = c;
            vals[slot] = v;
            next[r] += 1;
        }

        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data = Vec::with_capacity(triplets.len());
        indptr.push(0);
        let mut row_buf: Vec<(usize, T)> = Vec::new();
        for r in 0..nrows {
            row_buf.clear();
            row_buf.extend((counts[r]..counts[r + 1]).map(|p| (cols[p], vals[p])));
            row_buf.sort_by_key(|&(c, _)| c);
            for &(c, v) in &row_buf {
                if indices.len() > indptr[r] && *indices.last().unwrap() == c {
                    *data.last_mut().unwrap() += v;
                } else {
                    indices.push(c);
                    data.push(v);
                }
            }
            indptr.push(indices.len());
        }
        Self { nrows, ncols, indptr, indices, data }
    }

    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, indptr: vec![0; nrows + 1], indices: Vec::new(), data: Vec::new() }
    }

    pub fn identity(n: usize) -> Self
    where
        T: num_traits::One,
    {
        let triplets: Vec<_> = (0..n).map(|i| (i, i, T::one())).collect();
        Self::from_triplets(n, n, &triplets)
    }

    pub fn from_dense(rows: &[Vec<T>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        let mut triplets = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), ncols, "ragged dense input");
            for (j, &v) in row.iter().enumerate() {
                if v != T::zero() {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(nrows, ncols, &triplets)
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn indptr(&self) -> &[usize] {
        &self.indptr
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[i]..self.indptr[i + 1];
        self.indices[span.clone()].iter().copied().zip(self.data[span].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.position(i, j).map_or(T::zero(), |p| self.data[p])
    }

    /// Storage offset of entry `(i, j)` if it is structurally present.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let lo = self.indptr[i];
        let hi = self.indptr[i + 1];
        self.indices[lo..hi].binary_search(&j).ok().map(|p| lo + p)
    }

    /// `y = A x`.
    pub fn mul_vec_into(&self, x: &[T], y: &mut [T]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = T::zero();
            for p in self.indptr[i]..self.indptr[i + 1] {
                acc += self.data[p] * x[self.indices[p]];
            }
            *yi = acc;
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.indices {
            counts[c + 1] += 1;
        }
        for j in 0..self.ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut indices = vec![0usize; self.nnz()];
        let mut data = vec![T::zero(); self.nnz()];
        for i in 0..self.nrows {
            for p in self.indptr[i]..self.indptr[i + 1] {
                let c = self.indices[p];
                indices[next[c]] = i;
                data[next[c]] = self.data[p];
                next[c] += 1;
            }
        }
        Self { nrows: self.ncols, ncols: self.nrows, indptr: counts, indices, data }
    }

    /// Triplets in row-major canonical order.
    pub fn triplets(&self) -> Vec<(usize, usize, T)> {
        (0..self.nrows).flat_map(|i| self.row(i).map(move |(j, v)| (i, j, v))).collect()
    }

    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut out = vec![vec![T::zero(); self.ncols]; self.nrows];
        for (i, j, v) in self.triplets() {
            out[i][j] = v;
        }
        out
    }

    /// Keeps rows/columns whose map entry is `Some(new_index)`.
    pub fn select(&self, row_map: &[Option<usize>], new_rows: usize, col_map: &[Option<usize>], new_cols: usize) -> Self {
        let mut triplets = Vec::new();
        for (i, j, v) in self.triplets() {
            if let (Some(r), Some(c)) = (row_map[i], col_map[j]) {
                triplets.push((r, c, v));
            }
        }
        Self::from_triplets(new_rows, new_cols, &triplets)
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> CsrMatrix<U> {
        CsrMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            indptr: self.indptr.clone(),
            indices: self.indices.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.magnitude()).fold(0.0, f64::max)
    }

    /// Largest `|a_ij - a_ji|` over the stored pattern and its transpose.
    pub fn asymmetry(&self) -> f64 {
        if self.nrows != self.ncols {
            return f64::INFINITY;
        }
        let t = self.transpose();
        let mut worst = 0.0f64;
        for (i, j, v) in self.triplets() {
            worst = worst.max((v - t.get(i, j)).magnitude());
        }
        for (i, j, v) in t.triplets() {
            if self.position(i, j).is_none() {
                worst = worst.max(v.magnitude());
            }
        }
        worst
    }
}

impl CsrMatrix<f64> {
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
