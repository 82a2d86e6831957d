//! Up-looking sparse LDLᵀ with a symmetric fill-reducing permutation.

use super::etree::{permute_symmetric, EliminationTree, Reach};
use super::ordering::{minimum_degree, Permutation};
use super::sparse::CsrMatrix;
use super::{LinalgError, PIVOT_FLOOR};

/// Relative symmetry tolerance accepted by [`ldl_factorize`].
pub const SYMMETRY_TOL: f64 = 1e-8;

/// `Pᵀ A P = L D Lᵀ`, with `L` unit lower triangular.
#[derive(Clone, Debug)]
pub struct LdlFactors {
    n: usize,
    perm: Permutation,
    colptr: Vec<usize>,
    rowidx: Vec<usize>,
    lvals: Vec<f64>,
    d: Vec<f64>,
}

/// Factorizes a symmetric matrix using a minimum-degree ordering.
pub fn ldl_factorize(a: &CsrMatrix<f64>) -> Result<LdlFactors, LinalgError> {
    check_symmetric(a)?;
    let perm = minimum_degree(a);
    ldl_factorize_with(a, perm)
}

fn check_symmetric(a: &CsrMatrix<f64>) -> Result<(), LinalgError> {
    if a.nrows() != a.ncols() {
        return Err(LinalgError::NotSquare { rows: a.nrows(), cols: a.ncols() });
    }
    let scale = a.max_abs();
    let asym = a.asymmetry();
    if asym > SYMMETRY_TOL * scale {
        return Err(LinalgError::Asymmetric { max_diff: asym, scale });
    }
    Ok(())
}

/// Factorizes with a caller-supplied ordering. Only the lower triangle of `a` is read.
pub fn ldl_factorize_with(a: &CsrMatrix<f64>, perm: Permutation) -> Result<LdlFactors, LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::NotSquare { rows: n, cols: a.ncols() });
    }
    if perm.len() != n {
        return Err(LinalgError::DimensionMismatch { expected: n, got: perm.len() });
    }
    let floor = PIVOT_FLOOR * a.max_abs().max(f64::MIN_POSITIVE);
    let (c, _) = permute_symmetric(a, &perm);
    let tree = EliminationTree::analyze(&c);
    let nnz = tree.factor_nnz();
    let mut rowidx = vec![0usize; nnz];
    let mut lvals = vec![0.0; nnz];
    let mut lnz = vec![0usize; n];
    let mut d = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut reach = Reach::new(n);

    for k in 0..n {
        reach.start(k);
        for (i, v) in c.row(k) {
            if i > k {
                break;
            }
            y[i] += v;
            reach.visit(&tree, k, i);
        }
        d[k] = y[k];
        y[k] = 0.0;
        for t in reach.top..n {
            let i = reach.pattern[t];
            let yi = y[i];
            y[i] = 0.0;
            let start = tree.colptr[i];
            let end = start + lnz[i];
            for p in start..end {
                y[rowidx[p]] -= lvals[p] * yi;
            }
            let l_ki = yi / d[i];
            d[k] -= l_ki * yi;
            rowidx[end] = k;
            lvals[end] = l_ki;
            lnz[i] += 1;
        }
        if !(d[k].abs() > floor) {
            return Err(LinalgError::SingularPivot { position: k, index: perm.order()[k], value: d[k] });
        }
    }
    Ok(LdlFactors { n, perm, colptr: tree.colptr, rowidx, lvals, d })
}

impl LdlFactors {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn perm(&self) -> &Permutation {
        &self.perm
    }

    pub fn diagonal(&self) -> &[f64] {
        &self.d
    }

    /// Nonzeros in the strictly lower part of `L`.
    pub fn factor_nnz(&self) -> usize {
        self.rowidx.len()
    }

    /// Unit lower-triangular `L`.
    pub fn lower(&self) -> CsrMatrix<f64> {
        let mut t: Vec<_> = (0..self.n).map(|i| (i, i, 1.0)).collect();
        for j in 0..self.n {
            for p in self.colptr[j]..self.colptr[j + 1] {
                t.push((self.rowidx[p], j, self.lvals[p]));
            }
        }
        CsrMatrix::from_triplets(self.n, self.n, &t)
    }

    /// Upper-triangular `D Lᵀ`.
    pub fn upper(&self) -> CsrMatrix<f64> {
        let mut t: Vec<_> = (0..self.n).map(|i| (i, i, self.d[i])).collect();
        for j in 0..self.n {
            for p in self.colptr[j]..self.colptr[j + 1] {
                t.push((j, self.rowidx[p], self.d[j] * self.lvals[p]));
            }
        }
        CsrMatrix::from_triplets(self.n, self.n, &t)
    }

    /// Forward elimination / back substitution for `A x = b`.
    pub fn febs(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let mut x = vec![0.0; self.n];
        let mut work = vec![0.0; self.n];
        self.febs_into(b, &mut x, &mut work)?;
        Ok(x)
    }

    /// Allocation-free variant; `work` must have length `dim()`.
    pub fn febs_into(&self, b: &[f64], x: &mut [f64], work: &mut [f64]) -> Result<(), LinalgError> {
        if b.len() != self.n || x.len() != self.n || work.len() != self.n {
            return Err(LinalgError::DimensionMismatch { expected: self.n, got: b.len() });
        }
        let order = self.perm.order();
        for k in 0..self.n {
            work[k] = b[order[k]];
        }
        for j in 0..self.n {
            let zj = work[j];
            if zj != 0.0 {
                for p in self.colptr[j]..self.colptr[j + 1] {
                    work[self.rowidx[p]] -= self.lvals[p] * zj;
                }
            }
        }
        for j in 0..self.n {
            work[j] /= self.d[j];
        }
        for j in (0..self.n).rev() {
            let mut acc = work[j];
            for p in self.colptr[j]..self.colptr[j + 1] {
                acc -= self.lvals[p] * work[self.rowidx[p]];
            }
            work[j] = acc;
        }
        for k in 0..self.n {
            x[order[k]] = work[k];
        }
        Ok(())
    }
}
