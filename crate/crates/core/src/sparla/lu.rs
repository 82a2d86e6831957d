//! Up-looking LU without pivoting for matrices with a symmetric sparsity pattern.
//!
//! The symbolic phase (ordering, elimination tree, slot maps) is computed once
//! per pattern; `factor` then only does numeric work, which is what a Newton
//! loop with a fixed Jacobian structure needs.

use super::etree::{permute_symmetric, EliminationTree, Reach, NONE};
use super::ordering::Permutation;
use super::sparse::CsrMatrix;
use super::LinalgError;
use super::PIVOT_FLOOR;

/// Cached symbolic analysis for one sparsity pattern.
#[derive(Clone, Debug)]
pub struct SymbolicLu {
    n: usize,
    perm: Permutation,
    pattern_indptr: Vec<usize>,
    pattern_indices: Vec<usize>,
    /// Permuted, symmetrized pattern.
    c: CsrMatrix<f64>,
    /// Offset into the caller's value array for each slot of `c`, or `NONE` for padding.
    src: Vec<usize>,
    /// Slot of `(j, i)` for each slot `(i, j)` of `c`.
    mirror: Vec<usize>,
    tree: EliminationTree,
}

/// `Pᵀ A P = L U`; `L` unit lower, `U` upper with diagonal `udiag`.
#[derive(Clone, Debug)]
pub struct LuFactors {
    n: usize,
    perm: Permutation,
    colptr: Vec<usize>,
    /// Row index of `L[:, i]` and column index of `U[i, :]` (same pattern).
    idx: Vec<usize>,
    lval: Vec<f64>,
    uval: Vec<f64>,
    udiag: Vec<f64>,
}

impl SymbolicLu {
    /// Analyzes the pattern of `pattern` (values ignored) under `perm`.
    pub fn new(pattern: &CsrMatrix<f64>, perm: Permutation) -> Result<Self, LinalgError> {
        let n = pattern.nrows();
        if pattern.ncols() != n {
            return Err(LinalgError::NotSquare { rows: n, cols: pattern.ncols() });
        }
        if perm.len() != n {
            return Err(LinalgError::DimensionMismatch { expected: n, got: perm.len() });
        }
        // Symmetrize: every stored (i, j) also gets (j, i). Values carry the
        // source offset + 1 so padding entries stay at zero.
        let mut trip = Vec::with_capacity(2 * pattern.nnz() + n);
        for i in 0..n {
            trip.push((i, i, 0.0));
            for p in pattern.indptr()[i]..pattern.indptr()[i + 1] {
                let j = pattern.indices()[p];
                trip.push((i, j, (p + 1) as f64));
                trip.push((j, i, 0.0));
            }
        }
        let sym = CsrMatrix::from_triplets(n, n, &trip);
        let (c, offs) = permute_symmetric(&sym, &perm);
        let src = offs
            .iter()
            .map(|&o| {
                let tag = sym.data()[o];
                if tag == 0.0 {
                    NONE
                } else {
                    tag as usize - 1
                }
            })
            .collect();
        let c = c.map(|_| 0.0);
        let mut mirror = vec![NONE; c.nnz()];
        for i in 0..n {
            for p in c.indptr()[i]..c.indptr()[i + 1] {
                let j = c.indices()[p];
                mirror[p] = c.position(j, i).expect("pattern symmetrized above");
            }
        }
        let tree = EliminationTree::analyze(&c);
        Ok(Self {
            n,
            perm,
            pattern_indptr: pattern.indptr().to_vec(),
            pattern_indices: pattern.indices().to_vec(),
            c,
            src,
            mirror,
            tree,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.tree.factor_nnz()
    }

    /// Numeric factorization of a matrix with the analyzed pattern.
    pub fn factor(&self, a: &CsrMatrix<f64>) -> Result<LuFactors, LinalgError> {
        if a.indptr() != self.pattern_indptr.as_slice() || a.indices() != self.pattern_indices.as_slice() {
            return Err(LinalgError::PatternMismatch);
        }
        let n = self.n;
        let vals: Vec<f64> = self.src.iter().map(|&s| if s == NONE { 0.0 } else { a.data()[s] }).collect();
        let floor = PIVOT_FLOOR * a.max_abs().max(f64::MIN_POSITIVE);
        let colptr = self.tree.colptr.clone();
        let nnz = self.tree.factor_nnz();
        let mut idx = vec![0usize; nnz];
        let mut lval = vec![0.0; nnz];
        let mut uval = vec![0.0; nnz];
        let mut cnt = vec![0usize; n];
        let mut udiag = vec![0.0; n];
        // x: column k of U being formed, w: row k of L being formed.
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut reach = Reach::new(n);
        let ci = self.c.indptr();
        let cj = self.c.indices();

        for k in 0..n {
            reach.start(k);
            let mut diag = 0.0;
            for p in ci[k]..ci[k + 1] {
                let i = cj[p];
                if i < k {
                    w[i] = vals[p];
                    x[i] = vals[self.mirror[p]];
                    reach.visit(&self.tree, k, i);
                } else if i == k {
                    diag = vals[p];
                } else {
                    break;
                }
            }
            for t in reach.top..n {
                let i = reach.pattern[t];
                let u_ik = x[i];
                let l_ki = w[i] / udiag[i];
                x[i] = 0.0;
                w[i] = 0.0;
                let start = colptr[i];
                let end = start + cnt[i];
                for p in start..end {
                    let r = idx[p];
                    x[r] -= lval[p] * u_ik;
                    w[r] -= l_ki * uval[p];
                }
                diag -= l_ki * u_ik;
                idx[end] = k;
                lval[end] = l_ki;
                uval[end] = u_ik;
                cnt[i] += 1;
            }
            if !(diag.abs() > floor) {
                return Err(LinalgError::SingularPivot { position: k, index: self.perm.order()[k], value: diag });
            }
            udiag[k] = diag;
        }
        Ok(LuFactors { n, perm: self.perm.clone(), colptr, idx, lval, uval, udiag })
    }
}

impl LuFactors {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let mut x = vec![0.0; self.n];
        let mut work = vec![0.0; self.n];
        self.solve_into(b, &mut x, &mut work)?;
        Ok(x)
    }

    pub fn solve_into(&self, b: &[f64], x: &mut [f64], work: &mut [f64]) -> Result<(), LinalgError> {
        if b.len() != self.n || x.len() != self.n || work.len() != self.n {
            return Err(LinalgError::DimensionMismatch { expected: self.n, got: b.len() });
        }
        let order = self.perm.order();
        for k in 0..self.n {
            work[k] = b[order[k]];
        }
        for j in 0..self.n {
            let yj = work[j];
            if yj != 0.0 {
                for p in self.colptr[j]..self.colptr[j + 1] {
                    work[self.idx[p]] -= self.lval[p] * yj;
                }
            }
        }
        for i in (0..self.n).rev() {
            let mut acc = work[i];
            for p in self.colptr[i]..self.colptr[i + 1] {
                acc -= self.uval[p] * work[self.idx[p]];
            }
            work[i] = acc / self.udiag[i];
        }
        for k in 0..self.n {
            x[order[k]] = work[k];
        }
        Ok(())
    }
}
