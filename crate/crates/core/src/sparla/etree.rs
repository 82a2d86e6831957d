//! Elimination tree and column counts for symmetric sparsity patterns.

use super::ordering::Permutation;
use super::sparse::{CsrMatrix, Scalar};

pub(crate) const NONE: usize = usize::MAX;

/// Symbolic structure of the factor of a symmetric-pattern matrix.
#[derive(Clone, Debug)]
pub(crate) struct EliminationTree {
    pub parent: Vec<usize>,
    /// Start of each column of the strictly lower factor.
    pub colptr: Vec<usize>,
}

impl EliminationTree {
    /// `c` must have a symmetric pattern (already permuted).
    pub fn analyze<T: Scalar>(c: &CsrMatrix<T>) -> Self {
        let n = c.nrows();
        let mut parent = vec![NONE; n];
        let mut flag = vec![NONE; n];
        let mut counts = vec![0usize; n];
        for k in 0..n {
            flag[k] = k;
            for (i, _) in c.row(k) {
                if i >= k {
                    break;
                }
                let mut j = i;
                while flag[j] != k {
                    if parent[j] == NONE {
                        parent[j] = k;
                    }
                    counts[j] += 1;
                    flag[j] = k;
                    j = parent[j];
                }
            }
        }
        let mut colptr = Vec::with_capacity(n + 1);
        colptr.push(0);
        for k in 0..n {
            colptr.push(colptr[k] + counts[k]);
        }
        Self { parent, colptr }
    }

    pub fn factor_nnz(&self) -> usize {
        *self.colptr.last().unwrap_or(&0)
    }
}

/// Scratch for the row-by-row reach computation of up-looking factorizations.
pub(crate) struct Reach {
    flag: Vec<usize>,
    stack: Vec<usize>,
    pub pattern: Vec<usize>,
    pub top: usize,
}

impl Reach {
    pub fn new(n: usize) -> Self {
        Self { flag: vec![NONE; n], stack: vec![0; n], pattern: vec![0; n], top: n }
    }

    pub fn start(&mut self, k: usize) {
        self.flag[k] = k;
        self.top = self.pattern.len();
    }

    /// Adds the etree path from `i` towards `k`, keeping `pattern[top..]` topologically sorted.
    pub fn visit(&mut self, tree: &EliminationTree, k: usize, i: usize) {
        let mut len = 0;
        let mut j = i;
        while self.flag[j] != k {
            self.stack[len] = j;
            len += 1;
            self.flag[j] = k;
            j = tree.parent[j];
        }
        while len > 0 {
            len -= 1;
            self.top -= 1;
            self.pattern[self.top] = self.stack[len];
        }
    }
}

/// `P^T A P` for the symmetric permutation `perm`, plus the storage offset in
/// `a` that feeds every stored entry of the result.
pub(crate) fn permute_symmetric<T: Scalar>(a: &CsrMatrix<T>, perm: &Permutation) -> (CsrMatrix<T>, Vec<usize>) {
    let inv = perm.inverse();
    let n = a.nrows();
    let mut entries: Vec<(usize, usize, usize)> = Vec::with_capacity(a.nnz());
    for i in 0..n {
        for p in a.indptr()[i]..a.indptr()[i + 1] {
            entries.push((inv[i], inv[a.indices()[p]], p));
        }
    }
    entries.sort_unstable();
    let triplets: Vec<_> = entries.iter().map(|&(r, c, p)| (r, c, a.data()[p])).collect();
    let src = entries.iter().map(|&(_, _, p)| p).collect();
    (CsrMatrix::from_triplets(n, n, &triplets), src)
}
