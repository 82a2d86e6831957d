//! Fill-reducing orderings.

use std::collections::BTreeSet;

use super::sparse::{CsrMatrix, Scalar};

/// Symmetric permutation. `order()[k]` is the original index placed at position `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Permutation {
    order: Vec<usize>,
    inverse: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Self { order: (0..n).collect(), inverse: (0..n).collect() }
    }

    /// Panics unless `order` is a permutation of `0..order.len()`.
    pub fn from_order(order: Vec<usize>) -> Self {
        let mut inverse = vec![usize::MAX; order.len()];
        for (k, &i) in order.iter().enumerate() {
            assert!(i < order.len() && inverse[i] == usize::MAX, "not a permutation");
            inverse[i] = k;
        }
        Self { order, inverse }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(k, &i)| k == i)
    }

    /// Expands an ordering of `n` blocks into the `[re; im]` stacked layout of
    /// size `2n`, keeping both coordinates of a block adjacent.
    pub fn interleave_halves(&self) -> Self {
        let n = self.len();
        let mut order = Vec::with_capacity(2 * n);
        for &i in &self.order {
            order.push(i);
            order.push(i + n);
        }
        Self::from_order(order)
    }
}

/// Minimum-degree ordering on the symmetrized sparsity graph of `a`.
///
/// Exact external degrees on an explicit elimination graph; ties go to the
/// lowest original index, so the result is deterministic. Adequate for the
/// near-tree graphs of distribution feeders and for test matrices of a few
/// hundred rows.
pub fn minimum_degree<T: Scalar>(a: &CsrMatrix<T>) -> Permutation {
    let n = a.nrows();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for (i, j, _) in a.triplets() {
        if i != j {
            adj[i].insert(j);
            adj[j].insert(i);
        }
    }
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
    let mut order = Vec::with_capacity(n);

    while let Some((_, v)) = queue.pop_first() {
        order.push(v);
        let nbrs: Vec<usize> = std::mem::take(&mut adj[v]).into_iter().collect();
        for &u in &nbrs {
            queue.remove(&(adj[u].len(), u));
            adj[u].remove(&v);
            for &w in &nbrs {
                if w != u {
                    adj[u].insert(w);
                }
            }
            queue.insert((adj[u].len(), u));
        }
    }
    Permutation::from_order(order)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_pattern_keeps_natural_order() {
        let eye = CsrMatrix::<f64>::identity(4);
        assert!(minimum_degree(&eye).is_identity());
    }

    #[test]
    fn star_graph_eliminates_leaves_before_hub() {
        // Hub 0 connected to 1..5: eliminating the hub first would fill a clique.
        let mut t = vec![];
        for i in 1..6 {
            t.push((0, i, 1.0));
            t.push((i, 0, 1.0));
        }
        for i in 0..6 {
            t.push((i, i, 4.0));
        }
        let p = minimum_degree(&CsrMatrix::from_triplets(6, 6, &t));
        // Once one leaf is left the hub ties with it and wins on index.
        assert_eq!(p.inverse()[0], 4);
    }

    #[test]
    fn interleave_pairs_halves() {
        let p = Permutation::from_order(vec![2, 0, 1]).interleave_halves();
        assert_eq!(p.order(), &[2, 5, 0, 3, 1, 4]);
        assert_eq!(p.inverse()[5], 1);
    }
}
