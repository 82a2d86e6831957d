//! Sparse linear algebra: CSR storage, orderings, LDLᵀ and LU factorizations,
//! triangular solves and power iteration.

mod etree;
mod ldl;
mod lu;
mod ordering;
mod sparse;
mod spectral;

pub use ldl::{ldl_factorize, ldl_factorize_with, LdlFactors, SYMMETRY_TOL};
pub use lu::{LuFactors, SymbolicLu};
pub use ordering::{minimum_degree, Permutation};
pub use sparse::{CsrMatrix, Scalar};
pub use spectral::spectral_radius_estimate;

/// Pivots below this fraction of the largest matrix entry are treated as zero.
pub const PIVOT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LinalgError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: max |a_ij - a_ji| = {max_diff:e} at scale {scale:e}")]
    Asymmetric { max_diff: f64, scale: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero pivot {value:e} at elimination step {position} (original index {index})")]
    SingularPivot { position: usize, index: usize, value: f64 },
    #[error("matrix pattern differs from the analyzed pattern")]
    PatternMismatch,
}
