//! Minimal sparse/dense linear algebra: CSR matrices, partitioned vectors
//! with ghost entries, dense LU with partial pivoting, and the fixed-order
//! reduction contracts that make parallel results independent of the rank
//! count.

mod csr;
mod dense;
pub mod par;
mod vector;

pub use csr::CsrMatrix;
pub use dense::{lu_factor, DenseFactor, DenseMatrix};
pub use vector::{RankVector, VectorLayout};
