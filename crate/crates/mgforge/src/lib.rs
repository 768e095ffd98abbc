//! mgforge: a miniature automated finite element system.
//!
//! Symbolic weak forms are compiled to executable assembly kernels; the
//! resulting sparse systems are solved with option-tree-programmable
//! Krylov methods and geometric multigrid (Chebyshev + vertex-star patch
//! smoothing, telescoped coarse solves) on an SPMD thread runtime, with a
//! benchmark harness for strong-scaling studies.

pub mod assembly;
pub mod error;
pub mod fe;
pub mod forms;
pub mod kernel;
pub mod la;
pub mod mesh;
pub mod runtime;
pub mod solver;

pub use error::{Error, Result};
