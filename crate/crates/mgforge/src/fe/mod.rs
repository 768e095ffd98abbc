//! Reference Lagrange elements on simplices, quadrature rules, and
//! tabulation of basis values and gradients at quadrature points.

mod element;
mod jacobi;
mod quadrature;

pub use element::{dofs_per_cell, lagrange_element, tabulate, ReferenceElement, Tabulation};
pub use quadrature::{simplex_quadrature, QuadratureRule};
