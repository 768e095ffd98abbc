//! Nodal Lagrange elements on the reference simplex.
//!
//! The nodal basis is expressed in a Dubiner-type collapsed-coordinate
//! modal basis; coefficients come from inverting the generalized
//! Vandermonde matrix, which stays well conditioned where the plain
//! monomial Vandermonde would not at degree 4.

use super::jacobi::{jacobi, jacobi_deriv};
use crate::error::{Error, Result};
use crate::la::{lu_factor, DenseMatrix};

/// Collapse guard: below this the 0/0 collapsed coordinate takes its
/// limiting value -1. Coordinates are bounded by the simplex, so no
/// large-value hazard exists on valid points.
const COLLAPSE_EPS: f64 = 1e-14;

fn collapse(num: f64, den: f64) -> f64 {
    if den.abs() < COLLAPSE_EPS {
        -1.0
    } else {
        2.0 * num / den - 1.0
    }
}

/// Integer powers with the 0^0 = 1 convention used throughout.
fn ipow(x: f64, n: i64) -> f64 {
    if n <= 0 {
        1.0
    } else {
        x.powi(n as i32)
    }
}

/// Values and gradients of the modal (Dubiner) basis at a reference
/// point. Returns (values[n], grads[n*dim]) in the fixed (i, j, k)
/// enumeration order with total degree <= `degree`.
fn modal_eval(dim: usize, degree: usize, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut values = Vec::new();
    let mut grads = Vec::new();
    if dim == 2 {
        let (x, y) = (p[0], p[1]);
        let w = 1.0 - y;
        let a = collapse(x, w);
        let b = 2.0 * y - 1.0;
        for i in 0..=degree {
            let fa = jacobi(i, 0.0, 0.0, a);
            let dfa = jacobi_deriv(i, 0.0, 0.0, a);
            let f = fa * ipow(w, i as i64);
            let dfdx = if i == 0 {
                0.0
            } else {
                2.0 * dfa * ipow(w, i as i64 - 1)
            };
            let dfdy = if i == 0 {
                0.0
            } else {
                ipow(w, i as i64 - 1) * (dfa * (a + 1.0) - i as f64 * fa)
            };
            for j in 0..=degree - i {
                let alpha = (2 * i + 1) as f64;
                let g = jacobi(j, alpha, 0.0, b);
                let dgdy = 2.0 * jacobi_deriv(j, alpha, 0.0, b);
                values.push(f * g);
                grads.push(dfdx * g);
                grads.push(dfdy * g + f * dgdy);
            }
        }
    } else {
        let (x, y, z) = (p[0], p[1], p[2]);
        let w = 1.0 - y - z;
        let v = 1.0 - z;
        let a = collapse(x, w);
        let b = collapse(y, v);
        let c = 2.0 * z - 1.0;
        for i in 0..=degree {
            let fa = jacobi(i, 0.0, 0.0, a);
            let dfa = jacobi_deriv(i, 0.0, 0.0, a);
            let f = fa * ipow(w, i as i64);
            let dfdx = if i == 0 {
                0.0
            } else {
                2.0 * dfa * ipow(w, i as i64 - 1)
            };
            // same value for the y and z partials of f
            let dfdyz = if i == 0 {
                0.0
            } else {
                ipow(w, i as i64 - 1) * (dfa * (a + 1.0) - i as f64 * fa)
            };
            for j in 0..=degree - i {
                let alpha_b = (2 * i + 1) as f64;
                let gb = jacobi(j, alpha_b, 0.0, b);
                let dgb = jacobi_deriv(j, alpha_b, 0.0, b);
                let g = gb * ipow(v, j as i64);
                let dgdy = if j == 0 {
                    0.0
                } else {
                    2.0 * dgb * ipow(v, j as i64 - 1)
                };
                let dgdz = if j == 0 {
                    0.0
                } else {
                    ipow(v, j as i64 - 1) * (dgb * (b + 1.0) - j as f64 * gb)
                };
                for k in 0..=degree - i - j {
                    let alpha_c = (2 * (i + j) + 2) as f64;
                    let h = jacobi(k, alpha_c, 0.0, c);
                    let dhdz = 2.0 * jacobi_deriv(k, alpha_c, 0.0, c);
                    values.push(f * g * h);
                    grads.push(dfdx * g * h);
                    grads.push(dfdyz * g * h + f * dgdy * h);
                    grads.push(dfdyz * g * h + f * dgdz * h + f * g * dhdz);
                }
            }
        }
    }
    (values, grads)
}

/// Number of modal/nodal functions for total degree k in dimension d.
pub fn dofs_per_cell(dim: usize, degree: usize) -> usize {
    // C(degree + dim, dim)
    let mut n = 1usize;
    for i in 1..=dim {
        n = n * (degree + i) / i;
    }
    n
}

/// Nodal Lagrange element on the unit reference simplex with an
/// equispaced lattice of nodes.
#[derive(Debug, Clone)]
pub struct ReferenceElement {
    pub dim: usize,
    pub degree: usize,
    /// Reference coordinates of the nodes, `ndof * dim`.
    pub nodes: Vec<f64>,
    /// Integer barycentric weights (b0..bd summing to degree) per node;
    /// shared sub-simplex nodes coincide across neighboring cells through
    /// these.
    pub node_bary: Vec<[usize; 4]>,
    vinv: DenseMatrix,
}

pub fn lagrange_element(dim: usize, degree: usize) -> Result<ReferenceElement> {
    assert!(dim == 2 || dim == 3);
    if !(1..=4).contains(&degree) {
        return Err(Error::UnsupportedDegree { degree });
    }
    let k = degree;
    let mut nodes = Vec::new();
    let mut node_bary = Vec::new();
    if dim == 2 {
        for by in 0..=k {
            for bx in 0..=k - by {
                node_bary.push([k - bx - by, bx, by, 0]);
                nodes.push(bx as f64 / k as f64);
                nodes.push(by as f64 / k as f64);
            }
        }
    } else {
        for bz in 0..=k {
            for by in 0..=k - bz {
                for bx in 0..=k - bz - by {
                    node_bary.push([k - bx - by - bz, bx, by, bz]);
                    nodes.push(bx as f64 / k as f64);
                    nodes.push(by as f64 / k as f64);
                    nodes.push(bz as f64 / k as f64);
                }
            }
        }
    }
    let n = node_bary.len();
    debug_assert_eq!(n, dofs_per_cell(dim, degree));

    // generalized Vandermonde in the modal basis and its inverse
    let mut vmat = DenseMatrix::zeros(n, n);
    for m in 0..n {
        let (values, _) = modal_eval(dim, degree, &nodes[m * dim..(m + 1) * dim]);
        debug_assert_eq!(values.len(), n);
        for c in 0..n {
            *vmat.at_mut(m, c) = values[c];
        }
    }
    let factor = lu_factor(vmat).expect("modal Vandermonde is nonsingular");
    let mut vinv = DenseMatrix::zeros(n, n);
    for t in 0..n {
        let mut e = vec![0.0; n];
        e[t] = 1.0;
        let col = factor.solve(&e);
        for c in 0..n {
            *vinv.at_mut(c, t) = col[c];
        }
    }

    Ok(ReferenceElement {
        dim,
        degree,
        nodes,
        node_bary,
        vinv,
    })
}

impl ReferenceElement {
    pub fn ndof(&self) -> usize {
        self.node_bary.len()
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    /// Values and reference gradients of all nodal basis functions at a
    /// reference point: (values[ndof], grads[ndof*dim]).
    pub fn eval(&self, p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.ndof();
        let dim = self.dim;
        let (mv, mg) = modal_eval(dim, self.degree, p);
        let mut values = vec![0.0; n];
        let mut grads = vec![0.0; n * dim];
        for t in 0..n {
            let mut val = 0.0;
            let mut gr = [0.0; 3];
            for c in 0..n {
                let coeff = self.vinv.at(c, t);
                val += mv[c] * coeff;
                for a in 0..dim {
                    gr[a] += mg[c * dim + a] * coeff;
                }
            }
            values[t] = val;
            grads[t * dim..t * dim + dim].copy_from_slice(&gr[..dim]);
        }
        (values, grads)
    }
}

/// Basis values and reference gradients evaluated at every quadrature
/// point of a rule.
#[derive(Debug, Clone)]
pub struct Tabulation {
    pub n_qp: usize,
    pub n_dof: usize,
    pub dim: usize,
    /// Row-major `[n_qp][n_dof]`.
    pub values: Vec<f64>,
    /// Row-major `[n_qp][n_dof][dim]`.
    pub gradients: Vec<f64>,
}

impl Tabulation {
    pub fn value(&self, q: usize, t: usize) -> f64 {
        self.values[q * self.n_dof + t]
    }

    pub fn gradient(&self, q: usize, t: usize) -> &[f64] {
        let base = (q * self.n_dof + t) * self.dim;
        &self.gradients[base..base + self.dim]
    }
}

pub fn tabulate(element: &ReferenceElement, rule: &super::QuadratureRule) -> Tabulation {
    assert_eq!(element.dim, rule.dim);
    let n_qp = rule.num_points();
    let n_dof = element.ndof();
    let dim = element.dim;
    let mut values = Vec::with_capacity(n_qp * n_dof);
    let mut gradients = Vec::with_capacity(n_qp * n_dof * dim);
    for q in 0..n_qp {
        let (v, g) = element.eval(rule.point(q));
        values.extend_from_slice(&v);
        gradients.extend_from_slice(&g);
    }
    Tabulation {
        n_qp,
        n_dof,
        dim,
        values,
        gradients,
    }
}
