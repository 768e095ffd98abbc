//! Slow direct integrator used to cross-check compiled kernels.
//!
//! Everything here deliberately avoids the compiled path: basis functions
//! come from the closed-form lattice product formula rather than the
//! tabulated Dubiner expansion, geometry is handled through barycentric
//! gradients, and the integrand is interpreted node by node with
//! trial/test substitution instead of being normalized into terms. Only
//! the quadrature points themselves are shared, so polynomial integrands
//! agree with kernel execution to rounding.

use super::ElementTensor;
use crate::error::{Error, Result};
use crate::fe::simplex_quadrature;
use crate::forms::{ConstantBindings, FormExpr, FormIntegral, SpaceSpec, UnaryFn};

#[derive(Debug, Clone, Copy)]
enum Value {
    Scalar(f64),
    Vector([f64; 3]),
}

impl Value {
    fn scalar(self) -> Result<f64> {
        match self {
            Value::Scalar(v) => Ok(v),
            Value::Vector(_) => Err(Error::MalformedForm(
                "expected scalar, found vector value".into(),
            )),
        }
    }
}

struct Field {
    value: f64,
    gradient: [f64; 3],
}

fn eval(
    expr: &FormExpr,
    x: &[f64],
    bindings: &ConstantBindings,
    trial: Option<&Field>,
    test: Option<&Field>,
) -> Result<Value> {
    fn field<'a>(which: Option<&'a Field>) -> Result<&'a Field> {
        which.ok_or_else(|| Error::MalformedForm("unbound trial/test in integrand".into()))
    }
    Ok(match expr {
        FormExpr::Constant(v) => Value::Scalar(*v),
        FormExpr::Named(name) => Value::Scalar(
            *bindings
                .get(name)
                .ok_or_else(|| Error::UnboundConstant(name.clone()))?,
        ),
        FormExpr::Coord(a) => Value::Scalar(x.get(*a).copied().unwrap_or(0.0)),
        FormExpr::Trial => Value::Scalar(field(trial)?.value),
        FormExpr::Test => Value::Scalar(field(test)?.value),
        FormExpr::Grad(base) => match base.as_ref() {
            FormExpr::Trial => Value::Vector(field(trial)?.gradient),
            FormExpr::Test => Value::Vector(field(test)?.gradient),
            FormExpr::Coord(a) => {
                let mut e = [0.0; 3];
                e[*a] = 1.0;
                Value::Vector(e)
            }
            other => {
                return Err(Error::MalformedForm(format!(
                    "grad of unsupported base {other}"
                )))
            }
        },
        FormExpr::GradComponent(base, axis) => {
            match eval(&FormExpr::Grad(base.clone()), x, bindings, trial, test)? {
                Value::Vector(g) => Value::Scalar(g[*axis]),
                Value::Scalar(_) => unreachable!(),
            }
        }
        FormExpr::Sum(a, b) => Value::Scalar(
            eval(a, x, bindings, trial, test)?.scalar()?
                + eval(b, x, bindings, trial, test)?.scalar()?,
        ),
        FormExpr::Product(a, b) => Value::Scalar(
            eval(a, x, bindings, trial, test)?.scalar()?
                * eval(b, x, bindings, trial, test)?.scalar()?,
        ),
        FormExpr::Neg(e) => Value::Scalar(-eval(e, x, bindings, trial, test)?.scalar()?),
        FormExpr::Power(e, n) => {
            Value::Scalar(eval(e, x, bindings, trial, test)?.scalar()?.powi(*n as i32))
        }
        FormExpr::Unary(op, e) => {
            let v = eval(e, x, bindings, trial, test)?.scalar()?;
            Value::Scalar(match op {
                UnaryFn::Sin => v.sin(),
                UnaryFn::Cos => v.cos(),
                UnaryFn::Tan => v.tan(),
            })
        }
        FormExpr::Dot(a, b) => {
            let va = eval(a, x, bindings, trial, test)?;
            let vb = eval(b, x, bindings, trial, test)?;
            match (va, vb) {
                (Value::Vector(p), Value::Vector(q)) => {
                    Value::Scalar(p[0] * q[0] + p[1] * q[1] + p[2] * q[2])
                }
                _ => return Err(Error::MalformedForm("dot of non-vectors".into())),
            }
        }
    })
}

/// Value of one lattice Lagrange basis function and its derivatives with
/// respect to the barycentric coordinates, from the product formula
/// `prod_m prod_{r<b_m} (k lam_m - r)/(b_m - r)`.
fn lattice_basis(k: usize, bary: &[usize; 4], lam: &[f64; 4], d: usize) -> (f64, [f64; 4]) {
    let mut p = [1.0_f64; 4];
    let mut dp = [0.0_f64; 4];
    for m in 0..=d {
        for r in 0..bary[m] {
            let denom = (bary[m] - r) as f64;
            let f = (k as f64 * lam[m] - r as f64) / denom;
            let df = k as f64 / denom;
            dp[m] = dp[m] * f + p[m] * df;
            p[m] *= f;
        }
    }
    let value = (0..=d).map(|m| p[m]).product();
    let mut dlam = [0.0_f64; 4];
    for m in 0..=d {
        let mut others = 1.0;
        for mm in 0..=d {
            if mm != m {
                others *= p[mm];
            }
        }
        dlam[m] = dp[m] * others;
    }
    (value, dlam)
}

/// Node lattice in the same enumeration order as the nodal element.
fn lattice_nodes(d: usize, k: usize) -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    if d == 2 {
        for by in 0..=k {
            for bx in 0..=k - by {
                out.push([k - bx - by, bx, by, 0]);
            }
        }
    } else {
        for bz in 0..=k {
            for by in 0..=k - bz {
                for bx in 0..=k - bz - by {
                    out.push([k - bx - by - bz, bx, by, bz]);
                }
            }
        }
    }
    out
}

/// Barycentric gradients of a physical cell via the cofactor inverse of
/// the edge matrix, plus the edge determinant.
fn barycentric_gradients(d: usize, cell: &[f64]) -> (Vec<[f64; 3]>, f64) {
    let mut grads = vec![[0.0_f64; 3]; d + 1];
    let det;
    if d == 2 {
        let e1 = [cell[2] - cell[0], cell[3] - cell[1]];
        let e2 = [cell[4] - cell[0], cell[5] - cell[1]];
        det = e1[0] * e2[1] - e1[1] * e2[0];
        // rows of inverse of [e1 e2]
        grads[1] = [e2[1] / det, -e2[0] / det, 0.0];
        grads[2] = [-e1[1] / det, e1[0] / det, 0.0];
    } else {
        let e: Vec<[f64; 3]> = (1..4)
            .map(|m| {
                [
                    cell[m * 3] - cell[0],
                    cell[m * 3 + 1] - cell[1],
                    cell[m * 3 + 2] - cell[2],
                ]
            })
            .collect();
        det = e[0][0] * (e[1][1] * e[2][2] - e[1][2] * e[2][1])
            - e[1][0] * (e[0][1] * e[2][2] - e[0][2] * e[2][1])
            + e[2][0] * (e[0][1] * e[1][2] - e[0][2] * e[1][1]);
        let cof = [
            [
                e[1][1] * e[2][2] - e[1][2] * e[2][1],
                -(e[1][0] * e[2][2] - e[1][2] * e[2][0]),
                e[1][0] * e[2][1] - e[1][1] * e[2][0],
            ],
            [
                -(e[0][1] * e[2][2] - e[0][2] * e[2][1]),
                e[0][0] * e[2][2] - e[0][2] * e[2][0],
                -(e[0][0] * e[2][1] - e[0][1] * e[2][0]),
            ],
            [
                e[0][1] * e[1][2] - e[0][2] * e[1][1],
                -(e[0][0] * e[1][2] - e[0][2] * e[1][0]),
                e[0][0] * e[1][1] - e[0][1] * e[1][0],
            ],
        ];
        for m in 0..3 {
            for a in 0..3 {
                grads[m + 1][a] = cof[m][a] / det;
            }
        }
    }
    for a in 0..3 {
        grads[0][a] = -(1..=d).map(|m| grads[m][a]).sum::<f64>();
    }
    (grads, det)
}

/// Direct numerical quadrature of the integrand with per-pair basis
/// substitution; same quadrature points as `compile_form` would use.
pub fn reference_element_tensor(
    integral: &FormIntegral,
    space: &SpaceSpec,
    quad_degree: usize,
    cell_coords: &[f64],
    bindings: &ConstantBindings,
) -> Result<ElementTensor> {
    let d = space.dim;
    let k = space.degree;
    let nodes = lattice_nodes(d, k);
    let n = nodes.len();
    let rule = simplex_quadrature(d, quad_degree);
    let (dlam, det) = barycentric_gradients(d, cell_coords);
    if det <= 0.0 {
        return Err(Error::DegenerateCell { det_j: det });
    }

    let mut matrix = vec![0.0; if integral.rank == 2 { n * n } else { 0 }];
    let mut vector = vec![0.0; if integral.rank == 1 { n } else { 0 }];

    for q in 0..rule.num_points() {
        let xi = rule.point(q);
        let mut lam = [0.0_f64; 4];
        lam[0] = 1.0 - xi.iter().sum::<f64>();
        lam[1..=d].copy_from_slice(xi);
        // physical point by barycentric interpolation of the vertices
        let mut x = [0.0_f64; 3];
        for m in 0..=d {
            for a in 0..d {
                x[a] += lam[m] * cell_coords[m * d + a];
            }
        }
        let w = rule.weights[q] * det;

        // basis values and physical gradients at this point
        let fields: Vec<Field> = nodes
            .iter()
            .map(|bary| {
                let (value, dl) = lattice_basis(k, bary, &lam, d);
                let mut gradient = [0.0_f64; 3];
                for m in 0..=d {
                    for a in 0..d {
                        gradient[a] += dl[m] * dlam[m][a];
                    }
                }
                Field { value, gradient }
            })
            .collect();

        if integral.rank == 2 {
            for i in 0..n {
                for j in 0..n {
                    let v = eval(
                        &integral.integrand,
                        &x[..d],
                        bindings,
                        Some(&fields[i]),
                        Some(&fields[j]),
                    )?
                    .scalar()?;
                    matrix[i * n + j] += w * v;
                }
            }
        } else {
            for (i, f) in fields.iter().enumerate() {
                let v = eval(&integral.integrand, &x[..d], bindings, None, Some(f))?
                    .scalar()?;
                vector[i] += w * v;
            }
        }
    }

    Ok(if integral.rank == 2 {
        ElementTensor::Matrix(matrix)
    } else {
        ElementTensor::Vector(vector)
    })
}
