//! The form compiler: lowers a `FormIntegral` plus element/quadrature
//! choices to an interpreted kernel IR (quadrature loop with geometric
//! terms), and executes it per cell to produce element tensors.
//!
//! Kernels are interpreted from precomputed tabulations and tight
//! contraction loops rather than emitted as source; the IR boundary is
//! where a source-emitting backend could later attach. A fused
//! reference-tensor path handles spatially-constant coefficients.

pub mod reference;

use crate::error::{Error, Result};
use crate::fe::{lagrange_element, simplex_quadrature, tabulate, QuadratureRule, Tabulation};
use crate::forms::{
    analyze, evaluate_pointwise, ConstantBindings, FormExpr, FormIntegral, SpaceSpec,
};
use std::fmt;

/// What an assembled term contracts over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    /// coefficient * v
    Load,
    /// coefficient * u * v
    Mass,
    /// coefficient * dot(grad u, grad v)
    Stiffness,
}

/// One additive term of the integrand: a rank-0 coefficient times a
/// trial/test contraction.
#[derive(Debug, Clone)]
pub struct KernelTerm {
    pub coeff: FormExpr,
    pub kind: TermKind,
    /// A coefficient with no spatial dependence can be hoisted out of the
    /// quadrature loop and contracted against reference tensors.
    pub spatially_constant: bool,
}

/// Fused (reference-tensor) data for one term.
#[derive(Debug, Clone)]
enum FusedData {
    /// `[ndof]` reference integrals of each basis function.
    Load(Vec<f64>),
    /// `[ndof * ndof]` reference mass matrix.
    Mass(Vec<f64>),
    /// `[dim * dim][ndof * ndof]` reference stiffness tensors K_ab.
    Stiffness(Vec<Vec<f64>>),
}

/// Compiled, immutable representation of an element integral.
#[derive(Debug, Clone)]
pub struct KernelIR {
    pub rank: u8,
    pub dim: usize,
    pub n_dof: usize,
    pub quad: QuadratureRule,
    pub tab: Tabulation,
    pub terms: Vec<KernelTerm>,
    fused: Vec<Option<FusedData>>,
}

/// Element tensor produced by one kernel execution.
#[derive(Debug, Clone, PartialEq)]
pub enum ElementTensor {
    /// Row-major `[n_dof * n_dof]`.
    Matrix(Vec<f64>),
    Vector(Vec<f64>),
}

impl ElementTensor {
    pub fn as_matrix(&self) -> &[f64] {
        match self {
            ElementTensor::Matrix(m) => m,
            ElementTensor::Vector(_) => panic!("expected a rank-2 element tensor"),
        }
    }

    pub fn as_vector(&self) -> &[f64] {
        match self {
            ElementTensor::Vector(v) => v,
            ElementTensor::Matrix(_) => panic!("expected a rank-1 element tensor"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Atom {
    Trial,
    Test,
    GradPair,
}

/// Expands an integrand into a sum of (coefficient factors, atoms) terms.
fn expand(expr: &FormExpr) -> Result<Vec<(Vec<FormExpr>, Vec<Atom>)>> {
    // any rank-0 scalar subtree is a single opaque coefficient factor
    if let Ok(info) = analyze(expr) {
        if !info.vector && info.trial_deg == 0 && info.test_deg == 0 {
            return Ok(vec![(vec![expr.clone()], Vec::new())]);
        }
    }
    match expr {
        FormExpr::Trial => Ok(vec![(Vec::new(), vec![Atom::Trial])]),
        FormExpr::Test => Ok(vec![(Vec::new(), vec![Atom::Test])]),
        FormExpr::Dot(a, b) => {
            let bases = [a.as_ref(), b.as_ref()]
                .map(|side| match side {
                    FormExpr::Grad(base) => Some(base.as_ref().clone()),
                    _ => None,
                });
            match bases {
                [Some(ref l), Some(ref r)]
                    if (matches!(l, FormExpr::Trial) && matches!(r, FormExpr::Test))
                        || (matches!(l, FormExpr::Test) && matches!(r, FormExpr::Trial)) =>
                {
                    Ok(vec![(Vec::new(), vec![Atom::GradPair])])
                }
                _ => Err(Error::UnsupportedIntegrand(format!(
                    "dot() is only assemblable as dot(grad(u), grad(v)), got {expr}"
                ))),
            }
        }
        FormExpr::Sum(a, b) => {
            let mut out = expand(a)?;
            out.extend(expand(b)?);
            Ok(out)
        }
        FormExpr::Neg(e) => {
            let mut out = expand(e)?;
            for (coeffs, _) in out.iter_mut() {
                coeffs.push(FormExpr::Constant(-1.0));
            }
            Ok(out)
        }
        FormExpr::Product(a, b) => {
            let left = expand(a)?;
            let right = expand(b)?;
            let mut out = Vec::new();
            for (lc, la) in &left {
                for (rc, ra) in &right {
                    let mut coeffs = lc.clone();
                    coeffs.extend(rc.iter().cloned());
                    let mut atoms = la.clone();
                    atoms.extend(ra.iter().cloned());
                    out.push((coeffs, atoms));
                }
            }
            Ok(out)
        }
        other => Err(Error::UnsupportedIntegrand(format!(
            "node {other} is outside the assemblable subset"
        ))),
    }
}

fn coeff_from_factors(mut factors: Vec<FormExpr>) -> FormExpr {
    match factors.len() {
        0 => FormExpr::Constant(1.0),
        1 => factors.pop().unwrap(),
        _ => {
            let mut it = factors.into_iter();
            let first = it.next().unwrap();
            it.fold(first, |acc, f| acc * f)
        }
    }
}

fn contains_coordinate(expr: &FormExpr) -> bool {
    match expr {
        FormExpr::Coord(_) => true,
        FormExpr::Constant(_) | FormExpr::Named(_) => false,
        FormExpr::Trial | FormExpr::Test => false,
        FormExpr::Grad(e) | FormExpr::GradComponent(e, _) => contains_coordinate(e),
        FormExpr::Sum(a, b) | FormExpr::Product(a, b) | FormExpr::Dot(a, b) => {
            contains_coordinate(a) || contains_coordinate(b)
        }
        FormExpr::Neg(e) | FormExpr::Power(e, _) | FormExpr::Unary(_, e) => contains_coordinate(e),
    }
}

/// Compiles a validated integral for the given space and quadrature
/// degree. Deterministic; the returned IR is immutable and shareable.
pub fn compile_form(
    integral: &FormIntegral,
    space: &SpaceSpec,
    quad_degree: usize,
) -> Result<KernelIR> {
    if !(1..=2).contains(&integral.rank) {
        return Err(Error::MalformedForm(format!(
            "only rank-1 and rank-2 integrals are assemblable, got rank {}",
            integral.rank
        )));
    }
    let element = lagrange_element(space.dim, space.degree)?;
    let quad = simplex_quadrature(space.dim, quad_degree);
    let tab = tabulate(&element, &quad);

    let mut terms = Vec::new();
    for (factors, mut atoms) in expand(&integral.integrand)? {
        atoms.sort_by_key(|a| *a as usize);
        let kind = match atoms.as_slice() {
            [Atom::Test] => TermKind::Load,
            [Atom::Trial, Atom::Test] => TermKind::Mass,
            [Atom::GradPair] => TermKind::Stiffness,
            other => {
                return Err(Error::UnsupportedIntegrand(format!(
                    "unsupported trial/test contraction pattern {other:?}"
                )))
            }
        };
        let expected_rank = match kind {
            TermKind::Load => 1,
            _ => 2,
        };
        if expected_rank != integral.rank {
            return Err(Error::MalformedForm(format!(
                "term of rank {expected_rank} inside a rank-{} integral",
                integral.rank
            )));
        }
        let coeff = coeff_from_factors(factors);
        let spatially_constant = !contains_coordinate(&coeff);
        terms.push(KernelTerm {
            coeff,
            kind,
            spatially_constant,
        });
    }

    let fused = terms
        .iter()
        .map(|t| {
            if t.spatially_constant {
                Some(build_fused(t.kind, &tab, &quad))
            } else {
                None
            }
        })
        .collect();

    Ok(KernelIR {
        rank: integral.rank,
        dim: space.dim,
        n_dof: tab.n_dof,
        quad,
        tab,
        terms,
        fused,
    })
}

fn build_fused(kind: TermKind, tab: &Tabulation, quad: &QuadratureRule) -> FusedData {
    let n = tab.n_dof;
    let dim = tab.dim;
    match kind {
        TermKind::Load => {
            let mut out = vec![0.0; n];
            for q in 0..tab.n_qp {
                let w = quad.weights[q];
                for (i, o) in out.iter_mut().enumerate() {
                    *o += w * tab.value(q, i);
                }
            }
            FusedData::Load(out)
        }
        TermKind::Mass => {
            let mut out = vec![0.0; n * n];
            for q in 0..tab.n_qp {
                let w = quad.weights[q];
                for i in 0..n {
                    let vi = w * tab.value(q, i);
                    for j in 0..n {
                        out[i * n + j] += vi * tab.value(q, j);
                    }
                }
            }
            FusedData::Mass(out)
        }
        TermKind::Stiffness => {
            let mut out = vec![vec![0.0; n * n]; dim * dim];
            for q in 0..tab.n_qp {
                let w = quad.weights[q];
                for a in 0..dim {
                    for b in 0..dim {
                        let k = &mut out[a * dim + b];
                        for i in 0..n {
                            let gia = w * tab.gradient(q, i)[a];
                            for j in 0..n {
                                k[i * n + j] += gia * tab.gradient(q, j)[b];
                            }
                        }
                    }
                }
            }
            FusedData::Stiffness(out)
        }
    }
}

/// Affine geometry of one cell: Jacobian, its determinant, and J^{-T}.
pub struct CellGeometry {
    pub dim: usize,
    pub origin: [f64; 3],
    /// Column-major columns of J (edge vectors).
    pub jac: [[f64; 3]; 3],
    pub det_j: f64,
    /// Rows of J^{-T}.
    pub inv_jt: [[f64; 3]; 3],
}

impl CellGeometry {
    /// Builds geometry from flattened vertex coordinates ((dim+1) rows of
    /// dim entries). Fails on cells with |det J| at or below 1e-14 of the
    /// Hadamard scale.
    pub fn new(dim: usize, cell_coords: &[f64]) -> Result<CellGeometry> {
        assert_eq!(cell_coords.len(), (dim + 1) * dim);
        let mut origin = [0.0; 3];
        origin[..dim].copy_from_slice(&cell_coords[..dim]);
        let mut jac = [[0.0_f64; 3]; 3];
        for m in 0..dim {
            for a in 0..dim {
                jac[m][a] = cell_coords[(m + 1) * dim + a] - cell_coords[a];
            }
        }
        let (det_j, inv_j) = if dim == 2 {
            let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
            let inv = [
                [jac[1][1], -jac[1][0], 0.0],
                [-jac[0][1], jac[0][0], 0.0],
                [0.0; 3],
            ];
            (det, inv)
        } else {
            let (c0, c1, c2) = (jac[0], jac[1], jac[2]);
            let det = c0[0] * (c1[1] * c2[2] - c1[2] * c2[1])
                - c1[0] * (c0[1] * c2[2] - c0[2] * c2[1])
                + c2[0] * (c0[1] * c1[2] - c0[2] * c1[1]);
            // adjugate rows (unscaled inverse)
            let inv = [
                [
                    c1[1] * c2[2] - c1[2] * c2[1],
                    -(c1[0] * c2[2] - c1[2] * c2[0]),
                    c1[0] * c2[1] - c1[1] * c2[0],
                ],
                [
                    -(c0[1] * c2[2] - c0[2] * c2[1]),
                    c0[0] * c2[2] - c0[2] * c2[0],
                    -(c0[0] * c2[1] - c0[1] * c2[0]),
                ],
                [
                    c0[1] * c1[2] - c0[2] * c1[1],
                    -(c0[0] * c1[2] - c0[2] * c1[0]),
                    c0[0] * c1[1] - c0[1] * c1[0],
                ],
            ];
            (det, inv)
        };
        let scale: f64 = (0..dim)
            .map(|m| {
                (0..dim)
                    .map(|a| jac[m][a] * jac[m][a])
                    .sum::<f64>()
                    .sqrt()
            })
            .product();
        if det_j.abs() <= 1e-14 * scale {
            return Err(Error::DegenerateCell { det_j });
        }
        // inv_jt rows: (J^{-T})[a][b] = (J^{-1})[b][a] = adj[b][a]/det;
        // adj here is stored with adj[row][col] = row of unscaled J^{-1}
        let mut inv_jt = [[0.0; 3]; 3];
        for a in 0..dim {
            for b in 0..dim {
                inv_jt[a][b] = inv_j[b][a] / det_j;
            }
        }
        Ok(CellGeometry {
            dim,
            origin,
            jac,
            det_j,
            inv_jt,
        })
    }

    /// Maps a reference point to physical coordinates.
    pub fn to_physical(&self, xi: &[f64]) -> [f64; 3] {
        let mut x = self.origin;
        for (m, &c) in xi.iter().enumerate().take(self.dim) {
            for a in 0..self.dim {
                x[a] += self.jac[m][a] * c;
            }
        }
        x
    }

    /// Pushes a reference gradient to a physical gradient: J^{-T} g.
    pub fn push_gradient(&self, g_ref: &[f64]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for a in 0..self.dim {
            for (b, &gr) in g_ref.iter().enumerate().take(self.dim) {
                g[a] += self.inv_jt[a][b] * gr;
            }
        }
        g
    }
}

/// Executes a kernel on one cell, producing the element tensor. Pure in
/// its inputs, hence bitwise deterministic.
pub fn execute_kernel(
    ir: &KernelIR,
    cell_coords: &[f64],
    bindings: &ConstantBindings,
) -> Result<ElementTensor> {
    let geo = CellGeometry::new(ir.dim, cell_coords)?;
    let n = ir.n_dof;
    let dim = ir.dim;
    let mut matrix = vec![0.0; if ir.rank == 2 { n * n } else { 0 }];
    let mut vector = vec![0.0; if ir.rank == 1 { n } else { 0 }];

    for (term, fused) in ir.terms.iter().zip(&ir.fused) {
        if let Some(data) = fused {
            let c = evaluate_pointwise(&term.coeff, &geo.origin[..dim], bindings)?;
            apply_fused(data, c, &geo, &mut matrix, &mut vector, dim);
            continue;
        }
        // general quadrature path
        for q in 0..ir.quad.num_points() {
            let x = geo.to_physical(ir.quad.point(q));
            let c = evaluate_pointwise(&term.coeff, &x[..dim], bindings)?;
            let scale = c * ir.quad.weights[q] * geo.det_j;
            match term.kind {
                TermKind::Load => {
                    for (i, o) in vector.iter_mut().enumerate() {
                        *o += scale * ir.tab.value(q, i);
                    }
                }
                TermKind::Mass => {
                    for i in 0..n {
                        let vi = scale * ir.tab.value(q, i);
                        for j in 0..n {
                            matrix[i * n + j] += vi * ir.tab.value(q, j);
                        }
                    }
                }
                TermKind::Stiffness => {
                    let phys: Vec<[f64; 3]> = (0..n)
                        .map(|i| geo.push_gradient(ir.tab.gradient(q, i)))
                        .collect();
                    for i in 0..n {
                        for j in 0..n {
                            let mut dot = 0.0;
                            for a in 0..dim {
                                dot += phys[i][a] * phys[j][a];
                            }
                            matrix[i * n + j] += scale * dot;
                        }
                    }
                }
            }
        }
    }

    Ok(if ir.rank == 2 {
        ElementTensor::Matrix(matrix)
    } else {
        ElementTensor::Vector(vector)
    })
}

fn apply_fused(
    data: &FusedData,
    coeff: f64,
    geo: &CellGeometry,
    matrix: &mut [f64],
    vector: &mut [f64],
    dim: usize,
) {
    let cd = coeff * geo.det_j;
    match data {
        FusedData::Load(l) => {
            for (o, &v) in vector.iter_mut().zip(l) {
                *o += cd * v;
            }
        }
        FusedData::Mass(m) => {
            for (o, &v) in matrix.iter_mut().zip(m) {
                *o += cd * v;
            }
        }
        FusedData::Stiffness(ks) => {
            // C = J^{-1} J^{-T}; inv_jt rows are J^{-T} rows, so
            // C[a][b] = sum_c inv_jt[c][a] * inv_jt[c][b]
            for a in 0..dim {
                for b in 0..dim {
                    let mut g = 0.0;
                    for r in geo.inv_jt.iter().take(dim) {
                        g += r[a] * r[b];
                    }
                    let f = cd * g;
                    if f != 0.0 {
                        for (o, &v) in matrix.iter_mut().zip(&ks[a * dim + b]) {
                            *o += f * v;
                        }
                    }
                }
            }
        }
    }
}

impl fmt::Display for KernelIR {
    /// Human-readable operation list (debug dump).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "kernel rank={} dim={} ndof={} quadrature: {} points (degree {})",
            self.rank,
            self.dim,
            self.n_dof,
            self.quad.num_points(),
            self.quad.degree
        )?;
        writeln!(f, "geometry: affine J, detJ, J^-T per cell")?;
        for (t, term) in self.terms.iter().enumerate() {
            let kind = match term.kind {
                TermKind::Load => "load v",
                TermKind::Mass => "mass u*v",
                TermKind::Stiffness => "stiffness grad(u).grad(v)",
            };
            let path = if term.spatially_constant {
                "fused reference tensor"
            } else {
                "quadrature loop"
            };
            writeln!(f, "term {t}: [{kind}] coeff = {} via {path}", term.coeff)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::reference::reference_element_tensor;
    use super::*;
    use crate::forms::{self, dot, grad, test_fn, trial};

    fn stiffness_ir(dim: usize, degree: usize) -> KernelIR {
        let integral = FormIntegral::dx(dot(grad(trial()), grad(test_fn()))).unwrap();
        let space = SpaceSpec::cg(dim, degree).unwrap();
        compile_form(&integral, &space, 2 * degree).unwrap()
    }

    fn mass_ir(dim: usize, degree: usize) -> KernelIR {
        let integral = FormIntegral::dx(trial() * test_fn()).unwrap();
        let space = SpaceSpec::cg(dim, degree).unwrap();
        compile_form(&integral, &space, 2 * degree).unwrap()
    }

    fn unit_ref_cell(dim: usize) -> Vec<f64> {
        if dim == 2 {
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0]
        } else {
            vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
        }
    }

    fn rand_stream(mut state: u64) -> impl FnMut() -> f64 {
        move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        }
    }

    /// Random well-shaped affine cell with positive orientation.
    fn random_cell(dim: usize, next: &mut impl FnMut() -> f64) -> Vec<f64> {
        loop {
            let coords: Vec<f64> = (0..(dim + 1) * dim).map(|_| next()).collect();
            match CellGeometry::new(dim, &coords) {
                Ok(g) if g.det_j > 0.02 => return coords,
                _ => continue,
            }
        }
    }

    #[test]
    fn p1_reference_stiffness_matches_hand_integration() {
        let ir = stiffness_ir(2, 1);
        let out = execute_kernel(&ir, &unit_ref_cell(2), &ConstantBindings::new()).unwrap();
        let expected = [1.0, -0.5, -0.5, -0.5, 0.5, 0.0, -0.5, 0.0, 0.5];
        for (a, e) in out.as_matrix().iter().zip(expected) {
            assert!((a - e).abs() < 1e-14, "{a} vs {e}");
        }
    }

    #[test]
    fn mass_matrix_sums_to_cell_volume() {
        let mut next = rand_stream(42);
        for dim in [2usize, 3] {
            for degree in [1usize, 3] {
                let ir = mass_ir(dim, degree);
                let cell = random_cell(dim, &mut next);
                let geo = CellGeometry::new(dim, &cell).unwrap();
                let vol = geo.det_j / if dim == 2 { 2.0 } else { 6.0 };
                let out = execute_kernel(&ir, &cell, &ConstantBindings::new()).unwrap();
                let sum: f64 = out.as_matrix().iter().sum();
                assert!((sum - vol).abs() < 1e-13 * vol.max(1.0));
            }
        }
    }

    #[test]
    fn unit_load_on_p1_triangle_is_area_thirds() {
        let integral = FormIntegral::dx(forms::constant(1.0) * test_fn()).unwrap();
        let space = SpaceSpec::cg(2, 1).unwrap();
        let ir = compile_form(&integral, &space, 2).unwrap();
        // triangle with area 3.0
        let cell = vec![0.0, 0.0, 3.0, 0.0, 0.0, 2.0];
        let out = execute_kernel(&ir, &cell, &ConstantBindings::new()).unwrap();
        for v in out.as_vector() {
            assert!((v - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn stiffness_symmetry_and_null_space() {
        let mut next = rand_stream(7);
        for dim in [2usize, 3] {
            let ir = stiffness_ir(dim, 3);
            let cell = random_cell(dim, &mut next);
            let out = execute_kernel(&ir, &cell, &ConstantBindings::new()).unwrap();
            let m = out.as_matrix();
            let n = ir.n_dof;
            let scale = m.iter().fold(0.0_f64, |s, v| s.max(v.abs()));
            for i in 0..n {
                for j in 0..n {
                    assert!((m[i * n + j] - m[j * n + i]).abs() < 1e-13 * scale);
                }
                let row_sum: f64 = m[i * n..(i + 1) * n].iter().sum();
                assert!(row_sum.abs() < 1e-12 * scale, "row {i} sum {row_sum}");
            }
        }
    }

    #[test]
    fn p1_stiffness_scaling_identity_in_3d() {
        // doubling all coordinates scales detJ by 8 and |J^-T|^2 by 1/4
        let ir = stiffness_ir(3, 1);
        let mut next = rand_stream(11);
        let cell = random_cell(3, &mut next);
        let doubled: Vec<f64> = cell.iter().map(|v| 2.0 * v).collect();
        let a = execute_kernel(&ir, &cell, &ConstantBindings::new()).unwrap();
        let b = execute_kernel(&ir, &doubled, &ConstantBindings::new()).unwrap();
        for (x, y) in a.as_matrix().iter().zip(b.as_matrix()) {
            assert!((2.0 * x - y).abs() < 1e-12 * x.abs().max(1.0));
        }
    }

    #[test]
    fn fused_and_quadrature_paths_agree() {
        let mut next = rand_stream(99);
        for dim in [2usize, 3] {
            for degree in [1usize, 2, 3] {
                for ir in [stiffness_ir(dim, degree), mass_ir(dim, degree)] {
                    assert!(ir.terms[0].spatially_constant);
                    let mut forced = ir.clone();
                    forced.fused = vec![None];
                    let cell = random_cell(dim, &mut next);
                    let fused = execute_kernel(&ir, &cell, &ConstantBindings::new()).unwrap();
                    let quad = execute_kernel(&forced, &cell, &ConstantBindings::new()).unwrap();
                    let scale = quad
                        .as_matrix()
                        .iter()
                        .fold(0.0_f64, |s, v| s.max(v.abs()));
                    for (a, b) in fused.as_matrix().iter().zip(quad.as_matrix()) {
                        assert!((a - b).abs() <= 1e-12 * scale);
                    }
                }
            }
        }
    }

    #[test]
    fn kernel_matches_reference_integrator() {
        let mut next = rand_stream(1234);
        let bindings = forms::poisson_bindings(1.0, 2.0);
        for dim in [2usize, 3] {
            for degree in [1usize, 2, 3] {
                let space = SpaceSpec::cg(dim, degree).unwrap();
                let forms_set: Vec<(FormIntegral, usize)> = vec![
                    (
                        FormIntegral::dx(dot(grad(trial()), grad(test_fn()))).unwrap(),
                        2 * degree,
                    ),
                    (FormIntegral::dx(trial() * test_fn()).unwrap(), 2 * degree),
                    (
                        FormIntegral::dx(forms::manufactured_rhs(dim) * test_fn()).unwrap(),
                        2 * degree + 2,
                    ),
                ];
                for (integral, qdeg) in &forms_set {
                    let ir = compile_form(integral, &space, *qdeg).unwrap();
                    for _ in 0..10 {
                        let cell = random_cell(dim, &mut next);
                        let ours = execute_kernel(&ir, &cell, &bindings).unwrap();
                        let oracle =
                            reference_element_tensor(integral, &space, *qdeg, &cell, &bindings)
                                .unwrap();
                        let (a, b) = match (&ours, &oracle) {
                            (ElementTensor::Matrix(a), ElementTensor::Matrix(b)) => (a, b),
                            (ElementTensor::Vector(a), ElementTensor::Vector(b)) => (a, b),
                            _ => panic!("rank mismatch"),
                        };
                        let scale = b.iter().fold(1e-30_f64, |s, v| s.max(v.abs()));
                        for (x, y) in a.iter().zip(b) {
                            assert!(
                                (x - y).abs() <= 1e-12 * scale,
                                "dim={dim} k={degree}: {x} vs {y}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn degenerate_cell_rejected() {
        let ir = stiffness_ir(2, 1);
        let flat = vec![0.0, 0.0, 1.0, 0.0, 2.0, 0.0];
        assert!(matches!(
            execute_kernel(&ir, &flat, &ConstantBindings::new()),
            Err(Error::DegenerateCell { .. })
        ));
    }

    #[test]
    fn unsupported_integrand_reported() {
        // structurally valid rank-2 expression outside the assemblable set
        let e = FormExpr::GradComponent(Box::new(trial()), 0) * test_fn();
        let integral = FormIntegral::dx(e).unwrap();
        let space = SpaceSpec::cg(2, 1).unwrap();
        assert!(matches!(
            compile_form(&integral, &space, 2),
            Err(Error::UnsupportedIntegrand(_))
        ));
    }

    #[test]
    fn execution_is_bitwise_deterministic() {
        let mut next = rand_stream(5);
        let ir = stiffness_ir(3, 2);
        let cell = random_cell(3, &mut next);
        let a = execute_kernel(&ir, &cell, &ConstantBindings::new()).unwrap();
        let b = execute_kernel(&ir, &cell, &ConstantBindings::new()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ir_dump_lists_terms() {
        let ir = stiffness_ir(2, 1);
        let text = format!("{ir}");
        assert!(text.contains("stiffness"));
        assert!(text.contains("fused reference tensor"));
    }
}
