//! Symbolic algebra for weak forms: scalar expressions over spatial
//! coordinates, trial/test functions, gradients, and cell integrals.
//!
//! The expression set is deliberately the smallest closure covering the
//! Poisson bilinear form `dot(grad(u), grad(v))*dx`, the load form `f*v*dx`,
//! and the manufactured right-hand side / solution pair used by the
//! benchmark driver. Only first derivatives are representable, and
//! vector-valued expressions exist only transiently inside `dot(grad(.),
//! grad(.))`.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

/// Named-constant bindings supplied at evaluation time (Listing-style
/// `Constant` values that can be rebound without rebuilding the AST).
pub type ConstantBindings = BTreeMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryFn {
    Sin,
    Cos,
    Tan,
}

impl UnaryFn {
    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryFn::Sin => x.sin(),
            UnaryFn::Cos => x.cos(),
            UnaryFn::Tan => x.tan(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            UnaryFn::Sin => "sin",
            UnaryFn::Cos => "cos",
            UnaryFn::Tan => "tan",
        }
    }
}

/// Weak-form expression node.
///
/// `Grad` is vector-valued and may only appear as a direct child of `Dot`;
/// `GradComponent` is its scalar projection. Everything else is scalar.
#[derive(Debug, Clone, PartialEq)]
pub enum FormExpr {
    Constant(f64),
    Named(String),
    /// Spatial coordinate component (0 = x, 1 = y, 2 = z).
    Coord(usize),
    Trial,
    Test,
    Grad(Box<FormExpr>),
    GradComponent(Box<FormExpr>, usize),
    Sum(Box<FormExpr>, Box<FormExpr>),
    Product(Box<FormExpr>, Box<FormExpr>),
    Neg(Box<FormExpr>),
    Power(Box<FormExpr>, u32),
    Unary(UnaryFn, Box<FormExpr>),
    Dot(Box<FormExpr>, Box<FormExpr>),
}

pub fn constant(v: f64) -> FormExpr {
    FormExpr::Constant(v)
}

pub fn named(name: &str) -> FormExpr {
    FormExpr::Named(name.to_string())
}

pub fn coord(axis: usize) -> FormExpr {
    FormExpr::Coord(axis)
}

pub fn x() -> FormExpr {
    coord(0)
}

pub fn y() -> FormExpr {
    coord(1)
}

pub fn z() -> FormExpr {
    coord(2)
}

pub fn trial() -> FormExpr {
    FormExpr::Trial
}

pub fn test_fn() -> FormExpr {
    FormExpr::Test
}

pub fn grad(e: FormExpr) -> FormExpr {
    FormExpr::Grad(Box::new(e))
}

pub fn dot(a: FormExpr, b: FormExpr) -> FormExpr {
    FormExpr::Dot(Box::new(a), Box::new(b))
}

pub fn sin(e: FormExpr) -> FormExpr {
    FormExpr::Unary(UnaryFn::Sin, Box::new(e))
}

pub fn cos(e: FormExpr) -> FormExpr {
    FormExpr::Unary(UnaryFn::Cos, Box::new(e))
}

pub fn tan(e: FormExpr) -> FormExpr {
    FormExpr::Unary(UnaryFn::Tan, Box::new(e))
}

pub fn pow(e: FormExpr, exponent: u32) -> FormExpr {
    FormExpr::Power(Box::new(e), exponent)
}

impl std::ops::Add for FormExpr {
    type Output = FormExpr;
    fn add(self, rhs: FormExpr) -> FormExpr {
        FormExpr::Sum(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Sub for FormExpr {
    type Output = FormExpr;
    fn sub(self, rhs: FormExpr) -> FormExpr {
        FormExpr::Sum(Box::new(self), Box::new(FormExpr::Neg(Box::new(rhs))))
    }
}

impl std::ops::Mul for FormExpr {
    type Output = FormExpr;
    fn mul(self, rhs: FormExpr) -> FormExpr {
        FormExpr::Product(Box::new(self), Box::new(rhs))
    }
}

impl std::ops::Neg for FormExpr {
    type Output = FormExpr;
    fn neg(self) -> FormExpr {
        FormExpr::Neg(Box::new(self))
    }
}

impl fmt::Display for FormExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FormExpr::Constant(v) => write!(f, "{v}"),
            FormExpr::Named(n) => write!(f, "{n}"),
            FormExpr::Coord(a) => write!(f, "{}", ["x", "y", "z"].get(*a).unwrap_or(&"x?")),
            FormExpr::Trial => write!(f, "u"),
            FormExpr::Test => write!(f, "v"),
            FormExpr::Grad(e) => write!(f, "grad({e})"),
            FormExpr::GradComponent(e, a) => write!(f, "grad({e})[{a}]"),
            FormExpr::Sum(a, b) => write!(f, "({a} + {b})"),
            FormExpr::Product(a, b) => write!(f, "{a}*{b}"),
            FormExpr::Neg(e) => write!(f, "-({e})"),
            FormExpr::Power(e, n) => write!(f, "({e})^{n}"),
            FormExpr::Unary(op, e) => write!(f, "{}({e})", op.name()),
            FormExpr::Dot(a, b) => write!(f, "dot({a}, {b})"),
        }
    }
}

/// Structural shape of an expression: how many trial/test factors it
/// carries and whether it is (transiently) vector-valued.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RankInfo {
    pub trial_deg: u8,
    pub test_deg: u8,
    pub vector: bool,
}

fn grad_base_ok(e: &FormExpr) -> bool {
    matches!(e, FormExpr::Trial | FormExpr::Test | FormExpr::Coord(_))
}

/// Walks the AST computing trial/test degrees, rejecting anything outside
/// the supported closure (second derivatives, nonlinear arguments, products
/// with more than one trial or test factor).
pub fn analyze(expr: &FormExpr) -> Result<RankInfo> {
    let scalar = |t, v| RankInfo {
        trial_deg: t,
        test_deg: v,
        vector: false,
    };
    match expr {
        FormExpr::Constant(_) | FormExpr::Named(_) | FormExpr::Coord(_) => Ok(scalar(0, 0)),
        FormExpr::Trial => Ok(scalar(1, 0)),
        FormExpr::Test => Ok(scalar(0, 1)),
        FormExpr::Grad(base) => {
            if !grad_base_ok(base) {
                return Err(Error::MalformedForm(format!(
                    "grad applies only to trial, test, or coordinate expressions, got grad({base})"
                )));
            }
            let inner = analyze(base)?;
            Ok(RankInfo {
                vector: true,
                ..inner
            })
        }
        FormExpr::GradComponent(base, _) => {
            if !grad_base_ok(base) {
                return Err(Error::MalformedForm(format!(
                    "grad applies only to trial, test, or coordinate expressions, got grad({base})"
                )));
            }
            analyze(base)
        }
        FormExpr::Sum(a, b) => {
            let ra = analyze(a)?;
            let rb = analyze(b)?;
            if ra.vector || rb.vector {
                return Err(Error::MalformedForm(
                    "vector-valued expressions may only appear inside dot()".into(),
                ));
            }
            if ra != rb {
                return Err(Error::MalformedForm(format!(
                    "sum of expressions with different ranks: {a} and {b}"
                )));
            }
            Ok(ra)
        }
        FormExpr::Product(a, b) => {
            let ra = analyze(a)?;
            let rb = analyze(b)?;
            if ra.vector || rb.vector {
                return Err(Error::MalformedForm(
                    "vector-valued expressions may only appear inside dot()".into(),
                ));
            }
            combine_product(ra, rb, expr)
        }
        FormExpr::Neg(e) => {
            let r = analyze(e)?;
            if r.vector {
                return Err(Error::MalformedForm(
                    "vector-valued expressions may only appear inside dot()".into(),
                ));
            }
            Ok(r)
        }
        FormExpr::Power(e, _) | FormExpr::Unary(_, e) => {
            let r = analyze(e)?;
            if r.vector || r.trial_deg > 0 || r.test_deg > 0 {
                return Err(Error::MalformedForm(format!(
                    "nonlinear functions apply only to rank-0 subexpressions, got {expr}"
                )));
            }
            Ok(r)
        }
        FormExpr::Dot(a, b) => {
            let ra = analyze(a)?;
            let rb = analyze(b)?;
            if !ra.vector || !rb.vector {
                return Err(Error::MalformedForm(
                    "dot() takes two vector-valued (grad) arguments".into(),
                ));
            }
            combine_product(
                RankInfo {
                    vector: false,
                    ..ra
                },
                RankInfo {
                    vector: false,
                    ..rb
                },
                expr,
            )
        }
    }
}

fn combine_product(ra: RankInfo, rb: RankInfo, expr: &FormExpr) -> Result<RankInfo> {
    let trial = ra.trial_deg + rb.trial_deg;
    let test = ra.test_deg + rb.test_deg;
    if trial > 1 || test > 1 {
        return Err(Error::MalformedForm(format!(
            "bilinearity violation: product with {trial} trial and {test} test factors in {expr}"
        )));
    }
    Ok(RankInfo {
        trial_deg: trial,
        test_deg: test,
        vector: false,
    })
}

/// Rank of an expression: 0 = no trial/test, 1 = test only, 2 = trial and
/// test. Total and deterministic on valid ASTs.
pub fn infer_rank(expr: &FormExpr) -> Result<u8> {
    let info = analyze(expr)?;
    if info.vector {
        return Err(Error::MalformedForm(
            "vector-valued expression has no scalar rank".into(),
        ));
    }
    Ok(info.trial_deg + info.test_deg)
}

/// Integration measure. Only cell integrals (the `dx` of the weak form)
/// are supported; homogeneous Dirichlet conditions need no facet terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    Cell,
}

/// An integrand paired with its measure and validated rank.
#[derive(Debug, Clone)]
pub struct FormIntegral {
    pub integrand: FormExpr,
    pub measure: Measure,
    pub rank: u8,
}

impl FormIntegral {
    pub fn new(integrand: FormExpr, measure: Measure) -> Result<Self> {
        let info = analyze(&integrand)?;
        if info.vector {
            return Err(Error::MalformedForm(
                "integrand must be scalar-valued".into(),
            ));
        }
        if info.trial_deg == 1 && info.test_deg == 0 {
            return Err(Error::MalformedForm(
                "rank-1 integrands must be linear in test and contain no trial nodes".into(),
            ));
        }
        Ok(FormIntegral {
            integrand,
            measure,
            rank: info.trial_deg + info.test_deg,
        })
    }

    /// `expr*dx` convenience constructor.
    pub fn dx(integrand: FormExpr) -> Result<Self> {
        Self::new(integrand, Measure::Cell)
    }
}

/// Evaluates a rank-0 expression at a spatial point. Coordinates beyond
/// the point's dimension read as zero, which lets 3D-built expressions be
/// probed on 2D points in tests.
pub fn evaluate_pointwise(
    expr: &FormExpr,
    point: &[f64],
    bindings: &ConstantBindings,
) -> Result<f64> {
    match expr {
        FormExpr::Constant(v) => Ok(*v),
        FormExpr::Named(name) => bindings
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnboundConstant(name.clone())),
        FormExpr::Coord(axis) => Ok(point.get(*axis).copied().unwrap_or(0.0)),
        FormExpr::Sum(a, b) => {
            Ok(evaluate_pointwise(a, point, bindings)? + evaluate_pointwise(b, point, bindings)?)
        }
        FormExpr::Product(a, b) => {
            Ok(evaluate_pointwise(a, point, bindings)? * evaluate_pointwise(b, point, bindings)?)
        }
        FormExpr::Neg(e) => Ok(-evaluate_pointwise(e, point, bindings)?),
        FormExpr::Power(e, n) => Ok(evaluate_pointwise(e, point, bindings)?.powi(*n as i32)),
        FormExpr::Unary(op, e) => Ok(op.apply(evaluate_pointwise(e, point, bindings)?)),
        FormExpr::Trial
        | FormExpr::Test
        | FormExpr::Grad(_)
        | FormExpr::GradComponent(_, _)
        | FormExpr::Dot(_, _) => Err(Error::MalformedForm(format!(
            "cannot evaluate non-rank-0 expression {expr} pointwise"
        ))),
    }
}

/// The manufactured analytic solution
/// `u = sin(pi x) tan(pi x / 4) sin(a pi y) [sin(b pi z)]`,
/// with `a`, `b` left as named constants bound at evaluation time.
/// In 2D the z factor is dropped.
pub fn manufactured_solution(dim: usize) -> FormExpr {
    assert!(dim == 2 || dim == 3, "dimension must be 2 or 3");
    let pi = constant(PI);
    let mut u = sin(pi.clone() * x()) * tan(constant(PI / 4.0) * x()) * sin(named("a") * pi.clone() * y());
    if dim == 3 {
        u = u * sin(named("b") * pi * z());
    }
    u
}

/// The forcing term matching [`manufactured_solution`]:
/// `f = -pi^2/2 (2 cos(pi x) - cos(pi x/2) - 2(a^2 + b^2) sin(pi x) tan(pi x/4))
///      sin(a pi y) [sin(b pi z)]`.
/// In 2D the z factor is dropped and `b^2` leaves the coefficient.
pub fn manufactured_rhs(dim: usize) -> FormExpr {
    assert!(dim == 2 || dim == 3, "dimension must be 2 or 3");
    let pi = constant(PI);
    let coeff_sq = if dim == 3 {
        pow(named("a"), 2) + pow(named("b"), 2)
    } else {
        pow(named("a"), 2)
    };
    let bracket = constant(2.0) * cos(pi.clone() * x()) - cos(constant(PI / 2.0) * x())
        - constant(2.0) * coeff_sq * sin(pi.clone() * x()) * tan(constant(PI / 4.0) * x());
    let mut f = constant(-PI * PI / 2.0) * bracket * sin(named("a") * pi.clone() * y());
    if dim == 3 {
        f = f * sin(named("b") * pi * z());
    }
    f
}

/// Bindings for the benchmark's two symbolic constants.
pub fn poisson_bindings(a: f64, b: f64) -> ConstantBindings {
    let mut m = ConstantBindings::new();
    m.insert("a".to_string(), a);
    m.insert("b".to_string(), b);
    m
}

/// Function-space description: continuous Lagrange of the given degree on
/// simplices of the given dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpaceSpec {
    pub degree: usize,
    pub dim: usize,
}

impl SpaceSpec {
    pub fn cg(dim: usize, degree: usize) -> Result<Self> {
        if !(1..=4).contains(&degree) {
            return Err(Error::UnsupportedDegree { degree });
        }
        assert!(dim == 2 || dim == 3, "dimension must be 2 or 3");
        Ok(SpaceSpec { degree, dim })
    }
}

/// Homogeneous Dirichlet boundary specification on a set of facet markers.
#[derive(Debug, Clone, PartialEq)]
pub struct BcSpec {
    /// Boundary value; only the constant zero is supported.
    pub value: f64,
    pub markers: Vec<u8>,
}

impl BcSpec {
    pub fn zero(markers: &[u8]) -> Self {
        BcSpec {
            value: 0.0,
            markers: markers.to_vec(),
        }
    }

    /// Zero BC on every face of the unit square/cube (markers 1..=2d).
    pub fn zero_everywhere(dim: usize) -> Self {
        Self::zero(&(1..=2 * dim as u8).collect::<Vec<_>>())
    }
}
