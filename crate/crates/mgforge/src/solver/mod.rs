//! Option-tree-programmable composition of Krylov methods and
//! preconditioners: preonly/CG/Richardson/Chebyshev over
//! none/Jacobi/LU/geometric-MG/vertex-star-patch/telescope.

mod coarse;
pub mod options;
mod patch;
mod transfer;

pub use coarse::CoarseSolve;
pub use options::{translate_petsc_style, OptionTree, SUPPORTED_KEYS};
pub use patch::PatchState;
pub use transfer::{build_transfer, TransferOps};

use crate::assembly::DofMap;
use crate::error::{Error, Result};
use crate::la::par::{dot, norm2, spmv};
use crate::la::{CsrMatrix, RankVector, VectorLayout};
use crate::mesh::SimplexMesh;
use crate::runtime::{halo_exchange, Ctx};
use std::cell::RefCell;
use std::sync::Arc;

/// Everything a solver needs about one multigrid level.
#[derive(Clone)]
pub struct LevelContext {
    pub layout: Arc<VectorLayout>,
    /// BC-applied operator rows owned by this rank.
    pub matrix: Arc<CsrMatrix>,
    /// Mesh and dof map behind the operator; patch smoothing needs them,
    /// purely algebraic solves do not.
    pub discretization: Option<LevelDiscretization>,
}

/// Mesh-side information for preconditioners that reach back to the
/// discretization.
#[derive(Clone)]
pub struct LevelDiscretization {
    pub mesh: Arc<SimplexMesh>,
    pub dofmap: Arc<DofMap>,
}

impl LevelContext {
    pub fn algebraic(matrix: Arc<CsrMatrix>, layout: Arc<VectorLayout>) -> Self {
        LevelContext {
            layout,
            matrix,
            discretization: None,
        }
    }

    pub fn discretized(
        matrix: Arc<CsrMatrix>,
        layout: Arc<VectorLayout>,
        mesh: Arc<SimplexMesh>,
        dofmap: Arc<DofMap>,
    ) -> Self {
        LevelContext {
            layout,
            matrix,
            discretization: Some(LevelDiscretization { mesh, dofmap }),
        }
    }
}

/// Per-level operators plus inter-level transfers, coarse (0) to fine.
pub struct OperatorStack {
    pub levels: Vec<LevelContext>,
    pub transfers: Vec<TransferOps>,
    hierarchical: bool,
}

impl OperatorStack {
    pub fn from_levels(levels: Vec<LevelContext>, transfers: Vec<TransferOps>) -> Self {
        assert_eq!(levels.len(), transfers.len() + 1);
        OperatorStack {
            levels,
            transfers,
            hierarchical: true,
        }
    }

    /// A bare operator with no hierarchy behind it; multigrid requests
    /// against it fail with `MissingHierarchy`.
    pub fn single(level: LevelContext) -> Self {
        OperatorStack {
            levels: vec![level],
            transfers: Vec::new(),
            hierarchical: false,
        }
    }

    pub fn finest(&self) -> usize {
        self.levels.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KspType {
    Preonly,
    Cg,
    Richardson,
    Chebyshev,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormType {
    Unpreconditioned,
    Preconditioned,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergenceTest {
    Default,
    Skip,
}

/// Iteration record of the outermost solve.
#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub converged: bool,
}

pub struct KspNode {
    kind: KspType,
    level: usize,
    max_it: usize,
    rtol: f64,
    atol: f64,
    norm_type: NormType,
    convergence_test: ConvergenceTest,
    richardson_scale: f64,
    cheb_esteig_steps: usize,
    cheb_min_factor: f64,
    cheb_max_factor: f64,
    cheb_bounds: RefCell<Option<(f64, f64)>>,
    pc: PcNode,
}

enum PcNode {
    None,
    Jacobi(RefCell<Option<RankVector>>),
    Lu(CoarseSolve),
    Telescope(CoarseSolve),
    Patch(RefCell<Option<PatchState>>),
    Mg(Box<MgPc>),
}

struct MgPc {
    full: bool,
    log: bool,
    /// Smoother per level 1..=finest (index level-1).
    smoothers: Vec<KspNode>,
    coarse: Box<KspNode>,
}

/// A built solver tree bound to its operator stack.
pub struct Solver {
    pub stack: Arc<OperatorStack>,
    root: KspNode,
}

fn timed_spmv(
    ctx: &mut Ctx,
    a: &CsrMatrix,
    x: &RankVector,
    out: Arc<VectorLayout>,
) -> Result<RankVector> {
    ctx.timer.start("matmult");
    let y = spmv(a, x, out);
    ctx.timer.stop("matmult");
    y
}

/// r = b - A x (x ghosts refreshed in place).
fn residual(
    ctx: &mut Ctx,
    level: &LevelContext,
    b: &RankVector,
    x: &mut RankVector,
) -> Result<RankVector> {
    halo_exchange(&ctx.comm, x)?;
    let ax = timed_spmv(ctx, &level.matrix, x, level.layout.clone())?;
    let mut r = b.clone();
    r.axpy(-1.0, &ax);
    Ok(r)
}

/// Deterministic, partition-invariant pseudo-random entry for eigenvalue
/// estimation start vectors.
fn hashed_entry(seed: u64, g: usize) -> f64 {
    let mut z = seed ^ (g as u64).wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    ((z >> 11) as f64 / (1u64 << 53) as f64) - 0.5
}

impl KspNode {
    /// One-time preparation: preconditioner state plus Chebyshev spectrum
    /// bounds from power iteration on the preconditioned operator.
    fn setup(&self, ctx: &mut Ctx, stack: &OperatorStack) -> Result<()> {
        let level = &stack.levels[self.level];
        match &self.pc {
            PcNode::None => {}
            PcNode::Jacobi(cache) => {
                if cache.borrow().is_none() {
                    let (s, _) = level.layout.my_range();
                    let mut d = RankVector::zeros(level.layout.clone());
                    for (i, o) in d.owned_mut().iter_mut().enumerate() {
                        let diag = level.matrix.get(i, s + i).unwrap_or(0.0);
                        if diag == 0.0 {
                            return Err(Error::IndefiniteOperator(format!(
                                "zero diagonal at dof {}",
                                s + i
                            )));
                        }
                        *o = 1.0 / diag;
                    }
                    *cache.borrow_mut() = Some(d);
                }
            }
            PcNode::Lu(c) | PcNode::Telescope(c) => c.validate(level, &ctx.comm)?,
            PcNode::Patch(cache) => {
                if cache.borrow().is_none() {
                    *cache.borrow_mut() = Some(PatchState::build(level, &ctx.comm)?);
                }
            }
            PcNode::Mg(mg) => {
                for sm in &mg.smoothers {
                    sm.setup(ctx, stack)?;
                }
                mg.coarse.setup(ctx, stack)?;
            }
        }
        if self.kind == KspType::Chebyshev && self.cheb_bounds.borrow().is_none() {
            let lmax = self.estimate_lmax(ctx, stack)?;
            *self.cheb_bounds.borrow_mut() =
                Some((self.cheb_min_factor * lmax, self.cheb_max_factor * lmax));
        }
        Ok(())
    }

    /// Power iteration on M^{-1} A with a fixed seeded start vector.
    fn estimate_lmax(&self, ctx: &mut Ctx, stack: &OperatorStack) -> Result<f64> {
        let level = &stack.levels[self.level];
        let (s, _) = level.layout.my_range();
        let mut x = RankVector::zeros(level.layout.clone());
        let seed = 0x6a09e667f3bcc909 ^ (self.level as u64);
        for (i, o) in x.owned_mut().iter_mut().enumerate() {
            *o = hashed_entry(seed, s + i);
        }
        let mut lmax = 1.0;
        for _ in 0..self.cheb_esteig_steps {
            halo_exchange(&ctx.comm, &mut x)?;
            let mut ax = timed_spmv(ctx, &level.matrix, &x, level.layout.clone())?;
            let y = self.pc_apply(ctx, stack, &mut ax)?;
            let nrm = norm2(&ctx.comm, &y)?;
            if nrm == 0.0 {
                return Ok(1.0);
            }
            x.copy_from(&y);
            x.scale(1.0 / nrm);
            lmax = nrm;
        }
        Ok(lmax)
    }

    fn pc_apply(&self, ctx: &mut Ctx, stack: &OperatorStack, r: &mut RankVector) -> Result<RankVector> {
        let level = &stack.levels[self.level];
        match &self.pc {
            PcNode::None => Ok(r.clone()),
            PcNode::Jacobi(cache) => {
                let guard = cache.borrow();
                let inv = guard.as_ref().expect("jacobi setup ran");
                let mut z = r.clone();
                for (zi, di) in z.owned_mut().iter_mut().zip(inv.owned()) {
                    *zi *= di;
                }
                Ok(z)
            }
            PcNode::Lu(c) | PcNode::Telescope(c) => c.apply(level, &ctx.comm, r),
            PcNode::Patch(cache) => {
                let guard = cache.borrow();
                guard.as_ref().expect("patch setup ran").apply(&ctx.comm, r)
            }
            PcNode::Mg(mg) => self.mg_apply(ctx, stack, mg, r),
        }
    }

    fn mg_apply(
        &self,
        ctx: &mut Ctx,
        stack: &OperatorStack,
        mg: &MgPc,
        b: &RankVector,
    ) -> Result<RankVector> {
        let top = self.level;
        if !mg.full {
            let mut x = RankVector::zeros(stack.levels[top].layout.clone());
            self.v_cycle(ctx, stack, mg, top, b, &mut x)?;
            return Ok(x);
        }
        // full multigrid: restrict the rhs to every level, solve on the
        // coarsest, then ascend with one V-cycle per level
        let mut rhs: Vec<RankVector> = Vec::with_capacity(top + 1);
        rhs.push(b.clone());
        for l in (0..top).rev() {
            let mut fine = rhs.last().unwrap().clone();
            halo_exchange(&ctx.comm, &mut fine)?;
            let rc = timed_spmv(
                ctx,
                &stack.transfers[l].restrict_bc,
                &fine,
                stack.levels[l].layout.clone(),
            )?;
            rhs.push(rc);
        }
        rhs.reverse(); // now rhs[l] is the level-l right-hand side

        let mut x = RankVector::zeros(stack.levels[0].layout.clone());
        ctx.timer.start("mg_coarse_solve");
        let res = mg.coarse.solve(ctx, stack, &rhs[0], &mut x);
        ctx.timer.stop("mg_coarse_solve");
        res?;
        for l in 1..=top {
            halo_exchange(&ctx.comm, &mut x)?;
            let mut xl = timed_spmv(
                ctx,
                &stack.transfers[l - 1].prolong_bc,
                &x,
                stack.levels[l].layout.clone(),
            )?;
            self.v_cycle(ctx, stack, mg, l, &rhs[l], &mut xl)?;
            x = xl;
        }
        Ok(x)
    }

    fn v_cycle(
        &self,
        ctx: &mut Ctx,
        stack: &OperatorStack,
        mg: &MgPc,
        level: usize,
        b: &RankVector,
        x: &mut RankVector,
    ) -> Result<()> {
        if level == 0 {
            ctx.timer.start("mg_coarse_solve");
            let res = mg.coarse.solve(ctx, stack, b, x);
            ctx.timer.stop("mg_coarse_solve");
            res?;
            return Ok(());
        }
        let smoother = &mg.smoothers[level - 1];
        let stage = format!("mg_level_{level}_smooth");

        ctx.timer.start(&stage);
        let res = smoother.solve(ctx, stack, b, x);
        ctx.timer.stop(&stage);
        res?;

        let mut r = residual(ctx, &stack.levels[level], b, x)?;
        halo_exchange(&ctx.comm, &mut r)?;
        let rc = timed_spmv(
            ctx,
            &stack.transfers[level - 1].restrict_bc,
            &r,
            stack.levels[level - 1].layout.clone(),
        )?;
        let mut ec = RankVector::zeros(stack.levels[level - 1].layout.clone());
        self.v_cycle(ctx, stack, mg, level - 1, &rc, &mut ec)?;
        halo_exchange(&ctx.comm, &mut ec)?;
        let corr = timed_spmv(
            ctx,
            &stack.transfers[level - 1].prolong_bc,
            &ec,
            stack.levels[level].layout.clone(),
        )?;
        x.axpy(1.0, &corr);

        ctx.timer.start(&stage);
        let res = smoother.solve(ctx, stack, b, x);
        ctx.timer.stop(&stage);
        res.map(|_| ())
    }

    /// Runs this node on `b` with initial guess `x` (updated in place).
    fn solve(
        &self,
        ctx: &mut Ctx,
        stack: &OperatorStack,
        b: &RankVector,
        x: &mut RankVector,
    ) -> Result<SolveStats> {
        match self.kind {
            KspType::Preonly => {
                let mut rhs = b.clone();
                let z = self.pc_apply(ctx, stack, &mut rhs)?;
                x.copy_from(&z);
                Ok(SolveStats {
                    iterations: 1,
                    residual_history: Vec::new(),
                    converged: true,
                })
            }
            KspType::Cg => self.cg(ctx, stack, b, x),
            KspType::Richardson => self.richardson(ctx, stack, b, x),
            KspType::Chebyshev => self.chebyshev(ctx, stack, b, x),
        }
    }

    fn target(&self, bnorm: f64) -> f64 {
        (self.rtol * bnorm).max(self.atol)
    }

    fn iteration_norm(
        &self,
        ctx: &mut Ctx,
        r: &RankVector,
        z: &RankVector,
    ) -> Result<Option<f64>> {
        match self.norm_type {
            NormType::Unpreconditioned => Ok(Some(norm2(&ctx.comm, r)?)),
            NormType::Preconditioned => Ok(Some(norm2(&ctx.comm, z)?)),
            NormType::None => Ok(None),
        }
    }

    fn cg(
        &self,
        ctx: &mut Ctx,
        stack: &OperatorStack,
        b: &RankVector,
        x: &mut RankVector,
    ) -> Result<SolveStats> {
        let level = &stack.levels[self.level];
        let mut stats = SolveStats::default();
        let checking = self.convergence_test == ConvergenceTest::Default;
        let bnorm = if checking { norm2(&ctx.comm, b)? } else { 0.0 };
        if checking && bnorm == 0.0 {
            x.fill(0.0);
            stats.converged = true;
            return Ok(stats);
        }
        let target = self.target(bnorm);
        let mut r = residual(ctx, level, b, x)?;
        let mut z = self.pc_apply(ctx, stack, &mut r)?;
        let mut p = z.clone();
        let mut rz = dot(&ctx.comm, &r, &z)?;
        for it in 0..self.max_it {
            if let Some(norm) = self.iteration_norm(ctx, &r, &z)? {
                stats.residual_history.push(norm);
                if checking && norm <= target {
                    stats.converged = true;
                    stats.iterations = it;
                    return Ok(stats);
                }
            }
            halo_exchange(&ctx.comm, &mut p)?;
            let w = timed_spmv(ctx, &level.matrix, &p, level.layout.clone())?;
            let pw = dot(&ctx.comm, &p, &w)?;
            if pw <= 0.0 {
                return Err(Error::IndefiniteOperator(format!(
                    "p^T A p = {pw:.3e} at iteration {it}"
                )));
            }
            let alpha = rz / pw;
            x.axpy(alpha, &p);
            r.axpy(-alpha, &w);
            z = self.pc_apply(ctx, stack, &mut r)?;
            let rz_new = dot(&ctx.comm, &r, &z)?;
            if rz_new < 0.0 {
                return Err(Error::IndefiniteOperator(format!(
                    "r^T M^-1 r = {rz_new:.3e} at iteration {it}"
                )));
            }
            let beta = rz_new / rz;
            rz = rz_new;
            p.aypx(beta, &z);
            stats.iterations = it + 1;
        }
        if checking {
            let rn = norm2(&ctx.comm, &r)?;
            if rn > target {
                return Err(Error::DivergedMaxIts {
                    iterations: self.max_it,
                    residual: rn,
                });
            }
            stats.converged = true;
        }
        Ok(stats)
    }

    fn richardson(
        &self,
        ctx: &mut Ctx,
        stack: &OperatorStack,
        b: &RankVector,
        x: &mut RankVector,
    ) -> Result<SolveStats> {
        let level = &stack.levels[self.level];
        let mut stats = SolveStats::default();
        let checking = self.convergence_test == ConvergenceTest::Default;
        let bnorm = if checking { norm2(&ctx.comm, b)? } else { 0.0 };
        if checking && bnorm == 0.0 {
            x.fill(0.0);
            stats.converged = true;
            return Ok(stats);
        }
        let target = self.target(bnorm);
        for it in 0..self.max_it {
            let mut r = residual(ctx, level, b, x)?;
            let z = self.pc_apply(ctx, stack, &mut r)?;
            if let Some(norm) = self.iteration_norm(ctx, &r, &z)? {
                stats.residual_history.push(norm);
                if checking && norm <= target {
                    stats.converged = true;
                    stats.iterations = it;
                    return Ok(stats);
                }
            }
            x.axpy(self.richardson_scale, &z);
            stats.iterations = it + 1;
        }
        if checking {
            let mut r = residual(ctx, level, b, x)?;
            let _ = &mut r;
            let rn = norm2(&ctx.comm, &r)?;
            if rn > target {
                return Err(Error::DivergedMaxIts {
                    iterations: self.max_it,
                    residual: rn,
                });
            }
            stats.converged = true;
        }
        Ok(stats)
    }

    /// Chebyshev semi-iteration on the spectrum bounds attached at setup.
    /// With `ksp_convergence_test skip` it runs exactly `max_it`
    /// iterations and computes no norms.
    fn chebyshev(
        &self,
        ctx: &mut Ctx,
        stack: &OperatorStack,
        b: &RankVector,
        x: &mut RankVector,
    ) -> Result<SolveStats> {
        let level = &stack.levels[self.level];
        let (lmin, lmax) = self
            .cheb_bounds
            .borrow()
            .expect("chebyshev bounds attached during setup");
        let theta = 0.5 * (lmax + lmin);
        let delta = 0.5 * (lmax - lmin);
        let mut stats = SolveStats::default();
        let checking = self.convergence_test == ConvergenceTest::Default;
        let bnorm = if checking { norm2(&ctx.comm, b)? } else { 0.0 };
        let target = self.target(bnorm);

        if delta.abs() <= 1e-14 * theta.abs() {
            // one-point spectrum degenerates to Richardson with step
            // 1/theta
            for it in 0..self.max_it {
                let mut r = residual(ctx, level, b, x)?;
                let z = self.pc_apply(ctx, stack, &mut r)?;
                if let Some(norm) = self.iteration_norm(ctx, &r, &z)? {
                    stats.residual_history.push(norm);
                    if checking && norm <= target {
                        stats.converged = true;
                        stats.iterations = it;
                        return Ok(stats);
                    }
                }
                x.axpy(1.0 / theta, &z);
                stats.iterations = it + 1;
            }
            stats.converged = !checking;
            return Ok(stats);
        }

        let sigma = theta / delta;
        let mut rho = 1.0 / sigma;
        let mut r = residual(ctx, level, b, x)?;
        let z = self.pc_apply(ctx, stack, &mut r)?;
        if let Some(norm) = self.iteration_norm(ctx, &r, &z)? {
            stats.residual_history.push(norm);
        }
        let mut d = z;
        d.scale(1.0 / theta);
        x.axpy(1.0, &d);
        stats.iterations = 1;
        for it in 1..self.max_it {
            let mut r = residual(ctx, level, b, x)?;
            let z = self.pc_apply(ctx, stack, &mut r)?;
            if let Some(norm) = self.iteration_norm(ctx, &r, &z)? {
                stats.residual_history.push(norm);
                if checking && norm <= target {
                    stats.converged = true;
                    stats.iterations = it;
                    return Ok(stats);
                }
            }
            let rho_new = 1.0 / (2.0 * sigma - rho);
            d.scale(rho_new * rho);
            d.axpy(2.0 * rho_new / delta, &z);
            x.axpy(1.0, &d);
            rho = rho_new;
            stats.iterations = it + 1;
        }
        if checking {
            let mut rr = residual(ctx, level, b, x)?;
            let _ = &mut rr;
            let rn = norm2(&ctx.comm, &rr)?;
            if rn > target {
                return Err(Error::DivergedMaxIts {
                    iterations: self.max_it,
                    residual: rn,
                });
            }
            stats.converged = true;
        }
        Ok(stats)
    }
}

impl Solver {
    /// Solves A x = b from the optional initial guess, returning the
    /// solution and the outer iteration record.
    pub fn solve(
        &self,
        ctx: &mut Ctx,
        b: &RankVector,
        x0: Option<&RankVector>,
    ) -> Result<(RankVector, SolveStats)> {
        let layout = self.stack.levels[self.root.level].layout.clone();
        let mut x = match x0 {
            Some(v) => v.clone(),
            None => RankVector::zeros(layout),
        };
        let stats = self.root.solve(ctx, &self.stack, b, &mut x)?;
        Ok((x, stats))
    }
}

struct KspDefaults {
    ksp_type: &'static str,
    pc_type: &'static str,
    max_it: usize,
}

/// Builds the solver tree from the option database, consuming every key
/// it understands and attaching Chebyshev bounds; leftover keys are
/// reported as unknown.
pub fn build_solver(
    opts: &OptionTree,
    stack: Arc<OperatorStack>,
    ctx: &mut Ctx,
) -> Result<Solver> {
    let root = build_ksp(
        opts,
        "",
        stack.finest(),
        &stack,
        ctx,
        &KspDefaults {
            ksp_type: "preonly",
            pc_type: "none",
            max_it: 10_000,
        },
    )?;
    opts.check_fully_consumed()?;
    root.setup(ctx, &stack)?;
    Ok(Solver { stack, root })
}

fn unknown_value(key: &str, value: &str) -> Error {
    Error::UnknownOption {
        key: format!("{key} {value}"),
        supported: SUPPORTED_KEYS.join("\n"),
    }
}

fn build_ksp(
    opts: &OptionTree,
    prefix: &str,
    level: usize,
    stack: &OperatorStack,
    ctx: &mut Ctx,
    defaults: &KspDefaults,
) -> Result<KspNode> {
    let key = |name: &str| format!("{prefix}{name}");

    let kind_key = key("ksp_type");
    let kind_raw = opts.take(&kind_key).unwrap_or(defaults.ksp_type);
    let kind = match kind_raw {
        "preonly" => KspType::Preonly,
        "cg" => KspType::Cg,
        "richardson" => KspType::Richardson,
        "chebyshev" => KspType::Chebyshev,
        other => return Err(unknown_value(&kind_key, other)),
    };

    let max_it = opts
        .take_parsed::<usize>(&key("ksp_max_it"), "nonnegative integer")?
        .unwrap_or(defaults.max_it);
    let rtol = opts
        .take_parsed::<f64>(&key("ksp_rtol"), "relative tolerance")?
        .unwrap_or(1e-5);
    let atol = opts
        .take_parsed::<f64>(&key("ksp_atol"), "absolute tolerance")?
        .unwrap_or(1e-50);

    let norm_key = key("ksp_norm_type");
    let norm_type = match opts.take(&norm_key) {
        None => match kind {
            KspType::Preonly => NormType::None,
            _ => NormType::Unpreconditioned,
        },
        Some("unpreconditioned") => NormType::Unpreconditioned,
        Some("preconditioned") => NormType::Preconditioned,
        Some("none") => NormType::None,
        Some(other) => {
            return Err(Error::InvalidValue {
                key: norm_key,
                value: other.to_string(),
                hint: "unpreconditioned | preconditioned | none".into(),
            })
        }
    };

    let conv_key = key("ksp_convergence_test");
    let convergence_test = match opts.take(&conv_key) {
        None | Some("default") => ConvergenceTest::Default,
        Some("skip") => ConvergenceTest::Skip,
        Some(other) => {
            return Err(Error::InvalidValue {
                key: conv_key,
                value: other.to_string(),
                hint: "default | skip".into(),
            })
        }
    };

    let richardson_scale = opts
        .take_parsed::<f64>(&key("ksp_richardson_scale"), "damping factor")?
        .unwrap_or(1.0);
    let cheb_esteig_steps = opts
        .take_parsed::<usize>(&key("ksp_chebyshev_esteig_steps"), "power iteration steps")?
        .unwrap_or(20);
    let cheb_min_factor = opts
        .take_parsed::<f64>(&key("ksp_chebyshev_esteig_min_factor"), "safety factor")?
        .unwrap_or(0.1);
    let cheb_max_factor = opts
        .take_parsed::<f64>(&key("ksp_chebyshev_esteig_max_factor"), "safety factor")?
        .unwrap_or(1.1);
    let eig_key = key("ksp_chebyshev_eigenvalues");
    let cheb_bounds = match opts.take(&eig_key) {
        None => None,
        Some(raw) => {
            let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
            let parsed: Option<(f64, f64)> = match parts.as_slice() {
                [a, b] => a.parse().ok().zip(b.parse().ok()),
                _ => None,
            };
            Some(parsed.ok_or_else(|| Error::InvalidValue {
                key: eig_key.clone(),
                value: raw.to_string(),
                hint: "expected `lmin,lmax`".into(),
            })?)
        }
    };

    let pc_key = key("pc_type");
    let pc_raw = opts.take(&pc_key).unwrap_or(defaults.pc_type).to_string();
    let pc = match pc_raw.as_str() {
        "none" => PcNode::None,
        "jacobi" => PcNode::Jacobi(RefCell::new(None)),
        "lu" => {
            let cap = opts
                .take_parsed::<usize>(&key("pc_lu_max_dofs"), "dof cap")?
                .unwrap_or(20_000);
            PcNode::Lu(CoarseSolve::new(ctx.comm.size(), cap))
        }
        "telescope" => {
            let factor_key = key("pc_telescope_reduction_factor");
            let factor = opts
                .take_parsed::<usize>(&factor_key, "group size")?
                .ok_or_else(|| Error::InvalidValue {
                    key: factor_key.clone(),
                    value: String::new(),
                    hint: "telescope requires a reduction factor".into(),
                })?;
            let sub_key = key("pc_telescope_subcomm_type");
            if let Some(v) = opts.take(&sub_key) {
                if v != "contiguous" {
                    return Err(Error::InvalidValue {
                        key: sub_key,
                        value: v.to_string(),
                        hint: "only contiguous subcommunicators are supported".into(),
                    });
                }
            }
            let inner_key = key("telescope_pc_type");
            if let Some(v) = opts.take(&inner_key) {
                if v != "lu" {
                    return Err(Error::InvalidValue {
                        key: inner_key,
                        value: v.to_string(),
                        hint: "the telescoped inner solver must be lu".into(),
                    });
                }
            }
            let cap = opts
                .take_parsed::<usize>(&key("telescope_pc_lu_max_dofs"), "dof cap")?
                .unwrap_or(20_000);
            PcNode::Telescope(CoarseSolve::new(factor, cap))
        }
        "patch" => {
            let ctype_key = key("patch_pc_patch_construct_type");
            if let Some(v) = opts.take(&ctype_key) {
                if v != "star" {
                    return Err(Error::InvalidValue {
                        key: ctype_key,
                        value: v.to_string(),
                        hint: "only star patches are supported".into(),
                    });
                }
            }
            let cdim_key = key("patch_pc_patch_construct_dim");
            if let Some(v) = opts.take(&cdim_key) {
                if v != "0" {
                    return Err(Error::InvalidValue {
                        key: cdim_key,
                        value: v.to_string(),
                        hint: "only vertex (dim 0) patches are supported".into(),
                    });
                }
            }
            PcNode::Patch(RefCell::new(None))
        }
        "mg" => {
            if !prefix.is_empty() {
                return Err(Error::InvalidValue {
                    key: pc_key,
                    value: pc_raw.clone(),
                    hint: "multigrid may only appear at the outermost level".into(),
                });
            }
            if !stack.hierarchical {
                return Err(Error::MissingHierarchy);
            }
            let mg_type_key = key("pc_mg_type");
            let full = match opts.take(&mg_type_key) {
                None | Some("v") | Some("multiplicative") => false,
                Some("full") => true,
                Some(other) => {
                    return Err(Error::InvalidValue {
                        key: mg_type_key,
                        value: other.to_string(),
                        hint: "v | multiplicative | full".into(),
                    })
                }
            };
            let log = opts.take(&key("pc_mg_log")).is_some();
            let mut smoothers = Vec::new();
            for l in 1..=stack.finest() {
                smoothers.push(build_ksp(
                    opts,
                    &format!("{prefix}mg_levels_"),
                    l,
                    stack,
                    ctx,
                    &KspDefaults {
                        ksp_type: "chebyshev",
                        pc_type: "jacobi",
                        max_it: 2,
                    },
                )?);
            }
            let coarse = Box::new(build_ksp(
                opts,
                &format!("{prefix}mg_coarse_"),
                0,
                stack,
                ctx,
                &KspDefaults {
                    ksp_type: "preonly",
                    pc_type: "lu",
                    max_it: 10_000,
                },
            )?);
            PcNode::Mg(Box::new(MgPc {
                full,
                log,
                smoothers,
                coarse,
            }))
        }
        other => return Err(unknown_value(&pc_key, other)),
    };
    let _ = match &pc {
        PcNode::Mg(mg) => mg.log,
        _ => false,
    };

    Ok(KspNode {
        kind,
        level,
        max_it,
        rtol,
        atol,
        norm_type,
        convergence_test,
        richardson_scale,
        cheb_esteig_steps,
        cheb_min_factor,
        cheb_max_factor,
        cheb_bounds: RefCell::new(cheb_bounds),
        pc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runtime::spmd_run;

    fn laplacian(n: usize) -> CsrMatrix {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, n, &t)
    }

    fn diagonal(values: &[f64]) -> CsrMatrix {
        let t: Vec<(usize, usize, f64)> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| (i, i, v))
            .collect();
        CsrMatrix::from_triplets(values.len(), values.len(), &t)
    }

    fn algebraic_stack(m: CsrMatrix) -> Arc<OperatorStack> {
        let layout = VectorLayout::serial(m.nrows_global);
        Arc::new(OperatorStack::single(LevelContext::algebraic(
            Arc::new(m),
            layout,
        )))
    }

    fn vector_of(stack: &OperatorStack, data: &[f64]) -> RankVector {
        let mut v = RankVector::zeros(stack.levels[0].layout.clone());
        v.owned_mut().copy_from_slice(data);
        v
    }

    #[test]
    fn cg_solves_small_spd_in_two_iterations() {
        let stack = algebraic_stack(CsrMatrix::from_triplets(
            2,
            2,
            &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 2.0)],
        ));
        let out = spmd_run(1, |ctx| {
            let opts = OptionTree::from_text("ksp_type cg\nksp_rtol 1e-12\n");
            let solver = build_solver(&opts, stack.clone(), ctx)?;
            let b = vector_of(&stack, &[3.0, 3.0]);
            let (x, stats) = solver.solve(ctx, &b, None)?;
            Ok((x.owned().to_vec(), stats.iterations))
        })
        .unwrap();
        let (x, its) = &out[0];
        assert!((x[0] - 1.0).abs() < 1e-10 && (x[1] - 1.0).abs() < 1e-10);
        assert!(*its <= 2, "Krylov exactness after n steps, got {its}");
    }

    #[test]
    fn cg_detects_indefinite_operator() {
        let stack = algebraic_stack(CsrMatrix::from_triplets(
            2,
            2,
            &[(0, 0, 1.0), (0, 1, 2.0), (1, 0, 2.0), (1, 1, 1.0)],
        ));
        let err = spmd_run(1, |ctx| {
            let opts = OptionTree::from_text("ksp_type cg\n");
            let solver = build_solver(&opts, stack.clone(), ctx)?;
            let b = vector_of(&stack, &[1.0, -1.0]);
            solver.solve(ctx, &b, None).map(|_| ())
        })
        .unwrap_err();
        assert!(matches!(err, Error::IndefiniteOperator(_)));
    }

    #[test]
    fn cg_reports_divergence_at_max_it() {
        let stack = algebraic_stack(laplacian(50));
        let err = spmd_run(1, |ctx| {
            let opts = OptionTree::from_text("ksp_type cg\nksp_rtol 1e-14\nksp_max_it 2\n");
            let solver = build_solver(&opts, stack.clone(), ctx)?;
            let b = vector_of(&stack, &vec![1.0; 50]);
            solver.solve(ctx, &b, None).map(|_| ())
        })
        .unwrap_err();
        assert!(matches!(err, Error::DivergedMaxIts { .. }));
    }

    #[test]
    fn zero_rhs_returns_zero_without_iterating() {
        let stack = algebraic_stack(laplacian(10));
        let out = spmd_run(1, |ctx| {
            let opts = OptionTree::from_text("ksp_type cg\n");
            let solver = build_solver(&opts, stack.clone(), ctx)?;
            let b = RankVector::zeros(stack.levels[0].layout.clone());
            let mut x0 = RankVector::zeros(stack.levels[0].layout.clone());
            x0.fill(3.0);
            let (x, stats) = solver.solve(ctx, &b, Some(&x0))?;
            Ok((x.owned().to_vec(), stats.iterations))
        })
        .unwrap();
        assert!(out[0].0.iter().all(|&v| v == 0.0));
        assert_eq!(out[0].1, 0);
    }

    #[test]
    fn chebyshev_one_point_spectrum_solves_diagonal_in_one_step() {
        let stack = algebraic_stack(diagonal(&[3.0, 3.0, 3.0]));
        let out = spmd_run(1, |ctx| {
            let opts = OptionTree::from_text(
                "ksp_type chebyshev\nksp_max_it 1\nksp_convergence_test skip\n\
                 ksp_norm_type none\nksp_chebyshev_eigenvalues 3.0,3.0\n",
            );
            let solver = build_solver(&opts, stack.clone(), ctx)?;
            let b = vector_of(&stack, &[6.0, 9.0, -3.0]);
            let (x, _) = solver.solve(ctx, &b, None)?;
            Ok(x.owned().to_vec())
        })
        .unwrap();
        assert_eq!(out[0], vec![2.0, 3.0, -1.0]);
    }

    /// Chebyshev error after m steps equals the shifted-scaled Chebyshev
    /// residual polynomial evaluated at each eigenvalue.
    #[test]
    fn chebyshev_matches_residual_polynomial_oracle() {
        let eigs = [1.0, 2.0, 3.0, 4.0];
        let (lmin, lmax) = (1.0, 4.0);
        let cheb_t = |m: usize, t: f64| -> f64 {
            // T_m by recurrence, valid for |t| >= 1 too
            let (mut a, mut b) = (1.0, t);
            match m {
                0 => 1.0,
                1 => t,
                _ => {
                    for _ in 2..=m {
                        let c = 2.0 * t * b - a;
                        a = b;
                        b = c;
                    }
                    b
                }
            }
        };
        let theta = 0.5 * (lmax + lmin);
        let delta = 0.5 * (lmax - lmin);
        for m in 1..=5usize {
            let stack = algebraic_stack(diagonal(&eigs));
            let out = spmd_run(1, |ctx| {
                let opts = OptionTree::from_pairs([
                    ("ksp_type", "chebyshev".to_string()),
                    ("ksp_max_it", m.to_string()),
                    ("ksp_convergence_test", "skip".to_string()),
                    ("ksp_norm_type", "none".to_string()),
                    ("ksp_chebyshev_eigenvalues", format!("{lmin},{lmax}")),
                ]);
                let solver = build_solver(&opts, stack.clone(), ctx)?;
                // exact solution ones: b = eigs, start from zero
                let b = vector_of(&stack, &eigs);
                let (x, _) = solver.solve(ctx, &b, None)?;
                Ok(x.owned().to_vec())
            })
            .unwrap();
            for (i, &lam) in eigs.iter().enumerate() {
                let expected_err = cheb_t(m, (theta - lam) / delta) / cheb_t(m, theta / delta);
                let got_err = 1.0 - out[0][i];
                assert!(
                    (got_err - expected_err).abs() < 1e-12,
                    "m={m} eig={lam}: {got_err} vs {expected_err}"
                );
            }
        }
    }

    #[test]
    fn richardson_with_jacobi_converges_on_diagonal_system() {
        let stack = algebraic_stack(diagonal(&[2.0, 4.0, 8.0]));
        let out = spmd_run(1, |ctx| {
            let opts =
                OptionTree::from_text("ksp_type richardson\npc_type jacobi\nksp_rtol 1e-12\n");
            let solver = build_solver(&opts, stack.clone(), ctx)?;
            let b = vector_of(&stack, &[2.0, 8.0, 24.0]);
            let (x, stats) = solver.solve(ctx, &b, None)?;
            Ok((x.owned().to_vec(), stats.iterations))
        })
        .unwrap();
        // jacobi is exact for diagonal systems: one application
        assert!(out[0].0.iter().zip([1.0, 2.0, 3.0]).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(out[0].1 <= 1);
    }

    #[test]
    fn preonly_lu_is_a_direct_solve() {
        let stack = algebraic_stack(laplacian(12));
        let out = spmd_run(1, |ctx| {
            let opts = OptionTree::from_text("ksp_type preonly\npc_type lu\n");
            let solver = build_solver(&opts, stack.clone(), ctx)?;
            let b = vector_of(&stack, &vec![1.0; 12]);
            let (x, _) = solver.solve(ctx, &b, None)?;
            // residual of the direct solve
            let ax = stack.levels[0].matrix.spmv_full(x.owned());
            let worst = ax
                .iter()
                .map(|v| (v - 1.0).abs())
                .fold(0.0_f64, f64::max);
            Ok(worst)
        })
        .unwrap();
        assert!(out[0] < 1e-10);
    }

    #[test]
    fn lu_cap_reports_coarse_problem_too_large() {
        let stack = algebraic_stack(laplacian(12));
        let err = spmd_run(1, |ctx| {
            let opts = OptionTree::from_text("ksp_type preonly\npc_type lu\npc_lu_max_dofs 4\n");
            let solver = build_solver(&opts, stack.clone(), ctx)?;
            let b = vector_of(&stack, &vec![1.0; 12]);
            solver.solve(ctx, &b, None).map(|_| ())
        })
        .unwrap_err();
        assert!(matches!(err, Error::CoarseProblemTooLarge { dofs: 12, cap: 4 }));
    }

    #[test]
    fn bad_telescope_factor_rejected() {
        let stack = algebraic_stack(laplacian(8));
        let err = spmd_run(1, |ctx| {
            let opts = OptionTree::from_text(
                "ksp_type preonly\npc_type telescope\npc_telescope_reduction_factor 3\n",
            );
            let solver = build_solver(&opts, stack.clone(), ctx)?;
            let b = vector_of(&stack, &vec![1.0; 8]);
            solver.solve(ctx, &b, None).map(|_| ())
        })
        .unwrap_err();
        assert!(matches!(
            err,
            Error::BadTelescopeFactor { factor: 3, team: 1 }
        ));
    }

    #[test]
    fn mg_without_hierarchy_is_missing_hierarchy() {
        let stack = algebraic_stack(laplacian(8));
        let err = spmd_run(1, |ctx| {
            let opts = OptionTree::from_text("ksp_type preonly\npc_type mg\n");
            build_solver(&opts, stack.clone(), ctx).map(|_| ())
        })
        .unwrap_err();
        assert!(matches!(err, Error::MissingHierarchy));
    }

    #[test]
    fn unknown_pc_type_lists_supported_keys() {
        let stack = algebraic_stack(laplacian(4));
        let err = spmd_run(1, |ctx| {
            let opts = OptionTree::from_text("pc_type frobnicate\n");
            build_solver(&opts, stack.clone(), ctx).map(|_| ())
        })
        .unwrap_err();
        match err {
            Error::UnknownOption { key, supported } => {
                assert!(key.contains("frobnicate"));
                assert!(supported.contains("pc_type"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unconsumed_option_rejected_at_build() {
        let stack = algebraic_stack(laplacian(4));
        let err = spmd_run(1, |ctx| {
            let opts = OptionTree::from_text("ksp_type cg\nmg_levels_ksp_type chebyshev\n");
            build_solver(&opts, stack.clone(), ctx).map(|_| ())
        })
        .unwrap_err();
        assert!(matches!(err, Error::UnknownOption { .. }));
    }
}
