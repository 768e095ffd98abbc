//! Gathered dense coarse solves, plain or telescoped.
//!
//! The team is split into contiguous groups of `group_size` ranks; every
//! group root gathers the full coarse system, factors it with dense LU,
//! and broadcasts solutions inside the group. Identical gathered data and
//! a deterministic factorization leave every rank with bitwise identical
//! coarse solutions whatever the grouping, which is what makes telescope
//! factors interchangeable. A plain `lu` coarse solve is the single-group
//! special case.

use super::LevelContext;
use crate::error::{Error, Result};
use crate::la::par::allgather_full;
use crate::la::{lu_factor, DenseFactor, DenseMatrix, RankVector};
use crate::runtime::Communicator;
use std::cell::RefCell;

pub struct CoarseSolve {
    /// Ranks per telescope group; equal to the team size for plain LU.
    pub group_size: usize,
    /// Dense dof cap; exceeding it asks for more multigrid levels.
    pub max_dofs: usize,
    state: RefCell<Option<CoarseState>>,
}

struct CoarseState {
    group: Communicator,
    factor: Option<DenseFactor>,
}

impl CoarseSolve {
    pub fn new(group_size: usize, max_dofs: usize) -> Self {
        CoarseSolve {
            group_size,
            max_dofs,
            state: RefCell::new(None),
        }
    }

    /// Validates the grouping and cap without factoring anything.
    pub fn validate(&self, level: &LevelContext, comm: &Communicator) -> Result<()> {
        if self.group_size == 0 || comm.size() % self.group_size != 0 {
            return Err(Error::BadTelescopeFactor {
                factor: self.group_size,
                team: comm.size(),
            });
        }
        let dofs = level.matrix.nrows_global;
        if dofs > self.max_dofs {
            return Err(Error::CoarseProblemTooLarge {
                dofs,
                cap: self.max_dofs,
            });
        }
        Ok(())
    }

    fn setup(&self, level: &LevelContext, comm: &Communicator) -> Result<()> {
        if self.state.borrow().is_some() {
            return Ok(());
        }
        self.validate(level, comm)?;
        let group = comm.split(comm.rank() / self.group_size)?;
        // ship owned rows to everyone; group roots densify and factor
        let a = &level.matrix;
        let mut idx = Vec::with_capacity(a.local_rows() + a.nnz() + 1);
        idx.push(a.local_rows());
        for r in 0..a.local_rows() {
            let (cols, _) = a.row(r);
            idx.push(cols.len());
            idx.extend_from_slice(cols);
        }
        let all_idx = comm.allgather_usizes(&idx)?;
        let all_val = comm.allgather_f64s(&a.vals)?;
        let factor = if group.rank() == 0 {
            let n = level.matrix.nrows_global;
            let mut dense = DenseMatrix::zeros(n, n);
            let mut row = 0usize;
            for (ri, rv) in all_idx.iter().zip(&all_val) {
                let mut ai = 0usize;
                let nrows = ri[ai];
                ai += 1;
                let mut av = 0usize;
                for _ in 0..nrows {
                    let len = ri[ai];
                    ai += 1;
                    for k in 0..len {
                        *dense.at_mut(row, ri[ai + k]) = rv[av + k];
                    }
                    ai += len;
                    av += len;
                    row += 1;
                }
            }
            debug_assert_eq!(row, level.matrix.nrows_global);
            Some(lu_factor(dense)?)
        } else {
            None
        };
        *self.state.borrow_mut() = Some(CoarseState { group, factor });
        Ok(())
    }

    /// Solves the gathered system; every rank returns its owned slice of
    /// the (team-wide identical) solution.
    pub fn apply(
        &self,
        level: &LevelContext,
        comm: &Communicator,
        b: &RankVector,
    ) -> Result<RankVector> {
        self.setup(level, comm)?;
        let state = self.state.borrow();
        let state = state.as_ref().unwrap();
        let b_full = allgather_full(comm, b)?;
        let x_full = match &state.factor {
            Some(f) => state.group.broadcast_f64s(f.solve(&b_full))?,
            None => state.group.broadcast_f64s(Vec::new())?,
        };
        let (s, e) = level.layout.my_range();
        let mut x = RankVector::zeros(level.layout.clone());
        x.owned_mut().copy_from_slice(&x_full[s..e]);
        Ok(x)
    }
}
