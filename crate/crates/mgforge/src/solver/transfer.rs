//! Inter-level transfer operators for nested CG spaces.
//!
//! Prolongation is nodal interpolation: every fine lattice node evaluates
//! the coarse basis inside its containing coarse cell, which reproduces
//! coarse functions exactly on nested meshes. Restriction is the
//! transpose. The multigrid cycle uses copies with Dirichlet rows and
//! columns zeroed so corrections and restricted residuals respect the
//! boundary conditions; the raw interpolant is kept for the Galerkin
//! identity.

use crate::assembly::DofMap;
use crate::error::Result;
use crate::fe::lagrange_element;
use crate::la::{CsrMatrix, VectorLayout};
use crate::mesh::SimplexMesh;
use crate::runtime::Communicator;
use std::sync::Arc;

/// Transfer pair between one coarse/fine level pair.
#[derive(Debug, Clone)]
pub struct TransferOps {
    /// Interpolation, fine rows x coarse cols, owned fine rows only.
    pub prolong_raw: CsrMatrix,
    /// Interpolation with boundary rows and columns zeroed.
    pub prolong_bc: CsrMatrix,
    /// Transpose of `prolong_bc`, owned coarse rows.
    pub restrict_bc: CsrMatrix,
}

/// Builds the transfer pair for one level pair. Each rank computes the
/// rows of its owned fine dofs; the distributed transpose is assembled by
/// shipping entries to the coarse row owners.
pub fn build_transfer(
    coarse_mesh: &SimplexMesh,
    coarse_dofmap: &DofMap,
    fine_dofmap: &DofMap,
    fine_layout: &Arc<VectorLayout>,
    coarse_layout: &Arc<VectorLayout>,
    comm: &Communicator,
) -> Result<TransferOps> {
    let dim = coarse_mesh.dim;
    let element = lagrange_element(dim, coarse_dofmap.degree)?;
    let (fs, fe_) = fine_layout.my_range();
    let nd = coarse_dofmap.ndof_cell;

    let mut pattern: Vec<Vec<usize>> = Vec::with_capacity(fe_ - fs);
    let mut rows: Vec<(Vec<usize>, Vec<f64>)> = Vec::with_capacity(fe_ - fs);
    for g in fs..fe_ {
        let x = fine_dofmap.dof_coords(g);
        let (cell, bary) = coarse_mesh.locate(&x[..dim]);
        let xi = &bary[1..=dim];
        let (values, _) = element.eval(xi);
        let cols = coarse_dofmap.cell_dofs_of(cell);
        pattern.push(cols.to_vec());
        rows.push((cols.to_vec(), values));
    }
    let mut prolong_raw = CsrMatrix::from_pattern(
        fine_dofmap.global_dofs,
        coarse_dofmap.global_dofs,
        fs,
        pattern,
    );
    for (local, (cols, values)) in rows.iter().enumerate() {
        debug_assert_eq!(cols.len(), nd);
        for (c, v) in cols.iter().zip(values) {
            prolong_raw.set_at(local, *c, *v);
        }
    }

    // boundary handling: zero rows of constrained fine dofs and columns
    // of constrained coarse dofs
    let mut prolong_bc = prolong_raw.clone();
    for local in 0..prolong_bc.local_rows() {
        let g = fs + local;
        let (s, e) = (
            prolong_bc.row_offsets[local],
            prolong_bc.row_offsets[local + 1],
        );
        if fine_dofmap.boundary[g] {
            for v in &mut prolong_bc.vals[s..e] {
                *v = 0.0;
            }
        } else {
            for i in s..e {
                if coarse_dofmap.boundary[prolong_bc.cols[i]] {
                    prolong_bc.vals[i] = 0.0;
                }
            }
        }
    }

    // distributed transpose: ship (coarse_row, fine_col, value) to the
    // coarse owner; sort per row by fine column for a canonical layout
    let ranks = comm.size();
    let mut send_idx: Vec<Vec<usize>> = vec![Vec::new(); ranks];
    let mut send_val: Vec<Vec<f64>> = vec![Vec::new(); ranks];
    for local in 0..prolong_bc.local_rows() {
        let g_fine = fs + local;
        let (cols, vals) = prolong_bc.row(local);
        for (&gc, &v) in cols.iter().zip(vals) {
            let owner = coarse_dofmap.owner_of(gc);
            send_idx[owner].push(gc);
            send_idx[owner].push(g_fine);
            send_val[owner].push(v);
        }
    }
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for dst in 0..ranks {
        if dst == comm.rank() {
            for (pair, &v) in send_idx[dst].chunks_exact(2).zip(&send_val[dst]) {
                triplets.push((pair[0], pair[1], v));
            }
        } else {
            comm.send_indices(dst, std::mem::take(&mut send_idx[dst]));
            comm.send_values(dst, std::mem::take(&mut send_val[dst]));
        }
    }
    for src in 0..ranks {
        if src == comm.rank() {
            continue;
        }
        let idx = comm.recv_indices(src)?;
        let val = comm.recv_values(src)?;
        for (pair, v) in idx.chunks_exact(2).zip(val) {
            triplets.push((pair[0], pair[1], v));
        }
    }
    let (cs, ce) = coarse_layout.my_range();
    triplets.sort_by_key(|&(r, c, _)| (r, c));
    triplets.dedup_by_key(|&mut (r, c, _)| (r, c));
    let mut pattern: Vec<Vec<usize>> = vec![Vec::new(); ce - cs];
    for &(r, c, _) in &triplets {
        debug_assert!((cs..ce).contains(&r));
        pattern[r - cs].push(c);
    }
    let mut restrict_bc = CsrMatrix::from_pattern(
        coarse_dofmap.global_dofs,
        fine_dofmap.global_dofs,
        cs,
        pattern,
    );
    for &(r, c, v) in &triplets {
        restrict_bc.set_at(r - cs, c, v);
    }

    Ok(TransferOps {
        prolong_raw,
        prolong_bc,
        restrict_bc,
    })
}
