//! Global dof numbering, parallel assembly of compiled kernels into
//! CSR/vector storage, and Dirichlet BC application.
//!
//! Global dof ids come from structured lattice index arithmetic: a CG-k
//! node on the resolution-N grid lives on the (kN+1)^d nodal lattice, and
//! shared lattice sites on cell interfaces receive identical ids without
//! any negotiation. Ownership follows the slab partition with nodes on a
//! cut plane owned by the lower rank, which keeps per-entry accumulation
//! order equal to the serial cell order: local cells always precede the
//! remote cells that contribute to an owned row, so assembled values are
//! bitwise identical for every rank count.

use crate::error::{Error, Result};
use crate::fe::lagrange_element;
use crate::forms::{BcSpec, ConstantBindings, SpaceSpec};
use crate::kernel::{execute_kernel, ElementTensor, KernelIR};
use crate::la::{CsrMatrix, RankVector, VectorLayout};
use crate::mesh::{Partition, SimplexMesh};
use crate::runtime::Communicator;
use std::sync::Arc;

/// Closed-form dof count for CG-k on the structured unit square/cube:
/// (kN+1)^d. Pure counting; valid far beyond buildable mesh sizes.
pub fn cg_dof_count(dim: usize, resolution: usize, degree: usize) -> usize {
    (degree * resolution + 1).pow(dim as u32)
}

/// Cell-to-global dof numbering plus ownership and boundary metadata.
#[derive(Debug, Clone)]
pub struct DofMap {
    pub dim: usize,
    pub degree: usize,
    pub resolution: usize,
    pub global_dofs: usize,
    pub ndof_cell: usize,
    /// `ncells * ndof_cell`, element node order per cell.
    pub cell_dofs: Vec<usize>,
    /// Dofs constrained by the boundary condition markers.
    pub boundary: Vec<bool>,
    /// Contiguous owned dof ranges per rank.
    pub owner_ranges: Vec<(usize, usize)>,
    /// Slab layer ranges per rank (copied from the partition).
    pub(crate) slab_ranges: Vec<(usize, usize)>,
}

impl DofMap {
    /// Lattice coordinates of a global dof on the nodal grid.
    pub fn dof_lattice(&self, g: usize) -> [usize; 3] {
        let m = self.degree * self.resolution + 1;
        if self.dim == 2 {
            [g % m, g / m, 0]
        } else {
            [g % m, (g / m) % m, g / (m * m)]
        }
    }

    /// Physical coordinates of a dof's lattice node.
    pub fn dof_coords(&self, g: usize) -> [f64; 3] {
        let lat = self.dof_lattice(g);
        let h = (self.degree * self.resolution) as f64;
        [lat[0] as f64 / h, lat[1] as f64 / h, lat[2] as f64 / h]
    }

    pub fn cell_dofs_of(&self, cell: usize) -> &[usize] {
        &self.cell_dofs[cell * self.ndof_cell..(cell + 1) * self.ndof_cell]
    }

    pub fn owner_of(&self, g: usize) -> usize {
        self.owner_ranges.partition_point(|&(_, e)| e <= g)
    }

    pub fn num_boundary_dofs(&self) -> usize {
        self.boundary.iter().filter(|&&b| b).count()
    }
}

/// Builds the dof map for a CG space on a structured mesh under a slab
/// partition. Boundary dofs are the lattice nodes on facets carrying any
/// of the BC markers.
pub fn build_dofmap(
    mesh: &SimplexMesh,
    space: &SpaceSpec,
    bcs: &BcSpec,
    partition: &Partition,
) -> Result<DofMap> {
    assert_eq!(mesh.dim, space.dim);
    let dim = mesh.dim;
    let k = space.degree;
    let n = mesh.resolution;
    let element = lagrange_element(dim, k)?;
    let m = k * n + 1;
    let global_dofs = cg_dof_count(dim, n, k);

    let lattice_id = |lat: &[usize; 3]| -> usize {
        if dim == 2 {
            lat[0] + m * lat[1]
        } else {
            lat[0] + m * (lat[1] + m * lat[2])
        }
    };

    let ncells = mesh.num_cells();
    let ndof_cell = element.ndof();
    let mut cell_dofs = Vec::with_capacity(ncells * ndof_cell);
    for c in 0..ncells {
        let vs = mesh.cell(c);
        let vlats: Vec<[usize; 3]> = vs.iter().map(|&v| mesh.vertex_lattice(v)).collect();
        for bary in &element.node_bary {
            let mut lat = [0usize; 3];
            for (corner, &weight) in bary.iter().enumerate().take(dim + 1) {
                for (a, l) in lat.iter_mut().enumerate().take(dim) {
                    *l += weight * vlats[corner][a];
                }
            }
            cell_dofs.push(lattice_id(&lat));
        }
    }

    // boundary mask from marker faces: marker 2a+1 is axis a at 0,
    // marker 2a+2 is axis a at the far side
    let max_marker = 2 * dim as u8;
    for &marker in &bcs.markers {
        if marker == 0 || marker > max_marker {
            return Err(Error::UnknownMarker(marker));
        }
    }
    let kn = k * n;
    let mut boundary = vec![false; global_dofs];
    for (g, b) in boundary.iter_mut().enumerate() {
        let lat = if dim == 2 {
            [g % m, g / m, 0]
        } else {
            [g % m, (g / m) % m, g / (m * m)]
        };
        for &marker in &bcs.markers {
            let axis = ((marker - 1) / 2) as usize;
            let high = (marker - 1) % 2 == 1;
            if (!high && lat[axis] == 0) || (high && lat[axis] == kn) {
                *b = true;
                break;
            }
        }
    }

    // dof ownership: nodes on a cut plane go to the lower rank
    let owner_ranges: Vec<(usize, usize)> = partition
        .slab_ranges
        .iter()
        .enumerate()
        .map(|(r, &(zs, ze))| {
            let plane = m.pow(dim as u32 - 1);
            let lo = (k * zs + usize::from(r > 0)) * plane;
            let hi = (k * ze + 1) * plane;
            (lo, hi)
        })
        .collect();
    debug_assert_eq!(owner_ranges.last().unwrap().1, global_dofs);

    Ok(DofMap {
        dim,
        degree: k,
        resolution: n,
        global_dofs,
        ndof_cell,
        cell_dofs,
        boundary,
        owner_ranges,
        slab_ranges: partition.slab_ranges.clone(),
    })
}

/// Cells in the layer closure [zs-1, ze+2) of a rank's slab: everything
/// whose dofs a rank can touch through assembly, star patches, or
/// inter-level transfer. The second layer above covers restriction rows
/// on a coarse cut plane, whose basis support spans two fine layers.
pub(crate) fn closure_cells(dofmap: &DofMap, rank: usize) -> std::ops::Range<usize> {
    let n = dofmap.resolution;
    let (zs, ze) = dofmap.slab_ranges[rank];
    let per_layer = if dofmap.dim == 2 { 2 * n } else { 6 * n * n };
    let lo = zs.saturating_sub(1) * per_layer;
    let hi = (ze + 2).min(n) * per_layer;
    lo..hi
}

/// Builds the vector layout for `rank`: ghosts are every closure-cell dof
/// the rank does not own. All ranks' ghost lists are derived from the
/// same replicated dof map, so send/receive plans agree by construction.
pub fn build_layout(dofmap: &DofMap, rank: usize) -> Arc<VectorLayout> {
    let ranks = dofmap.owner_ranges.len();
    let ghosts_per_rank: Vec<Vec<usize>> = (0..ranks)
        .map(|r| {
            let (s, e) = dofmap.owner_ranges[r];
            let mut ghosts: Vec<usize> = closure_cells(dofmap, r)
                .flat_map(|c| dofmap.cell_dofs_of(c).iter().copied())
                .filter(|&g| g < s || g >= e)
                .collect();
            ghosts.sort_unstable();
            ghosts.dedup();
            ghosts
        })
        .collect();
    VectorLayout::build(dofmap.owner_ranges.clone(), &ghosts_per_rank, rank)
}

/// Assembled output of a kernel over the local partition.
pub enum Assembled {
    Matrix(CsrMatrix),
    Vector(RankVector),
}

impl Assembled {
    pub fn into_matrix(self) -> CsrMatrix {
        match self {
            Assembled::Matrix(m) => m,
            Assembled::Vector(_) => panic!("expected an assembled matrix"),
        }
    }

    pub fn into_vector(self) -> RankVector {
        match self {
            Assembled::Vector(v) => v,
            Assembled::Matrix(_) => panic!("expected an assembled vector"),
        }
    }
}

/// Integrates the rank's owned cells and accumulates into owned rows;
/// contributions to foreign rows are shipped to their owners and applied
/// after the local cells, preserving the serial cell-order fold.
pub fn assemble(
    ir: &KernelIR,
    dofmap: &DofMap,
    mesh: &SimplexMesh,
    partition: &Partition,
    layout: Arc<VectorLayout>,
    comm: &Communicator,
    bindings: &ConstantBindings,
) -> Result<Assembled> {
    let rank = comm.rank();
    assert_eq!(partition.ranks, comm.size());
    let (row_s, row_e) = dofmap.owner_ranges[rank];
    let my_rows = row_e - row_s;
    let nd = dofmap.ndof_cell;

    let owned_cells: Vec<usize> = (0..mesh.num_cells())
        .filter(|&c| partition.cell_owner[c] == rank)
        .collect();

    // ranks whose cells touch my rows (upper neighbor by the min-owner
    // rule), and ranks whose rows my cells touch (lower neighbor)
    let n = dofmap.resolution;
    let (zs, ze) = dofmap.slab_ranges[rank];
    let recv_from: Vec<usize> = if ze < n {
        vec![partition.cell_owner[(if dofmap.dim == 2 { 2 * n } else { 6 * n * n }) * ze]]
    } else {
        Vec::new()
    };
    let _ = zs;

    if ir.rank == 2 {
        // symbolic pass: pattern over all cells that can touch my rows
        let mut pattern = vec![Vec::new(); my_rows];
        for c in closure_cells(dofmap, rank) {
            let dofs = dofmap.cell_dofs_of(c);
            for &gi in dofs {
                if (row_s..row_e).contains(&gi) {
                    pattern[gi - row_s].extend_from_slice(dofs);
                }
            }
        }
        let mut mat = CsrMatrix::from_pattern(dofmap.global_dofs, dofmap.global_dofs, row_s, pattern);

        // numeric pass over owned cells in ascending order
        let mut send_idx: Vec<Vec<usize>> = vec![Vec::new(); comm.size()];
        let mut send_val: Vec<Vec<f64>> = vec![Vec::new(); comm.size()];
        for &c in &owned_cells {
            let tensor = execute_kernel(ir, &mesh.cell_coords(c), bindings)?;
            let m = match &tensor {
                ElementTensor::Matrix(m) => m,
                ElementTensor::Vector(_) => unreachable!(),
            };
            let dofs = dofmap.cell_dofs_of(c);
            for (i, &gi) in dofs.iter().enumerate() {
                if (row_s..row_e).contains(&gi) {
                    let local = gi - row_s;
                    for (j, &gj) in dofs.iter().enumerate() {
                        mat.add_at(local, gj, m[i * nd + j]);
                    }
                } else {
                    let owner = dofmap.owner_of(gi);
                    for (j, &gj) in dofs.iter().enumerate() {
                        send_idx[owner].push(gi);
                        send_idx[owner].push(gj);
                        send_val[owner].push(m[i * nd + j]);
                    }
                }
            }
        }
        for dst in 0..comm.size() {
            if dst != rank && (!send_idx[dst].is_empty() || touches_lower(dofmap, rank, dst)) {
                comm.send_indices(dst, std::mem::take(&mut send_idx[dst]));
                comm.send_values(dst, std::mem::take(&mut send_val[dst]));
            }
        }
        for &src in &recv_from {
            let idx = comm.recv_indices(src)?;
            let val = comm.recv_values(src)?;
            for (pair, v) in idx.chunks_exact(2).zip(val) {
                mat.add_at(pair[0] - row_s, pair[1], v);
            }
        }
        Ok(Assembled::Matrix(mat))
    } else {
        let mut vec = RankVector::zeros(layout);
        let mut send_idx: Vec<Vec<usize>> = vec![Vec::new(); comm.size()];
        let mut send_val: Vec<Vec<f64>> = vec![Vec::new(); comm.size()];
        for &c in &owned_cells {
            let tensor = execute_kernel(ir, &mesh.cell_coords(c), bindings)?;
            let b = match &tensor {
                ElementTensor::Vector(v) => v,
                ElementTensor::Matrix(_) => unreachable!(),
            };
            let dofs = dofmap.cell_dofs_of(c);
            let owned = vec.owned_mut();
            for (i, &gi) in dofs.iter().enumerate() {
                if (row_s..row_e).contains(&gi) {
                    owned[gi - row_s] += b[i];
                } else {
                    let owner = dofmap.owner_of(gi);
                    send_idx[owner].push(gi);
                    send_val[owner].push(b[i]);
                }
            }
        }
        for dst in 0..comm.size() {
            if dst != rank && (!send_idx[dst].is_empty() || touches_lower(dofmap, rank, dst)) {
                comm.send_indices(dst, std::mem::take(&mut send_idx[dst]));
                comm.send_values(dst, std::mem::take(&mut send_val[dst]));
            }
        }
        for &src in &recv_from {
            let idx = comm.recv_indices(src)?;
            let val = comm.recv_values(src)?;
            let owned = vec.owned_mut();
            for (&g, v) in idx.iter().zip(val) {
                owned[g - row_s] += v;
            }
        }
        Ok(Assembled::Vector(vec))
    }
}

/// Whether `rank`'s cells can touch rows owned by `dst` (dst is the slab
/// right below). Senders with no contributions still send empty buffers
/// so receives stay deterministic.
fn touches_lower(dofmap: &DofMap, rank: usize, dst: usize) -> bool {
    dst + 1 == rank && dofmap.slab_ranges[rank].0 > 0
}

/// Symmetric elimination of Dirichlet rows and columns: boundary rows and
/// columns are zeroed, boundary diagonals set to one, boundary rhs
/// entries set to the (zero) boundary value. Keeps the operator SPD.
pub fn apply_dirichlet(a: &mut CsrMatrix, b: &mut RankVector, boundary: &[bool]) {
    let row_s = a.row_start;
    for r in 0..a.local_rows() {
        let g = row_s + r;
        let (s, e) = (a.row_offsets[r], a.row_offsets[r + 1]);
        if boundary[g] {
            for i in s..e {
                a.vals[i] = if a.cols[i] == g { 1.0 } else { 0.0 };
            }
        } else {
            for i in s..e {
                if boundary[a.cols[i]] {
                    a.vals[i] = 0.0;
                }
            }
        }
    }
    let (vs, _) = b.layout.my_range();
    let owned = b.owned_mut();
    for (i, o) in owned.iter_mut().enumerate() {
        if boundary[vs + i] {
            *o = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forms::{self, dot, grad, test_fn, trial, FormIntegral};
    use crate::kernel::compile_form;
    use crate::la::par::{gather_full, spmv};
    use crate::mesh::{partition_mesh, unit_simplex_mesh};
    use crate::runtime::{halo_exchange, spmd_run};

    #[test]
    fn dof_count_formula() {
        assert_eq!(cg_dof_count(3, 128, 3), 57_066_625);
        assert_eq!(cg_dof_count(3, 1, 1), 8);
        assert_eq!(cg_dof_count(2, 4, 2), 81);
        // dofs per rank at the paper's scale
        assert!((57_066_625.0_f64 / 512.0 - 111_458.25).abs() < 0.01);
    }

    fn serial_setup(
        dim: usize,
        n: usize,
        k: usize,
    ) -> (SimplexMesh, Partition, DofMap, Arc<VectorLayout>) {
        let mesh = unit_simplex_mesh(dim, n);
        let partition = partition_mesh(&mesh, 1).unwrap();
        let space = SpaceSpec::cg(dim, k).unwrap();
        let dofmap =
            build_dofmap(&mesh, &space, &BcSpec::zero_everywhere(dim), &partition).unwrap();
        let layout = build_layout(&dofmap, 0);
        (mesh, partition, dofmap, layout)
    }

    #[test]
    fn unit_cube_p1_all_dofs_on_boundary() {
        let (_, _, dofmap, _) = serial_setup(3, 1, 1);
        assert_eq!(dofmap.global_dofs, 8);
        assert_eq!(dofmap.num_boundary_dofs(), 8);
    }

    #[test]
    fn cell_dofs_cover_lattice_consistently() {
        for dim in [2usize, 3] {
            for (n, k) in [(2usize, 2usize), (3, 3)] {
                let mesh = unit_simplex_mesh(dim, n);
                let partition = partition_mesh(&mesh, 1).unwrap();
                let space = SpaceSpec::cg(dim, k).unwrap();
                let dofmap =
                    build_dofmap(&mesh, &space, &BcSpec::zero_everywhere(dim), &partition)
                        .unwrap();
                let mut seen = vec![false; dofmap.global_dofs];
                for c in 0..mesh.num_cells() {
                    for &g in dofmap.cell_dofs_of(c) {
                        seen[g] = true;
                    }
                }
                assert!(seen.iter().all(|&s| s), "dim={dim} n={n} k={k}");
                // node coordinates from lattice match the element nodes
                // mapped through the cell geometry
                let el = lagrange_element(dim, k).unwrap();
                for c in 0..mesh.num_cells() {
                    let coords = mesh.cell_coords(c);
                    for (i, &g) in dofmap.cell_dofs_of(c).iter().enumerate() {
                        let xr = el.node(i);
                        let mut phys = [0.0_f64; 3];
                        // x = v0 + sum_a xr[a] (v_{a+1} - v0)
                        for ax in 0..dim {
                            phys[ax] = coords[ax];
                            for (m, &r) in xr.iter().enumerate() {
                                phys[ax] += r * (coords[(m + 1) * dim + ax] - coords[ax]);
                            }
                        }
                        let lat = dofmap.dof_coords(g);
                        for ax in 0..dim {
                            assert!(
                                (phys[ax] - lat[ax]).abs() < 1e-12,
                                "dim={dim} n={n} k={k} cell={c} node={i}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn mass_matrix_sums_to_domain_volume() {
        let (mesh, partition, dofmap, layout) = serial_setup(3, 2, 2);
        let space = SpaceSpec::cg(3, 2).unwrap();
        let ir = compile_form(
            &FormIntegral::dx(trial() * test_fn()).unwrap(),
            &space,
            4,
        )
        .unwrap();
        let out = spmd_run(1, |ctx| {
            let a = assemble(
                &ir,
                &dofmap,
                &mesh,
                &partition,
                layout.clone(),
                &ctx.comm,
                &ConstantBindings::new(),
            )?;
            Ok(a.into_matrix().vals.iter().sum::<f64>())
        })
        .unwrap();
        assert!((out[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stiffness_row_sums_vanish_before_bcs() {
        let (mesh, partition, dofmap, layout) = serial_setup(2, 3, 3);
        let space = SpaceSpec::cg(2, 3).unwrap();
        let ir = compile_form(
            &FormIntegral::dx(dot(grad(trial()), grad(test_fn()))).unwrap(),
            &space,
            6,
        )
        .unwrap();
        let out = spmd_run(1, |ctx| {
            let a = assemble(
                &ir,
                &dofmap,
                &mesh,
                &partition,
                layout.clone(),
                &ctx.comm,
                &ConstantBindings::new(),
            )?
            .into_matrix();
            let scale = a.max_abs();
            let worst = (0..a.local_rows())
                .map(|r| a.row(r).1.iter().sum::<f64>().abs())
                .fold(0.0_f64, f64::max);
            Ok(worst / scale)
        })
        .unwrap();
        assert!(out[0] < 1e-12, "max row sum ratio {}", out[0]);
    }

    #[test]
    fn unit_load_vector_sums_to_volume() {
        let (mesh, partition, dofmap, layout) = serial_setup(3, 2, 1);
        let space = SpaceSpec::cg(3, 1).unwrap();
        let ir = compile_form(
            &FormIntegral::dx(forms::constant(1.0) * test_fn()).unwrap(),
            &space,
            2,
        )
        .unwrap();
        let out = spmd_run(1, |ctx| {
            let b = assemble(
                &ir,
                &dofmap,
                &mesh,
                &partition,
                layout.clone(),
                &ctx.comm,
                &ConstantBindings::new(),
            )?
            .into_vector();
            Ok(b.owned().iter().sum::<f64>())
        })
        .unwrap();
        assert!((out[0] - 1.0).abs() < 1e-13);
    }

    #[test]
    fn dirichlet_rows_become_unit_rows() {
        let (mesh, partition, dofmap, layout) = serial_setup(2, 2, 1);
        let space = SpaceSpec::cg(2, 1).unwrap();
        let ir = compile_form(
            &FormIntegral::dx(dot(grad(trial()), grad(test_fn()))).unwrap(),
            &space,
            2,
        )
        .unwrap();
        spmd_run(1, |ctx| {
            let mut a = assemble(
                &ir,
                &dofmap,
                &mesh,
                &partition,
                layout.clone(),
                &ctx.comm,
                &ConstantBindings::new(),
            )?
            .into_matrix();
            let mut b = RankVector::zeros(layout.clone());
            b.fill(1.0);
            apply_dirichlet(&mut a, &mut b, &dofmap.boundary);
            for r in 0..a.local_rows() {
                if dofmap.boundary[r] {
                    let (cols, vals) = a.row(r);
                    for (&c, &v) in cols.iter().zip(vals) {
                        let expect = if c == r { 1.0 } else { 0.0 };
                        assert_eq!(v, expect);
                    }
                    assert_eq!(b.owned()[r], 0.0);
                } else {
                    // symmetric elimination: boundary columns cleared
                    let (cols, vals) = a.row(r);
                    for (&c, &v) in cols.iter().zip(vals) {
                        if dofmap.boundary[c] {
                            assert_eq!(v, 0.0);
                        }
                    }
                }
            }
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn one_dimensional_dirichlet_analog_matches_hand_assembly() {
        // CG1 on [0,1] with 4 cells: hand-assembled h^{-1} [[1,-1],[-1,1]]
        // per cell, then symmetric elimination of the two end dofs
        let h = 0.25;
        let mut triplets = Vec::new();
        for c in 0..4usize {
            for (i, j, v) in [(0, 0, 1.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 1.0)] {
                triplets.push((c + i, c + j, v / h));
            }
        }
        let mut a = CsrMatrix::from_triplets(5, 5, &triplets);
        let layout = VectorLayout::serial(5);
        let mut b = RankVector::zeros(layout);
        b.fill(1.0);
        let boundary = [true, false, false, false, true];
        apply_dirichlet(&mut a, &mut b, &boundary);
        // interior 3x3 block is tridiag(-1/h, 2/h, -1/h)
        for r in 1..4 {
            assert_eq!(a.get(r, r), Some(8.0));
            let left = a.get(r, r - 1).unwrap();
            let right = a.get(r, r + 1).unwrap();
            if r > 1 {
                assert_eq!(left, -4.0);
            } else {
                assert_eq!(left, 0.0); // eliminated boundary column
            }
            if r < 3 {
                assert_eq!(right, -4.0);
            } else {
                assert_eq!(right, 0.0);
            }
        }
    }

    #[test]
    fn assembled_operator_is_bitwise_rank_invariant() {
        let dim = 3;
        let (n, k) = (4usize, 2usize);
        let space = SpaceSpec::cg(dim, k).unwrap();
        let mesh = unit_simplex_mesh(dim, n);
        let stiff = compile_form(
            &FormIntegral::dx(dot(grad(trial()), grad(test_fn()))).unwrap(),
            &space,
            2 * k,
        )
        .unwrap();
        let load = compile_form(
            &FormIntegral::dx(forms::manufactured_rhs(dim) * test_fn()).unwrap(),
            &space,
            2 * k + 2,
        )
        .unwrap();
        let bindings = forms::poisson_bindings(1.0, 2.0);

        let mut reference: Option<(Vec<u64>, Vec<u64>)> = None;
        for ranks in [1usize, 2, 4] {
            let partition = partition_mesh(&mesh, ranks).unwrap();
            let dofmap =
                build_dofmap(&mesh, &space, &BcSpec::zero_everywhere(dim), &partition).unwrap();
            let out = spmd_run(ranks, |ctx| {
                let layout = build_layout(&dofmap, ctx.comm.rank());
                let a = assemble(
                    &stiff, &dofmap, &mesh, &partition, layout.clone(), &ctx.comm, &bindings,
                )?
                .into_matrix();
                let b = assemble(
                    &load, &dofmap, &mesh, &partition, layout.clone(), &ctx.comm, &bindings,
                )?
                .into_vector();
                let vals = ctx.comm.gather_f64s(&a.vals)?;
                let rhs = gather_full(&ctx.comm, &b)?;
                Ok(vals.map(|v| (v.concat(), rhs.unwrap())))
            })
            .unwrap();
            let (vals, rhs) = out[0].clone().unwrap();
            let bits = (
                vals.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                rhs.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            );
            match &reference {
                None => reference = Some(bits),
                Some(r) => {
                    assert_eq!(r.0, bits.0, "matrix differs at ranks={ranks}");
                    assert_eq!(r.1, bits.1, "rhs differs at ranks={ranks}");
                }
            }
        }
    }

    #[test]
    fn assembled_poisson_matches_serial_spmv_across_ranks() {
        // sanity: distributed spmv with the assembled operator equals the
        // gathered-operator serial product
        let dim = 2;
        let (n, k) = (4usize, 3usize);
        let space = SpaceSpec::cg(dim, k).unwrap();
        let mesh = unit_simplex_mesh(dim, n);
        let ir = compile_form(
            &FormIntegral::dx(dot(grad(trial()), grad(test_fn()))).unwrap(),
            &space,
            2 * k,
        )
        .unwrap();
        let serial = {
            let partition = partition_mesh(&mesh, 1).unwrap();
            let dofmap =
                build_dofmap(&mesh, &space, &BcSpec::zero_everywhere(dim), &partition).unwrap();
            let layout = build_layout(&dofmap, 0);
            spmd_run(1, |ctx| {
                let a = assemble(
                    &ir,
                    &dofmap,
                    &mesh,
                    &partition,
                    layout.clone(),
                    &ctx.comm,
                    &ConstantBindings::new(),
                )?
                .into_matrix();
                let x: Vec<f64> = (0..dofmap.global_dofs).map(|g| (g as f64).sin()).collect();
                Ok(a.spmv_full(&x))
            })
            .unwrap()
            .remove(0)
        };
        let partition = partition_mesh(&mesh, 4).unwrap();
        let dofmap =
            build_dofmap(&mesh, &space, &BcSpec::zero_everywhere(dim), &partition).unwrap();
        let out = spmd_run(4, |ctx| {
            let layout = build_layout(&dofmap, ctx.comm.rank());
            let a = assemble(
                &ir,
                &dofmap,
                &mesh,
                &partition,
                layout.clone(),
                &ctx.comm,
                &ConstantBindings::new(),
            )?
            .into_matrix();
            let (s, e) = layout.my_range();
            let mut x = RankVector::zeros(layout.clone());
            for (i, o) in x.owned_mut().iter_mut().enumerate() {
                *o = ((s + i) as f64).sin();
            }
            let _ = e;
            halo_exchange(&ctx.comm, &mut x)?;
            let y = spmv(&a, &x, layout)?;
            gather_full(&ctx.comm, &y)
        })
        .unwrap();
        let got = out[0].as_ref().unwrap();
        for (a, b) in got.iter().zip(&serial) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
