//! Additive Schwarz smoothing over vertex-star patches.
//!
//! Each owned vertex contributes one patch: the dofs of all cells
//! containing it, minus Dirichlet-constrained dofs. Patch systems are
//! dense LU solves of the operator restricted to the patch (exterior rows
//! and columns dropped), factored lazily per operator and cached; on a
//! structured mesh most interior patches share one factorization, so the
//! cache collapses them by matrix bytes.
//!
//! Corrections are summed per dof in ascending global vertex order. The
//! owner of a dof applies lower-rank contributions first, replays its own
//! buffered ones, then applies higher-rank contributions, which
//! reproduces the serial fold bit for bit on any team size.

use super::LevelContext;
use crate::error::{Error, Result};
use crate::la::{lu_factor, DenseFactor, DenseMatrix, RankVector};
use crate::runtime::{halo_exchange, Communicator};
use std::collections::HashMap;
use std::sync::Arc;

pub struct PatchState {
    /// Patches of owned vertices, ascending by vertex id.
    patches: Vec<Patch>,
    /// Owned dofs that can receive contributions from neighbor ranks.
    zone: Vec<bool>,
    /// Ghost rows of the operator, by ghost slot.
    row_s: usize,
}

struct Patch {
    vertex: usize,
    /// Global dof ids, sorted; Dirichlet dofs excluded.
    dofs: Vec<usize>,
    factor: Arc<DenseFactor>,
}

impl PatchState {
    pub fn build(level: &LevelContext, comm: &Communicator) -> Result<PatchState> {
        let disc = level.discretization.as_ref().ok_or_else(|| {
            Error::InvalidValue {
                key: "pc_type".into(),
                value: "patch".into(),
                hint: "patch smoothing needs mesh and dof map context".into(),
            }
        })?;
        let mesh = &disc.mesh;
        let dofmap = &disc.dofmap;
        let layout = &level.layout;
        let matrix = &level.matrix;
        let rank = comm.rank();
        let dim = mesh.dim;
        let (row_s, row_e) = layout.my_range();

        // exchange the operator rows neighbors will need for their
        // patches: exactly the rows of each other's ghost dofs
        let mut ghost_rows: Vec<(Vec<usize>, Vec<f64>)> =
            vec![(Vec::new(), Vec::new()); layout.ghost_ids.len()];
        for (nbr, locals) in &layout.send_plan {
            let mut idx = Vec::new();
            let mut val = Vec::new();
            for &l in locals {
                let (cols, vals) = matrix.row(l);
                idx.push(cols.len());
                idx.extend_from_slice(cols);
                val.extend_from_slice(vals);
            }
            comm.send_indices(*nbr, idx);
            comm.send_values(*nbr, val);
        }
        for (nbr, slots) in &layout.recv_plan {
            let idx = comm.recv_indices(*nbr)?;
            let val = comm.recv_values(*nbr)?;
            let (mut ai, mut av) = (0usize, 0usize);
            for &slot in slots {
                let len = idx[ai];
                ai += 1;
                let cols = idx[ai..ai + len].to_vec();
                ai += len;
                let vals = val[av..av + len].to_vec();
                av += len;
                ghost_rows[slot] = (cols, vals);
            }
        }

        // vertex -> containing cells over the slab closure
        let (zs, ze) = dofmap.slab_ranges[rank];
        let vert_lo = if rank == 0 { 0 } else { zs + 1 };
        let vert_hi = ze; // inclusive plane index along the slow axis
        let mut adjacency: HashMap<usize, Vec<usize>> = HashMap::new();
        for c in crate::assembly::closure_cells(dofmap, rank) {
            for &v in mesh.cell(c) {
                let zv = mesh.vertex_lattice(v)[dim - 1];
                if (vert_lo..=vert_hi).contains(&zv) {
                    adjacency.entry(v).or_default().push(c);
                }
            }
        }
        let mut owned_vertices: Vec<usize> = adjacency.keys().copied().collect();
        owned_vertices.sort_unstable();

        let fetch_row = |g: usize| -> (&[usize], &[f64]) {
            if (row_s..row_e).contains(&g) {
                matrix.row(g - row_s)
            } else {
                let slot = layout
                    .ghost_slot(g)
                    .unwrap_or_else(|| panic!("patch dof {g} outside the ghost closure"));
                let (c, v) = &ghost_rows[slot];
                (c.as_slice(), v.as_slice())
            }
        };

        let mut cache: HashMap<Vec<u8>, Arc<DenseFactor>> = HashMap::new();
        let mut patches = Vec::new();
        for &v in &owned_vertices {
            let mut dofs: Vec<usize> = adjacency[&v]
                .iter()
                .flat_map(|&c| dofmap.cell_dofs_of(c).iter().copied())
                .filter(|&g| !dofmap.boundary[g])
                .collect();
            dofs.sort_unstable();
            dofs.dedup();
            if dofs.is_empty() {
                continue;
            }
            let n = dofs.len();
            let mut dense = DenseMatrix::zeros(n, n);
            for (i, &gi) in dofs.iter().enumerate() {
                let (cols, vals) = fetch_row(gi);
                for (&c, &val) in cols.iter().zip(vals) {
                    if let Ok(j) = dofs.binary_search(&c) {
                        *dense.at_mut(i, j) = val;
                    }
                }
            }
            let mut key = Vec::with_capacity(n * n * 8 + 8);
            key.extend_from_slice(&(n as u64).to_le_bytes());
            for i in 0..n {
                for &x in dense.row(i) {
                    key.extend_from_slice(&x.to_le_bytes());
                }
            }
            let factor = match cache.get(&key) {
                Some(f) => f.clone(),
                None => {
                    let f = Arc::new(lu_factor(dense).map_err(|e| match e {
                        Error::SingularMatrix { .. } => Error::SingularPatch { vertex: v },
                        other => other,
                    })?);
                    cache.insert(key, f.clone());
                    f
                }
            };
            patches.push(Patch {
                vertex: v,
                dofs,
                factor,
            });
        }

        // conservative remote-contribution zone: dofs within one cell
        // layer of the slab cuts
        let k = dofmap.degree;
        let mut zone = vec![false; row_e - row_s];
        if comm.size() > 1 {
            for (i, z) in zone.iter_mut().enumerate() {
                let zeta = dofmap.dof_lattice(row_s + i)[dim - 1];
                let low = rank > 0 && zeta <= k * (zs + 1);
                let high = rank + 1 < comm.size() && zeta >= k * ze;
                *z = low || high;
            }
        }

        Ok(PatchState {
            patches,
            zone,
            row_s,
        })
    }

    /// Additive Schwarz application: z = sum over patches of
    /// R_v^T A_v^{-1} R_v r.
    pub fn apply(&self, comm: &Communicator, r: &mut RankVector) -> Result<RankVector> {
        halo_exchange(comm, r)?;
        let layout = r.layout.clone();
        let rank = comm.rank();
        let mut out = RankVector::zeros(layout.clone());
        let mut zone_buf: Vec<(usize, f64)> = Vec::new();
        let mut send_idx: Vec<Vec<usize>> = vec![Vec::new(); comm.size()];
        let mut send_val: Vec<Vec<f64>> = vec![Vec::new(); comm.size()];
        {
            let owned = out.owned_mut();
            for patch in &self.patches {
                let rhs: Vec<f64> = patch
                    .dofs
                    .iter()
                    .map(|&g| r.value(g))
                    .collect::<Result<_>>()?;
                let e = patch.factor.solve(&rhs);
                for (&g, val) in patch.dofs.iter().zip(e) {
                    if let Some(local) = g.checked_sub(self.row_s)
                        .filter(|&l| l < owned.len())
                    {
                        if self.zone[local] {
                            zone_buf.push((local, val));
                        } else {
                            owned[local] += val;
                        }
                    } else {
                        let owner = layout.owner_of(g);
                        debug_assert!(owner + 1 == rank || owner == rank + 1);
                        send_idx[owner].push(g);
                        send_val[owner].push(val);
                    }
                }
            }
        }
        // exchange with slab neighbors; empty sends keep receives
        // deterministic
        let lower = rank.checked_sub(1);
        let upper = if rank + 1 < comm.size() {
            Some(rank + 1)
        } else {
            None
        };
        for nbr in [lower, upper].into_iter().flatten() {
            comm.send_indices(nbr, std::mem::take(&mut send_idx[nbr]));
            comm.send_values(nbr, std::mem::take(&mut send_val[nbr]));
        }
        let owned = out.owned_mut();
        if let Some(src) = lower {
            let idx = comm.recv_indices(src)?;
            let val = comm.recv_values(src)?;
            for (&g, v) in idx.iter().zip(val) {
                owned[g - self.row_s] += v;
            }
        }
        for (local, v) in zone_buf {
            owned[local] += v;
        }
        if let Some(src) = upper {
            let idx = comm.recv_indices(src)?;
            let val = comm.recv_values(src)?;
            for (&g, v) in idx.iter().zip(val) {
                owned[g - self.row_s] += v;
            }
        }
        Ok(out)
    }

    pub fn num_patches(&self) -> usize {
        self.patches.len()
    }

    pub fn patch_dofs(&self, i: usize) -> &[usize] {
        &self.patches[i].dofs
    }

    pub fn patch_vertex(&self, i: usize) -> usize {
        self.patches[i].vertex
    }
}
