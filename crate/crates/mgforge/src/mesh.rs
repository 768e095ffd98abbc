//! Structured simplicial meshes of the unit square/cube, nested uniform
//! refinement hierarchies, boundary facet markers, and slab partitioning
//! for SPMD execution.
//!
//! 3D cubes are split with the Kuhn/Freudenthal 6-tetrahedron pattern, 2D
//! squares with the matching 2-triangle diagonal split. Both patterns are
//! self-similar under uniform refinement, so a hierarchy level is simply
//! the same generator run at doubled resolution; nestedness then holds by
//! construction and the child maps are recovered with point location.

use crate::error::{Error, Result};
use std::io::Write;

/// Facet markers 1..=2d are assigned to the faces
/// x=0, x=1, y=0, y=1, z=0, z=1 in that order.
pub const FACE_MARKER_ORDER: [&str; 6] = ["x=0", "x=1", "y=0", "y=1", "z=0", "z=1"];

#[derive(Debug, Clone)]
pub struct SimplexMesh {
    pub dim: usize,
    /// Cells per edge of the structured grid.
    pub resolution: usize,
    coords: Vec<f64>,
    cells: Vec<usize>,
    facet_vertices: Vec<usize>,
    facet_markers: Vec<u8>,
}

/// Vertex orderings of the six Kuhn tetrahedra of the unit cube, as
/// offsets (dx, dy, dz); all six share the main diagonal. Odd
/// permutations have their last two vertices swapped so every cell has
/// positive orientation.
const KUHN_TETS: [[[usize; 3]; 4]; 6] = [
    // path x, y, z (even)
    [[0, 0, 0], [1, 0, 0], [1, 1, 0], [1, 1, 1]],
    // path x, z, y (odd; swapped)
    [[0, 0, 0], [1, 0, 0], [1, 1, 1], [1, 0, 1]],
    // path y, x, z (odd; swapped)
    [[0, 0, 0], [1, 1, 0], [0, 1, 0], [1, 1, 1]],
    // path y, z, x (even)
    [[0, 0, 0], [0, 1, 0], [0, 1, 1], [1, 1, 1]],
    // path z, x, y (even)
    [[0, 0, 0], [0, 0, 1], [1, 0, 1], [1, 1, 1]],
    // path z, y, x (odd; swapped)
    [[0, 0, 0], [0, 0, 1], [1, 1, 1], [0, 1, 1]],
];

/// The two triangles of a grid square, diagonal from (0,0) to (1,1).
const KUHN_TRIS: [[[usize; 2]; 3]; 2] = [
    [[0, 0], [1, 0], [1, 1]],
    [[0, 0], [1, 1], [0, 1]],
];

/// Builds the structured simplicial mesh of the unit square/cube at
/// resolution `n` (cells per edge).
pub fn unit_simplex_mesh(dim: usize, n: usize) -> SimplexMesh {
    assert!(dim == 2 || dim == 3, "dimension must be 2 or 3");
    assert!(n >= 1, "resolution must be at least 1");
    let verts_per_axis = n + 1;
    let nverts = verts_per_axis.pow(dim as u32);
    let mut coords = Vec::with_capacity(nverts * dim);
    if dim == 2 {
        for iy in 0..verts_per_axis {
            for ix in 0..verts_per_axis {
                coords.push(ix as f64 / n as f64);
                coords.push(iy as f64 / n as f64);
            }
        }
    } else {
        for iz in 0..verts_per_axis {
            for iy in 0..verts_per_axis {
                for ix in 0..verts_per_axis {
                    coords.push(ix as f64 / n as f64);
                    coords.push(iy as f64 / n as f64);
                    coords.push(iz as f64 / n as f64);
                }
            }
        }
    }

    let vid = |lattice: &[usize]| -> usize {
        lattice
            .iter()
            .rev()
            .fold(0, |acc, &c| acc * verts_per_axis + c)
    };

    let mut cells = Vec::new();
    if dim == 2 {
        for cj in 0..n {
            for ci in 0..n {
                for tri in &KUHN_TRIS {
                    for off in tri {
                        cells.push(vid(&[ci + off[0], cj + off[1]]));
                    }
                }
            }
        }
    } else {
        for ck in 0..n {
            for cj in 0..n {
                for ci in 0..n {
                    for tet in &KUHN_TETS {
                        for off in tet {
                            cells.push(vid(&[ci + off[0], cj + off[1], ck + off[2]]));
                        }
                    }
                }
            }
        }
    }

    let mut mesh = SimplexMesh {
        dim,
        resolution: n,
        coords,
        cells,
        facet_vertices: Vec::new(),
        facet_markers: Vec::new(),
    };
    mesh.collect_boundary_facets();
    mesh
}

impl SimplexMesh {
    pub fn num_vertices(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn num_boundary_facets(&self) -> usize {
        self.facet_markers.len()
    }

    pub fn vertex(&self, v: usize) -> &[f64] {
        &self.coords[v * self.dim..(v + 1) * self.dim]
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        &self.cells[c * (self.dim + 1)..(c + 1) * (self.dim + 1)]
    }

    pub fn facet(&self, f: usize) -> (&[usize], u8) {
        (
            &self.facet_vertices[f * self.dim..(f + 1) * self.dim],
            self.facet_markers[f],
        )
    }

    /// Integer lattice coordinates of a structured vertex.
    pub fn vertex_lattice(&self, v: usize) -> [usize; 3] {
        let m = self.resolution + 1;
        if self.dim == 2 {
            [v % m, v / m, 0]
        } else {
            [v % m, (v / m) % m, v / (m * m)]
        }
    }

    pub fn lattice_vertex_id(&self, lattice: &[usize]) -> usize {
        let m = self.resolution + 1;
        lattice.iter().rev().fold(0, |acc, &c| acc * m + c)
    }

    /// Coordinates of a cell's vertices, flattened row-per-vertex.
    pub fn cell_coords(&self, c: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity((self.dim + 1) * self.dim);
        for &v in self.cell(c) {
            out.extend_from_slice(self.vertex(v));
        }
        out
    }

    /// Signed volume of a cell (positive for the orientations generated
    /// here).
    pub fn cell_volume(&self, c: usize) -> f64 {
        let vs = self.cell(c);
        let p0 = self.vertex(vs[0]);
        if self.dim == 2 {
            let p1 = self.vertex(vs[1]);
            let p2 = self.vertex(vs[2]);
            let a = [p1[0] - p0[0], p1[1] - p0[1]];
            let b = [p2[0] - p0[0], p2[1] - p0[1]];
            0.5 * (a[0] * b[1] - a[1] * b[0])
        } else {
            let p1 = self.vertex(vs[1]);
            let p2 = self.vertex(vs[2]);
            let p3 = self.vertex(vs[3]);
            let a = [p1[0] - p0[0], p1[1] - p0[1], p1[2] - p0[2]];
            let b = [p2[0] - p0[0], p2[1] - p0[1], p2[2] - p0[2]];
            let c3 = [p3[0] - p0[0], p3[1] - p0[1], p3[2] - p0[2]];
            (a[0] * (b[1] * c3[2] - b[2] * c3[1]) - a[1] * (b[0] * c3[2] - b[2] * c3[0])
                + a[2] * (b[0] * c3[1] - b[1] * c3[0]))
                / 6.0
        }
    }

    fn collect_boundary_facets(&mut self) {
        let n = self.resolution;
        let dim = self.dim;
        let nc = self.num_cells();
        let mut facet_vertices = Vec::new();
        let mut facet_markers = Vec::new();
        for c in 0..nc {
            let vs: Vec<usize> = self.cell(c).to_vec();
            // each facet omits one vertex of the cell
            for omit in 0..=dim {
                let facet: Vec<usize> = (0..=dim).filter(|&i| i != omit).map(|i| vs[i]).collect();
                if let Some(marker) = self.facet_face_marker(&facet, n) {
                    facet_vertices.extend_from_slice(&facet);
                    facet_markers.push(marker);
                }
            }
        }
        self.facet_vertices = facet_vertices;
        self.facet_markers = facet_markers;
    }

    /// Marker of the cube/square face this facet lies on, if any. Lattice
    /// arithmetic keeps the test exact.
    fn facet_face_marker(&self, facet: &[usize], n: usize) -> Option<u8> {
        for axis in 0..self.dim {
            for (side, value) in [(0u8, 0usize), (1u8, n)] {
                if facet
                    .iter()
                    .all(|&v| self.vertex_lattice(v)[axis] == value)
                {
                    return Some((2 * axis as u8) + side + 1);
                }
            }
        }
        None
    }

    /// Indices into the boundary facet list for facets carrying any of
    /// the given markers.
    pub fn facets_with_markers(&self, markers: &[u8]) -> Result<Vec<usize>> {
        let max = 2 * self.dim as u8;
        for &m in markers {
            if m == 0 || m > max {
                return Err(Error::UnknownMarker(m));
            }
        }
        Ok((0..self.num_boundary_facets())
            .filter(|&f| markers.contains(&self.facet_markers[f]))
            .collect())
    }

    /// Barycentric coordinates of `p` with respect to cell `c`.
    pub fn barycentric(&self, c: usize, p: &[f64]) -> [f64; 4] {
        barycentric_coords(self.dim, &self.cell_coords(c), p)
    }

    /// Finds the cell containing `p` (deterministic for points on shared
    /// faces: the lowest-numbered containing cell in the candidate cube
    /// wins) and returns it with the barycentric coordinates.
    pub fn locate(&self, p: &[f64]) -> (usize, [f64; 4]) {
        let n = self.resolution;
        let cube: Vec<usize> = (0..self.dim)
            .map(|a| ((p[a] * n as f64).floor() as isize).clamp(0, n as isize - 1) as usize)
            .collect();
        let per_cube = if self.dim == 2 { 2 } else { 6 };
        let cube_index = cube
            .iter()
            .rev()
            .fold(0, |acc, &c| acc * n + c);
        let base = cube_index * per_cube;
        let mut best = (base, self.barycentric(base, p));
        let mut best_min = f64::NEG_INFINITY;
        for c in base..base + per_cube {
            let bary = self.barycentric(c, p);
            let min = bary[..=self.dim].iter().cloned().fold(f64::INFINITY, f64::min);
            if min >= -1e-12 {
                return (c, bary);
            }
            if min > best_min {
                best_min = min;
                best = (c, bary);
            }
        }
        // fall back to the nearest candidate; callers feed points inside
        // the domain so this only absorbs rounding at cube boundaries
        best
    }

    /// Plain-text dump: `vertices:`, `cells:` and `facets:` sections.
    pub fn dump(&self, w: &mut impl Write) -> std::io::Result<()> {
        writeln!(w, "vertices:")?;
        for v in 0..self.num_vertices() {
            let c = self.vertex(v);
            let line: Vec<String> = c.iter().map(|x| format!("{x}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        writeln!(w, "cells:")?;
        for c in 0..self.num_cells() {
            let line: Vec<String> = self.cell(c).iter().map(|v| format!("{v}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        writeln!(w, "facets:")?;
        for f in 0..self.num_boundary_facets() {
            let (vs, m) = self.facet(f);
            let mut line: Vec<String> = vs.iter().map(|v| format!("{v}")).collect();
            line.push(format!("{m}"));
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

/// Barycentric coordinates of `p` in the simplex with the given flattened
/// vertex coordinates (dim+1 rows of dim entries).
pub fn barycentric_coords(dim: usize, cell_coords: &[f64], p: &[f64]) -> [f64; 4] {
    // solve V * lambda_[1..] = p - v0 by Gaussian elimination on the
    // (dim x dim) edge matrix, then lambda_0 = 1 - sum
    let mut mat = [[0.0_f64; 3]; 3];
    let mut rhs = [0.0_f64; 3];
    for i in 0..dim {
        for j in 0..dim {
            mat[i][j] = cell_coords[(j + 1) * dim + i] - cell_coords[i];
        }
        rhs[i] = p[i] - cell_coords[i];
    }
    // partial pivoting
    for k in 0..dim {
        let mut piv = k;
        for r in k + 1..dim {
            if mat[r][k].abs() > mat[piv][k].abs() {
                piv = r;
            }
        }
        mat.swap(k, piv);
        rhs.swap(k, piv);
        let d = mat[k][k];
        for r in k + 1..dim {
            let f = mat[r][k] / d;
            for c in k..dim {
                mat[r][c] -= f * mat[k][c];
            }
            rhs[r] -= f * rhs[k];
        }
    }
    let mut lam = [0.0_f64; 4];
    for k in (0..dim).rev() {
        let mut s = rhs[k];
        for c in k + 1..dim {
            s -= mat[k][c] * lam[c + 1];
        }
        lam[k + 1] = s / mat[k][k];
    }
    lam[0] = 1.0 - lam[1..=dim].iter().sum::<f64>();
    lam
}

/// A nested refinement hierarchy, coarse (index 0) to fine.
#[derive(Debug, Clone)]
pub struct MeshHierarchy {
    pub levels: Vec<SimplexMesh>,
    /// `children[l][c]` lists the level-(l+1) cells covering coarse cell
    /// `c` of level l (4 in 2D, 8 in 3D).
    pub children: Vec<Vec<Vec<usize>>>,
    /// `vertex_embedding[l][v]` is the level-(l+1) vertex coincident with
    /// level-l vertex v.
    pub vertex_embedding: Vec<Vec<usize>>,
}

impl MeshHierarchy {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn finest(&self) -> &SimplexMesh {
        self.levels.last().unwrap()
    }
}

/// Builds a hierarchy by regenerating the structured mesh at doubled
/// resolutions; the Kuhn pattern makes regenerate-at-2N identical to
/// uniform refinement, so consecutive levels nest exactly.
pub fn build_hierarchy(coarse: SimplexMesh, refinements: usize) -> MeshHierarchy {
    let dim = coarse.dim;
    let n0 = coarse.resolution;
    let mut levels = vec![coarse];
    for l in 1..=refinements {
        levels.push(unit_simplex_mesh(dim, n0 << l));
    }
    let mut children = Vec::new();
    let mut vertex_embedding = Vec::new();
    for l in 0..levels.len().saturating_sub(1) {
        let (c, f) = (&levels[l], &levels[l + 1]);
        children.push(child_map(c, f));
        vertex_embedding.push(embed_vertices(c, f));
    }
    MeshHierarchy {
        levels,
        children,
        vertex_embedding,
    }
}

fn child_map(coarse: &SimplexMesh, fine: &SimplexMesh) -> Vec<Vec<usize>> {
    let dim = coarse.dim;
    let mut map = vec![Vec::new(); coarse.num_cells()];
    for fc in 0..fine.num_cells() {
        let vs = fine.cell(fc);
        let mut centroid = vec![0.0; dim];
        for &v in vs {
            let p = fine.vertex(v);
            for a in 0..dim {
                centroid[a] += p[a];
            }
        }
        for c in centroid.iter_mut() {
            *c /= (dim + 1) as f64;
        }
        let (cc, _) = coarse.locate(&centroid);
        map[cc].push(fc);
    }
    map
}

fn embed_vertices(coarse: &SimplexMesh, fine: &SimplexMesh) -> Vec<usize> {
    (0..coarse.num_vertices())
        .map(|v| {
            let lat = coarse.vertex_lattice(v);
            fine.lattice_vertex_id(&lat.map(|c| 2 * c)[..coarse.dim])
        })
        .collect()
}

/// Contiguous slab decomposition over the slowest-varying grid axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub ranks: usize,
    pub cell_owner: Vec<usize>,
    /// Per rank: owned [layer_start, layer_end) of grid layers.
    pub slab_ranges: Vec<(usize, usize)>,
}

impl Partition {
    pub fn owned_cells(&self, rank: usize) -> Vec<usize> {
        (0..self.cell_owner.len())
            .filter(|&c| self.cell_owner[c] == rank)
            .collect()
    }

    /// Ranks this rank exchanges halos with (slab neighbors).
    pub fn neighbors(&self, rank: usize) -> Vec<usize> {
        let mut out = Vec::new();
        if rank > 0 {
            out.push(rank - 1);
        }
        if rank + 1 < self.ranks {
            out.push(rank + 1);
        }
        out
    }
}

/// Splits the grid layers along the slowest axis into `ranks` contiguous
/// slabs whose sizes differ by at most one layer.
pub fn partition_mesh(mesh: &SimplexMesh, ranks: usize) -> Result<Partition> {
    assert!(ranks >= 1);
    let n = mesh.resolution;
    if ranks > n {
        return Err(Error::RankCountExceedsSlabs {
            ranks,
            slabs: n,
        });
    }
    let slab_ranges: Vec<(usize, usize)> = (0..ranks)
        .map(|r| (r * n / ranks, (r + 1) * n / ranks))
        .collect();
    let mut layer_owner = vec![0usize; n];
    for (r, &(s, e)) in slab_ranges.iter().enumerate() {
        for item in layer_owner.iter_mut().take(e).skip(s) {
            *item = r;
        }
    }
    let cells_per_layer = if mesh.dim == 2 {
        2 * n
    } else {
        6 * n * n
    };
    let cell_owner = (0..mesh.num_cells())
        .map(|c| layer_owner[c / cells_per_layer])
        .collect();
    Ok(Partition {
        ranks,
        cell_owner,
        slab_ranges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_and_vertex_counts() {
        for (d, n, cells, verts) in [
            (3usize, 1usize, 6usize, 8usize),
            (2, 4, 32, 25),
            (3, 32, 196_608, 35_937),
        ] {
            let m = unit_simplex_mesh(d, n);
            assert_eq!(m.num_cells(), cells);
            assert_eq!(m.num_vertices(), verts);
        }
    }

    #[test]
    fn counting_identities_exhaustive() {
        for d in [2usize, 3] {
            for n in 1..=8usize {
                let m = unit_simplex_mesh(d, n);
                let expected_cells = if d == 2 { 2 * n * n } else { 6 * n * n * n };
                assert_eq!(m.num_cells(), expected_cells);
                assert_eq!(m.num_vertices(), (n + 1).pow(d as u32));
                let expected_facets = if d == 2 { 4 * n } else { 12 * n * n };
                assert_eq!(m.num_boundary_facets(), expected_facets);
            }
        }
    }

    #[test]
    fn volumes_positive_and_sum_to_one() {
        for d in [2usize, 3] {
            for n in [1usize, 3, 5] {
                let m = unit_simplex_mesh(d, n);
                let mut total = 0.0;
                for c in 0..m.num_cells() {
                    let v = m.cell_volume(c);
                    assert!(v > 0.0, "d={d} n={n} cell {c} volume {v}");
                    total += v;
                }
                assert!((total - 1.0).abs() < 1e-12, "total volume {total}");
            }
        }
    }

    #[test]
    fn single_cube_kuhn_volumes() {
        let m = unit_simplex_mesh(3, 1);
        for c in 0..6 {
            assert!((m.cell_volume(c) - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn boundary_markers() {
        let m = unit_simplex_mesh(3, 2);
        // every boundary facet carries one marker in 1..=6
        for f in 0..m.num_boundary_facets() {
            let (_, marker) = m.facet(f);
            assert!((1..=6).contains(&marker));
        }
        // all markers selects every boundary facet
        let all = m.facets_with_markers(&[1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(all.len(), m.num_boundary_facets());
        // face x=0 of the N=2 cube holds 2*2^2 = 8 triangles
        let x0 = m.facets_with_markers(&[1]).unwrap();
        assert_eq!(x0.len(), 8);
        assert!(matches!(
            m.facets_with_markers(&[7]),
            Err(Error::UnknownMarker(7))
        ));
    }

    #[test]
    fn hierarchy_shapes() {
        let h = build_hierarchy(unit_simplex_mesh(3, 2), 2);
        assert_eq!(h.num_levels(), 3);
        assert_eq!(
            h.levels.iter().map(|m| m.resolution).collect::<Vec<_>>(),
            vec![2, 4, 8]
        );
        let h0 = build_hierarchy(unit_simplex_mesh(2, 4), 0);
        assert_eq!(h0.num_levels(), 1);
        assert!(h0.children.is_empty());
    }

    #[test]
    fn hierarchy_nesting_geometric() {
        for d in [2usize, 3] {
            let h = build_hierarchy(unit_simplex_mesh(d, 2), 1);
            let (coarse, fine) = (&h.levels[0], &h.levels[1]);
            let expected_children = 1 << d;
            for c in 0..coarse.num_cells() {
                let kids = &h.children[0][c];
                assert_eq!(kids.len(), expected_children, "cell {c}");
                let vol: f64 = kids.iter().map(|&f| fine.cell_volume(f)).sum();
                assert!((vol - coarse.cell_volume(c)).abs() < 1e-14);
                // all child vertices lie in the closed parent cell
                for &fc in kids {
                    for &v in fine.cell(fc) {
                        let bary = coarse.barycentric(c, fine.vertex(v));
                        for lam in &bary[..=d] {
                            assert!(
                                (-1e-12..=1.0 + 1e-12).contains(lam),
                                "child vertex outside parent: {bary:?}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn vertex_embedding_preserves_coordinates_exactly() {
        for d in [2usize, 3] {
            let h = build_hierarchy(unit_simplex_mesh(d, 3), 2);
            for l in 0..h.num_levels() - 1 {
                let (c, f) = (&h.levels[l], &h.levels[l + 1]);
                for v in 0..c.num_vertices() {
                    let fv = h.vertex_embedding[l][v];
                    assert_eq!(c.vertex(v), f.vertex(fv), "level {l} vertex {v}");
                }
            }
        }
    }

    #[test]
    fn partition_examples() {
        let m = unit_simplex_mesh(3, 4);
        let p1 = partition_mesh(&m, 1).unwrap();
        assert!(p1.cell_owner.iter().all(|&r| r == 0));

        let p2 = partition_mesh(&m, 2).unwrap();
        assert_eq!(p2.owned_cells(0).len(), 192);
        assert_eq!(p2.owned_cells(1).len(), 192);

        assert!(matches!(
            partition_mesh(&m, 8),
            Err(Error::RankCountExceedsSlabs { ranks: 8, slabs: 4 })
        ));
    }

    #[test]
    fn partition_covering_and_determinism() {
        for d in [2usize, 3] {
            for n in [3usize, 5] {
                let m = unit_simplex_mesh(d, n);
                for r in 1..=n {
                    let p = partition_mesh(&m, r).unwrap();
                    let q = partition_mesh(&m, r).unwrap();
                    assert_eq!(p, q);
                    let total: usize = (0..r).map(|k| p.owned_cells(k).len()).sum();
                    assert_eq!(total, m.num_cells());
                    // slab sizes differ by at most one layer
                    let sizes: Vec<usize> =
                        p.slab_ranges.iter().map(|&(s, e)| e - s).collect();
                    let (min, max) = (
                        *sizes.iter().min().unwrap(),
                        *sizes.iter().max().unwrap(),
                    );
                    assert!(max - min <= 1);
                }
            }
        }
    }

    #[test]
    fn locate_finds_containing_cell() {
        let m = unit_simplex_mesh(3, 2);
        for c in 0..m.num_cells() {
            let coords = m.cell_coords(c);
            // centroid of each cell locates back to that cell
            let centroid: Vec<f64> = (0..3)
                .map(|a| (0..4).map(|v| coords[v * 3 + a]).sum::<f64>() / 4.0)
                .collect();
            let (found, bary) = m.locate(&centroid);
            assert_eq!(found, c);
            for lam in &bary[..=3] {
                assert!(*lam > 0.0);
            }
        }
    }

    #[test]
    fn dump_sections() {
        let m = unit_simplex_mesh(2, 1);
        let mut buf = Vec::new();
        m.dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("vertices:"));
        assert!(text.contains("cells:"));
        assert!(text.contains("facets:"));
        // 4 vertices, 2 cells, 4 boundary edges plus 3 headers
        assert_eq!(text.lines().count(), 3 + 4 + 2 + 4);
    }
}
