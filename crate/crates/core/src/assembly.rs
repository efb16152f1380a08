//! P1 triangles and Q1 cubes: exact element matrices, consistent mass,
//! Dirichlet elimination by dropping rows and columns.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid3d::VoxelGrid;
use crate::mesh2d::TriMesh;
use crate::sparse::{Neumaier, SparseSymmetric};

/// What a discrete problem was built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub description: String,
    pub nodes: usize,
    pub elements: usize,
}

#[derive(Debug, Clone)]
pub struct DiscreteProblem {
    pub k: SparseSymmetric,
    pub m: SparseSymmetric,
    /// Mesh/grid node → equation index, `None` for eliminated nodes.
    pub dof_of_node: Vec<Option<usize>>,
    pub node_of_dof: Vec<usize>,
    pub provenance: Provenance,
}

impl DiscreteProblem {
    pub fn dim(&self) -> usize {
        self.node_of_dof.len()
    }

    /// Nodal vector with zeros on eliminated nodes.
    pub fn expand(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dof_of_node.len()];
        for (d, &n) in self.node_of_dof.iter().enumerate() {
            out[n] = v[d];
        }
        out
    }

    /// Free-dof part of a nodal vector.
    pub fn restrict(&self, nodal: &[f64]) -> Vec<f64> {
        self.node_of_dof.iter().map(|&n| nodal[n]).collect()
    }
}

fn build_map(eliminated: &[bool]) -> (Vec<Option<usize>>, Vec<usize>) {
    let mut dof_of_node = vec![None; eliminated.len()];
    let mut node_of_dof = Vec::new();
    for (n, e) in eliminated.iter().enumerate() {
        if !e {
            dof_of_node[n] = Some(node_of_dof.len());
            node_of_dof.push(n);
        }
    }
    (dof_of_node, node_of_dof)
}

/// P1 stiffness and mass over all mesh nodes, before elimination.
pub fn p1_matrices(mesh: &TriMesh) -> Result<(SparseSymmetric, SparseSymmetric)> {
    let n = mesh.num_nodes();
    let mut k = SparseSymmetric::from_elements(n, mesh.triangles.iter().map(|t| &t[..]));
    let mut m = k.clone();
    for (e, tri) in mesh.triangles.iter().enumerate() {
        let p = tri.map(|i| mesh.nodes[i]);
        let det = (p[1] - p[0]).perp(&(p[2] - p[0]));
        if !(det > 0.0) || det.abs() < 1e-14 * (p[1] - p[0]).norm_squared().max((p[2] - p[0]).norm_squared()) {
            return Err(Error::Assembly(format!("triangle {e} {tri:?} is degenerate or inverted (2*area = {det:e})")));
        }
        let area = 0.5 * det;
        let b: [f64; 3] = std::array::from_fn(|a| p[(a + 1) % 3].y - p[(a + 2) % 3].y);
        let c: [f64; 3] = std::array::from_fn(|a| p[(a + 2) % 3].x - p[(a + 1) % 3].x);
        let mut kl = [0.0; 9];
        let mut ml = [0.0; 9];
        for a in 0..3 {
            for bb in 0..3 {
                kl[3 * a + bb] = (b[a] * b[bb] + c[a] * c[bb]) / (4.0 * area);
                ml[3 * a + bb] = area / 12.0 * if a == bb { 2.0 } else { 1.0 };
            }
        }
        let dofs = tri.map(Some);
        k.add_element(&dofs, &kl);
        m.add_element(&dofs, &ml);
    }
    Ok((k, m))
}

pub fn assemble_p1(mesh: &TriMesh) -> Result<DiscreteProblem> {
    let (k, m) = p1_matrices(mesh)?;
    let (dof_of_node, node_of_dof) = build_map(&mesh.dirichlet_nodes());
    if node_of_dof.is_empty() {
        return Err(Error::Assembly("no free degrees of freedom".into()));
    }
    let dim = node_of_dof.len();
    Ok(DiscreteProblem {
        k: k.restrict(&dof_of_node, dim),
        m: m.restrict(&dof_of_node, dim),
        provenance: Provenance {
            description: format!("P1 on {:?}, h = {}", mesh.origin, mesh.h),
            nodes: mesh.num_nodes(),
            elements: mesh.triangles.len(),
        },
        dof_of_node,
        node_of_dof,
    })
}

/// 8×8 trilinear stiffness and mass of a cube of side `h`, corner `m`
/// at offset `(m & 1, (m >> 1) & 1, (m >> 2) & 1)`.
pub fn q1_element(h: f64) -> ([[f64; 8]; 8], [[f64; 8]; 8]) {
    let k1 = |a: usize, b: usize| if a == b { 1.0 / h } else { -1.0 / h };
    let m1 = |a: usize, b: usize| if a == b { h / 3.0 } else { h / 6.0 };
    let bit = |m: usize, ax: usize| (m >> ax) & 1;
    let mut k = [[0.0; 8]; 8];
    let mut m = [[0.0; 8]; 8];
    for a in 0..8 {
        for b in 0..8 {
            let (kx, ky, kz) = (k1(bit(a, 0), bit(b, 0)), k1(bit(a, 1), bit(b, 1)), k1(bit(a, 2), bit(b, 2)));
            let (mx, my, mz) = (m1(bit(a, 0), bit(b, 0)), m1(bit(a, 1), bit(b, 1)), m1(bit(a, 2), bit(b, 2)));
            k[a][b] = kx * my * mz + mx * ky * mz + mx * my * kz;
            m[a][b] = mx * my * mz;
        }
    }
    (k, m)
}

/// Q1 matrices over the nodes with `map[p] = Some(row)`. Rows are built
/// independently (one per node, cells visited in a fixed order), so the
/// result does not depend on the thread count. Every entry is a sum of
/// identical per-cell contributions, which makes it exactly symmetric.
pub fn q1_matrices(grid: &VoxelGrid, map: &[Option<usize>], dim: usize) -> (SparseSymmetric, SparseSymmetric) {
    let (kl, ml) = q1_element(grid.h);
    let rows: Vec<(usize, Vec<(usize, f64)>, Vec<(usize, f64)>)> = (0..grid.num_nodes())
        .into_par_iter()
        .with_min_len(256)
        .filter_map(|p| {
            let row = map[p]?;
            let ijk = grid.node_box_index(p).map(|v| v as i64);
            // Accumulate by relative offset in {-1, 0, 1}³.
            let mut kacc = [0.0f64; 27];
            let mut macc = [0.0f64; 27];
            let mut touched = [false; 27];
            for off in 0..8usize {
                let o = [(off & 1) as i64, ((off >> 1) & 1) as i64, ((off >> 2) & 1) as i64];
                let cell = [ijk[0] - o[0], ijk[1] - o[1], ijk[2] - o[2]];
                if !grid.is_active(cell) {
                    continue;
                }
                // `p` is corner `off` of this cell.
                for b in 0..8usize {
                    let ob = [(b & 1) as i64, ((b >> 1) & 1) as i64, ((b >> 2) & 1) as i64];
                    let rel = [ob[0] - o[0], ob[1] - o[1], ob[2] - o[2]];
                    let s = ((rel[0] + 1) + 3 * (rel[1] + 1) + 9 * (rel[2] + 1)) as usize;
                    kacc[s] += kl[off][b];
                    macc[s] += ml[off][b];
                    touched[s] = true;
                }
            }
            let mut kr = Vec::with_capacity(27);
            let mut mr = Vec::with_capacity(27);
            for s in 0..27 {
                if !touched[s] {
                    continue;
                }
                let rel = [(s % 3) as i64 - 1, ((s / 3) % 3) as i64 - 1, (s / 9) as i64 - 1];
                let q =
                    grid.node_at_box([ijk[0] + rel[0], ijk[1] + rel[1], ijk[2] + rel[2]]).expect("corner of an active cell is a grid node");
                if let Some(col) = map[q] {
                    kr.push((col, kacc[s]));
                    mr.push((col, macc[s]));
                }
            }
            Some((row, kr, mr))
        })
        .collect();
    let mut krows = vec![Vec::new(); dim];
    let mut mrows = vec![Vec::new(); dim];
    for (r, kr, mr) in rows {
        krows[r] = kr;
        mrows[r] = mr;
    }
    (SparseSymmetric::from_rows(krows), SparseSymmetric::from_rows(mrows))
}

pub fn assemble_q1(grid: &VoxelGrid) -> Result<DiscreteProblem> {
    let (dof_of_node, node_of_dof) = build_map(&grid.dirichlet);
    if node_of_dof.is_empty() {
        return Err(Error::Assembly("no free degrees of freedom".into()));
    }
    let (k, m) = q1_matrices(grid, &dof_of_node, node_of_dof.len());
    Ok(DiscreteProblem {
        k,
        m,
        provenance: Provenance {
            description: format!("Q1 on {:?} grid, h = {}, R = {}, cut = {:?}", grid.kind, grid.h, grid.r, grid.cut_bc),
            nodes: grid.num_nodes(),
            elements: grid.active_cells.len(),
        },
        dof_of_node,
        node_of_dof,
    })
}

/// `vᵀKv / vᵀMv` on the free dofs.
pub fn rayleigh_quotient(problem: &DiscreteProblem, v: &[f64]) -> Result<f64> {
    if v.len() != problem.dim() {
        return Err(Error::Invalid(format!("vector has length {}, problem has {} dofs", v.len(), problem.dim())));
    }
    let den = problem.m.quadratic_form(v);
    if !(den > 0.0) {
        return Err(Error::Invalid("vector has zero mass norm".into()));
    }
    Ok(problem.k.quadratic_form(v) / den)
}

/// Compensated sum of all entries of a nodal vector weighted by the mass
/// matrix applied to ones, i.e. `∫ u` for a P1/Q1 field.
pub fn mass_integral(m: &SparseSymmetric, u: &[f64]) -> f64 {
    let mut s = Neumaier::default();
    for (i, ui) in u.iter().enumerate() {
        for (_, v) in m.row(i) {
            s.add(v * ui);
        }
    }
    s.sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_trihedral, lshape_profile, make_layer};
    use crate::grid3d::{voxelize, CutBc};
    use crate::mesh2d::{mesh_lshape, BoundaryTag};
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn p1_mass_sums_to_area_and_kills_constants() {
        let p = lshape_profile(1.1, 3.0).unwrap();
        let mesh = mesh_lshape(&p, 0.2).unwrap();
        let (k, m) = p1_matrices(&mesh).unwrap();
        assert_abs_diff_eq!(m.sum_entries(), p.area(), epsilon = 1e-10);
        let kc = k.matvec(&vec![1.0; mesh.num_nodes()]);
        assert!(kc.iter().all(|v| v.abs() < 1e-10));
        assert_eq!(k.symmetry_defect(), 0.0);
        assert_eq!(m.symmetry_defect(), 0.0);
    }

    #[test]
    fn p1_five_point_stencil() {
        let mesh = TriMesh::rectangle(1.0, 1.0, 8, 8, [BoundaryTag::Dirichlet; 4]).unwrap();
        let (k, _) = p1_matrices(&mesh).unwrap();
        let c = 4 * 9 + 4;
        assert_abs_diff_eq!(k.get(c, c), 4.0, epsilon = 1e-14);
        for nb in [c - 1, c + 1, c - 9, c + 9] {
            assert_abs_diff_eq!(k.get(c, nb), -1.0, epsilon = 1e-14);
        }
        for diag in [c - 10, c + 10, c - 8, c + 8] {
            assert_abs_diff_eq!(k.get(c, diag), 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn p1_patch_test() {
        let p = lshape_profile(0.7, 2.0).unwrap();
        let mesh = mesh_lshape(&p, 0.25).unwrap();
        let (k, m) = p1_matrices(&mesh).unwrap();
        // Energy of u = 2x - 3y is |∇u|² · area.
        let u: Vec<f64> = mesh.nodes.iter().map(|q| 2.0 * q.x - 3.0 * q.y).collect();
        assert_abs_diff_eq!(k.quadratic_form(&u), 13.0 * p.area(), epsilon = 1e-9);
        assert_abs_diff_eq!(mass_integral(&m, &vec![1.0; u.len()]), p.area(), epsilon = 1e-10);
    }

    #[test]
    fn q1_element_properties() {
        let (k, m) = q1_element(0.5);
        let ms: f64 = m.iter().flatten().sum();
        assert_abs_diff_eq!(ms, 0.125, epsilon = 1e-15);
        for row in &k {
            assert_abs_diff_eq!(row.iter().sum::<f64>(), 0.0, epsilon = 1e-14);
        }
        // Stiffness diagonal for a cube: h/3.
        assert_abs_diff_eq!(k[0][0], 0.5 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn q1_full_matrices_on_layer() {
        let layer = make_layer(build_trihedral([PI / 2.0; 3]).unwrap()).unwrap();
        let g = voxelize(&layer, 3.0, 0.25, CutBc::Dirichlet).unwrap();
        let all: Vec<Option<usize>> = (0..g.num_nodes()).map(Some).collect();
        let (k, m) = q1_matrices(&g, &all, g.num_nodes());
        assert_abs_diff_eq!(m.sum_entries(), crate::grid3d::volume(&g), epsilon = 1e-10);
        assert!(k.matvec(&vec![1.0; g.num_nodes()]).iter().all(|v| v.abs() < 1e-10));
        assert_eq!(k.symmetry_defect(), 0.0);
        assert_eq!(m.symmetry_defect(), 0.0);
        // Patch test in 3D: u = x + 2y - z has energy 6·volume.
        let u: Vec<f64> = (0..g.num_nodes())
            .map(|p| {
                let x = g.node_position(p);
                x.x + 2.0 * x.y - x.z
            })
            .collect();
        assert_abs_diff_eq!(k.quadratic_form(&u), 6.0 * crate::grid3d::volume(&g), epsilon = 1e-9);
        let prob = assemble_q1(&g).unwrap();
        assert_eq!(prob.dim(), g.free_count());
    }

    #[test]
    fn q1_rejects_all_dirichlet() {
        let g = VoxelGrid::unit_cube(1).unwrap();
        assert_eq!(g.free_count(), 0);
        assert!(assemble_q1(&g).is_err());
        assert_eq!(assemble_q1(&VoxelGrid::unit_cube(2).unwrap()).unwrap().dim(), 1);
    }

    #[test]
    fn rayleigh_quotient_rejects_zero() {
        let mesh = TriMesh::rectangle(1.0, 1.0, 4, 4, [BoundaryTag::Dirichlet; 4]).unwrap();
        let prob = assemble_p1(&mesh).unwrap();
        assert!(rayleigh_quotient(&prob, &vec![0.0; prob.dim()]).is_err());
        let q = rayleigh_quotient(&prob, &vec![1.0; prob.dim()]).unwrap();
        assert!(q > 2.0 * PI * PI * 0.5);
    }
}
