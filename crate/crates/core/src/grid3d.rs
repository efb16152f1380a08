//! Inscribed voxelizations of truncated layers `Π^R` on the lattice `hZ³`.
//!
//! The truncated layer is `Π ∩ {n_i · x ≤ R for all i}`. A cell is kept iff
//! its 8 corners lie in the closed cone, all 8 corners are separated from the
//! inner cone by one common face plane (`n_i · x ≤ 1`), and all corners
//! satisfy the truncation. Each test is linear in `x`, so the open cell then
//! lies in `Π^R`, and the active set at `h` is contained in the active set at
//! `h/2`. Lattice coordinates are computed as `i / m` when `h = 1/m`, so
//! walls on integer planes are met exactly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LayerGeometry, Vec3};

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CutBc {
    #[default]
    Dirichlet,
    Neumann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Layer,
    UnitCube,
}

#[derive(Debug, Clone)]
pub struct VoxelGrid {
    pub h: f64,
    pub r: f64,
    pub cut_bc: CutBc,
    pub kind: GridKind,
    /// Lattice index of the lowest bounding-box node.
    pub lo: [i64; 3],
    /// Cells per axis in the bounding box.
    pub dims: [usize; 3],
    /// Linear indices (x fastest) of active cells, ascending.
    pub active_cells: Vec<u32>,
    /// Linear node indices (over the `(dims + 1)` node box) touched by an active cell, ascending.
    pub nodes: Vec<u32>,
    /// Per entry of `nodes`: eliminated by the Dirichlet condition.
    pub dirichlet: Vec<bool>,
    /// Box node → position in `nodes`, `u32::MAX` if inactive.
    node_lookup: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub kind: GridKind,
    pub h: f64,
    #[serde(rename = "R")]
    pub r: f64,
    pub cut_bc: CutBc,
    pub box_cells: [usize; 3],
    pub active_cells: usize,
    pub nodes: usize,
    pub free_nodes: usize,
    pub dirichlet_nodes: usize,
    pub volume: f64,
}

/// Why a cell was rejected; only the truncation test matters for `cut_bc`.
#[derive(Clone, Copy, PartialEq, Eq)]
enum CellStatus {
    Active,
    TruncatedOnly,
    Outside,
}

/// Lattice coordinate `i h`, exact on integers when `h` is a unit fraction.
fn coord(i: i64, h: f64) -> f64 {
    let m = (1.0 / h).round();
    if m >= 1.0 && (m * h - 1.0).abs() < 1e-12 {
        i as f64 / m
    } else {
        i as f64 * h
    }
}

fn classify_cell(layer: &LayerGeometry, corners: &[Vec3; 8], r: f64) -> CellStatus {
    let normals = &layer.angle.normals;
    let mut in_cone = true;
    let mut separated = false;
    let mut truncated = true;
    for nrm in normals {
        let d: [f64; 8] = std::array::from_fn(|k| nrm.dot(&corners[k]));
        if d.iter().any(|&v| v < 0.0) {
            in_cone = false;
        }
        if d.iter().all(|&v| v <= 1.0) {
            separated = true;
        }
        if d.iter().any(|&v| v > r) {
            truncated = false;
        }
    }
    match (in_cone && separated, truncated) {
        (true, true) => CellStatus::Active,
        (true, false) => CellStatus::TruncatedOnly,
        _ => CellStatus::Outside,
    }
}

/// Vertices of the polytope `{0 ≤ n_i · x ≤ R}` give its bounding box.
fn truncated_bbox(layer: &LayerGeometry, r: f64) -> Result<(Vec3, Vec3)> {
    let normals = &layer.angle.normals;
    let planes: Vec<(Vec3, f64)> = normals.iter().flat_map(|n| [(*n, 0.0), (*n, r)]).collect();
    let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
    let m = planes.len();
    for a in 0..m {
        for b in a + 1..m {
            for c in b + 1..m {
                let mat = nalgebra::Matrix3::from_rows(&[planes[a].0.transpose(), planes[b].0.transpose(), planes[c].0.transpose()]);
                if mat.determinant().abs() < 1e-12 {
                    continue;
                }
                let Some(x) = mat.try_inverse().map(|inv| inv * Vec3::new(planes[a].1, planes[b].1, planes[c].1)) else {
                    continue;
                };
                let tol = 1e-9 * r.max(1.0);
                if normals.iter().all(|n| {
                    let d = n.dot(&x);
                    d >= -tol && d <= r + tol
                }) {
                    lo = lo.inf(&x);
                    hi = hi.sup(&x);
                }
            }
        }
    }
    if !lo.iter().all(|v| v.is_finite()) {
        return Err(Error::Grid("truncated layer has no vertices".into()));
    }
    Ok((lo, hi))
}

impl VoxelGrid {
    fn node_dims(&self) -> [usize; 3] {
        [self.dims[0] + 1, self.dims[1] + 1, self.dims[2] + 1]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn cell_ijk(&self, c: u32) -> [usize; 3] {
        let c = c as usize;
        let [nx, ny, _] = self.dims;
        [c % nx, (c / nx) % ny, c / (nx * ny)]
    }

    fn box_node(&self, ijk: [usize; 3]) -> usize {
        let [nx, ny, _] = self.node_dims();
        ijk[0] + nx * (ijk[1] + ny * ijk[2])
    }

    /// Positions in `nodes` of the 8 corners of an active cell, in the
    /// order `(dx, dy, dz)` with `dx` fastest.
    pub fn cell_nodes(&self, c: u32) -> [usize; 8] {
        let [i, j, k] = self.cell_ijk(c);
        std::array::from_fn(|m| {
            let b = self.box_node([i + (m & 1), j + ((m >> 1) & 1), k + ((m >> 2) & 1)]);
            self.node_lookup[b] as usize
        })
    }

    pub fn node_position(&self, p: usize) -> Vec3 {
        let b = self.nodes[p] as usize;
        let [nx, ny, _] = self.node_dims();
        let ijk = [b % nx, (b / nx) % ny, b / (nx * ny)];
        Vec3::from_fn(|a, _| coord(self.lo[a] + ijk[a] as i64, self.h))
    }

    pub fn cell_corner(&self, c: u32) -> Vec3 {
        let ijk = self.cell_ijk(c);
        Vec3::from_fn(|a, _| coord(self.lo[a] + ijk[a] as i64, self.h))
    }

    /// Position in `nodes` of the node at absolute lattice index `g`, if any.
    pub fn node_at_lattice(&self, g: [i64; 3]) -> Option<usize> {
        let nd = self.node_dims();
        let mut ijk = [0usize; 3];
        for a in 0..3 {
            let v = g[a] - self.lo[a];
            if v < 0 || v as usize >= nd[a] {
                return None;
            }
            ijk[a] = v as usize;
        }
        let p = self.node_lookup[self.box_node(ijk)];
        (p != NONE).then_some(p as usize)
    }

    pub fn lattice_index(&self, p: usize) -> [i64; 3] {
        let b = self.nodes[p] as usize;
        let [nx, ny, _] = self.node_dims();
        [self.lo[0] + (b % nx) as i64, self.lo[1] + ((b / nx) % ny) as i64, self.lo[2] + (b / (nx * ny)) as i64]
    }

    /// Whether the cell with box index `ijk` (which may lie outside the box) is active.
    pub fn is_active(&self, ijk: [i64; 3]) -> bool {
        if (0..3).any(|a| ijk[a] < 0 || ijk[a] as usize >= self.dims[a]) {
            return false;
        }
        let c = ijk[0] as usize + self.dims[0] * (ijk[1] as usize + self.dims[1] * ijk[2] as usize);
        self.active_cells.binary_search(&(c as u32)).is_ok()
    }

    /// Box index (relative to `lo`) of node `p`.
    pub fn node_box_index(&self, p: usize) -> [usize; 3] {
        let b = self.nodes[p] as usize;
        let [nx, ny, _] = self.node_dims();
        [b % nx, (b / nx) % ny, b / (nx * ny)]
    }

    /// Position in `nodes` of the node at box index `ijk`, if any.
    pub fn node_at_box(&self, ijk: [i64; 3]) -> Option<usize> {
        self.node_at_lattice([ijk[0] + self.lo[0], ijk[1] + self.lo[1], ijk[2] + self.lo[2]])
    }

    pub fn free_count(&self) -> usize {
        self.dirichlet.iter().filter(|d| !**d).count()
    }

    pub fn summary(&self) -> GridSummary {
        let dn = self.dirichlet.iter().filter(|d| **d).count();
        GridSummary {
            kind: self.kind,
            h: self.h,
            r: self.r,
            cut_bc: self.cut_bc,
            box_cells: self.dims,
            active_cells: self.active_cells.len(),
            nodes: self.nodes.len(),
            free_nodes: self.nodes.len() - dn,
            dirichlet_nodes: dn,
            volume: volume(self),
        }
    }

    /// Run-length dump of the active set: one `k j i_start length` line per
    /// maximal run of active cells along x.
    pub fn write_runs<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# h={:.17e} R={:.17e} lo={} {} {} dims={} {} {}",
            self.h, self.r, self.lo[0], self.lo[1], self.lo[2], self.dims[0], self.dims[1], self.dims[2]
        )?;
        let mut run: Option<([usize; 3], usize)> = None;
        for &c in &self.active_cells {
            let ijk = self.cell_ijk(c);
            match run {
                Some((s, len)) if s[1] == ijk[1] && s[2] == ijk[2] && s[0] + len == ijk[0] => run = Some((s, len + 1)),
                _ => {
                    if let Some((s, len)) = run {
                        writeln!(w, "{} {} {} {len}", s[2], s[1], s[0])?;
                    }
                    run = Some((ijk, 1));
                }
            }
        }
        if let Some((s, len)) = run {
            writeln!(w, "{} {} {} {len}", s[2], s[1], s[0])?;
        }
        Ok(())
    }

    /// Trilinear interpolation of a nodal field on a coarser nested grid
    /// (`coarse.h = 2 h`) onto this grid's nodes.
    pub fn prolong_from(&self, coarse: &VoxelGrid, values: &[f64]) -> Result<Vec<f64>> {
        if (coarse.h - 2.0 * self.h).abs() > 1e-12 * coarse.h {
            return Err(Error::Grid("prolongation needs a grid of twice the cell size".into()));
        }
        let mut out = vec![0.0; self.nodes.len()];
        for (p, o) in out.iter_mut().enumerate() {
            let g = self.lattice_index(p);
            // Coarse lattice neighbours along each axis.
            let mut acc = 0.0;
            let mut weight = 0.0;
            let axes: [Vec<(i64, f64)>; 3] = std::array::from_fn(|a| {
                if g[a].rem_euclid(2) == 0 {
                    vec![(g[a] / 2, 1.0)]
                } else {
                    vec![(g[a].div_euclid(2), 0.5), (g[a].div_euclid(2) + 1, 0.5)]
                }
            });
            for &(x, wx) in &axes[0] {
                for &(y, wy) in &axes[1] {
                    for &(z, wz) in &axes[2] {
                        let w = wx * wy * wz;
                        weight += w;
                        if let Some(q) = coarse.node_at_lattice([x, y, z]) {
                            acc += w * values[q];
                        }
                    }
                }
            }
            debug_assert!((weight - 1.0).abs() < 1e-15);
            *o = acc;
        }
        Ok(out)
    }

    /// Grid on `[0, 1]³` with `n` cells per side and Dirichlet boundary.
    pub fn unit_cube(n: usize) -> Result<VoxelGrid> {
        if n == 0 {
            return Err(Error::Grid("unit cube grid needs at least one cell".into()));
        }
        let dims = [n, n, n];
        let active: Vec<u32> = (0..(n * n * n) as u32).collect();
        let status = vec![CellStatus::Active; n * n * n];
        Ok(Self::finish(1.0 / n as f64, f64::INFINITY, CutBc::Dirichlet, GridKind::UnitCube, [0, 0, 0], dims, active, &status))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        h: f64,
        r: f64,
        cut_bc: CutBc,
        kind: GridKind,
        lo: [i64; 3],
        dims: [usize; 3],
        active_cells: Vec<u32>,
        status: &[CellStatus],
    ) -> VoxelGrid {
        let nd = [dims[0] + 1, dims[1] + 1, dims[2] + 1];
        let total_nodes = nd[0] * nd[1] * nd[2];
        let mut grid =
            VoxelGrid { h, r, cut_bc, kind, lo, dims, active_cells, nodes: Vec::new(), dirichlet: Vec::new(), node_lookup: Vec::new() };
        let mut touched = vec![false; total_nodes];
        for &c in &grid.active_cells {
            let [i, j, k] = grid.cell_ijk(c);
            for m in 0..8 {
                touched[grid.box_node([i + (m & 1), j + ((m >> 1) & 1), k + ((m >> 2) & 1)])] = true;
            }
        }
        let mut lookup = vec![NONE; total_nodes];
        let mut nodes = Vec::new();
        for (b, t) in touched.iter().enumerate() {
            if *t {
                lookup[b] = nodes.len() as u32;
                nodes.push(b as u32);
            }
        }
        // A node is interior iff all 8 surrounding cells are active. A
        // boundary node whose missing cells were all lost to truncation alone
        // sits on the cut and follows `cut_bc`.
        let dirichlet: Vec<bool> = nodes
            .par_iter()
            .map(|&b| {
                let b = b as usize;
                let ijk = [b % nd[0], (b / nd[0]) % nd[1], b / (nd[0] * nd[1])];
                let mut missing_hard = false;
                let mut missing_cut = false;
                for m in 0..8 {
                    let mut cell = [0usize; 3];
                    let mut inside = true;
                    for a in 0..3 {
                        let off = (m >> a) & 1;
                        if ijk[a] < off || ijk[a] - off >= dims[a] {
                            inside = false;
                        } else {
                            cell[a] = ijk[a] - off;
                        }
                    }
                    let st = if inside { status[cell[0] + dims[0] * (cell[1] + dims[1] * cell[2])] } else { CellStatus::Outside };
                    match st {
                        CellStatus::Active => {}
                        CellStatus::TruncatedOnly => missing_cut = true,
                        CellStatus::Outside => missing_hard = true,
                    }
                }
                missing_hard || (missing_cut && cut_bc == CutBc::Dirichlet)
            })
            .collect();
        grid.nodes = nodes;
        grid.dirichlet = dirichlet;
        grid.node_lookup = lookup;
        grid
    }
}

pub fn voxelize(layer: &LayerGeometry, r: f64, h: f64, cut_bc: CutBc) -> Result<VoxelGrid> {
    if !(h > 0.0 && h <= 1.0 / 3.0 + 1e-12) {
        return Err(Error::Grid(format!("cell size {h} must lie in (0, 1/3]")));
    }
    if !(r >= 3.0) {
        return Err(Error::Grid(format!("truncation R = {r} must be at least 3")));
    }
    let (blo, bhi) = truncated_bbox(layer, r)?;
    let lo: [i64; 3] = std::array::from_fn(|a| (blo[a] / h - 1e-9).floor() as i64);
    let hi: [i64; 3] = std::array::from_fn(|a| (bhi[a] / h + 1e-9).ceil() as i64);
    let dims: [usize; 3] = std::array::from_fn(|a| (hi[a] - lo[a]).max(1) as usize);
    let ncell = dims[0] * dims[1] * dims[2];
    if ncell > u32::MAX as usize / 2 {
        return Err(Error::Grid("bounding box too large for this cell size".into()));
    }
    let at = |i: i64, j: i64, k: i64| Vec3::new(coord(i, h), coord(j, h), coord(k, h));
    let status: Vec<CellStatus> = (0..ncell)
        .into_par_iter()
        .with_min_len(1024)
        .map(|c| {
            let i = lo[0] + (c % dims[0]) as i64;
            let j = lo[1] + ((c / dims[0]) % dims[1]) as i64;
            let k = lo[2] + (c / (dims[0] * dims[1])) as i64;
            let corners: [Vec3; 8] = std::array::from_fn(|m| at(i + (m & 1) as i64, j + ((m >> 1) & 1) as i64, k + ((m >> 2) & 1) as i64));
            classify_cell(layer, &corners, r)
        })
        .collect();
    let active: Vec<u32> = status.iter().enumerate().filter(|(_, s)| **s == CellStatus::Active).map(|(c, _)| c as u32).collect();
    if active.is_empty() {
        return Err(Error::Grid("no cell fits inside the truncated layer; refine h".into()));
    }
    Ok(VoxelGrid::finish(h, r, cut_bc, GridKind::Layer, lo, dims, active, &status))
}

pub fn volume(grid: &VoxelGrid) -> f64 {
    grid.h.powi(3) * grid.active_cells.len() as f64
}
