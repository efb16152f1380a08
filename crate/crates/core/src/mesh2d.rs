//! Conforming triangulations of truncated L-shaped waveguides.
//!
//! The hexagon `ω^R(θ)` is cut into four structured blocks:
//!
//! * the isosceles triangle `O' F1 F2`, meshed as a fan of quads radiating
//!   from the outer vertex;
//! * the triangle `F1 O F2`, a fan radiating from the inner vertex;
//! * two outlet rectangles glued to the edges `F1 O` and `F2 O`.
//!
//! Shared block edges carry the same nodes, quads are split along the
//! `(i, j) → (i+1, j+1)` diagonal everywhere, and the symmetry line `O' O`
//! is a chain of mesh edges (the number of divisions across `F1 F2` is even).
//!
//! The blocks are laid out once at element size [`BASE_H`] and then refined
//! uniformly. Red refinement produces similar triangles, so the minimum
//! angle depends on `θ` only, and every finer mesh is nested in the coarser.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{LShapeProfile, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BoundaryTag {
    Dirichlet,
    Neumann,
}

/// Boundary condition on the two outlet cross-sections of `ω^R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EndCondition {
    #[default]
    Neumann,
    Dirichlet,
}

impl From<EndCondition> for BoundaryTag {
    fn from(e: EndCondition) -> Self {
        match e {
            EndCondition::Neumann => BoundaryTag::Neumann,
            EndCondition::Dirichlet => BoundaryTag::Dirichlet,
        }
    }
}

/// Where a mesh came from; echoed in mesh dumps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MeshOrigin {
    LShape { theta: f64, r: f64, ends: EndCondition },
    Rectangle { width: f64, height: f64 },
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    pub nodes: Vec<Vec2>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<([usize; 2], BoundaryTag)>,
    pub h: f64,
    pub origin: MeshOrigin,
    pub parent: Option<Arc<TriMesh>>,
    /// For every node created by refinement, the two parent nodes it bisects.
    /// Node `k >= parent node count` is the midpoint of `midpoints[k - count]`.
    pub midpoints: Vec<[usize; 2]>,
}

impl TriMesh {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn signed_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        0.5 * (pb - pa).perp(&(pc - pa))
    }

    pub fn area(&self) -> f64 {
        let mut s = crate::sparse::Neumaier::default();
        for t in 0..self.triangles.len() {
            s.add(self.signed_area(t));
        }
        s.sum()
    }

    /// Smallest interior angle over all triangles, in radians.
    pub fn min_angle(&self) -> f64 {
        let mut worst = PI;
        for tri in &self.triangles {
            for k in 0..3 {
                let p = self.nodes[tri[k]];
                let u = self.nodes[tri[(k + 1) % 3]] - p;
                let v = self.nodes[tri[(k + 2) % 3]] - p;
                worst = worst.min(u.perp(&v).abs().atan2(u.dot(&v)));
            }
        }
        worst
    }

    /// `true` for nodes on a Dirichlet-tagged edge.
    pub fn dirichlet_nodes(&self) -> Vec<bool> {
        let mut d = vec![false; self.nodes.len()];
        for (e, tag) in &self.boundary_edges {
            if *tag == BoundaryTag::Dirichlet {
                d[e[0]] = true;
                d[e[1]] = true;
            }
        }
        d
    }

    pub fn tagged_length(&self, tag: BoundaryTag) -> f64 {
        self.boundary_edges.iter().filter(|(_, t)| *t == tag).map(|(e, _)| (self.nodes[e[0]] - self.nodes[e[1]]).norm()).sum()
    }

    /// Checks orientation, conformity, and that tagged edges are exactly the
    /// edges used by a single triangle.
    pub fn validate(&self) -> Result<()> {
        for t in 0..self.triangles.len() {
            if self.signed_area(t) <= 0.0 {
                return Err(Error::Mesh(format!("triangle {t} has non-positive area")));
            }
        }
        let mut count: HashMap<[usize; 2], usize> = HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                *count.entry(edge_key(tri[k], tri[(k + 1) % 3])).or_default() += 1;
            }
        }
        if let Some((e, c)) = count.iter().find(|(_, &c)| c > 2) {
            return Err(Error::Mesh(format!("edge {e:?} shared by {c} triangles")));
        }
        let boundary: std::collections::HashSet<[usize; 2]> = count.iter().filter(|(_, &c)| c == 1).map(|(e, _)| *e).collect();
        let tagged: std::collections::HashSet<[usize; 2]> = self.boundary_edges.iter().map(|(e, _)| edge_key(e[0], e[1])).collect();
        if tagged.len() != self.boundary_edges.len() {
            return Err(Error::Mesh("duplicate tagged edge".into()));
        }
        if boundary != tagged {
            return Err(Error::Mesh(format!(
                "{} boundary edges but {} tagged edges; hanging or untagged edges present",
                boundary.len(),
                tagged.len()
            )));
        }
        Ok(())
    }

    /// Uniform red refinement: every triangle splits into four through its
    /// edge midpoints. Parent nodes keep their indices.
    pub fn refine(self: &Arc<Self>) -> TriMesh {
        let n0 = self.nodes.len();
        let mut nodes = self.nodes.clone();
        let mut mid: HashMap<[usize; 2], usize> = HashMap::new();
        let mut midpoints = Vec::new();
        let mut midpoint = |a: usize, b: usize, nodes: &mut Vec<Vec2>| -> usize {
            *mid.entry(edge_key(a, b)).or_insert_with(|| {
                nodes.push((nodes[a] + nodes[b]) * 0.5);
                midpoints.push([a, b]);
                nodes.len() - 1
            })
        };
        let mut triangles = Vec::with_capacity(4 * self.triangles.len());
        for &[a, b, c] in &self.triangles {
            let ab = midpoint(a, b, &mut nodes);
            let bc = midpoint(b, c, &mut nodes);
            let ca = midpoint(c, a, &mut nodes);
            triangles.extend_from_slice(&[[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
        }
        let mut boundary_edges = Vec::with_capacity(2 * self.boundary_edges.len());
        for &([a, b], tag) in &self.boundary_edges {
            let m = midpoint(a, b, &mut nodes);
            boundary_edges.push(([a, m], tag));
            boundary_edges.push(([m, b], tag));
        }
        debug_assert_eq!(nodes.len(), n0 + midpoints.len());
        TriMesh { nodes, triangles, boundary_edges, h: self.h / 2.0, origin: self.origin, parent: Some(Arc::clone(self)), midpoints }
    }

    /// Interpolates a nodal field of the parent mesh onto this mesh.
    pub fn prolong(&self, coarse: &[f64]) -> Vec<f64> {
        let n0 = self.nodes.len() - self.midpoints.len();
        assert_eq!(coarse.len(), n0, "field does not live on the parent mesh");
        let mut fine = coarse.to_vec();
        fine.extend(self.midpoints.iter().map(|[a, b]| 0.5 * (coarse[*a] + coarse[*b])));
        fine
    }

    pub fn locator(&self) -> Locator<'_> {
        Locator::new(self)
    }

    /// Line-oriented text dump: header, node table, triangle table, tagged edges.
    pub fn write_text<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        match self.origin {
            MeshOrigin::LShape { theta, r, ends } => writeln!(w, "# lshape theta={theta:.17e} R={r:.17e} h={:.17e} ends={ends:?}", self.h)?,
            MeshOrigin::Rectangle { width, height } => {
                writeln!(w, "# rectangle width={width:.17e} height={height:.17e} h={:.17e}", self.h)?
            }
        }
        writeln!(w, "nodes {}", self.nodes.len())?;
        for p in &self.nodes {
            writeln!(w, "{:.17e} {:.17e}", p.x, p.y)?;
        }
        writeln!(w, "triangles {}", self.triangles.len())?;
        for t in &self.triangles {
            writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
        }
        writeln!(w, "edges {}", self.boundary_edges.len())?;
        for (e, tag) in &self.boundary_edges {
            let t = match tag {
                BoundaryTag::Dirichlet => "dirichlet",
                BoundaryTag::Neumann => "neumann",
            };
            writeln!(w, "{} {} {t}", e[0], e[1])?;
        }
        Ok(())
    }

    /// Axis-aligned rectangle `[0, width] × [0, height]` split into
    /// `nx × ny` right-triangle pairs. Tags are given as bottom, right, top, left.
    pub fn rectangle(width: f64, height: f64, nx: usize, ny: usize, tags: [BoundaryTag; 4]) -> Result<TriMesh> {
        if nx == 0 || ny == 0 || !(width > 0.0 && height > 0.0) {
            return Err(Error::Mesh("rectangle needs positive sizes and divisions".into()));
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                nodes.push(Vec2::new(width * i as f64 / nx as f64, height * j as f64 / ny as f64));
            }
        }
        let mut b = Builder { nodes, triangles: Vec::new(), edges: Vec::new() };
        for j in 0..ny {
            for i in 0..nx {
                b.quad(id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            }
        }
        b.chain(&(0..=nx).map(|i| id(i, 0)).collect::<Vec<_>>(), tags[0]);
        b.chain(&(0..=ny).map(|j| id(nx, j)).collect::<Vec<_>>(), tags[1]);
        b.chain(&(0..=nx).map(|i| id(i, ny)).collect::<Vec<_>>(), tags[2]);
        b.chain(&(0..=ny).map(|j| id(0, j)).collect::<Vec<_>>(), tags[3]);
        let h = (width / nx as f64).max(height / ny as f64);
        Ok(b.finish(h, MeshOrigin::Rectangle { width, height }))
    }
}

fn edge_key(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

struct Builder {
    nodes: Vec<Vec2>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<([usize; 2], BoundaryTag)>,
}

impl Builder {
    fn push(&mut self, p: Vec2) -> usize {
        self.nodes.push(p);
        self.nodes.len() - 1
    }

    fn tri(&mut self, a: usize, b: usize, c: usize) {
        let (pa, pb, pc) = (self.nodes[a], self.nodes[b], self.nodes[c]);
        if (pb - pa).perp(&(pc - pa)) >= 0.0 {
            self.triangles.push([a, b, c]);
        } else {
            self.triangles.push([a, c, b]);
        }
    }

    /// Quad `a b c d` (cyclic) split along the `a c` diagonal.
    fn quad(&mut self, a: usize, b: usize, c: usize, d: usize) {
        self.tri(a, b, c);
        self.tri(a, c, d);
    }

    fn chain(&mut self, ids: &[usize], tag: BoundaryTag) {
        for w in ids.windows(2) {
            self.edges.push(([w[0], w[1]], tag));
        }
    }

    fn finish(self, h: f64, origin: MeshOrigin) -> TriMesh {
        TriMesh { nodes: self.nodes, triangles: self.triangles, boundary_edges: self.edges, h, origin, parent: None, midpoints: Vec::new() }
    }
}

fn divisions(length: f64, h: f64, min: usize) -> usize {
    ((length / h - 1e-9).ceil() as usize).max(min)
}

/// Element size of the unrefined block layout (two elements across the strip).
pub const BASE_H: f64 = 0.5;

/// Number of uniform refinements of the base layout needed to reach size `h`.
pub fn refinements_for(h: f64) -> Result<u32> {
    if !(h > 0.0 && h <= BASE_H) {
        return Err(Error::Mesh(format!("element size {h} must lie in (0, {BASE_H}]")));
    }
    Ok((BASE_H / h - 1e-9).log2().ceil().max(0.0) as u32)
}

/// Structured mesh of `ω^R(θ)` with Neumann outlet cross-sections and
/// element size `BASE_H / 2^k ≤ h`.
pub fn mesh_lshape(profile: &LShapeProfile, h: f64) -> Result<TriMesh> {
    mesh_lshape_with(profile, h, EndCondition::Neumann)
}

pub fn mesh_lshape_with(profile: &LShapeProfile, h: f64, ends: EndCondition) -> Result<TriMesh> {
    let k = refinements_for(h)?;
    let mut mesh = base_lshape(profile, ends);
    for _ in 0..k {
        mesh = Arc::new(mesh).refine();
    }
    Ok(mesh)
}

fn base_lshape(profile: &LShapeProfile, ends: EndCondition) -> TriMesh {
    let h = BASE_H;
    let theta = profile.theta;
    let r = profile.outlet_length;
    let o_outer = profile.outer_vertex();
    let o_inner = profile.inner_vertex();
    let [f1, f2] = profile.feet;
    let [d1, d2] = profile.arm_directions();

    let n_w = divisions(1.0, h, 2);
    let mut n_v = divisions((f2 - f1).norm(), h, 2);
    n_v += n_v % 2;
    let n_u = divisions((f1 - o_outer).norm(), h, 1);
    let n_r = divisions(r, h, 1);

    let mut b = Builder { nodes: Vec::new(), triangles: Vec::new(), edges: Vec::new() };
    let q = |j: usize| f1 + (f2 - f1) * (j as f64 / n_v as f64);

    // Outer fan: a[i][j] for i = 1..=n_u, i = n_u on the segment F1 F2.
    let apex = b.push(o_outer);
    let mut a = vec![vec![0usize; n_v + 1]; n_u + 1];
    for (i, row) in a.iter_mut().enumerate().skip(1) {
        for (j, slot) in row.iter_mut().enumerate() {
            *slot = b.push(o_outer + (q(j) - o_outer) * (i as f64 / n_u as f64));
        }
    }
    // Inner fan from O: c[i][j], i = 0 is O itself, i = n_w shares a[n_u].
    let centre = b.push(o_inner);
    let mut c = vec![vec![centre; n_v + 1]; n_w + 1];
    for i in 1..n_w {
        for j in 0..=n_v {
            c[i][j] = b.push(o_inner + (q(j) - o_inner) * (i as f64 / n_w as f64));
        }
    }
    c[n_w] = a[n_u].clone();

    for j in 0..n_v {
        b.tri(apex, a[1][j], a[1][j + 1]);
        b.tri(centre, c[1][j], c[1][j + 1]);
    }
    for i in 1..n_u {
        for j in 0..n_v {
            b.quad(a[i][j], a[i + 1][j], a[i + 1][j + 1], a[i][j + 1]);
        }
    }
    for i in 1..n_w {
        for j in 0..n_v {
            b.quad(c[i][j], c[i + 1][j], c[i + 1][j + 1], c[i][j + 1]);
        }
    }

    // Outlets. Column 0 is the edge O → F (ray j = 0 or j = n_v of the inner fan).
    let arm = |b: &mut Builder, j: usize, dir: Vec2| -> Vec<Vec<usize>> {
        let mut cols = vec![(0..=n_w).map(|i| c[i][j]).collect::<Vec<_>>()];
        for k in 1..=n_r {
            let shift = dir * (r * k as f64 / n_r as f64);
            let col = (0..=n_w).map(|i| {
                let base = b.nodes[cols[0][i]];
                b.push(base + shift)
            });
            let col: Vec<usize> = col.collect();
            cols.push(col);
        }
        for k in 0..n_r {
            for i in 0..n_w {
                b.quad(cols[k][i], cols[k + 1][i], cols[k + 1][i + 1], cols[k][i + 1]);
            }
        }
        cols
    };
    let arm1 = arm(&mut b, 0, d1);
    let arm2 = arm(&mut b, n_v, d2);

    let end_tag = BoundaryTag::from(ends);
    for (cols, j) in [(&arm1, 0usize), (&arm2, n_v)] {
        // Outer side: apex → fan edge → outlet outer edge.
        let mut outer = vec![apex];
        outer.extend((1..=n_u).map(|i| a[i][j]));
        outer.extend(cols.iter().skip(1).map(|col| col[n_w]));
        b.chain(&outer, BoundaryTag::Dirichlet);
        let inner: Vec<usize> = cols.iter().map(|col| col[0]).collect();
        b.chain(&inner, BoundaryTag::Dirichlet);
        b.chain(cols.last().unwrap(), end_tag);
    }

    let mesh = b.finish(h, MeshOrigin::LShape { theta, r, ends });
    debug_assert!(mesh.validate().is_ok());
    mesh
}

/// Bucketed point location over a fixed mesh.
pub struct Locator<'a> {
    mesh: &'a TriMesh,
    origin: Vec2,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

const BARY_TOL: f64 = 1e-12;

impl<'a> Locator<'a> {
    pub fn new(mesh: &'a TriMesh) -> Self {
        let (mut lo, mut hi) = (Vec2::repeat(f64::INFINITY), Vec2::repeat(f64::NEG_INFINITY));
        for p in &mesh.nodes {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let ext = hi - lo;
        let nt = mesh.triangles.len().max(1) as f64;
        let cell = ((ext.x * ext.y).max(1e-300) / nt).sqrt().max(1e-9 * ext.max()) * 2.0;
        let nx = ((ext.x / cell).ceil() as usize).clamp(1, 4096);
        let ny = ((ext.y / cell).ceil() as usize).clamp(1, 4096);
        let cell = (ext.x / nx as f64).max(ext.y / ny as f64).max(1e-300);
        let nx = ((ext.x / cell).ceil() as usize).max(1);
        let ny = ((ext.y / cell).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        let mut loc = Self { mesh, origin: lo, cell, nx, ny, buckets: Vec::new() };
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let (mut tlo, mut thi) = (Vec2::repeat(f64::INFINITY), Vec2::repeat(f64::NEG_INFINITY));
            for &k in tri {
                tlo = tlo.inf(&mesh.nodes[k]);
                thi = thi.sup(&mesh.nodes[k]);
            }
            let (i0, j0) = loc.bucket_of(&tlo);
            let (i1, j1) = loc.bucket_of(&thi);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(t as u32);
                }
            }
        }
        loc.buckets = buckets;
        loc
    }

    fn bucket_of(&self, p: &Vec2) -> (usize, usize) {
        let f = |v: f64, n: usize| (((v / self.cell).floor()).max(0.0) as usize).min(n - 1);
        let d = p - self.origin;
        (f(d.x, self.nx), f(d.y, self.ny))
    }

    pub fn barycentric(&self, t: usize, p: &Vec2) -> [f64; 3] {
        let [a, b, c] = self.mesh.triangles[t];
        let (pa, pb, pc) = (self.mesh.nodes[a], self.mesh.nodes[b], self.mesh.nodes[c]);
        let det = (pb - pa).perp(&(pc - pa));
        let l1 = (pb - p).perp(&(pc - p)) / det;
        let l2 = (pc - p).perp(&(pa - p)) / det;
        [l1, l2, 1.0 - l1 - l2]
    }

    /// Containing triangle and barycentric coordinates (clamped to the triangle).
    pub fn locate(&self, p: &Vec2) -> Option<(usize, [f64; 3])> {
        let (i, j) = self.bucket_of(p);
        let d = p - self.origin;
        if d.x < -self.cell || d.y < -self.cell || d.x > (self.nx as f64 + 1.0) * self.cell || d.y > (self.ny as f64 + 1.0) * self.cell {
            return None;
        }
        let mut best: Option<(usize, [f64; 3], f64)> = None;
        for &t in &self.buckets[j * self.nx + i] {
            let l = self.barycentric(t as usize, p);
            let worst = l.iter().copied().fold(f64::INFINITY, f64::min);
            if worst >= 0.0 {
                return Some((t as usize, l));
            }
            if worst >= -BARY_TOL && best.is_none_or(|b| worst > b.2) {
                best = Some((t as usize, l, worst));
            }
        }
        best.map(|(t, l, _)| {
            let l = l.map(|x| x.max(0.0));
            let s: f64 = l.iter().sum();
            (t, l.map(|x| x / s))
        })
    }

    pub fn evaluate(&self, values: &[f64], p: &Vec2) -> Result<f64> {
        let (t, l) = self.locate(p).ok_or_else(|| Error::Mesh(format!("point ({}, {}) lies outside the mesh", p.x, p.y)))?;
        let tri = self.mesh.triangles[t];
        Ok(l[0] * values[tri[0]] + l[1] * values[tri[1]] + l[2] * values[tri[2]])
    }

    /// Triangles whose bucket range overlaps the box spanned by `a` and `b`.
    fn candidates(&self, a: &Vec2, b: &Vec2) -> Vec<usize> {
        let (i0, j0) = self.bucket_of(&a.inf(b));
        let (i1, j1) = self.bucket_of(&a.sup(b));
        let mut out: Vec<usize> = Vec::new();
        for j in j0..=j1 {
            for i in i0..=i1 {
                out.extend(self.buckets[j * self.nx + i].iter().map(|&t| t as usize));
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }

    /// `∫ |u(γ(τ))|² w(τ) dτ` along the straight segment `a → b`, with `τ`
    /// the arclength from `a`. Composite 5-point Gauss rule on the pieces cut
    /// out by the triangles.
    pub fn segment_quadrature<F: Fn(f64) -> f64>(&self, values: &[f64], a: Vec2, b: Vec2, weight: F) -> Result<f64> {
        let len = (b - a).norm();
        if len == 0.0 {
            return Ok(0.0);
        }
        let dir = b - a;
        let mut cuts = vec![0.0, 1.0];
        for t in self.candidates(&a, &b) {
            if let Some((t0, t1)) = self.clip(t, &a, &dir) {
                cuts.push(t0.clamp(0.0, 1.0));
                cuts.push(t1.clamp(0.0, 1.0));
            }
        }
        cuts.sort_by(|x, y| x.total_cmp(y));
        cuts.dedup_by(|x, y| (*x - *y).abs() < 1e-13);
        let (gx, gw) = gauss_legendre_5();
        let mut total = crate::sparse::Neumaier::default();
        for w in cuts.windows(2) {
            let (s0, s1) = (w[0], w[1]);
            if s1 - s0 <= 0.0 {
                continue;
            }
            let pm = a + dir * (0.5 * (s0 + s1));
            let (t, _) = self.locate(&pm).ok_or_else(|| Error::Mesh(format!("segment leaves the mesh near ({}, {})", pm.x, pm.y)))?;
            let tri = self.mesh.triangles[t];
            let half = 0.5 * (s1 - s0);
            for (x, wq) in gx.iter().zip(gw.iter()) {
                let s = 0.5 * (s0 + s1) + half * x;
                let p = a + dir * s;
                let l = self.barycentric(t, &p);
                let u = l[0] * values[tri[0]] + l[1] * values[tri[1]] + l[2] * values[tri[2]];
                total.add(wq * half * len * u * u * weight(s * len));
            }
        }
        for end in [a, b] {
            if self.locate(&end).is_none() {
                return Err(Error::Mesh(format!("segment endpoint ({}, {}) outside the mesh", end.x, end.y)));
            }
        }
        Ok(total.sum())
    }

    /// Parameter interval of `a + s·dir` inside triangle `t`.
    fn clip(&self, t: usize, a: &Vec2, dir: &Vec2) -> Option<(f64, f64)> {
        let tri = self.mesh.triangles[t];
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for k in 0..3 {
            let p = self.mesh.nodes[tri[k]];
            let q = self.mesh.nodes[tri[(k + 1) % 3]];
            let e = q - p;
            // Inside of a positively oriented triangle: e × (x - p) >= 0.
            let f0 = e.perp(&(a - p));
            let fd = e.perp(dir);
            let scale = e.norm() * dir.norm();
            if fd.abs() <= 1e-14 * scale {
                if f0 < -1e-12 * e.norm() * e.norm().max(1.0) {
                    return None;
                }
                continue;
            }
            let s = -f0 / fd;
            if fd > 0.0 {
                lo = lo.max(s);
            } else {
                hi = hi.min(s);
            }
        }
        (hi > lo).then_some((lo, hi))
    }
}

/// Nodes and weights of the 5-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre_5() -> ([f64; 5], [f64; 5]) {
    let a = (5.0f64 - 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let b = (5.0f64 + 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let wa = (322.0 + 13.0 * 70.0f64.sqrt()) / 900.0;
    let wb = (322.0 - 13.0 * 70.0f64.sqrt()) / 900.0;
    ([-b, -a, 0.0, a, b], [wb, wa, 128.0 / 225.0, wa, wb])
}

pub fn evaluate(mesh: &TriMesh, values: &[f64], point: &Vec2) -> Result<f64> {
    mesh.locator().evaluate(values, point)
}

pub fn segment_quadrature<F: Fn(f64) -> f64>(mesh: &TriMesh, values: &[f64], a: Vec2, b: Vec2, weight: F) -> Result<f64> {
    mesh.locator().segment_quadrature(values, a, b, weight)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::lshape_profile;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lshape_area_and_tags() {
        let p = lshape_profile(PI / 2.0, 4.0).unwrap();
        let m = mesh_lshape(&p, 0.25).unwrap();
        m.validate().unwrap();
        assert_abs_diff_eq!(m.area(), 9.0, epsilon = 1e-10);
        assert_abs_diff_eq!(m.tagged_length(BoundaryTag::Neumann), 2.0, epsilon = 1e-12);
        // Outer sides 2·(1 + 4), inner sides 2·4.
        assert_abs_diff_eq!(m.tagged_length(BoundaryTag::Dirichlet), 18.0, epsilon = 1e-10);
        assert_eq!(m.h, 0.25);
        assert!(mesh_lshape(&p, 0.6).is_err());
        assert_eq!(mesh_lshape(&p, 0.2).unwrap().h, 0.125);
    }

    #[test]
    fn dirichlet_ends_variant() {
        let p = lshape_profile(1.0, 2.0).unwrap();
        let m = mesh_lshape_with(&p, 0.2, EndCondition::Dirichlet).unwrap();
        m.validate().unwrap();
        assert_eq!(m.tagged_length(BoundaryTag::Neumann), 0.0);
    }

    #[test]
    fn meshes_valid_across_angles() {
        for theta in [0.1, 0.3, 1.0, PI / 2.0, 2.4, 3.0, 3.1] {
            let p = lshape_profile(theta, 2.5).unwrap();
            let m = mesh_lshape(&p, 0.2).unwrap();
            m.validate().unwrap();
            assert_abs_diff_eq!(m.area(), p.area(), epsilon = 1e-10);
            assert!(m.min_angle() > 0.0);
        }
    }

    #[test]
    fn min_angle_independent_of_h() {
        for theta in [0.1, 1.0, 2.9] {
            let p = lshape_profile(theta, 3.0).unwrap();
            let a = mesh_lshape(&p, 0.5).unwrap().min_angle();
            let b = mesh_lshape(&p, 0.06).unwrap().min_angle();
            assert!((a - b).abs() < 1e-9, "{a} {b}");
            assert!(a > 0.2 * theta.min(PI - theta) / 4.0);
        }
    }

    #[test]
    fn refinement_is_nested() {
        let p = lshape_profile(1.2, 2.0).unwrap();
        let m0 = Arc::new(mesh_lshape(&p, 0.25).unwrap());
        let m1 = m0.refine();
        assert_eq!(m1.triangles.len(), 4 * m0.triangles.len());
        assert_eq!(&m1.nodes[..m0.nodes.len()], &m0.nodes[..]);
        assert_abs_diff_eq!(m1.area(), m0.area(), epsilon = 1e-12);
        m1.validate().unwrap();
        let f0: Vec<f64> = m0.nodes.iter().map(|p| 2.0 * p.x - p.y).collect();
        let f1 = m1.prolong(&f0);
        for (p, v) in m1.nodes.iter().zip(&f1) {
            assert_abs_diff_eq!(*v, 2.0 * p.x - p.y, epsilon = 1e-12);
        }
    }

    #[test]
    fn evaluation_basics() {
        let p = lshape_profile(PI / 2.0, 2.0).unwrap();
        let m = mesh_lshape(&p, 0.25).unwrap();
        let loc = m.locator();
        let ones = vec![1.0; m.num_nodes()];
        assert_abs_diff_eq!(loc.evaluate(&ones, &Vec2::new(2.0, 0.5)).unwrap(), 1.0, epsilon = 1e-14);
        let xs: Vec<f64> = m.nodes.iter().map(|p| p.x).collect();
        assert_abs_diff_eq!(loc.evaluate(&xs, &Vec2::new(0.3, 2.7)).unwrap(), 0.3, epsilon = 1e-13);
        assert_abs_diff_eq!(loc.evaluate(&xs, &m.nodes[17]).unwrap(), m.nodes[17].x, epsilon = 1e-13);
        assert!(loc.evaluate(&xs, &Vec2::new(2.0, 2.0)).is_err());
    }

    #[test]
    fn segment_integrals() {
        let m = TriMesh::rectangle(2.0, 1.0, 8, 4, [BoundaryTag::Dirichlet; 4]).unwrap();
        let loc = m.locator();
        let ones = vec![1.0; m.num_nodes()];
        let xs: Vec<f64> = m.nodes.iter().map(|p| p.x).collect();
        let l = loc.segment_quadrature(&ones, Vec2::new(0.1, 0.2), Vec2::new(1.9, 0.8), |_| 1.0).unwrap();
        assert_abs_diff_eq!(l, (1.8f64.powi(2) + 0.6f64.powi(2)).sqrt(), epsilon = 1e-12);
        // Along a mesh line and across cells.
        for y in [0.25, 0.4] {
            let v = loc.segment_quadrature(&xs, Vec2::new(0.0, y), Vec2::new(1.0, y), |_| 1.0).unwrap();
            assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert!(loc.segment_quadrature(&xs, Vec2::new(0.5, 0.5), Vec2::new(2.5, 0.5), |_| 1.0).is_err());
    }
}
