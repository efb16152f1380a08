//! Polyhedral angles, unit-width layers built on them, and the planar
//! L-shaped waveguide profile.
//!
//! Conventions used throughout:
//!
//! * rays `ℓ_j` are indexed `0..n`, indices wrap modulo `n`;
//! * face `j` is the planar angle spanned by rays `j` and `j + 1`, its vertex
//!   angle is `alpha[j]`;
//! * the dihedral angle `beta[j]` sits on ray `j`, between faces `j - 1` and `j`;
//! * face normals point into the cone.
//!
//! Every construction puts ray 0 on the `+z` axis and face 0 in the plane
//! `y = 0` with inward normal `+y`, so trihedral angles with two right vertex
//! angles keep two faces aligned with the coordinate planes.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Rotation3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

/// Largest admissible least-squares residual of `n_i · t = 1`.
pub const INSCRIBED_BALL_TOL: f64 = 1e-8;

/// A convex polyhedral angle with vertex at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyhedralAngle {
    pub rays: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub vertex_angles: Vec<f64>,
    pub dihedral_angles: Vec<f64>,
}

impl PolyhedralAngle {
    /// Builds an angle from its edge directions, listed in cyclic order.
    pub fn from_rays(rays: Vec<Vec3>) -> Result<Self> {
        let n = rays.len();
        if n < 3 {
            return Err(Error::Geometry(format!("a polyhedral angle needs at least 3 rays, got {n}")));
        }
        let rays: Vec<Vec3> = rays.into_iter().map(|r| r.normalize()).collect();
        let centre: Vec3 = rays.iter().sum::<Vec3>() / n as f64;
        let mut normals = Vec::with_capacity(n);
        for j in 0..n {
            let mut nrm = rays[j].cross(&rays[(j + 1) % n]);
            let len = nrm.norm();
            if len < 1e-14 {
                return Err(Error::Geometry(format!("rays {j} and {} are parallel", (j + 1) % n)));
            }
            nrm /= len;
            if nrm.dot(&centre) < 0.0 {
                nrm = -nrm;
            }
            normals.push(nrm);
        }
        // Convexity: every ray lies on the inner side of every face plane.
        for (i, nrm) in normals.iter().enumerate() {
            for (j, r) in rays.iter().enumerate() {
                if nrm.dot(r) < -1e-12 {
                    return Err(Error::Geometry(format!("ray {j} lies outside face {i}: the angle is not convex")));
                }
            }
        }
        let vertex_angles = (0..n).map(|j| angle_between(&rays[j], &rays[(j + 1) % n])).collect();
        let dihedral_angles = (0..n)
            .map(|j| {
                let c = -normals[(j + n - 1) % n].dot(&normals[j]);
                c.clamp(-1.0, 1.0).acos()
            })
            .collect();
        let angle = Self { rays, normals, vertex_angles, dihedral_angles };
        if angle.interior_direction().is_none() {
            return Err(Error::Geometry("the cone has empty interior".into()));
        }
        Ok(angle)
    }

    pub fn n(&self) -> usize {
        self.rays.len()
    }

    pub fn beta_min(&self) -> f64 {
        self.dihedral_angles.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Index of the (first) smallest dihedral angle.
    pub fn beta_min_index(&self) -> usize {
        let b = self.beta_min();
        self.dihedral_angles.iter().position(|&x| x == b).unwrap_or(0)
    }

    /// A direction with strictly positive dot product against every normal,
    /// if one exists.
    pub fn interior_direction(&self) -> Option<Vec3> {
        let d: Vec3 = self.rays.iter().sum::<Vec3>().normalize();
        self.normals.iter().all(|nrm| nrm.dot(&d) > 1e-12).then_some(d)
    }

    /// Applies a rotation to every ray and normal.
    pub fn rotated(&self, rot: &Rotation3<f64>) -> Self {
        Self {
            rays: self.rays.iter().map(|r| rot * r).collect(),
            normals: self.normals.iter().map(|r| rot * r).collect(),
            vertex_angles: self.vertex_angles.clone(),
            dihedral_angles: self.dihedral_angles.clone(),
        }
    }

    /// Rotates so that ray 0 is `+z` and face 0 lies in `y = 0` with inward normal `+y`.
    fn canonical(self) -> Self {
        let z = self.rays[0];
        let y = self.normals[0];
        let x = y.cross(&z);
        let basis = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let rot = Rotation3::from_matrix_unchecked(basis);
        let mut out = self.rotated(&rot);
        // Round-off would otherwise tilt faces that belong on coordinate planes.
        let snap = |v: &mut Vec3| {
            v.iter_mut().filter(|c| c.abs() < 1e-14).for_each(|c| *c = 0.0);
            *v = v.normalize();
        };
        out.rays.iter_mut().for_each(snap);
        out.normals.iter_mut().for_each(snap);
        out
    }

    /// Orthonormal frame `(e1, e2, e3)` of the dihedral angle on ray `j`:
    /// `e3` runs along the ray, `e2` is the inward normal of face `j - 1`
    /// and `e1` lies in face `j - 1`, pointing towards ray `j - 1`.
    pub fn dihedral_frame(&self, j: usize) -> [Vec3; 3] {
        let n = self.n();
        let e3 = self.rays[j % n];
        let e2 = self.normals[(j + n - 1) % n];
        let prev = self.rays[(j + n - 1) % n];
        let e1 = (prev - e3 * prev.dot(&e3)).normalize();
        [e1, e2, e3]
    }

    /// Max deviation of the trihedral dihedral angles from the spherical law
    /// of cosines. `None` for `n != 3`.
    pub fn law_of_cosines_defect(&self) -> Option<f64> {
        if self.n() != 3 {
            return None;
        }
        let a = &self.vertex_angles;
        let b = &self.dihedral_angles;
        let defect = (0..3).map(|j| (b[j] - dihedral_from_faces(a[(j + 2) % 3], a[j], a[(j + 1) % 3])).abs()).fold(0.0, f64::max);
        Some(defect)
    }
}

fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    // atan2 form keeps full precision near 0 and π.
    a.cross(b).norm().atan2(a.dot(b))
}

/// Spherical law of cosines: the dihedral angle on the edge shared by two
/// faces with vertex angles `a1`, `a2`, when the third face has vertex angle `opposite`.
pub fn dihedral_from_faces(a1: f64, a2: f64, opposite: f64) -> f64 {
    let c = (opposite.cos() - a1.cos() * a2.cos()) / (a1.sin() * a2.sin());
    c.clamp(-1.0, 1.0).acos()
}

/// Trihedral angle with vertex angles `alpha = [α0, α1, α2]`, where `αj` is
/// the angle between rays `j` and `j + 1`.
pub fn build_trihedral(alpha: [f64; 3]) -> Result<PolyhedralAngle> {
    for (j, &a) in alpha.iter().enumerate() {
        if !(a > 0.0 && a < PI) {
            return Err(Error::Infeasible(format!("vertex angle alpha[{j}] = {a} is not in (0, pi)")));
        }
    }
    let sum: f64 = alpha.iter().sum();
    if sum >= 2.0 * PI {
        return Err(Error::Infeasible(format!("sum of vertex angles {sum} must be < 2*pi")));
    }
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        if alpha[i] >= alpha[j] + alpha[k] {
            return Err(Error::Infeasible(format!(
                "triangle inequality violated: alpha[{i}] = {} >= alpha[{j}] + alpha[{k}] = {}",
                alpha[i],
                alpha[j] + alpha[k]
            )));
        }
    }
    let [a0, a1, a2] = alpha;
    // Ray 0 on the z axis, ray 1 in the xz-plane, ray 2 placed at the azimuth
    // given by the dihedral angle on ray 0.
    let phi = dihedral_from_faces(a2, a0, a1);
    let r0 = Vec3::new(0.0, 0.0, 1.0);
    let r1 = Vec3::new(a0.sin(), 0.0, a0.cos());
    let r2 = Vec3::new(a2.sin() * phi.cos(), a2.sin() * phi.sin(), a2.cos());
    // Snap round-off so right angles produce exact coordinate axes.
    let snap = |v: Vec3| v.map(|c| if c.abs() < 1e-15 { 0.0 } else { c });
    // Face 0 lies in y = 0 and ray 2 has positive y since phi ∈ (0, π).
    PolyhedralAngle::from_rays(vec![snap(r0), snap(r1), snap(r2)])
}

/// Regular angle with `n` faces, all vertex angles equal to `alpha`.
pub fn build_regular(n: usize, alpha: f64) -> Result<PolyhedralAngle> {
    if n < 3 {
        return Err(Error::Infeasible(format!("a regular angle needs n >= 3 faces, got {n}")));
    }
    let c_max = (2.0 * PI / n as f64).cos();
    if !(alpha > 0.0 && alpha.cos() > c_max) {
        return Err(Error::Infeasible(format!(
            "vertex angle {alpha} infeasible for n = {n}: need 0 < alpha < 2*pi/n = {}",
            2.0 * PI / n as f64
        )));
    }
    // cos α = cos²φ + sin²φ cos(2π/n)
    let s2 = (1.0 - alpha.cos()) / (1.0 - c_max);
    let (sp, cp) = (s2.sqrt(), (1.0 - s2).sqrt());
    let rays = (0..n)
        .map(|j| {
            let a = 2.0 * PI * j as f64 / n as f64;
            Vec3::new(sp * a.cos(), sp * a.sin(), cp)
        })
        .collect();
    Ok(PolyhedralAngle::from_rays(rays)?.canonical())
}

/// Unit-width layer built on an angle that admits an inscribed ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerGeometry {
    pub angle: PolyhedralAngle,
    /// Shift `t` with `n_i · t = 1`; the inner surface is the outer one moved by `t`.
    pub shift: Vec3,
    pub beta_min: f64,
    pub partition_planes: Vec<Plane>,
    pub inscribed_ball_residual: f64,
}

/// Plane `{x : normal · (x - point) = 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub point: Vec3,
    pub normal: Vec3,
}

impl Plane {
    pub fn signed(&self, x: &Vec3) -> f64 {
        self.normal.dot(&(x - self.point))
    }
}

pub fn make_layer(angle: PolyhedralAngle) -> Result<LayerGeometry> {
    // Normal equations of the (possibly overdetermined) system n_i · t = 1.
    let mut gram = Matrix3::zeros();
    let mut rhs = Vec3::zeros();
    for nrm in &angle.normals {
        gram += nrm * nrm.transpose();
        rhs += nrm;
    }
    let shift = gram.cholesky().ok_or_else(|| Error::Geometry("face normals do not span R^3".into()))?.solve(&rhs);
    let residual = angle.normals.iter().map(|nrm| (nrm.dot(&shift) - 1.0).powi(2)).sum::<f64>().sqrt();
    if residual > INSCRIBED_BALL_TOL {
        return Err(Error::NotInscribed { residual });
    }
    let n = angle.n();
    let partition_planes = (0..n)
        .map(|j| {
            let bis = (angle.rays[j] + angle.rays[(j + 1) % n]).normalize();
            let mut normal = bis.cross(&angle.normals[j]).normalize();
            // Orient towards ray j.
            if normal.dot(&angle.rays[j]) < 0.0 {
                normal = -normal;
            }
            Plane { point: shift, normal }
        })
        .collect();
    Ok(LayerGeometry { beta_min: angle.beta_min(), angle, shift, partition_planes, inscribed_ball_residual: residual })
}

impl LayerGeometry {
    /// Distance to the outer surface for points inside the cone.
    pub fn dist_outer(&self, x: &Vec3) -> f64 {
        self.angle.normals.iter().map(|nrm| nrm.dot(x)).fold(f64::INFINITY, f64::min)
    }

    pub fn in_cone(&self, x: &Vec3) -> bool {
        self.angle.normals.iter().all(|nrm| nrm.dot(x) > 0.0)
    }

    pub fn contains(&self, x: &Vec3) -> bool {
        self.in_cone(x) && self.dist_outer(x) < 1.0
    }

    /// Membership in the truncated layer `Π^R = Π ∩ {n_i · x ≤ R for all i}`.
    pub fn contains_truncated(&self, x: &Vec3, r: f64) -> bool {
        self.contains(x) && self.angle.normals.iter().all(|nrm| nrm.dot(x) <= r)
    }

    /// Index `j` of the partition piece `ϖ_j` (the one around ray `j`)
    /// containing `x`, or `None` on a cut plane / outside every piece.
    pub fn partition_piece(&self, x: &Vec3) -> Option<usize> {
        let n = self.angle.n();
        let s: Vec<f64> = self.partition_planes.iter().map(|p| p.signed(x)).collect();
        let mut found = None;
        for j in 0..n {
            if s[j] > 0.0 && s[(j + n - 1) % n] < 0.0 {
                if found.is_some() {
                    return None;
                }
                found = Some(j);
            }
        }
        found
    }

    /// Coordinates of `x` in the dihedral frame of ray `j`, with origin at
    /// the inner vertex (the shift point).
    pub fn frame_coords(&self, j: usize, x: &Vec3) -> Vec3 {
        let [e1, e2, e3] = self.angle.dihedral_frame(j);
        let d = x - self.shift;
        Vec3::new(e1.dot(&d), e2.dot(&d), e3.dot(&d))
    }

    /// Parameter `α` if this layer is a trihedral layer with vertex angles
    /// `(π/2, α, π/2)` as produced by [`build_trihedral`].
    pub fn t51_alpha(&self) -> Option<f64> {
        let a = &self.angle.vertex_angles;
        if self.angle.n() != 3 || (a[0] - PI / 2.0).abs() > 1e-9 || (a[2] - PI / 2.0).abs() > 1e-9 {
            return None;
        }
        (a[1] < PI / 2.0 + 1e-12).then_some(a[1])
    }

    /// Splits the layer `(π/2, α, π/2)` into the three parts used by the
    /// absence argument: 1 above the inner vertex along ray 0, 2 under the
    /// inner dihedral wedge, 3 the rest.
    pub fn classify_t51(&self, x: &Vec3) -> Result<T51Region> {
        let alpha = self
            .t51_alpha()
            .ok_or_else(|| Error::Geometry("layer is not built from vertex angles (pi/2, alpha, pi/2), alpha <= pi/2".into()))?;
        if !self.contains(x) {
            return Err(Error::Geometry(format!("point {:?} is outside the layer", x.as_slice())));
        }
        let c = self.frame_coords(0, x);
        Ok(if c.z > 0.0 {
            T51Region::Upper
        } else if c.y > 0.0 && c.y < alpha.tan() * c.x {
            T51Region::Wedge
        } else {
            T51Region::Rest
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum T51Region {
    /// `z₁ > 0`
    Upper = 1,
    /// `0 < y₁ < tan(α) x₁`
    Wedge = 2,
    Rest = 3,
}

/// Side label of the L-shaped profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SideKind {
    Outer,
    Inner,
    CrossSection,
}

/// Truncated L-shaped waveguide `ω^R(θ)`: outer vertex at the origin, first
/// outer ray along `+x`, second at angle `θ`. Outlet lengths are measured
/// from the inner vertex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LShapeProfile {
    pub theta: f64,
    pub outlet_length: f64,
    /// Hexagon corners, counter-clockwise: O', E1, E1', O, E2', E2.
    pub vertices: [Vec2; 6],
    /// Perpendicular feet of the inner vertex on the two outer rays.
    pub feet: [Vec2; 2],
    /// Side `k` joins `vertices[k]` and `vertices[k + 1]`.
    pub boundary_tags: [SideKind; 6],
}

pub fn lshape_profile(theta: f64, r: f64) -> Result<LShapeProfile> {
    if !(theta > 0.0 && theta < PI) {
        return Err(Error::Geometry(format!("opening angle {theta} is not in (0, pi)")));
    }
    if !(r > 0.0) {
        return Err(Error::Geometry(format!("outlet length {r} must be positive")));
    }
    let c = 1.0 / (theta / 2.0).tan();
    let d1 = Vec2::new(1.0, 0.0);
    let d2 = Vec2::new(theta.cos(), theta.sin());
    // Inward unit normal of the second outer ray.
    let n2 = Vec2::new(theta.sin(), -theta.cos());
    let o_outer = Vec2::zeros();
    let o_inner = Vec2::new(c, 1.0);
    let e1 = d1 * (c + r);
    let e1i = e1 + Vec2::new(0.0, 1.0);
    let e2 = d2 * (c + r);
    let e2i = e2 + n2;
    Ok(LShapeProfile {
        theta,
        outlet_length: r,
        vertices: [o_outer, e1, e1i, o_inner, e2i, e2],
        feet: [d1 * c, d2 * c],
        boundary_tags: [SideKind::Outer, SideKind::CrossSection, SideKind::Inner, SideKind::Inner, SideKind::CrossSection, SideKind::Outer],
    })
}

impl LShapeProfile {
    pub fn outer_vertex(&self) -> Vec2 {
        self.vertices[0]
    }

    pub fn inner_vertex(&self) -> Vec2 {
        self.vertices[3]
    }

    /// `cot(θ/2) + 2R`
    pub fn area(&self) -> f64 {
        1.0 / (self.theta / 2.0).tan() + 2.0 * self.outlet_length
    }

    pub fn shoelace_area(&self) -> f64 {
        polygon_area(&self.vertices)
    }

    /// Unit vectors along the two outlet axes.
    pub fn arm_directions(&self) -> [Vec2; 2] {
        [Vec2::new(1.0, 0.0), Vec2::new(self.theta.cos(), self.theta.sin())]
    }

    /// Inward unit normals of the two outer rays.
    pub fn arm_normals(&self) -> [Vec2; 2] {
        [Vec2::new(0.0, 1.0), Vec2::new(self.theta.sin(), -self.theta.cos())]
    }

    /// Exact membership in the open hexagon.
    pub fn contains(&self, p: &Vec2) -> bool {
        let [d1, d2] = self.arm_directions();
        let [n1, n2] = self.arm_normals();
        let end = 1.0 / (self.theta / 2.0).tan() + self.outlet_length;
        let a1 = n1.dot(p);
        let a2 = n2.dot(p);
        if a1 <= 0.0 || a2 <= 0.0 {
            return false;
        }
        // Inside the outer angle, within unit distance of one of its rays,
        // and before the outlet cross-sections.
        let in1 = a1 < 1.0 && d1.dot(p) < end;
        let in2 = a2 < 1.0 && d2.dot(p) < end;
        (in1 || in2) && d1.dot(p) < end && d2.dot(p) < end
    }

    pub fn is_simple(&self) -> bool {
        let v = &self.vertices;
        for i in 0..6 {
            for j in (i + 2)..6 {
                if i == 0 && j == 5 {
                    continue;
                }
                if segments_intersect(v[i], v[(i + 1) % 6], v[j], v[(j + 1) % 6]) {
                    return false;
                }
            }
        }
        true
    }
}

pub fn polygon_area(v: &[Vec2]) -> f64 {
    let n = v.len();
    0.5 * (0..n).map(|i| v[i].perp(&v[(i + 1) % n])).sum::<f64>()
}

fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let o = |p: Vec2, q: Vec2, r: Vec2| (q - p).perp(&(r - p));
    let (d1, d2, d3, d4) = (o(c, d, a), o(c, d, b), o(a, b, c), o(a, b, d));
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}
