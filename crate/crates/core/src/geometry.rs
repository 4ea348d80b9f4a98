//! Geometric primitives, intersection routines and the ray parameterizations
//! that turn a ray into network coordinates.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3::new(0.0, 0.0, 0.0);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn splat(v: f64) -> Self {
        Self::new(v, v, v)
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn length_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn length(self) -> f64 {
        self.length_squared().sqrt()
    }

    /// Returns the zero vector unchanged.
    pub fn normalized(self) -> Vec3 {
        let len = self.length();
        if len > 0.0 {
            self / len
        } else {
            self
        }
    }

    pub fn min(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.min(o.x), self.y.min(o.y), self.z.min(o.z))
    }

    pub fn max(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x.max(o.x), self.y.max(o.y), self.z.max(o.z))
    }

    pub fn abs(self) -> Vec3 {
        Vec3::new(self.x.abs(), self.y.abs(), self.z.abs())
    }

    pub fn mul_elem(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x * o.x, self.y * o.y, self.z * o.z)
    }

    pub fn max_component(self) -> f64 {
        self.x.max(self.y).max(self.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }
}

impl Index<usize> for Vec3 {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vec3 index {i} out of range"),
        }
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vec3> for f64 {
    type Output = Vec3;
    fn mul(self, v: Vec3) -> Vec3 {
        v * self
    }
}

impl Div<f64> for Vec3 {
    type Output = Vec3;
    fn div(self, s: f64) -> Vec3 {
        Vec3::new(self.x / s, self.y / s, self.z / s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    /// Unit length.
    pub direction: Vec3,
}

impl Ray {
    /// Normalizes `direction`.
    pub fn new(origin: Vec3, direction: Vec3) -> Self {
        Self {
            origin,
            direction: direction.normalized(),
        }
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    pub fn inv_direction(&self) -> Vec3 {
        Vec3::new(
            1.0 / self.direction.x,
            1.0 / self.direction.y,
            1.0 / self.direction.z,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    /// The empty box: the identity for [`Aabb::union`].
    pub fn empty() -> Self {
        Self {
            min: Vec3::splat(f64::INFINITY),
            max: Vec3::splat(f64::NEG_INFINITY),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.min.x > self.max.x || self.min.y > self.max.y || self.min.z > self.max.z
    }

    pub fn union(&self, o: &Aabb) -> Aabb {
        Aabb::new(self.min.min(o.min), self.max.max(o.max))
    }

    pub fn grow(&self, p: Vec3) -> Aabb {
        Aabb::new(self.min.min(p), self.max.max(p))
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    /// Vector from the center to the max corner.
    pub fn half_diagonal(&self) -> Vec3 {
        self.max - self.center()
    }

    pub fn diagonal_length(&self) -> f64 {
        (self.max - self.min).length()
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn surface_area(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let e = self.extent();
        2.0 * (e.x * e.y + e.y * e.z + e.z * e.x)
    }

    pub fn contains(&self, p: Vec3, tolerance: f64) -> bool {
        p.x >= self.min.x - tolerance
            && p.y >= self.min.y - tolerance
            && p.z >= self.min.z - tolerance
            && p.x <= self.max.x + tolerance
            && p.y <= self.max.y + tolerance
            && p.z <= self.max.z + tolerance
    }

    pub fn contains_box(&self, o: &Aabb, tolerance: f64) -> bool {
        self.contains(o.min, tolerance) && self.contains(o.max, tolerance)
    }

    /// Grows the box by `margin` on every side.
    pub fn padded(&self, margin: f64) -> Aabb {
        Aabb::new(self.min - Vec3::splat(margin), self.max + Vec3::splat(margin))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangle {
    pub v0: Vec3,
    pub v1: Vec3,
    pub v2: Vec3,
    pub normals: Option<[Vec3; 3]>,
}

impl Triangle {
    pub fn new(v0: Vec3, v1: Vec3, v2: Vec3) -> Self {
        Self {
            v0,
            v1,
            v2,
            normals: None,
        }
    }

    pub fn with_normals(v0: Vec3, v1: Vec3, v2: Vec3, normals: [Vec3; 3]) -> Self {
        Self {
            v0,
            v1,
            v2,
            normals: Some(normals),
        }
    }

    pub fn bounds(&self) -> Aabb {
        Aabb::empty().grow(self.v0).grow(self.v1).grow(self.v2)
    }

    pub fn centroid(&self) -> Vec3 {
        (self.v0 + self.v1 + self.v2) / 3.0
    }

    pub fn geometric_normal(&self) -> Vec3 {
        (self.v1 - self.v0).cross(self.v2 - self.v0).normalized()
    }

    pub fn area(&self) -> f64 {
        0.5 * (self.v1 - self.v0).cross(self.v2 - self.v0).length()
    }

    /// True when the vertices are (numerically) collinear.
    pub fn is_degenerate(&self) -> bool {
        let e0 = self.v1 - self.v0;
        let e1 = self.v2 - self.v0;
        let e2 = self.v2 - self.v1;
        let longest = e0
            .length_squared()
            .max(e1.length_squared())
            .max(e2.length_squared());
        let cross = e0.cross(e1).length();
        !(cross > 1e-12 * longest) || !cross.is_finite()
    }

    /// Interpolated shading normal, falling back to the geometric normal.
    pub fn shading_normal(&self, b1: f64, b2: f64) -> Vec3 {
        match self.normals {
            Some([n0, n1, n2]) => {
                let n = n0 * (1.0 - b1 - b2) + n1 * b1 + n2 * b2;
                if n.length_squared() > 0.0 {
                    n.normalized()
                } else {
                    self.geometric_normal()
                }
            }
            None => self.geometric_normal(),
        }
    }

    pub fn transformed(&self, translate: Vec3, scale: f64) -> Triangle {
        let f = |v: Vec3| v * scale + translate;
        Triangle {
            v0: f(self.v0),
            v1: f(self.v1),
            v2: f(self.v2),
            normals: self.normals,
        }
    }
}

/// Point on the unit sphere in normalized angular coordinates.
///
/// `u` is the azimuth in `[0, 1)` and wraps; `v` is the polar angle in
/// `[0, 1]` and clamps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SphericalCoord {
    pub u: f64,
    pub v: f64,
}

impl SphericalCoord {
    pub fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }
}

/// Network coordinates of a ray entering an object's box from outside.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OuterQuery {
    pub object_id: usize,
    pub p_prime: SphericalCoord,
    pub d_prime: SphericalCoord,
}

/// Network coordinates of a ray starting inside an object's box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerQuery {
    pub object_id: usize,
    pub p_prime: SphericalCoord,
    pub d_prime: SphericalCoord,
    pub r_prime: f64,
}

static DEGENERATE_INNER: AtomicU64 = AtomicU64::new(0);
static NEAR_POLE: AtomicU64 = AtomicU64::new(0);

const POLE_BAND: f64 = 1e-3;

/// Counters for ill-conditioned parameterizations seen so far in the process.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TransformDiagnostics {
    /// Inner queries whose point coincided with the box center.
    pub degenerate_inner: u64,
    /// Position coordinates within `1e-3` of a pole, where azimuth is ill-conditioned.
    pub near_pole: u64,
}

pub fn transform_diagnostics() -> TransformDiagnostics {
    TransformDiagnostics {
        degenerate_inner: DEGENERATE_INNER.load(Ordering::Relaxed),
        near_pole: NEAR_POLE.load(Ordering::Relaxed),
    }
}

fn note_pole(c: SphericalCoord) {
    if c.v < POLE_BAND || c.v > 1.0 - POLE_BAND {
        NEAR_POLE.fetch_add(1, Ordering::Relaxed);
    }
}

/// Slab test. Returns the parametric overlap `(t_enter, t_exit)` of the ray's
/// line with the box, rejecting boxes entirely behind the origin. `t_enter`
/// is negative when the origin is inside.
pub fn ray_aabb_intersect(ray: &Ray, bounds: &Aabb) -> Option<(f64, f64)> {
    ray_aabb_intersect_inv(ray.origin, ray.inv_direction(), bounds)
}

#[inline]
pub(crate) fn ray_aabb_intersect_inv(origin: Vec3, inv: Vec3, b: &Aabb) -> Option<(f64, f64)> {
    let tx0 = (b.min.x - origin.x) * inv.x;
    let tx1 = (b.max.x - origin.x) * inv.x;
    let ty0 = (b.min.y - origin.y) * inv.y;
    let ty1 = (b.max.y - origin.y) * inv.y;
    let tz0 = (b.min.z - origin.z) * inv.z;
    let tz1 = (b.max.z - origin.z) * inv.z;
    // f64::max/min drop NaN operands (0 * inf on a slab plane), leaving that
    // axis unconstrained.
    let t_enter = tx0
        .min(tx1)
        .max(ty0.min(ty1))
        .max(tz0.min(tz1));
    let t_exit = tx0
        .max(tx1)
        .min(ty0.max(ty1))
        .min(tz0.max(tz1));
    if t_exit >= t_enter.max(0.0) {
        Some((t_enter, t_exit))
    } else {
        None
    }
}

/// Möller–Trumbore. Returns `(t, (b1, b2))` for hits with `t > t_min`.
#[inline]
pub fn ray_triangle_intersect(ray: &Ray, tri: &Triangle, t_min: f64) -> Option<(f64, (f64, f64))> {
    let e1 = tri.v1 - tri.v0;
    let e2 = tri.v2 - tri.v0;
    let p = ray.direction.cross(e2);
    let det = e1.dot(p);
    if det.abs() < 1e-14 {
        return None;
    }
    let inv_det = 1.0 / det;
    let s = ray.origin - tri.v0;
    let b1 = s.dot(p) * inv_det;
    if !(0.0..=1.0).contains(&b1) {
        return None;
    }
    let q = s.cross(e1);
    let b2 = ray.direction.dot(q) * inv_det;
    if b2 < 0.0 || b1 + b2 > 1.0 {
        return None;
    }
    let t = e2.dot(q) * inv_det;
    if t > t_min {
        Some((t, (b1, b2)))
    } else {
        None
    }
}

/// Maps a unit direction to `(u, v)` with
/// `u = (atan2(y, x) + π) / 2π  (mod 1)` and `v = acos(z) / π`.
pub fn dir_to_spherical(d: Vec3) -> SphericalCoord {
    let phi = if d.x == 0.0 && d.y == 0.0 {
        0.0
    } else {
        d.y.atan2(d.x)
    };
    let mut u = (phi + PI) / (2.0 * PI);
    u -= u.floor();
    if u >= 1.0 {
        u = 0.0;
    }
    let v = d.z.clamp(-1.0, 1.0).acos() / PI;
    SphericalCoord { u, v }
}

/// Inverse of [`dir_to_spherical`].
pub fn spherical_to_dir(c: SphericalCoord) -> Vec3 {
    let phi = 2.0 * PI * c.u - PI;
    let theta = PI * c.v.clamp(0.0, 1.0);
    let s = theta.sin();
    Vec3::new(s * phi.cos(), s * phi.sin(), theta.cos())
}

/// Parameterizes a ray that enters `bounds` from outside by its entry point
/// (as a direction from the box center) and its direction.
///
/// Every origin along the same line maps to the same query.
pub fn transform_outer(ray: &Ray, bounds: &Aabb, object_id: usize) -> Result<OuterQuery> {
    let (t_enter, _) = ray_aabb_intersect(ray, bounds).ok_or(Error::Precondition(
        "transform_outer: ray misses the box",
    ))?;
    if !(t_enter > 0.0) {
        return Err(Error::Precondition(
            "transform_outer: ray origin is inside the box",
        ));
    }
    Ok(outer_from_entry(ray, ray.at(t_enter), bounds, object_id))
}

pub(crate) fn outer_from_entry(ray: &Ray, entry: Vec3, bounds: &Aabb, object_id: usize) -> OuterQuery {
    let p_prime = dir_to_spherical((entry - bounds.center()).normalized());
    note_pole(p_prime);
    OuterQuery {
        object_id,
        p_prime,
        d_prime: dir_to_spherical(ray.direction),
    }
}

/// Parameterizes a ray leaving `hit_point` (inside `bounds`) by the point's
/// direction and normalized distance from the box center, plus the ray
/// direction.
pub fn transform_inner(hit_point: Vec3, dir: Vec3, bounds: &Aabb, object_id: usize) -> InnerQuery {
    let offset = hit_point - bounds.center();
    let dist = offset.length();
    let p_prime = if dist < 1e-9 {
        DEGENERATE_INNER.fetch_add(1, Ordering::Relaxed);
        SphericalCoord::new(0.5, 0.5)
    } else {
        let c = dir_to_spherical(offset / dist);
        note_pole(c);
        c
    };
    let half = bounds.half_diagonal().length();
    let r_prime = if half > 0.0 {
        (dist / half).clamp(0.0, 1.0)
    } else {
        0.0
    };
    InnerQuery {
        object_id,
        p_prime,
        d_prime: dir_to_spherical(dir),
        r_prime,
    }
}
