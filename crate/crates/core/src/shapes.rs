//! Procedural meshes used by the bundled scenes and tests.

use std::collections::HashMap;
use std::f64::consts::PI;

use crate::geometry::{Triangle, Vec3};

/// Two triangles spanning `corner + s*edge_u + t*edge_v`, `s, t ∈ [0, 1]`,
/// facing `edge_u × edge_v`.
pub fn quad(corner: Vec3, edge_u: Vec3, edge_v: Vec3) -> Vec<Triangle> {
    let p0 = corner;
    let p1 = corner + edge_u;
    let p2 = corner + edge_u + edge_v;
    let p3 = corner + edge_v;
    vec![Triangle::new(p0, p1, p2), Triangle::new(p0, p2, p3)]
}

/// Subdivided icosahedron projected onto a sphere, with smooth normals.
/// Has `20 * 4^subdivisions` triangles.
pub fn icosphere(subdivisions: u32, center: Vec3, radius: f64) -> Vec<Triangle> {
    let t = (1.0 + 5f64.sqrt()) / 2.0;
    let mut verts: Vec<Vec3> = [
        (-1.0, t, 0.0),
        (1.0, t, 0.0),
        (-1.0, -t, 0.0),
        (1.0, -t, 0.0),
        (0.0, -1.0, t),
        (0.0, 1.0, t),
        (0.0, -1.0, -t),
        (0.0, 1.0, -t),
        (t, 0.0, -1.0),
        (t, 0.0, 1.0),
        (-t, 0.0, -1.0),
        (-t, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Vec3::new(x, y, z).normalized())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vec3>| {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalized());
                verts.len() - 1
            })
        };
        let mut next = Vec::with_capacity(faces.len() * 4);
        for [a, b, c] in faces {
            let ab = mid(a, b, &mut verts);
            let bc = mid(b, c, &mut verts);
            let ca = mid(c, a, &mut verts);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    faces
        .iter()
        .map(|&[a, b, c]| {
            let p = |i: usize| center + verts[i] * radius;
            Triangle::with_normals(p(a), p(b), p(c), [verts[a], verts[b], verts[c]])
        })
        .collect()
}

/// Torus around the +y axis with `2 * rings * sides` triangles.
pub fn torus(center: Vec3, major: f64, minor: f64, rings: usize, sides: usize) -> Vec<Triangle> {
    let point = |i: usize, j: usize| {
        let a = 2.0 * PI * (i % rings) as f64 / rings as f64;
        let b = 2.0 * PI * (j % sides) as f64 / sides as f64;
        let ring_dir = Vec3::new(a.cos(), 0.0, a.sin());
        let normal = ring_dir * b.cos() + Vec3::new(0.0, b.sin(), 0.0);
        (center + ring_dir * major + normal * minor, normal)
    };
    let mut tris = Vec::with_capacity(2 * rings * sides);
    for i in 0..rings {
        for j in 0..sides {
            let (p00, n00) = point(i, j);
            let (p10, n10) = point(i + 1, j);
            let (p11, n11) = point(i + 1, j + 1);
            let (p01, n01) = point(i, j + 1);
            tris.push(Triangle::with_normals(p00, p01, p11, [n00, n01, n11]));
            tris.push(Triangle::with_normals(p00, p11, p10, [n00, n11, n10]));
        }
    }
    tris
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_counts() {
        assert_eq!(icosphere(0, Vec3::ZERO, 1.0).len(), 20);
        assert_eq!(icosphere(2, Vec3::ZERO, 1.0).len(), 320);
        assert_eq!(torus(Vec3::ZERO, 1.0, 0.3, 25, 20).len(), 1000);
        assert_eq!(quad(Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0)).len(), 2);
    }

    #[test]
    fn icosphere_normals_point_outward() {
        for t in icosphere(2, Vec3::new(1.0, 2.0, 3.0), 2.0) {
            let c = t.centroid() - Vec3::new(1.0, 2.0, 3.0);
            assert!(t.geometric_normal().dot(c) > 0.0);
            assert!(!t.is_degenerate());
        }
    }

    #[test]
    fn torus_normals_point_outward() {
        for t in torus(Vec3::ZERO, 1.0, 0.3, 12, 8) {
            let n = t.geometric_normal();
            let shading = t.normals.unwrap()[0];
            assert!(n.dot(shading) > 0.0);
        }
    }
}
