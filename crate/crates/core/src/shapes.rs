//! Closed triangle meshes for simple solids.

use nalgebra::Vector3;

use crate::geodesic::build_geodesic_sphere;
use crate::mesh::TriangleMesh;

/// Axis-aligned box with outward-facing triangles.
pub fn cuboid(lo: [f64; 3], hi: [f64; 3]) -> TriangleMesh {
    let mut vertices = Vec::with_capacity(8);
    for i in 0..8 {
        vertices.push([
            if i & 1 == 0 { lo[0] } else { hi[0] },
            if i & 2 == 0 { lo[1] } else { hi[1] },
            if i & 4 == 0 { lo[2] } else { hi[2] },
        ]);
    }
    let quads = [
        [0, 2, 3, 1], // z = lo
        [4, 5, 7, 6], // z = hi
        [0, 1, 5, 4], // y = lo
        [2, 6, 7, 3], // y = hi
        [0, 4, 6, 2], // x = lo
        [1, 3, 7, 5], // x = hi
    ];
    let triangles = quads
        .iter()
        .flat_map(|q| [[q[0], q[1], q[2]], [q[0], q[2], q[3]]])
        .collect();
    TriangleMesh {
        vertices,
        triangles,
    }
}

/// Star-shaped surface: the geodesic sphere of `level` with each vertex pushed
/// to `radius(direction)` from `center`.
pub fn radial(level: usize, center: [f64; 3], radius: impl Fn(&Vector3<f64>) -> f64) -> TriangleMesh {
    let s = build_geodesic_sphere(level).expect("valid geodesic level");
    let vertices = s
        .vertices
        .iter()
        .map(|d| {
            let r = radius(d);
            [center[0] + r * d.x, center[1] + r * d.y, center[2] + r * d.z]
        })
        .collect();
    TriangleMesh {
        vertices,
        triangles: s.triangles,
    }
}

pub fn sphere(level: usize, center: [f64; 3], radius: f64) -> TriangleMesh {
    radial(level, center, |_| radius)
}

/// Torus around the z axis, `nu` segments along the ring and `nv` around the tube.
pub fn torus(nu: usize, nv: usize, center: [f64; 3], ring: f64, tube: f64) -> TriangleMesh {
    let mut vertices = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        let u = std::f64::consts::TAU * i as f64 / nu as f64;
        for j in 0..nv {
            let v = std::f64::consts::TAU * j as f64 / nv as f64;
            let r = ring + tube * v.cos();
            vertices.push([
                center[0] + r * u.cos(),
                center[1] + r * u.sin(),
                center[2] + tube * v.sin(),
            ]);
        }
    }
    let idx = |i: usize, j: usize| (i % nu) * nv + (j % nv);
    let mut triangles = Vec::with_capacity(2 * nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
            triangles.push([a, b, c]);
            triangles.push([a, c, d]);
        }
    }
    TriangleMesh {
        vertices,
        triangles,
    }
}
