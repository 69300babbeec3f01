//! Geodesic spheres built by subdividing a regular octahedron, and the
//! directional bin layouts derived from them.

use std::collections::HashMap;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

pub const MAX_LEVEL: usize = 6;

#[derive(Debug, Clone)]
pub struct GeodesicSphere {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
    pub level: usize,
}

const OCTAHEDRON_VERTICES: [[f64; 3]; 6] = [
    [1.0, 0.0, 0.0],
    [-1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, -1.0, 0.0],
    [0.0, 0.0, 1.0],
    [0.0, 0.0, -1.0],
];

// Outward (counter-clockwise seen from outside) faces.
const OCTAHEDRON_FACES: [[usize; 3]; 8] = [
    [0, 2, 4],
    [2, 1, 4],
    [1, 3, 4],
    [3, 0, 4],
    [2, 0, 5],
    [1, 2, 5],
    [3, 1, 5],
    [0, 3, 5],
];

/// Level 1 is the octahedron; every further level splits each triangle into four
/// through normalized edge midpoints.
pub fn build_geodesic_sphere(level: usize) -> Result<GeodesicSphere> {
    if !(1..=MAX_LEVEL).contains(&level) {
        return Err(Error::InvalidParameter(format!(
            "geodesic level must be in 1..={MAX_LEVEL}, got {level}"
        )));
    }
    let mut vertices: Vec<Vector3<f64>> = OCTAHEDRON_VERTICES
        .iter()
        .map(|v| Vector3::new(v[0], v[1], v[2]))
        .collect();
    let mut triangles = OCTAHEDRON_FACES.to_vec();

    for _ in 1..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(triangles.len() * 4);
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vector3<f64>>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let m = (vertices[key.0] + vertices[key.1]).normalize();
                vertices.push(m);
                vertices.len() - 1
            })
        };
        for &[a, b, c] in &triangles {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([ab, b, bc]);
            next.push([ca, bc, c]);
            next.push([ab, bc, ca]);
        }
        triangles = next;
    }

    Ok(GeodesicSphere {
        vertices,
        triangles,
        level,
    })
}

impl GeodesicSphere {
    /// Index of the vertex with the largest dot product with `direction`; ties go
    /// to the lowest index.
    pub fn nearest_vertex(&self, direction: &Vector3<f64>) -> Result<usize> {
        if !(direction.norm() > 1e-12) {
            return Err(Error::InvalidParameter("zero-length direction".into()));
        }
        Ok(argmax_dot(&self.vertices, direction))
    }

    /// The sphere as a triangle mesh, e.g. for OFF export.
    pub fn to_mesh(&self) -> TriangleMesh {
        TriangleMesh {
            vertices: self.vertices.iter().map(|v| [v.x, v.y, v.z]).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Flat (chordal) triangle areas.
    pub fn triangle_areas(&self) -> Vec<f64> {
        self.triangles
            .iter()
            .map(|&[a, b, c]| {
                let (va, vb, vc) = (&self.vertices[a], &self.vertices[b], &self.vertices[c]);
                0.5 * (vb - va).cross(&(vc - va)).norm()
            })
            .collect()
    }
}

pub(crate) fn argmax_dot(dirs: &[Vector3<f64>], d: &Vector3<f64>) -> usize {
    let mut best = 0;
    let mut best_dot = f64::NEG_INFINITY;
    for (i, v) in dirs.iter().enumerate() {
        let dot = v.dot(d);
        if dot > best_dot {
            best_dot = dot;
            best = i;
        }
    }
    best
}

/// How orientation histogram bins are laid out on the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinLayout {
    /// One bin per vertex of a geodesic sphere of the given level.
    Vertices(usize),
    /// One bin per triangle of a geodesic sphere, centered at the normalized centroid.
    FaceCenters(usize),
}

impl BinLayout {
    /// Layout producing `n_bins` bins: vertex counts 6/18/66/258/1026/4098 or
    /// face counts 8/32/128/512.
    pub fn for_bin_count(n_bins: usize) -> Result<Self> {
        for level in 1..=MAX_LEVEL {
            if n_bins == 2 + 4 * 4usize.pow(level as u32 - 1) {
                return Ok(BinLayout::Vertices(level));
            }
        }
        for level in 1..=4 {
            if n_bins == 8 * 4usize.pow(level as u32 - 1) {
                return Ok(BinLayout::FaceCenters(level));
            }
        }
        Err(Error::InvalidParameter(format!(
            "no geodesic bin layout has {n_bins} bins"
        )))
    }
}

/// Directional bins: the Voronoi cells of a set of unit vectors.
#[derive(Debug, Clone)]
pub struct OrientationBins {
    pub layout: BinLayout,
    pub directions: Vec<Vector3<f64>>,
    /// Triangulation of `directions`, present for vertex layouts (used by soft binning).
    pub triangles: Option<Vec<[usize; 3]>>,
}

impl OrientationBins {
    pub fn new(layout: BinLayout) -> Result<Self> {
        match layout {
            BinLayout::Vertices(level) => {
                let sphere = build_geodesic_sphere(level)?;
                Ok(Self {
                    layout,
                    directions: sphere.vertices,
                    triangles: Some(sphere.triangles),
                })
            }
            BinLayout::FaceCenters(level) => {
                let sphere = build_geodesic_sphere(level)?;
                let directions = sphere
                    .triangles
                    .iter()
                    .map(|&[a, b, c]| {
                        (sphere.vertices[a] + sphere.vertices[b] + sphere.vertices[c]).normalize()
                    })
                    .collect();
                Ok(Self {
                    layout,
                    directions,
                    triangles: None,
                })
            }
        }
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// Hard assignment: nearest direction, lowest index on ties.
    pub fn nearest(&self, d: &Vector3<f64>) -> usize {
        argmax_dot(&self.directions, d)
    }

    /// Soft assignment to the three corners of the sphere triangle hit by `d`,
    /// weighted barycentrically. Falls back to the nearest bin for face layouts.
    pub fn soft(&self, d: &Vector3<f64>) -> [(usize, f64); 3] {
        let Some(tris) = &self.triangles else {
            return [(self.nearest(d), 1.0), (0, 0.0), (0, 0.0)];
        };
        let mut best: Option<([(usize, f64); 3], f64)> = None;
        for &[a, b, c] in tris {
            let (va, vb, vc) = (&self.directions[a], &self.directions[b], &self.directions[c]);
            // barycentric coordinates of the ray d through the planar triangle
            let m = nalgebra::Matrix3::from_columns(&[*va, *vb, *vc]);
            let Some(inv) = m.try_inverse() else { continue };
            let w = inv * d;
            let min = w.x.min(w.y).min(w.z);
            if best.as_ref().is_none_or(|(_, m)| min > *m) {
                let s = w.x + w.y + w.z;
                best = Some(([(a, w.x / s), (b, w.y / s), (c, w.z / s)], min));
            }
            if min >= 0.0 {
                break;
            }
        }
        let (mut w, _) = best.expect("sphere has triangles");
        for e in &mut w {
            e.1 = e.1.max(0.0);
        }
        let s: f64 = w.iter().map(|e| e.1).sum();
        for e in &mut w {
            e.1 /= s;
        }
        w
    }
}
