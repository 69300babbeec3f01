//! The 24 proper rotations that map the coordinate axes onto themselves.

use nalgebra::{Matrix3, Vector3};

/// Signed axis permutation with determinant +1: `(R v)[i] = sign[i] * v[perm[i]]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AxisRotation {
    pub perm: [usize; 3],
    pub sign: [i8; 3],
}

const PERMS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// All 24 axis-aligned rotations, identity first.
pub fn axis_rotations() -> Vec<AxisRotation> {
    let mut out = Vec::with_capacity(24);
    for perm in PERMS {
        for bits in 0..8u8 {
            let sign = [
                if bits & 1 == 0 { 1 } else { -1 },
                if bits & 2 == 0 { 1 } else { -1 },
                if bits & 4 == 0 { 1 } else { -1 },
            ];
            let r = AxisRotation { perm, sign };
            if r.matrix().determinant() > 0.0 {
                out.push(r);
            }
        }
    }
    out
}

impl AxisRotation {
    pub const IDENTITY: AxisRotation = AxisRotation {
        perm: [0, 1, 2],
        sign: [1, 1, 1],
    };

    pub fn matrix(&self) -> Matrix3<f64> {
        let mut m = Matrix3::zeros();
        for i in 0..3 {
            m[(i, self.perm[i])] = self.sign[i] as f64;
        }
        m
    }

    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new(
            self.sign[0] as f64 * v[self.perm[0]],
            self.sign[1] as f64 * v[self.perm[1]],
            self.sign[2] as f64 * v[self.perm[2]],
        )
    }

    /// Rotates a point about `center` using only negation and subtraction.
    pub fn apply_about(&self, p: [f64; 3], center: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for i in 0..3 {
            let j = self.perm[i];
            let d = p[j] - center[j];
            out[i] = center[i] + self.sign[i] as f64 * d;
        }
        out
    }

    /// Dimensions of a grid after rotation.
    pub fn rotate_dims(&self, dims: [usize; 3]) -> [usize; 3] {
        [dims[self.perm[0]], dims[self.perm[1]], dims[self.perm[2]]]
    }

    /// Maps a voxel index of a grid with `dims` to its index in the rotated grid
    /// (rotation about the grid center).
    pub fn rotate_index(&self, idx: [usize; 3], dims: [usize; 3]) -> [usize; 3] {
        let mut out = [0; 3];
        for i in 0..3 {
            let j = self.perm[i];
            out[i] = if self.sign[i] > 0 {
                idx[j]
            } else {
                dims[j] - 1 - idx[j]
            };
        }
        out
    }

    pub fn inverse(&self) -> AxisRotation {
        let mut perm = [0; 3];
        let mut sign = [1; 3];
        for i in 0..3 {
            perm[self.perm[i]] = i;
            sign[self.perm[i]] = self.sign[i];
        }
        AxisRotation { perm, sign }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twenty_four_distinct_proper_rotations() {
        let rs = axis_rotations();
        assert_eq!(rs.len(), 24);
        assert_eq!(rs[0], AxisRotation::IDENTITY);
        let set: std::collections::HashSet<_> = rs.iter().collect();
        assert_eq!(set.len(), 24);
        for r in &rs {
            let m = r.matrix();
            assert!((m * m.transpose() - Matrix3::identity()).norm() < 1e-15);
            assert!((m.determinant() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn inverse_and_index_maps_agree() {
        let dims = [4, 5, 6];
        for r in axis_rotations() {
            let inv = r.inverse();
            assert!((r.matrix() * inv.matrix() - Matrix3::identity()).norm() < 1e-15);
            let rd = r.rotate_dims(dims);
            let idx = [1, 3, 4];
            let back = inv.rotate_index(r.rotate_index(idx, dims), rd);
            assert_eq!(back, idx);
            // index map agrees with rotating voxel centers about the grid center
            let c = [dims[0] as f64 / 2.0, dims[1] as f64 / 2.0, dims[2] as f64 / 2.0];
            let rc = [rd[0] as f64 / 2.0, rd[1] as f64 / 2.0, rd[2] as f64 / 2.0];
            let p = [idx[0] as f64 + 0.5 - c[0], idx[1] as f64 + 0.5 - c[1], idx[2] as f64 + 0.5 - c[2]];
            let q = r.apply(&Vector3::new(p[0], p[1], p[2]));
            let ri = r.rotate_index(idx, dims);
            for a in 0..3 {
                assert_eq!(ri[a] as f64 + 0.5 - rc[a], q[a]);
            }
        }
    }
}
