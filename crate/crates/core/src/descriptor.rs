//! Rotation-normalized orientation histograms over an 8×8×8 window around each
//! surface keypoint.
//!
//! Every voxel gradient in the window is rotated so that the keypoint normal
//! becomes +z and the dominant azimuth of the surrounding gradients becomes
//! θ = 0. Its magnitude is then added to the nearest geodesic-sphere bin of the
//! 4×4×4 subblock containing it. The window and its subblocks are laid out in
//! that same canonical frame, so an axis-aligned rotation of the input yields
//! the same histogram.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geodesic::OrientationBins;
use crate::keypoints::Keypoint;
use crate::scale_space::{ScalarField, ScaleSpace};
use crate::sig9;

/// Half the window edge, in voxels.
pub const WINDOW_HALF: f64 = 4.0;
pub const SUBBLOCKS: usize = 8;
pub const DEFAULT_CLAMP: f64 = 0.2;

// membership and subblock boundaries closer than this count as ties
const BOUNDARY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescriptorOptions {
    /// Rotate about the normal so the mean gradient azimuth maps to θ = 0.
    pub azimuth_alignment: bool,
    /// Split each gradient over the three corners of its sphere triangle.
    pub soft_binning: bool,
    /// Gaussian weighting of window voxels by distance from the keypoint.
    pub spatial_weighting: bool,
    /// Per-bin cap applied between the two L2 normalizations.
    pub clamp: f64,
}

impl Default for DescriptorOptions {
    fn default() -> Self {
        Self {
            azimuth_alignment: true,
            soft_binning: false,
            spatial_weighting: false,
            clamp: DEFAULT_CLAMP,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub keypoint: Keypoint,
    pub bins: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub dims: [usize; 3],
    pub values: Vec<Vector3<f64>>,
}

/// Gradient at one voxel: central differences inside, one-sided on the boundary.
pub fn gradient_at(f: &ScalarField, x: usize, y: usize, z: usize) -> Vector3<f64> {
    let p = [x, y, z];
    let mut g = Vector3::zeros();
    for a in 0..3 {
        let n = f.dims[a];
        if n < 2 {
            continue;
        }
        let at = |c: usize| {
            let mut q = p;
            q[a] = c;
            f.get(q[0], q[1], q[2])
        };
        let c = p[a];
        g[a] = if c == 0 {
            at(1) - at(0)
        } else if c + 1 == n {
            at(c) - at(c - 1)
        } else {
            0.5 * (at(c + 1) - at(c - 1))
        };
    }
    g
}

pub fn gradient_field(field: &ScalarField) -> VectorField {
    let [dx, dy, dz] = field.dims;
    let mut values = Vec::with_capacity(dx * dy * dz);
    for z in 0..dz {
        for y in 0..dy {
            for x in 0..dx {
                values.push(gradient_at(field, x, y, z));
            }
        }
    }
    VectorField {
        dims: field.dims,
        values,
    }
}

/// Polar angle φ ∈ [0, π] from +z and azimuth θ ∈ [0, 2π) from +x.
pub fn spherical_angles(v: &Vector3<f64>) -> Result<(f64, f64)> {
    let r = v.norm();
    if !(r > 1e-12) {
        return Err(Error::InvalidParameter("spherical angles of a zero vector".into()));
    }
    let s = (v.x * v.x + v.y * v.y).sqrt();
    let phi = (v.z / r).clamp(-1.0, 1.0).acos();
    if s < 1e-12 {
        return Ok((phi, 0.0));
    }
    let a = (v.y / s).clamp(-1.0, 1.0).asin();
    let mut theta = if v.x >= 0.0 { a } else { std::f64::consts::PI - a };
    if theta < 0.0 {
        theta += std::f64::consts::TAU;
    }
    if theta >= std::f64::consts::TAU {
        theta -= std::f64::consts::TAU;
    }
    Ok((phi, theta))
}

/// Minimal rotation taking `n` (unit) onto +z.
fn align_to_pole(n: &Vector3<f64>) -> Matrix3<f64> {
    let axis = n.cross(&Vector3::z());
    let s = axis.norm();
    if s < 1e-15 {
        return if n.z > 0.0 {
            Matrix3::identity()
        } else {
            Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0)
        };
    }
    let angle = s.atan2(n.z);
    Rotation3::from_axis_angle(&Unit::new_unchecked(axis / s), angle).into_inner()
}

/// Rotation mapping `normal` to +z and the magnitude-weighted mean azimuth of the
/// aligned gradients to θ = 0. Gradients with horizontal extent S < 1e-6 after
/// alignment are ignored; a vanishing resultant leaves the azimuth untouched.
pub fn normalization_rotation(normal: &Vector3<f64>, window_gradients: &[Vector3<f64>]) -> Result<Matrix3<f64>> {
    if (normal.norm() - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidParameter(format!("normal is not unit length: {}", normal.norm())));
    }
    let align = align_to_pole(normal);
    let mut c = 0.0;
    let mut s = 0.0;
    for g in window_gradients {
        let a = align * g;
        if (a.x * a.x + a.y * a.y).sqrt() < 1e-6 {
            continue;
        }
        let (_, theta) = spherical_angles(&a)?;
        let m = g.norm();
        c += m * theta.cos();
        s += m * theta.sin();
    }
    if (c * c + s * s).sqrt() < 1e-9 {
        return Ok(align);
    }
    let mean = s.atan2(c);
    let az = Rotation3::from_axis_angle(&Vector3::z_axis(), -mean).into_inner();
    Ok(az * align)
}

/// Largest grid offset that can land inside the canonical window (4·√3, rounded up).
const REACH: i64 = 7;

fn window_gradient(field: &ScalarField, p: [i64; 3]) -> Vector3<f64> {
    if (0..3).any(|a| p[a] < 0 || p[a] >= field.dims[a] as i64) {
        Vector3::zeros()
    } else {
        gradient_at(field, p[0] as usize, p[1] as usize, p[2] as usize)
    }
}

/// Per-axis (weight, subblock side) splits of a canonical coordinate.
fn axis_splits(c: f64) -> Option<[(f64, usize); 2]> {
    let a = c.abs();
    if a > WINDOW_HALF + BOUNDARY_TOL {
        return None;
    }
    let edge = if (a - WINDOW_HALF).abs() <= BOUNDARY_TOL { 0.5 } else { 1.0 };
    Some(if c > BOUNDARY_TOL {
        [(edge, 1), (0.0, 0)]
    } else if c < -BOUNDARY_TOL {
        [(edge, 0), (0.0, 0)]
    } else {
        [(0.5 * edge, 0), (0.5 * edge, 1)]
    })
}

/// Unnormalized histogram and the total gradient mass that went into it.
pub fn raw_histogram(
    field: &ScalarField,
    kp: &Keypoint,
    bins: &OrientationBins,
    opts: &DescriptorOptions,
) -> Result<(Vec<f64>, f64)> {
    let [x, y, z] = kp.position;
    let normal = kp.normal.ok_or(Error::DegenerateNormal(x, y, z))?;
    let center = [x as i64, y as i64, z as i64];

    let mut offsets = Vec::with_capacity((2 * REACH as usize + 1).pow(3));
    for dz in -REACH..=REACH {
        for dy in -REACH..=REACH {
            for dx in -REACH..=REACH {
                let g = window_gradient(field, [center[0] + dx, center[1] + dy, center[2] + dz]);
                offsets.push(([dx, dy, dz], g));
            }
        }
    }

    let rotation = if opts.azimuth_alignment {
        // the inscribed ball is invariant under the rotation, unlike the cube
        let ball: Vec<Vector3<f64>> = offsets
            .iter()
            .filter(|(o, _)| o[0] * o[0] + o[1] * o[1] + o[2] * o[2] <= 16)
            .map(|(_, g)| *g)
            .collect();
        normalization_rotation(&normal, &ball)?
    } else {
        normalization_rotation(&normal, &[])?
    };

    let n_bins = bins.len();
    let mut hist = vec![0.0; SUBBLOCKS * n_bins];
    let mut mass = 0.0;
    for (o, g) in &offsets {
        let m = g.norm();
        if m == 0.0 {
            continue;
        }
        let ov = Vector3::new(o[0] as f64, o[1] as f64, o[2] as f64);
        let c = rotation * ov;
        let (Some(sx), Some(sy), Some(sz)) = (axis_splits(c.x), axis_splits(c.y), axis_splits(c.z)) else {
            continue;
        };
        let spatial = if opts.spatial_weighting {
            (-ov.norm_squared() / (2.0 * WINDOW_HALF * WINDOW_HALF)).exp()
        } else {
            1.0
        };
        let rg = rotation * g;
        let targets: [(usize, f64); 3] = if opts.soft_binning {
            bins.soft(&rg)
        } else {
            [(bins.nearest(&rg), 1.0), (0, 0.0), (0, 0.0)]
        };
        for &(wx, bx) in &sx {
            for &(wy, by) in &sy {
                for &(wz, bz) in &sz {
                    let w = wx * wy * wz;
                    if w == 0.0 {
                        continue;
                    }
                    let sub = bx + 2 * by + 4 * bz;
                    let contrib = w * spatial * m;
                    for &(bin, bw) in &targets {
                        if bw > 0.0 {
                            hist[sub * n_bins + bin] += bw * contrib;
                        }
                    }
                    mass += contrib;
                }
            }
        }
    }
    Ok((hist, mass))
}

fn l2_normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if !(n > 0.0) {
        return false;
    }
    for x in v.iter_mut() {
        *x /= n;
    }
    true
}

/// Descriptor of one keypoint from the Gaussian level `field` at its scale.
pub fn compute_descriptor(
    field: &ScalarField,
    kp: &Keypoint,
    bins: &OrientationBins,
    opts: &DescriptorOptions,
) -> Result<Descriptor> {
    let [x, y, z] = kp.position;
    let (mut hist, mass) = raw_histogram(field, kp, bins, opts)?;
    if !(mass > 0.0) || !l2_normalize(&mut hist) {
        return Err(Error::DegenerateDescriptor(x, y, z));
    }
    for v in hist.iter_mut() {
        *v = v.min(opts.clamp);
    }
    l2_normalize(&mut hist);
    Ok(Descriptor {
        keypoint: kp.clone(),
        bins: hist,
    })
}

/// Descriptors for all keypoints (in keypoint order), skipping degenerate windows.
pub fn describe_all(
    space: &ScaleSpace,
    keypoints: &[Keypoint],
    bins: &OrientationBins,
    opts: &DescriptorOptions,
) -> Vec<Descriptor> {
    keypoints
        .par_iter()
        .filter_map(|kp| {
            let field = &space.level_for_dog(kp.scale_index).field;
            match compute_descriptor(field, kp, bins, opts) {
                Ok(d) => Some(d),
                Err(e) => {
                    log::debug!("skipping keypoint: {e}");
                    None
                }
            }
        })
        .collect()
}

pub fn descriptors_to_csv(descriptors: &[Descriptor]) -> String {
    let dim = descriptors.first().map_or(0, |d| d.bins.len());
    let mut out = String::from("x,y,z,scale_index");
    for i in 0..dim {
        let _ = write!(out, ",b{i}");
    }
    out.push('\n');
    for d in descriptors {
        let [x, y, z] = d.keypoint.position;
        let _ = write!(out, "{x},{y},{z},{}", d.keypoint.scale_index);
        for v in &d.bins {
            out.push(',');
            out.push_str(&sig9(*v));
        }
        out.push('\n');
    }
    out
}

/// A row of a descriptor file.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorRow {
    pub position: [usize; 3],
    pub scale_index: usize,
    pub bins: Vec<f64>,
}

pub fn read_descriptor_csv(text: &str) -> Result<Vec<DescriptorRow>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::Format("empty descriptor file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[..4] != ["x", "y", "z", "scale_index"] {
        return Err(Error::Format(format!("bad descriptor header: {header}")));
    }
    let dim = cols.len() - 4;
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != dim + 4 {
            return Err(crate::error::parse_err(i + 1, format!("expected {} fields, found {}", dim + 4, f.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| crate::error::parse_err(i + 1, format!("bad integer {s:?}")));
        let bins = f[4..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| crate::error::parse_err(i + 1, format!("bad number {s:?}"))))
            .collect::<Result<Vec<_>>>()?;
        rows.push(DescriptorRow {
            position: [int(f[0])?, int(f[1])?, int(f[2])?],
            scale_index: int(f[3])?,
            bins,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::BinLayout;
    use crate::keypoints::Polarity;
    use crate::rotation::axis_rotations;
    use crate::voxel::linear_index;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn field_from(dims: [usize; 3], mut f: impl FnMut(f64, f64, f64) -> f64) -> ScalarField {
        let mut out = ScalarField::zeros(dims);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    out.values[linear_index(dims, x, y, z)] = f(x as f64, y as f64, z as f64);
                }
            }
        }
        out
    }

    fn kp_at(p: [usize; 3], normal: Vector3<f64>) -> Keypoint {
        Keypoint {
            position: p,
            scale_index: 0,
            dog_value: -0.2,
            polarity: Polarity::Minimum,
            normal: Some(normal),
        }
    }

    fn random_unit(rng: &mut ChaCha8Rng) -> Vector3<f64> {
        loop {
            let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if v.norm() > 0.1 && v.norm() < 1.0 {
                return v.normalize();
            }
        }
    }

    #[test]
    fn gradient_of_ramp_and_constant() {
        let ramp = field_from([6, 5, 4], |x, _, _| x);
        let g = gradient_field(&ramp);
        assert!(g.values.iter().all(|v| *v == Vector3::new(1.0, 0.0, 0.0)));
        let flat = field_from([4, 4, 4], |_, _, _| 3.5);
        assert!(gradient_field(&flat).values.iter().all(|v| *v == Vector3::zeros()));
    }

    #[test]
    fn gradient_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = field_from([8, 8, 8], |_, _, _| rng.random::<f64>());
        let g = gradient_field(&f);
        let d = f.dims;
        let val = |p: [usize; 3]| f.values[p[0] + d[0] * (p[1] + d[1] * p[2])];
        for z in 0..8 {
            for y in 0..8 {
                for x in 0..8 {
                    let p = [x, y, z];
                    let mut want = [0.0; 3];
                    for a in 0..3 {
                        let (mut lo, mut hi) = (p, p);
                        if p[a] > 0 {
                            lo[a] -= 1;
                        }
                        if p[a] < 7 {
                            hi[a] += 1;
                        }
                        want[a] = (val(hi) - val(lo)) / (hi[a] - lo[a]) as f64;
                    }
                    let got = g.values[linear_index(d, x, y, z)];
                    for a in 0..3 {
                        assert!((got[a] - want[a]).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn spherical_angle_cases() {
        let (p, t) = spherical_angles(&Vector3::z()).unwrap();
        assert_eq!((p, t), (0.0, 0.0));
        let (p, t) = spherical_angles(&Vector3::x()).unwrap();
        assert!((p - PI / 2.0).abs() < 1e-15 && t == 0.0);
        let (p, t) = spherical_angles(&-Vector3::x()).unwrap();
        assert!((p - PI / 2.0).abs() < 1e-15 && (t - PI).abs() < 1e-15);
        let (_, t) = spherical_angles(&Vector3::new(0.0, -1.0, 0.0)).unwrap();
        assert!((t - 1.5 * PI).abs() < 1e-15);
        assert!(spherical_angles(&Vector3::zeros()).is_err());
        // theta agrees with atan2 everywhere
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let v = random_unit(&mut rng);
            let (p, t) = spherical_angles(&v).unwrap();
            assert!((p - v.z.acos()).abs() < 1e-12);
            assert!((t - v.y.atan2(v.x).rem_euclid(2.0 * PI)).abs() < 1e-9);
        }
    }

    #[test]
    fn normalization_rotation_cases() {
        let r = normalization_rotation(&Vector3::z(), &[Vector3::x(), 2.0 * Vector3::x()]).unwrap();
        assert!((r - Matrix3::identity()).norm() < 1e-15);
        let r = normalization_rotation(&Vector3::x(), &[Vector3::x()]).unwrap();
        assert!((r * Vector3::x() - Vector3::z()).norm() < 1e-15);
        let r = normalization_rotation(&-Vector3::z(), &[]).unwrap();
        assert!((r * -Vector3::z() - Vector3::z()).norm() < 1e-15);
        assert!(normalization_rotation(&Vector3::new(2.0, 0.0, 0.0), &[]).is_err());
    }

    #[test]
    fn normalization_rotation_is_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let n = random_unit(&mut rng);
            let gs: Vec<Vector3<f64>> = (0..30).map(|_| random_unit(&mut rng) * rng.random_range(0.1..2.0)).collect();
            let r = normalization_rotation(&n, &gs).unwrap();
            for q in axis_rotations() {
                let qm = q.matrix();
                let qg: Vec<_> = gs.iter().map(|g| qm * g).collect();
                let rq = normalization_rotation(&(qm * n), &qg).unwrap();
                assert!((rq * qm - r).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn gradients_along_normal_fill_pole_bins() {
        let bins = OrientationBins::new(BinLayout::Vertices(3)).unwrap();
        let f = field_from([24, 24, 24], |_, _, z| 0.1 * z);
        let kp = kp_at([12, 12, 12], Vector3::z());
        let d = compute_descriptor(&f, &kp, &bins, &DescriptorOptions::default()).unwrap();
        let support: Vec<usize> = (0..d.bins.len()).filter(|&i| d.bins[i] > 0.0).collect();
        assert_eq!(support, (0..8).map(|s| s * 66 + 4).collect::<Vec<_>>());
    }

    #[test]
    fn empty_window_is_degenerate() {
        let bins = OrientationBins::new(BinLayout::Vertices(3)).unwrap();
        let f = ScalarField::zeros([20, 20, 20]);
        let err = compute_descriptor(&f, &kp_at([10, 10, 10], Vector3::z()), &bins, &DescriptorOptions::default());
        assert!(matches!(err, Err(Error::DegenerateDescriptor(10, 10, 10))));
        let mut no_normal = kp_at([10, 10, 10], Vector3::z());
        no_normal.normal = None;
        assert!(compute_descriptor(&f, &no_normal, &bins, &DescriptorOptions::default()).is_err());
    }

    fn blob(dims: [usize; 3], seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<([f64; 3], f64)> = (0..6)
            .map(|_| {
                (
                    [rng.random_range(6.0..14.0), rng.random_range(6.0..14.0), rng.random_range(6.0..14.0)],
                    rng.random_range(2.0..5.0),
                )
            })
            .collect();
        field_from(dims, |x, y, z| {
            centers
                .iter()
                .map(|(c, s)| (-((x - c[0]).powi(2) + (y - c[1]).powi(2) + (z - c[2]).powi(2)) / (2.0 * s * s)).exp())
                .sum()
        })
    }

    #[test]
    fn mass_conservation_and_gain_invariance() {
        let bins = OrientationBins::new(BinLayout::Vertices(3)).unwrap();
        let f = blob([20, 20, 20], 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for opts in [
            DescriptorOptions::default(),
            DescriptorOptions {
                soft_binning: true,
                spatial_weighting: true,
                ..Default::default()
            },
        ] {
            for _ in 0..5 {
                let p = [rng.random_range(2..18), rng.random_range(2..18), rng.random_range(2..18)];
                let kp = kp_at(p, random_unit(&mut rng));
                let (hist, mass) = raw_histogram(&f, &kp, &bins, &opts).unwrap();
                assert!((hist.iter().sum::<f64>() - mass).abs() < 1e-9);
                assert!(hist.iter().all(|&v| v >= 0.0));
                let d = compute_descriptor(&f, &kp, &bins, &opts).unwrap();
                assert!((d.bins.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() < 1e-9);
                assert!(d.bins.iter().all(|v| v.is_finite() && *v >= 0.0));
                let scaled = compute_descriptor(&f.scaled(37.5), &kp, &bins, &opts).unwrap();
                for (a, b) in d.bins.iter().zip(&scaled.bins) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn descriptor_follows_axis_rotations() {
        let bins = OrientationBins::new(BinLayout::Vertices(3)).unwrap();
        let f = blob([21, 21, 21], 12);
        let p = [9, 11, 10];
        let n = -gradient_at(&f, p[0], p[1], p[2]).normalize();
        let base = compute_descriptor(&f, &kp_at(p, n), &bins, &DescriptorOptions::default()).unwrap();
        let mut max_err: f64 = 0.0;
        for q in axis_rotations() {
            let rf = f.rotated(&q);
            let rp = q.rotate_index(p, f.dims);
            let rn = q.matrix() * n;
            let d = compute_descriptor(&rf, &kp_at(rp, rn), &bins, &DescriptorOptions::default()).unwrap();
            let err = base.bins.iter().zip(&d.bins).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            max_err = max_err.max(err);
        }
        assert!(max_err < 1e-6, "{max_err}");
    }

    #[test]
    fn csv_roundtrip_dimensions() {
        let kp = kp_at([1, 2, 3], Vector3::z());
        let d = Descriptor {
            keypoint: kp,
            bins: vec![0.5, 0.25, 0.125],
        };
        let csv = descriptors_to_csv(&[d]);
        assert!(csv.starts_with("x,y,z,scale_index,b0,b1,b2\n1,2,3,0,5.00000000e-1,"));
        let rows = read_descriptor_csv(&csv).unwrap();
        assert_eq!(rows[0].bins, vec![0.5, 0.25, 0.125]);
        assert!(read_descriptor_csv("a,b\n").is_err());
    }
}
