//! Space–scale extrema of the DoG stack, restricted to surface voxels, with an
//! outward surface normal per keypoint.

use std::fmt::Write as _;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scale_space::{ScalarField, ScaleSpace};
use crate::sig9;
use crate::voxel::linear_index;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Maximum,
    Minimum,
}

impl Polarity {
    pub fn as_str(&self) -> &'static str {
        match self {
            Polarity::Maximum => "max",
            Polarity::Minimum => "min",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub position: [usize; 3],
    /// Index into `ScaleSpace::dog_levels`.
    pub scale_index: usize,
    pub dog_value: f64,
    pub polarity: Polarity,
    pub normal: Option<Vector3<f64>>,
}

/// Which DoG levels a candidate is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ExtremaScope {
    /// The 3×3×3 neighborhoods at the scales directly above and below.
    #[default]
    Adjacent,
    /// The 3×3×3 neighborhoods at every other scale.
    AllScales,
}

pub const DEFAULT_THRESHOLD: f64 = 0.01;

/// Strict extrema over the 26 spatial neighbors and the 3×3×3 neighborhoods of the
/// compared scales, for interior scale indices `1..S-1`. Voxels on the grid
/// boundary are never reported. Sorted by (scale_index, z, y, x).
pub fn detect_extrema(space: &ScaleSpace, threshold: f64, scope: ExtremaScope) -> Result<Vec<Keypoint>> {
    let dogs = &space.dog_levels;
    if dogs.len() < 3 {
        return Err(Error::InvalidParameter(format!(
            "extrema detection needs at least 3 DoG levels, got {}",
            dogs.len()
        )));
    }
    let dims = space.dims();
    if dims.iter().any(|&d| d < 3) {
        return Ok(Vec::new());
    }
    let fields: Vec<&ScalarField> = dogs.iter().map(|d| &d.field).collect();
    let jobs: Vec<(usize, usize)> = (1..dogs.len() - 1)
        .flat_map(|s| (1..dims[2] - 1).map(move |z| (s, z)))
        .collect();
    let found: Vec<Vec<Keypoint>> = jobs
        .par_iter()
        .map(|&(s, z)| {
            let others: Vec<usize> = match scope {
                ExtremaScope::Adjacent => vec![s - 1, s + 1],
                ExtremaScope::AllScales => (0..fields.len()).filter(|&t| t != s).collect(),
            };
            let mut out = Vec::new();
            for y in 1..dims[1] - 1 {
                for x in 1..dims[0] - 1 {
                    let v = fields[s].get(x, y, z);
                    if v == 0.0 || v.abs() < threshold {
                        continue;
                    }
                    let polarity = if v > 0.0 { Polarity::Maximum } else { Polarity::Minimum };
                    if is_strict_extremum(&fields, s, &others, [x, y, z], v, polarity) {
                        out.push(Keypoint {
                            position: [x, y, z],
                            scale_index: s,
                            dog_value: v,
                            polarity,
                            normal: None,
                        });
                    }
                }
            }
            out
        })
        .collect();
    Ok(found.into_iter().flatten().collect())
}

fn is_strict_extremum(
    fields: &[&ScalarField],
    s: usize,
    others: &[usize],
    [x, y, z]: [usize; 3],
    v: f64,
    polarity: Polarity,
) -> bool {
    let beats = |w: f64| match polarity {
        Polarity::Maximum => v > w,
        Polarity::Minimum => v < w,
    };
    let dims = fields[s].dims;
    for dz in 0..3 {
        for dy in 0..3 {
            let row = linear_index(dims, x - 1, y + dy - 1, z + dz - 1);
            for dx in 0..3 {
                let i = row + dx;
                if (dx, dy, dz) != (1, 1, 1) && !beats(fields[s].values[i]) {
                    return false;
                }
                for &t in others {
                    if !beats(fields[t].values[i]) {
                        return false;
                    }
                }
            }
        }
    }
    true
}

/// Keeps the keypoints whose voxel is set in `surface`, preserving order.
pub fn filter_surface(keypoints: Vec<Keypoint>, surface: &[bool], dims: [usize; 3]) -> Vec<Keypoint> {
    keypoints
        .into_iter()
        .filter(|k| surface[linear_index(dims, k.position[0], k.position[1], k.position[2])])
        .collect()
}

/// Central-difference gradient of a field at an interior voxel.
fn central_gradient(f: &ScalarField, [x, y, z]: [usize; 3]) -> Vector3<f64> {
    Vector3::new(
        0.5 * (f.get(x + 1, y, z) - f.get(x - 1, y, z)),
        0.5 * (f.get(x, y + 1, z) - f.get(x, y - 1, z)),
        0.5 * (f.get(x, y, z + 1) - f.get(x, y, z - 1)),
    )
}

/// Outward unit normal: the negated, normalized gradient of the Gaussian level at
/// the keypoint's scale. A vanishing gradient falls back to the direction from the
/// centroid of occupied voxels in the 5×5×5 neighborhood toward the keypoint.
pub fn estimate_normal(space: &ScaleSpace, kp: &Keypoint) -> Result<Vector3<f64>> {
    let dims = space.dims();
    let [x, y, z] = kp.position;
    let degenerate = || Error::DegenerateNormal(x, y, z);
    if (0..3).any(|a| kp.position[a] == 0 || kp.position[a] + 1 >= dims[a]) {
        return Err(degenerate());
    }
    let field = &space.level_for_dog(kp.scale_index).field;
    let g = central_gradient(field, kp.position);
    let n = g.norm();
    if n >= 1e-9 {
        return Ok(-g / n);
    }

    let mut sum = Vector3::zeros();
    let mut count = 0usize;
    for dz in -2i64..=2 {
        for dy in -2i64..=2 {
            for dx in -2i64..=2 {
                let p = [x as i64 + dx, y as i64 + dy, z as i64 + dz];
                if space.base.get_or_zero(p[0], p[1], p[2]) > 0.5 {
                    sum += Vector3::new(p[0] as f64, p[1] as f64, p[2] as f64);
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(degenerate());
    }
    let d = Vector3::new(x as f64, y as f64, z as f64) - sum / count as f64;
    let len = d.norm();
    if len < 1e-9 {
        return Err(degenerate());
    }
    Ok(d / len)
}

/// Sets the normal of every keypoint, dropping those whose normal is degenerate.
pub fn assign_normals(space: &ScaleSpace, keypoints: Vec<Keypoint>) -> Vec<Keypoint> {
    keypoints
        .into_par_iter()
        .filter_map(|mut kp| match estimate_normal(space, &kp) {
            Ok(n) => {
                kp.normal = Some(n);
                Some(kp)
            }
            Err(e) => {
                log::debug!("{e}");
                None
            }
        })
        .collect()
}

pub const KEYPOINT_CSV_HEADER: &str = "x,y,z,scale_index,dog_value,polarity,nx,ny,nz";

/// Keypoint table sorted by (scale_index, z, y, x); unset normals are left empty.
pub fn keypoints_to_csv(keypoints: &[Keypoint]) -> String {
    let mut sorted: Vec<&Keypoint> = keypoints.iter().collect();
    sorted.sort_by_key(|k| (k.scale_index, k.position[2], k.position[1], k.position[0]));
    let mut out = String::from(KEYPOINT_CSV_HEADER);
    out.push('\n');
    for k in sorted {
        let [x, y, z] = k.position;
        let normal = match k.normal {
            Some(n) => format!("{},{},{}", sig9(n.x), sig9(n.y), sig9(n.z)),
            None => ",,".to_string(),
        };
        let _ = writeln!(
            out,
            "{x},{y},{z},{},{},{},{normal}",
            k.scale_index,
            sig9(k.dog_value),
            k.polarity.as_str()
        );
    }
    out
}
