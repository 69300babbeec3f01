//! Gaussian scale space of an occupancy grid and its difference-of-Gaussians stack.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rotation::AxisRotation;
use crate::voxel::{linear_index, VoxelGrid};

/// Real values on a regular lattice, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub dims: [usize; 3],
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            values: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    pub fn from_grid(grid: &VoxelGrid) -> Self {
        Self {
            dims: grid.dims,
            values: grid.occupancy.iter().map(|&o| if o { 1.0 } else { 0.0 }).collect(),
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.values[linear_index(self.dims, x, y, z)]
    }

    /// Value at a signed coordinate, zero outside the grid.
    #[inline]
    pub fn get_or_zero(&self, x: i64, y: i64, z: i64) -> f64 {
        if x < 0
            || y < 0
            || z < 0
            || x >= self.dims[0] as i64
            || y >= self.dims[1] as i64
            || z >= self.dims[2] as i64
        {
            0.0
        } else {
            self.get(x as usize, y as usize, z as usize)
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dims: self.dims,
            values: self.values.iter().map(|v| v * c).collect(),
        }
    }

    /// The field rotated about the grid center.
    pub fn rotated(&self, r: &AxisRotation) -> Self {
        let nd = r.rotate_dims(self.dims);
        let mut values = vec![0.0; self.values.len()];
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    let [a, b, c] = r.rotate_index([x, y, z], self.dims);
                    values[linear_index(nd, a, b, c)] = self.get(x, y, z);
                }
            }
        }
        Self { dims: nd, values }
    }

    fn sub(&self, other: &ScalarField) -> ScalarField {
        ScalarField {
            dims: self.dims,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        }
    }
}

/// Normalized Gaussian weights for offsets `-r..=r`, `r = ceil(3 sigma)`.
pub fn gaussian_kernel_1d(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let r = (3.0 * sigma).ceil() as i64;
    let mut w: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    Ok(w)
}

// One 1D pass along `axis`. Each output is w0*f0 + sum_i w_i*(f[-i] + f[+i]),
// summed in increasing |i|; mirrored lines therefore give identical results.
fn convolve_axis(input: &ScalarField, kernel: &[f64], axis: usize) -> ScalarField {
    let dims = input.dims;
    let r = kernel.len() / 2;
    let half = &kernel[r..];
    let stride = [1, dims[0], dims[0] * dims[1]][axis];
    let extent = dims[axis];
    let slab = dims[0] * dims[1];
    let mut out = vec![0.0; input.values.len()];
    out.par_chunks_mut(slab.max(1)).enumerate().for_each(|(z, chunk)| {
        for y in 0..dims[1] {
            for x in 0..dims[0] {
                let idx = linear_index(dims, x, y, z);
                let c = [x, y, z][axis];
                let mut acc = half[0] * input.values[idx];
                for (i, &w) in half.iter().enumerate().skip(1) {
                    let lo = if c >= i { input.values[idx - i * stride] } else { 0.0 };
                    let hi = if c + i < extent { input.values[idx + i * stride] } else { 0.0 };
                    acc += w * (lo + hi);
                }
                chunk[x + dims[0] * y] = acc;
            }
        }
    });
    ScalarField { dims, values: out }
}

/// Convolution with the truncated, normalized 3D Gaussian (zero padding),
/// as three separable passes in x, y, z order.
pub fn smooth(field: &ScalarField, sigma: f64) -> Result<ScalarField> {
    let kernel = gaussian_kernel_1d(sigma)?;
    let a = convolve_axis(field, &kernel, 0);
    let b = convolve_axis(&a, &kernel, 1);
    Ok(convolve_axis(&b, &kernel, 2))
}

/// What each DoG level is the difference against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DogMode {
    /// `M_k - M`, the smoothed level minus the unsmoothed occupancy.
    #[default]
    VsBase,
    /// `M_{k_{i+1}} - M_{k_i}`, differences between consecutive levels.
    Adjacent,
}

#[derive(Debug, Clone)]
pub struct ScaleLevel {
    pub k: f64,
    pub sigma: f64,
    pub field: ScalarField,
}

#[derive(Debug, Clone)]
pub struct DogLevel {
    pub k: f64,
    pub field: ScalarField,
}

#[derive(Debug, Clone)]
pub struct ScaleSpace {
    pub base_delta: f64,
    pub mode: DogMode,
    /// The unsmoothed occupancy as reals.
    pub base: ScalarField,
    pub levels: Vec<ScaleLevel>,
    pub dog_levels: Vec<DogLevel>,
}

impl ScaleSpace {
    pub fn dims(&self) -> [usize; 3] {
        self.base.dims
    }

    /// Gaussian level whose scale matches DoG level `dog_index`.
    pub fn level_for_dog(&self, dog_index: usize) -> &ScaleLevel {
        &self.levels[dog_index]
    }
}

/// Default scale multipliers: 1, 2^(1/3), 2^(2/3), 2, 2^(4/3).
pub fn default_k_values() -> Vec<f64> {
    (0..5).map(|i| 2f64.powf(i as f64 / 3.0)).collect()
}

pub const DEFAULT_BASE_DELTA: f64 = 1.6;

pub fn build_scale_space(grid: &VoxelGrid, base_delta: f64, k_values: &[f64], mode: DogMode) -> Result<ScaleSpace> {
    build_scale_space_from_field(ScalarField::from_grid(grid), base_delta, k_values, mode)
}

/// Same as [`build_scale_space`] for an arbitrary real-valued base field.
pub fn build_scale_space_from_field(
    base: ScalarField,
    base_delta: f64,
    k_values: &[f64],
    mode: DogMode,
) -> Result<ScaleSpace> {
    if !(base_delta > 0.0) {
        return Err(Error::InvalidParameter(format!("base delta must be positive, got {base_delta}")));
    }
    if k_values.is_empty() {
        return Err(Error::InvalidParameter("k schedule is empty".into()));
    }
    if k_values[0] <= 0.0 || k_values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter(format!(
            "k values must be positive and strictly increasing: {k_values:?}"
        )));
    }
    let levels = k_values
        .par_iter()
        .map(|&k| {
            let sigma = k * base_delta;
            smooth(&base, sigma).map(|field| ScaleLevel { k, sigma, field })
        })
        .collect::<Result<Vec<_>>>()?;
    let dog_levels = match mode {
        DogMode::VsBase => levels
            .iter()
            .map(|l| DogLevel {
                k: l.k,
                field: l.field.sub(&base),
            })
            .collect(),
        DogMode::Adjacent => levels
            .windows(2)
            .map(|w| DogLevel {
                k: w[0].k,
                field: w[1].field.sub(&w[0].field),
            })
            .collect(),
    };
    Ok(ScaleSpace {
        base_delta,
        mode,
        base,
        levels,
        dog_levels,
    })
}
