//! Solid voxelization by even–odd ray parity, surface extraction and the
//! binary `VOXG` container.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{frame_transform, TriangleMesh};
use crate::rotation::AxisRotation;

/// Binary occupancy on a regular lattice, x-fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    pub dims: [usize; 3],
    pub occupancy: Vec<bool>,
    /// Model units per voxel.
    pub voxel_size: f64,
    /// Model-space position of the corner of voxel (0, 0, 0).
    pub origin: [f64; 3],
}

#[inline]
pub fn linear_index(dims: [usize; 3], x: usize, y: usize, z: usize) -> usize {
    x + dims[0] * (y + dims[1] * z)
}

impl VoxelGrid {
    pub fn empty(dims: [usize; 3]) -> Self {
        Self {
            dims,
            occupancy: vec![false; dims[0] * dims[1] * dims[2]],
            voxel_size: 1.0,
            origin: [0.0; 3],
        }
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut g = Self::empty(dims);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    g.occupancy[linear_index(dims, x, y, z)] = f(x, y, z);
                }
            }
        }
        g
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.occupancy[linear_index(self.dims, x, y, z)]
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, v: bool) {
        let i = linear_index(self.dims, x, y, z);
        self.occupancy[i] = v;
    }

    pub fn occupied_count(&self) -> usize {
        self.occupancy.iter().filter(|&&o| o).count()
    }

    /// The grid rotated about its center.
    pub fn rotated(&self, r: &AxisRotation) -> Self {
        let nd = r.rotate_dims(self.dims);
        let mut out = Self {
            dims: nd,
            occupancy: vec![false; self.occupancy.len()],
            voxel_size: self.voxel_size,
            origin: self.origin,
        };
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    let [a, b, c] = r.rotate_index([x, y, z], self.dims);
                    out.occupancy[linear_index(nd, a, b, c)] = self.get(x, y, z);
                }
            }
        }
        out
    }
}

/// Above this fraction of odd-parity columns the mesh is rejected.
pub const MAX_INCONSISTENT_FRACTION: f64 = 0.02;

// Sign of orient2d(u, v, p) for the point p displaced by (eps, eps^2).
// Evaluated on the lexicographically ordered edge so that the two triangles
// sharing an edge always see exactly opposite signs.
#[inline]
fn edge_sign(u: [f64; 2], v: [f64; 2], p: [f64; 2]) -> (f64, i8) {
    let swapped = (v[0], v[1]) < (u[0], u[1]);
    let (a, b) = if swapped { (v, u) } else { (u, v) };
    let val = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let mut s: i8 = if val > 0.0 {
        1
    } else if val < 0.0 {
        -1
    } else if b[1] != a[1] {
        if a[1] > b[1] {
            1
        } else {
            -1
        }
    } else if b[0] > a[0] {
        1
    } else {
        -1
    };
    let mut val = val;
    if swapped {
        s = -s;
        val = -val;
    }
    (val, s)
}

/// Solid voxelization of a mesh already in the voxel frame (see
/// [`crate::mesh::normalize_mesh`]). Voxel centers sit at `i + 0.5`.
pub fn voxelize(mesh: &TriangleMesh, resolution: usize) -> Result<VoxelGrid> {
    if resolution == 0 {
        return Err(Error::InvalidParameter("resolution must be positive".into()));
    }
    let n = resolution;
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n * n];

    for &[ia, ib, ic] in &mesh.triangles {
        let (a, b, c) = (mesh.vertices[ia], mesh.vertices[ib], mesh.vertices[ic]);
        let (pa, pb, pc) = ([a[0], a[1]], [b[0], b[1]], [c[0], c[1]]);
        let area2 = (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0]);
        if area2 == 0.0 {
            continue;
        }
        let lo_x = a[0].min(b[0]).min(c[0]);
        let hi_x = a[0].max(b[0]).max(c[0]);
        let lo_y = a[1].min(b[1]).min(c[1]);
        let hi_y = a[1].max(b[1]).max(c[1]);
        let i0 = ((lo_x - 0.5).ceil().max(0.0)) as usize;
        let j0 = ((lo_y - 0.5).ceil().max(0.0)) as usize;
        let i1 = (hi_x - 0.5).floor();
        let j1 = (hi_y - 0.5).floor();
        if i1 < 0.0 || j1 < 0.0 {
            continue;
        }
        let i1 = (i1 as usize).min(n - 1);
        let j1 = (j1 as usize).min(n - 1);
        for j in j0..=j1 {
            for i in i0..=i1 {
                let p = [i as f64 + 0.5, j as f64 + 0.5];
                let (wa, sa) = edge_sign(pb, pc, p);
                let (wb, sb) = edge_sign(pc, pa, p);
                let (wc, sc) = edge_sign(pa, pb, p);
                if sa != sb || sb != sc {
                    continue;
                }
                let wsum = wa + wb + wc;
                let z = if wsum != 0.0 {
                    (wa * a[2] + wb * b[2] + wc * c[2]) / wsum
                } else {
                    (a[2] + b[2] + c[2]) / 3.0
                };
                columns[i + n * j].push(z);
            }
        }
    }

    // (crossing count, column occupancy)
    let filled: Vec<(usize, Vec<bool>)> = columns
        .into_par_iter()
        .map(|mut zs| {
            zs.sort_by(f64::total_cmp);
            let mut col = vec![false; n];
            let consistent = zs.len() % 2 == 0;
            if consistent && !zs.is_empty() {
                let mut below = 0;
                for (k, cell) in col.iter_mut().enumerate() {
                    let center = k as f64 + 0.5;
                    while below < zs.len() && zs[below] < center {
                        below += 1;
                    }
                    *cell = below % 2 == 1;
                }
            }
            (zs.len(), col)
        })
        .collect();

    let non_empty = filled.iter().filter(|(c, _)| *c > 0).count();
    let bad: Vec<usize> = (0..filled.len()).filter(|&i| filled[i].0 % 2 == 1).collect();
    if !bad.is_empty() && bad.len() as f64 > MAX_INCONSISTENT_FRACTION * non_empty as f64 {
        return Err(Error::NonWatertight {
            inconsistent: bad.len(),
            non_empty,
        });
    }

    let mut grid = VoxelGrid::empty([n, n, n]);
    let source_of = |idx: usize| -> usize {
        if filled[idx].0 % 2 == 0 {
            return idx;
        }
        nearest_consistent(idx, n, |k| filled[k].0 % 2 == 0).unwrap_or(idx)
    };
    for j in 0..n {
        for i in 0..n {
            let col = &filled[source_of(i + n * j)].1;
            for (k, &o) in col.iter().enumerate() {
                if o {
                    grid.set(i, j, k, true);
                }
            }
        }
    }
    if grid.occupied_count() == 0 {
        return Err(Error::DegenerateMesh("voxelization produced an empty grid".into()));
    }
    Ok(grid)
}

// Closest column (Euclidean in xy) with even parity; ties by lowest (j, i).
fn nearest_consistent(idx: usize, n: usize, ok: impl Fn(usize) -> bool) -> Option<usize> {
    let (ci, cj) = ((idx % n) as i64, (idx / n) as i64);
    let mut best: Option<(i64, i64, i64)> = None;
    for ring in 1..n as i64 {
        if let Some((d2, _, _)) = best {
            if ring * ring > d2 {
                break;
            }
        }
        for dj in -ring..=ring {
            for di in -ring..=ring {
                if di.abs().max(dj.abs()) != ring {
                    continue;
                }
                let (i, j) = (ci + di, cj + dj);
                if i < 0 || j < 0 || i >= n as i64 || j >= n as i64 {
                    continue;
                }
                if !ok((i + n as i64 * j) as usize) {
                    continue;
                }
                let cand = (di * di + dj * dj, j, i);
                if best.is_none_or(|b| cand < b) {
                    best = Some(cand);
                }
            }
        }
    }
    best.map(|(_, j, i)| (i + n as i64 * j) as usize)
}

/// Normalizes a model-space mesh into a `resolution`³ frame and voxelizes it,
/// recording the voxel size and origin in model units.
pub fn voxelize_model(mesh: &TriangleMesh, resolution: usize, padding: usize) -> Result<VoxelGrid> {
    let t = frame_transform(mesh, resolution, padding)?;
    let mut grid = voxelize(&mesh.map_vertices(|p| t.apply(p)), resolution)?;
    grid.voxel_size = t.voxel_size();
    grid.origin = t.origin();
    Ok(grid)
}

/// Occupied voxels with at least one empty (or out-of-grid) 6-neighbor.
pub fn surface_voxels(grid: &VoxelGrid) -> Vec<bool> {
    let [dx, dy, dz] = grid.dims;
    let mut mask = vec![false; grid.occupancy.len()];
    mask.par_chunks_mut(dx * dy).enumerate().for_each(|(z, slab)| {
        for y in 0..dy {
            for x in 0..dx {
                if !grid.get(x, y, z) {
                    continue;
                }
                let exposed = x == 0
                    || y == 0
                    || z == 0
                    || x + 1 == dx
                    || y + 1 == dy
                    || z + 1 == dz
                    || !grid.get(x - 1, y, z)
                    || !grid.get(x + 1, y, z)
                    || !grid.get(x, y - 1, z)
                    || !grid.get(x, y + 1, z)
                    || !grid.get(x, y, z - 1)
                    || !grid.get(x, y, z + 1);
                slab[x + dx * y] = exposed;
            }
        }
    });
    mask
}

/// Empty voxels with at least one occupied 6-neighbor: the outer side of the surface.
pub fn shell_voxels(grid: &VoxelGrid) -> Vec<bool> {
    let [dx, dy, dz] = grid.dims;
    let mut mask = vec![false; grid.occupancy.len()];
    mask.par_chunks_mut(dx * dy).enumerate().for_each(|(z, slab)| {
        for y in 0..dy {
            for x in 0..dx {
                if grid.get(x, y, z) {
                    continue;
                }
                let touches = (x > 0 && grid.get(x - 1, y, z))
                    || (x + 1 < dx && grid.get(x + 1, y, z))
                    || (y > 0 && grid.get(x, y - 1, z))
                    || (y + 1 < dy && grid.get(x, y + 1, z))
                    || (z > 0 && grid.get(x, y, z - 1))
                    || (z + 1 < dz && grid.get(x, y, z + 1));
                slab[x + dx * y] = touches;
            }
        }
    });
    mask
}

const MAGIC: &[u8; 4] = b"VOXG";
pub const VOXG_OCCUPANCY: u8 = 0x01;
pub const VOXG_FLOAT: u8 = 0x02;

fn write_header(out: &mut Vec<u8>, version: u8, dims: [usize; 3], voxel_size: f64, origin: [f64; 3]) {
    out.extend_from_slice(MAGIC);
    out.push(version);
    for d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&(voxel_size as f32).to_le_bytes());
    for o in origin {
        out.extend_from_slice(&(o as f32).to_le_bytes());
    }
}

/// Header fields of a `VOXG` file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxgHeader {
    pub version: u8,
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub origin: [f64; 3],
}

const HEADER_LEN: usize = 4 + 1 + 12 + 4 + 12;

fn read_header(bytes: &[u8]) -> Result<VoxgHeader> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Format("missing VOXG magic".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
    Ok(VoxgHeader {
        version: bytes[4],
        dims: [u32_at(5) as usize, u32_at(9) as usize, u32_at(13) as usize],
        voxel_size: f32_at(17),
        origin: [f32_at(21), f32_at(25), f32_at(29)],
    })
}

/// Serializes an occupancy grid (version byte 0x01).
pub fn write_voxg(grid: &VoxelGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + grid.occupancy.len());
    write_header(&mut out, VOXG_OCCUPANCY, grid.dims, grid.voxel_size, grid.origin);
    out.extend(grid.occupancy.iter().map(|&o| o as u8));
    out
}

pub fn read_voxg(bytes: &[u8]) -> Result<VoxelGrid> {
    let h = read_header(bytes)?;
    if h.version != VOXG_OCCUPANCY {
        return Err(Error::Format(format!("expected occupancy VOXG (0x01), found version {:#04x}", h.version)));
    }
    let n = h.dims[0] * h.dims[1] * h.dims[2];
    let body = &bytes[HEADER_LEN..];
    if body.len() != n {
        return Err(Error::Format(format!("expected {n} occupancy bytes, found {}", body.len())));
    }
    let occupancy = body
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::Format(format!("invalid occupancy byte {other:#04x}"))),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VoxelGrid {
        dims: h.dims,
        occupancy,
        voxel_size: h.voxel_size,
        origin: h.origin,
    })
}

/// Serializes real-valued voxels as 32-bit floats (version byte 0x02).
pub fn write_voxg_field(dims: [usize; 3], values: &[f64], voxel_size: f64, origin: [f64; 3]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * values.len());
    write_header(&mut out, VOXG_FLOAT, dims, voxel_size, origin);
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn read_voxg_field(bytes: &[u8]) -> Result<(VoxgHeader, Vec<f64>)> {
    let h = read_header(bytes)?;
    if h.version != VOXG_FLOAT {
        return Err(Error::Format(format!("expected float VOXG (0x02), found version {:#04x}", h.version)));
    }
    let n = h.dims[0] * h.dims[1] * h.dims[2];
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * n {
        return Err(Error::Format(format!("expected {} float bytes, found {}", 4 * n, body.len())));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok((h, values))
}
