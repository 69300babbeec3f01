//! Triangle mesh loading (OFF / OBJ) and normalization into the voxel frame.

use std::fmt::Write as _;

use crate::error::{parse_err, Error, Result};

/// Supported ASCII mesh formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Off,
    Obj,
}

impl MeshFormat {
    /// Guess the format from a file extension (case-insensitive).
    pub fn from_path(path: &std::path::Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "off" => Some(MeshFormat::Off),
            "obj" => Some(MeshFormat::Obj),
            _ => None,
        }
    }
}

/// Indexed triangle soup.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Builds a mesh, checking that every index refers to an existing vertex.
    pub fn new(vertices: Vec<[f64; 3]>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i >= n)) {
            return Err(Error::InvalidParameter(format!(
                "triangle {t:?} references a vertex outside [0, {n})"
            )));
        }
        Ok(Self {
            vertices,
            triangles,
        })
    }

    /// Axis-aligned bounding box as (min, max). Panics on an empty vertex list.
    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for v in &self.vertices {
            for a in 0..3 {
                lo[a] = lo[a].min(v[a]);
                hi[a] = hi[a].max(v[a]);
            }
        }
        (lo, hi)
    }

    /// Applies `f` to every vertex, keeping connectivity.
    pub fn map_vertices(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        Self {
            vertices: self.vertices.iter().map(|&v| f(v)).collect(),
            triangles: self.triangles.clone(),
        }
    }

    /// Serializes to ASCII OFF. Coordinates use the shortest round-trip representation.
    pub fn to_off(&self) -> String {
        let mut out = String::new();
        out.push_str("OFF\n");
        let _ = writeln!(out, "{} {} 0", self.vertices.len(), self.triangles.len());
        for v in &self.vertices {
            let _ = writeln!(out, "{} {} {}", v[0], v[1], v[2]);
        }
        for t in &self.triangles {
            let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
        }
        out
    }
}

/// Parses a complete OFF or OBJ file.
pub fn load_mesh(source: &[u8], format: MeshFormat) -> Result<TriangleMesh> {
    let text = std::str::from_utf8(source).map_err(|e| {
        // report the line on which the invalid byte sits
        let line = source[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        parse_err(line, "invalid UTF-8")
    })?;
    match format {
        MeshFormat::Off => parse_off(text),
        MeshFormat::Obj => parse_obj(text),
    }
}

/// Reads and parses a mesh file, inferring the format from its extension.
pub fn read_mesh_file(path: &std::path::Path) -> Result<TriangleMesh> {
    let format = MeshFormat::from_path(path).ok_or_else(|| {
        Error::Format(format!("unrecognized mesh extension: {}", path.display()))
    })?;
    let bytes = std::fs::read(path)?;
    load_mesh(&bytes, format)
}

/// Content lines with comments stripped, paired with their 1-based line numbers.
fn content_lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.split('#').next().unwrap_or("");
        let tokens: Vec<&str> = line.split_whitespace().collect();
        (!tokens.is_empty()).then_some((i + 1, tokens))
    })
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T> {
    tok.parse()
        .map_err(|_| parse_err(line, format!("expected {what}, found {tok:?}")))
}

fn is_off_keyword(tok: &str) -> bool {
    tok.ends_with("OFF") && tok.chars().all(|c| c.is_ascii_alphabetic())
}

fn fan(poly: &[usize], out: &mut Vec<[usize; 3]>) {
    for i in 1..poly.len() - 1 {
        out.push([poly[0], poly[i], poly[i + 1]]);
    }
}

fn parse_off(text: &str) -> Result<TriangleMesh> {
    let mut lines = content_lines(text);
    let (hline, htoks) = lines.next().ok_or_else(|| parse_err(1, "empty file"))?;
    if !is_off_keyword(htoks[0]) {
        return Err(parse_err(hline, format!("missing OFF header, found {:?}", htoks[0])));
    }
    // counts may share the header line ("OFF 8 6 12")
    let (cline, counts): (usize, Vec<&str>) = if htoks.len() > 1 {
        (hline, htoks[1..].to_vec())
    } else {
        lines
            .next()
            .ok_or_else(|| parse_err(hline + 1, "missing counts line"))?
    };
    if counts.len() < 2 {
        return Err(parse_err(cline, "counts line needs at least nV and nF"));
    }
    let nv: usize = parse_num(counts[0], cline, "vertex count")?;
    let nf: usize = parse_num(counts[1], cline, "face count")?;
    if nf == 0 {
        return Err(parse_err(cline, "mesh has no faces"));
    }

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, toks) = lines
            .next()
            .ok_or_else(|| parse_err(text.lines().count() + 1, "unexpected end of vertex list"))?;
        if toks.len() < 3 {
            return Err(parse_err(ln, "vertex line needs three coordinates"));
        }
        let mut p = [0.0; 3];
        for (a, tok) in toks.iter().take(3).enumerate() {
            p[a] = parse_num(tok, ln, "coordinate")?;
        }
        vertices.push(p);
    }

    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, toks) = lines
            .next()
            .ok_or_else(|| parse_err(text.lines().count() + 1, "unexpected end of face list"))?;
        let n: usize = parse_num(toks[0], ln, "face vertex count")?;
        if n < 3 {
            return Err(parse_err(ln, format!("face with {n} vertices")));
        }
        if toks.len() < n + 1 {
            return Err(parse_err(ln, format!("face declares {n} vertices but lists fewer")));
        }
        let mut poly = Vec::with_capacity(n);
        for tok in &toks[1..=n] {
            let idx: usize = parse_num(tok, ln, "vertex index")?;
            if idx >= nv {
                return Err(parse_err(
                    ln,
                    format!("vertex index {idx} out of range (mesh has {nv} vertices)"),
                ));
            }
            poly.push(idx);
        }
        fan(&poly, &mut triangles);
    }
    TriangleMesh::new(vertices, triangles)
}

fn parse_obj(text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (ln, toks) in content_lines(text) {
        match toks[0] {
            "v" => {
                if toks.len() < 4 {
                    return Err(parse_err(ln, "vertex record needs three coordinates"));
                }
                let mut p = [0.0; 3];
                for a in 0..3 {
                    p[a] = parse_num(toks[a + 1], ln, "coordinate")?;
                }
                vertices.push(p);
            }
            "f" => {
                if toks.len() < 4 {
                    return Err(parse_err(ln, "face record needs at least three vertices"));
                }
                let mut poly = Vec::with_capacity(toks.len() - 1);
                for tok in &toks[1..] {
                    let head = tok.split('/').next().unwrap_or("");
                    let raw: i64 = parse_num(head, ln, "vertex index")?;
                    let n = vertices.len() as i64;
                    let idx = match raw {
                        0 => return Err(parse_err(ln, "OBJ indices are 1-based; found 0")),
                        r if r > 0 => r - 1,
                        r => n + r,
                    };
                    if idx < 0 || idx >= n {
                        return Err(parse_err(
                            ln,
                            format!("vertex index {raw} out of range ({n} vertices defined)"),
                        ));
                    }
                    poly.push(idx as usize);
                }
                fan(&poly, &mut triangles);
            }
            // normals, texture coordinates, groups, materials, ...
            _ => {}
        }
    }
    if triangles.is_empty() {
        return Err(parse_err(text.lines().count().max(1), "mesh has no faces"));
    }
    TriangleMesh::new(vertices, triangles)
}

/// Affine map from model units into the voxel frame: `p' = (p - center) * scale + grid_center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameTransform {
    pub center: [f64; 3],
    pub scale: f64,
    pub grid_center: f64,
}

impl FrameTransform {
    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        [
            (p[0] - self.center[0]) * self.scale + self.grid_center,
            (p[1] - self.center[1]) * self.scale + self.grid_center,
            (p[2] - self.center[2]) * self.scale + self.grid_center,
        ]
    }

    /// Model-space position of the voxel frame origin.
    pub fn origin(&self) -> [f64; 3] {
        let inv = 1.0 / self.scale;
        [
            self.center[0] - self.grid_center * inv,
            self.center[1] - self.grid_center * inv,
            self.center[2] - self.grid_center * inv,
        ]
    }

    /// Model units per voxel.
    pub fn voxel_size(&self) -> f64 {
        1.0 / self.scale
    }
}

/// Computes the bounding-box based transform used by [`normalize_mesh`].
pub fn frame_transform(mesh: &TriangleMesh, resolution: usize, padding: usize) -> Result<FrameTransform> {
    if resolution < 8 || padding < 1 || 2 * padding >= resolution {
        return Err(Error::InvalidParameter(format!(
            "need resolution >= 8, padding >= 1 and 2*padding < resolution (got {resolution}, {padding})"
        )));
    }
    if mesh.vertices.is_empty() {
        return Err(Error::DegenerateMesh("no vertices".into()));
    }
    let (lo, hi) = mesh.bounds();
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max);
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::DegenerateMesh(format!("bounding box extent is {extent}")));
    }
    let center = [
        0.5 * (lo[0] + hi[0]),
        0.5 * (lo[1] + hi[1]),
        0.5 * (lo[2] + hi[2]),
    ];
    Ok(FrameTransform {
        center,
        scale: (resolution - 2 * padding) as f64 / extent,
        grid_center: 0.5 * resolution as f64,
    })
}

/// Centers the mesh bounding box in a `resolution`³ grid and scales its longest edge
/// to `resolution - 2 * padding` voxels.
pub fn normalize_mesh(mesh: &TriangleMesh, resolution: usize, padding: usize) -> Result<TriangleMesh> {
    let t = frame_transform(mesh, resolution, padding)?;
    Ok(mesh.map_vertices(|p| t.apply(p)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube() -> TriangleMesh {
        crate::shapes::cuboid([0.0; 3], [1.0; 3])
    }

    #[test]
    fn minimal_off() {
        let m = load_mesh(b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n", MeshFormat::Off).unwrap();
        assert_eq!(m.vertices.len(), 3);
        assert_eq!(m.triangles, vec![[0, 1, 2]]);
    }

    #[test]
    fn off_variants_and_comments() {
        let src = b"COFF # colored\n4 1 0\n0 0 0 255 0 0 255\n1 0 0 1 1 1 1\n1 1 0 0 0 0 0\n\n0 1 0 9 9 9 9\n4 0 1 2 3 200 10 10\n";
        let m = load_mesh(src, MeshFormat::Off).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
        let inline = load_mesh(b"OFF 3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n", MeshFormat::Off).unwrap();
        assert_eq!(inline.triangles.len(), 1);
    }

    #[test]
    fn off_index_out_of_range() {
        let err = load_mesh(b"OFF\n3 1 0\n0 0 0\n1 0 0\n0 1 0\n3 0 1 9\n", MeshFormat::Off).unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 6);
                assert!(message.contains("out of range"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn off_errors_name_lines() {
        let bad_header = load_mesh(b"PLY\n", MeshFormat::Off).unwrap_err();
        assert!(matches!(bad_header, Error::Parse { line: 1, .. }));
        let no_faces = load_mesh(b"OFF\n3 0 0\n0 0 0\n1 0 0\n0 1 0\n", MeshFormat::Off).unwrap_err();
        assert!(matches!(no_faces, Error::Parse { line: 2, .. }));
        let bad_coord = load_mesh(b"OFF\n3 1 0\n0 0 0\n1 x 0\n0 1 0\n3 0 1 2\n", MeshFormat::Off).unwrap_err();
        assert!(matches!(bad_coord, Error::Parse { line: 4, .. }));
    }

    #[test]
    fn obj_tetrahedron() {
        let src = "v 0 0 0\nv 1 0 0\nv 0 1 0\nv 0 0 1\nvn 0 0 1\ng body\nf 1 2 3\nf 1 2 4\nf 1 3 4\nf 2 3 4\n";
        let m = load_mesh(src.as_bytes(), MeshFormat::Obj).unwrap();
        assert_eq!(m.vertices.len(), 4);
        assert_eq!(m.triangles.len(), 4);
        assert_eq!(m.triangles[3], [1, 2, 3]);
    }

    #[test]
    fn obj_negative_indices_and_fans() {
        let src = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf -4/1/1 -3/2/1 -2/3/1 -1/4/1\n";
        let m = load_mesh(src.as_bytes(), MeshFormat::Obj).unwrap();
        assert_eq!(m.triangles, vec![[0, 1, 2], [0, 2, 3]]);
        let err = load_mesh(b"v 0 0 0\nf 1 2 3\n", MeshFormat::Obj).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn normalize_unit_cube() {
        let m = normalize_mesh(&unit_cube(), 64, 4).unwrap();
        let (lo, hi) = m.bounds();
        for a in 0..3 {
            assert!((hi[a] - lo[a] - 56.0).abs() < 1e-12);
            assert!((0.5 * (hi[a] + lo[a]) - 32.0).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_preserves_aspect() {
        let m = normalize_mesh(&crate::shapes::cuboid([0.0; 3], [2.0, 1.0, 1.0]), 64, 4).unwrap();
        let (lo, hi) = m.bounds();
        assert!((hi[0] - lo[0] - 56.0).abs() < 1e-12);
        assert!((hi[1] - lo[1] - 28.0).abs() < 1e-12);
        assert!((hi[2] - lo[2] - 28.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_degenerate_and_bad_params() {
        let point = TriangleMesh::new(vec![[1.0, 2.0, 3.0]; 3], vec![[0, 1, 2]]).unwrap();
        assert!(matches!(normalize_mesh(&point, 64, 4), Err(Error::DegenerateMesh(_))));
        assert!(normalize_mesh(&unit_cube(), 4, 1).is_err());
        assert!(normalize_mesh(&unit_cube(), 16, 8).is_err());
        assert!(normalize_mesh(&unit_cube(), 16, 0).is_err());
    }

    #[test]
    fn off_roundtrip() {
        let m = unit_cube();
        let back = load_mesh(m.to_off().as_bytes(), MeshFormat::Off).unwrap();
        assert_eq!(back, m);
    }
}
