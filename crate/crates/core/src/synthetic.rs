//! Seeded procedural corpus of closed meshes in four shape families, written as
//! OFF files plus a "model_id,class,path" manifest.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Rotation3, Unit, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{parse_err, Error, Result};
use crate::mesh::TriangleMesh;
use crate::rotation::axis_rotations;
use crate::shapes::radial;

/// Limb count of every multi-limb star.
pub const STAR_LIMBS: usize = 5;
const SPHERE_LEVEL: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Ellipsoid,
    BoxWithProtrusions,
    Torus,
    MultiLimbStar,
}

impl Family {
    pub const ALL: [Family; 4] = [Family::Ellipsoid, Family::BoxWithProtrusions, Family::Torus, Family::MultiLimbStar];

    pub fn name(&self) -> &'static str {
        match self {
            Family::Ellipsoid => "ellipsoid",
            Family::BoxWithProtrusions => "box-with-protrusions",
            Family::Torus => "torus",
            Family::MultiLimbStar => "multi-limb-star",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace(['_', ' '], "-");
        Family::ALL
            .into_iter()
            .find(|f| f.name() == key)
            .or(match key.as_str() {
                "box" => Some(Family::BoxWithProtrusions),
                "star" => Some(Family::MultiLimbStar),
                _ => None,
            })
            .ok_or_else(|| Error::InvalidParameter(format!("unsupported shape family {s:?}")))
    }
}

/// A cylindrical limb growing out of the unit body along `direction`, bent by
/// `bend` radians about `bend_axis` beyond the joint.
#[derive(Debug, Clone, PartialEq)]
pub struct Limb {
    pub direction: Vector3<f64>,
    pub length: f64,
    pub thickness: f64,
    pub bend: f64,
    pub bend_axis: Vector3<f64>,
}

/// Radius of the ray `d` through a union of the unit ball and capped cylinders.
fn tube_union_radius(d: &Vector3<f64>, body: f64, limbs: &[(Vector3<f64>, f64, f64)]) -> (f64, Option<usize>) {
    let mut best = (body, None);
    for (i, (u, len, rho)) in limbs.iter().enumerate() {
        let c = d.dot(u);
        if c <= 0.0 {
            continue;
        }
        let s = (1.0 - c * c).max(0.0).sqrt();
        let r = if s < 1e-12 { len / c } else { (len / c).min(rho / s) };
        if r > best.0 {
            best = (r, Some(i));
        }
    }
    best
}

pub fn multi_limb_star(limbs: &[Limb]) -> TriangleMesh {
    let tubes: Vec<_> = limbs.iter().map(|l| (l.direction, l.length, l.thickness)).collect();
    let sphere = radial(SPHERE_LEVEL, [0.0; 3], |d| tube_union_radius(d, 1.0, &tubes).0);
    let owner: Vec<Option<usize>> = crate::geodesic::build_geodesic_sphere(SPHERE_LEVEL)
        .expect("valid level")
        .vertices
        .iter()
        .map(|d| tube_union_radius(d, 1.0, &tubes).1)
        .collect();
    let mut mesh = sphere;
    for (v, own) in mesh.vertices.iter_mut().zip(owner) {
        let Some(i) = own else { continue };
        let limb = &limbs[i];
        let p = Vector3::from(*v);
        let joint = 0.45 * limb.length;
        let ramp = 0.35 * limb.length;
        let t = p.dot(&limb.direction);
        if t <= joint {
            continue;
        }
        // smoothstep ramp of the bend angle past the joint
        let s = ((t - joint) / ramp).min(1.0);
        let angle = limb.bend * s * s * (3.0 - 2.0 * s);
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(limb.bend_axis), angle);
        let j = limb.direction * joint;
        let q = j + rot * (p - j);
        *v = [q.x, q.y, q.z];
    }
    mesh
}

fn jitter(rng: &mut ChaCha8Rng, v: Vector3<f64>, amount: f64) -> Vector3<f64> {
    let n = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    (v + n * amount).normalize()
}

fn perpendicular(rng: &mut ChaCha8Rng, u: &Vector3<f64>) -> Vector3<f64> {
    loop {
        let r = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let p = r - u * r.dot(u);
        if p.norm() > 0.1 {
            return p.normalize();
        }
    }
}

/// Random limbs around a fixed five-limb layout (four limbs and a head).
pub fn star_limbs(rng: &mut ChaCha8Rng) -> Vec<Limb> {
    let layout = [
        Vector3::new(1.0, 0.0, -0.6),
        Vector3::new(-1.0, 0.0, -0.6),
        Vector3::new(0.0, 1.0, 0.5),
        Vector3::new(0.0, -1.0, 0.5),
        Vector3::new(0.0, 0.0, 1.0),
    ];
    layout
        .iter()
        .map(|base| {
            let direction = jitter(rng, base.normalize(), 0.12);
            Limb {
                direction,
                length: rng.random_range(2.2..2.8),
                thickness: rng.random_range(0.38..0.46),
                bend: rng.random_range(-0.8..0.8),
                bend_axis: perpendicular(rng, &direction),
            }
        })
        .collect()
}

fn ellipsoid(rng: &mut ChaCha8Rng) -> TriangleMesh {
    let axes = [1.0, rng.random_range(0.55..0.75), rng.random_range(0.35..0.5)];
    let (k, phase, amp) = (rng.random_range(2..4) as f64, rng.random_range(0.0..6.28), rng.random_range(0.0..0.06));
    radial(SPHERE_LEVEL - 1, [0.0; 3], |d| {
        let r = 1.0 / ((d.x / axes[0]).powi(2) + (d.y / axes[1]).powi(2) + (d.z / axes[2]).powi(2)).sqrt();
        r * (1.0 + amp * (k * d.x + phase).sin())
    })
}

fn box_with_protrusions(rng: &mut ChaCha8Rng) -> TriangleMesh {
    let half = [1.0, rng.random_range(0.6..0.85), rng.random_range(0.4..0.6)];
    // stubs on three of the six faces
    let faces = [
        Vector3::x(),
        -Vector3::x(),
        Vector3::y(),
        -Vector3::y(),
        Vector3::z(),
        -Vector3::z(),
    ];
    let mut chosen: Vec<usize> = Vec::new();
    while chosen.len() < 3 {
        let f = rng.random_range(0..6);
        if !chosen.contains(&f) {
            chosen.push(f);
        }
    }
    let stubs: Vec<(Vector3<f64>, f64, f64)> = chosen
        .iter()
        .map(|&f| {
            let u = jitter(rng, faces[f], 0.05);
            let extent = half[f / 2];
            (u, extent + rng.random_range(0.35..0.6), rng.random_range(0.18..0.26))
        })
        .collect();
    radial(SPHERE_LEVEL, [0.0; 3], |d| {
        let p = 8;
        let body = ((d.x / half[0]).abs().powi(p) + (d.y / half[1]).abs().powi(p) + (d.z / half[2]).abs().powi(p)).powf(-1.0 / p as f64);
        tube_union_radius(d, 0.0, &stubs).0.max(body)
    })
}

fn torus(rng: &mut ChaCha8Rng) -> TriangleMesh {
    let tube = rng.random_range(0.3..0.42);
    let (k, phase, amp) = (rng.random_range(2..5) as f64, rng.random_range(0.0..6.28), rng.random_range(0.05..0.2));
    let (nu, nv) = (96, 32);
    let base = crate::shapes::torus(nu, nv, [0.0; 3], 1.0, tube);
    // tube thickness varies along the ring
    let mut mesh = base;
    for (idx, v) in mesh.vertices.iter_mut().enumerate() {
        let u = std::f64::consts::TAU * (idx / nv) as f64 / nu as f64;
        let center = Vector3::new(u.cos(), u.sin(), 0.0);
        let p = Vector3::from(*v);
        let q = center + (p - center) * (1.0 + amp * (k * u + phase).sin());
        *v = [q.x, q.y, q.z];
    }
    mesh
}

fn random_rotation(rng: &mut ChaCha8Rng) -> nalgebra::Matrix3<f64> {
    if rng.random_bool(0.5) {
        let all = axis_rotations();
        all[rng.random_range(0..all.len())].matrix()
    } else {
        // uniform unit quaternion from three uniforms
        let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let tau = std::f64::consts::TAU;
        let q = nalgebra::Quaternion::new(
            (1.0 - u1).sqrt() * (tau * u2).sin(),
            (1.0 - u1).sqrt() * (tau * u2).cos(),
            u1.sqrt() * (tau * u3).sin(),
            u1.sqrt() * (tau * u3).cos(),
        );
        UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
    }
}

/// One random instance: family-specific deformation, then scale in [0.8, 1.2]
/// and a rotation that is axis-aligned or free with equal probability.
pub fn family_instance(family: Family, rng: &mut ChaCha8Rng) -> TriangleMesh {
    let mesh = match family {
        Family::Ellipsoid => ellipsoid(rng),
        Family::BoxWithProtrusions => box_with_protrusions(rng),
        Family::Torus => torus(rng),
        Family::MultiLimbStar => multi_limb_star(&star_limbs(rng)),
    };
    let scale = rng.random_range(0.8..1.2);
    let rot = random_rotation(rng);
    mesh.map_vertices(|v| {
        let q = rot * Vector3::from(v) * scale;
        [q.x, q.y, q.z]
    })
}

fn instance_rng(seed: u64, class: usize, instance: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((class as u64) << 32) | instance as u64);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub model_id: String,
    pub class: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: Option<u64>,
}

pub const MANIFEST_HEADER: &str = "model_id,class,path";

impl CorpusManifest {
    /// Paths are written as given (relative ones are resolved against the manifest's directory when read).
    pub fn to_csv(&self) -> String {
        let mut out = format!("{MANIFEST_HEADER}\n");
        for e in &self.entries {
            out.push_str(&format!("{},{},{}\n", e.model_id, e.class, e.path.display()));
        }
        out
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == MANIFEST_HEADER => {}
            _ => return Err(Error::Format(format!("manifest must start with \"{MANIFEST_HEADER}\""))),
        }
        let mut entries = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for (i, line) in lines {
            let f: Vec<&str> = line.splitn(3, ',').map(str::trim).collect();
            if f.len() != 3 || f.iter().any(|s| s.is_empty()) {
                return Err(parse_err(i + 1, "expected model_id,class,path"));
            }
            if !seen.insert(f[0].to_string()) {
                return Err(parse_err(i + 1, format!("duplicate model id {}", f[0])));
            }
            let p = PathBuf::from(f[2]);
            entries.push(ManifestEntry {
                model_id: f[0].to_string(),
                class: f[1].to_string(),
                path: if p.is_absolute() { p } else { base_dir.join(p) },
            });
        }
        Ok(Self { entries, seed: None })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn labels(&self) -> std::collections::BTreeMap<String, String> {
        self.entries.iter().map(|e| (e.model_id.clone(), e.class.clone())).collect()
    }
}

/// Meshes of every family, `per_class` each, before anything is written.
pub fn corpus_meshes(families: &[Family], per_class: usize, seed: u64) -> Result<Vec<(String, Family, TriangleMesh)>> {
    if per_class < 2 {
        return Err(Error::InvalidParameter(format!("per_class must be at least 2, got {per_class}")));
    }
    let jobs: Vec<(usize, Family, usize)> = families
        .iter()
        .enumerate()
        .flat_map(|(c, &f)| (0..per_class).map(move |i| (c, f, i)))
        .collect();
    Ok(jobs
        .into_par_iter()
        .map(|(c, f, i)| {
            let mesh = family_instance(f, &mut instance_rng(seed, c, i));
            (format!("{}_{i:03}", f.name()), f, mesh)
        })
        .collect())
}

/// Writes `<model_id>.off` files and `manifest.csv` (paths relative to `out_dir`)
/// into `out_dir`. The returned manifest holds the joined paths.
pub fn generate_corpus(families: &[Family], per_class: usize, seed: u64, out_dir: &Path) -> Result<CorpusManifest> {
    let meshes = corpus_meshes(families, per_class, seed)?;
    std::fs::create_dir_all(out_dir)?;
    meshes
        .par_iter()
        .try_for_each(|(id, _, m)| std::fs::write(out_dir.join(format!("{id}.off")), m.to_off()))?;
    let manifest = CorpusManifest {
        entries: meshes
            .iter()
            .map(|(id, f, _)| ManifestEntry {
                model_id: id.clone(),
                class: f.name().to_string(),
                path: PathBuf::from(format!("{id}.off")),
            })
            .collect(),
        seed: Some(seed),
    };
    std::fs::write(out_dir.join("manifest.csv"), manifest.to_csv())?;
    let mut manifest = manifest;
    for e in &mut manifest.entries {
        e.path = out_dir.join(&e.path);
    }
    Ok(manifest)
}
