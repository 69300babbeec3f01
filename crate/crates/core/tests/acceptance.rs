//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints its own line; exits nonzero if any fails.
//!
//! Set `SALIENT3D_BENCH_MANIFEST` to a labeled manifest to also report the four
//! retrieval statistics on that corpus (informational, no threshold).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use salient3d::bow::{kmeans, match_keypoints, squared_distance};
use salient3d::config::PipelineConfig;
use salient3d::eval::{metrics_from_relevance, Statistics};
use salient3d::geodesic::build_geodesic_sphere;
use salient3d::keypoints::{detect_extrema, ExtremaScope, DEFAULT_THRESHOLD};
use salient3d::pipeline::{evaluate_manifest, features_from_grid, features_from_mesh};
use salient3d::rotation::axis_rotations;
use salient3d::scale_space::{
    build_scale_space, default_k_values, gaussian_kernel_1d, smooth, DogMode, ScalarField, DEFAULT_BASE_DELTA,
};
use salient3d::shapes;
use salient3d::synthetic::{generate_corpus, multi_limb_star, star_limbs, CorpusManifest, Family};
use salient3d::voxel::{linear_index, voxelize_model, VoxelGrid};

const RETRIEVAL_CONFIG: &str = include_str!("data/retrieval.toml");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn retrieval_config() -> PipelineConfig {
    PipelineConfig::from_toml(RETRIEVAL_CONFIG).expect("bundled retrieval config parses")
}

fn geodesic_counts() -> Outcome {
    let t = Instant::now();
    let mut got = Vec::new();
    for level in 1..=3 {
        let s = build_geodesic_sphere(level).unwrap();
        got.push((s.vertices.len(), s.triangles.len()));
    }
    let elapsed = t.elapsed();
    let ok = got == [(6, 8), (18, 32), (66, 128)] && elapsed < Duration::from_secs(1);
    outcome(ok, format!("(V, F) = {got:?} in {elapsed:.2?}"))
}

fn random_field(rng: &mut ChaCha8Rng, n: usize) -> ScalarField {
    ScalarField {
        dims: [n; 3],
        values: (0..n * n * n).map(|_| rng.random::<f64>()).collect(),
    }
}

fn convolution_oracle() -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..50 {
        let f = random_field(&mut ChaCha8Rng::seed_from_u64(seed), 8);
        for sigma in [0.8, 1.2, 1.6] {
            let w = gaussian_kernel_1d(sigma).unwrap();
            let r = (w.len() / 2) as i64;
            let fast = smooth(&f, sigma).unwrap();
            for z in 0..8 {
                for y in 0..8 {
                    for x in 0..8 {
                        let mut acc = 0.0;
                        for k in -r..=r {
                            for j in -r..=r {
                                for i in -r..=r {
                                    let v = f.get_or_zero(x as i64 + i, y as i64 + j, z as i64 + k);
                                    acc += w[(i + r) as usize] * w[(j + r) as usize] * w[(k + r) as usize] * v;
                                }
                            }
                        }
                        worst = worst.max((acc - fast.values[linear_index(f.dims, x, y, z)]).abs());
                    }
                }
            }
        }
    }
    let elapsed = t.elapsed();
    outcome(worst < 1e-10 && elapsed < Duration::from_secs(30), format!("max |err| {worst:.2e} in {elapsed:.2?}"))
}

// every DoG level at interior scales, compared against all 80 neighbors
fn brute_extrema(dogs: &[&ScalarField], threshold: f64) -> BTreeSet<([usize; 3], usize)> {
    let d = dogs[0].dims;
    let mut want = BTreeSet::new();
    for s in 1..dogs.len() - 1 {
        for z in 1..d[2] - 1 {
            for y in 1..d[1] - 1 {
                for x in 1..d[0] - 1 {
                    let v = dogs[s].get(x, y, z);
                    if v.abs() < threshold || v == 0.0 {
                        continue;
                    }
                    let mut neighbors = Vec::with_capacity(80);
                    for t in s - 1..=s + 1 {
                        for k in z - 1..=z + 1 {
                            for j in y - 1..=y + 1 {
                                for i in x - 1..=x + 1 {
                                    if (t, i, j, k) != (s, x, y, z) {
                                        neighbors.push(dogs[t].get(i, j, k));
                                    }
                                }
                            }
                        }
                    }
                    assert_eq!(neighbors.len(), 80);
                    if neighbors.iter().all(|&w| v > w) || neighbors.iter().all(|&w| v < w) {
                        want.insert(([x, y, z], s));
                    }
                }
            }
        }
    }
    want
}

fn extrema_oracle() -> Outcome {
    let t = Instant::now();
    let (mut cases, mut mismatched, mut total) = (0, 0, 0);
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let g = VoxelGrid::from_fn([12; 3], |_, _, _| rng.random_bool(0.4));
        for mode in [DogMode::VsBase, DogMode::Adjacent] {
            for delta in [0.5, 0.8, DEFAULT_BASE_DELTA] {
                let ss = build_scale_space(&g, delta, &default_k_values(), mode).unwrap();
                let dogs: Vec<&ScalarField> = ss.dog_levels.iter().map(|d| &d.field).collect();
                for threshold in [0.0, DEFAULT_THRESHOLD] {
                    let got: BTreeSet<([usize; 3], usize)> = detect_extrema(&ss, threshold, ExtremaScope::Adjacent)
                        .unwrap()
                        .iter()
                        .map(|k| (k.position, k.scale_index))
                        .collect();
                    let want = brute_extrema(&dogs, threshold);
                    cases += 1;
                    total += want.len();
                    mismatched += usize::from(got != want);
                }
            }
        }
    }
    let elapsed = t.elapsed();
    outcome(
        mismatched == 0 && total > 0 && elapsed < Duration::from_secs(60),
        format!("{mismatched}/{cases} cases differ (20 grids, 2 DoG modes, 3 base deltas, 2 thresholds), {total} extrema in {elapsed:.2?}"),
    )
}

fn rotation_equivariance() -> Outcome {
    let t = Instant::now();
    let cfg = retrieval_config();
    let mesh = multi_limb_star(&star_limbs(&mut ChaCha8Rng::seed_from_u64(7)));
    let grid = voxelize_model(&mesh, cfg.resolution, cfg.padding).unwrap();
    let base = features_from_grid(&grid, &cfg).unwrap();
    let base_desc: BTreeMap<([usize; 3], usize), &Vec<f64>> = base
        .descriptors
        .iter()
        .map(|d| ((d.keypoint.position, d.keypoint.scale_index), &d.bins))
        .collect();
    let mut keypoint_failures = 0;
    let (mut pairs, mut close) = (0usize, 0usize);
    for r in axis_rotations() {
        let rotated = features_from_grid(&grid.rotated(&r), &cfg).unwrap();
        let want: BTreeSet<([usize; 3], usize)> = base
            .keypoints
            .iter()
            .map(|k| (r.rotate_index(k.position, grid.dims), k.scale_index))
            .collect();
        let got: BTreeSet<([usize; 3], usize)> = rotated.keypoints.iter().map(|k| (k.position, k.scale_index)).collect();
        if got != want || got.len() != base.keypoints.len() {
            keypoint_failures += 1;
            continue;
        }
        let inv = r.inverse();
        let dims = grid.rotated(&r).dims;
        for d in &rotated.descriptors {
            let key = (inv.rotate_index(d.keypoint.position, dims), d.keypoint.scale_index);
            let Some(b) = base_desc.get(&key) else {
                continue;
            };
            pairs += 1;
            let dist = squared_distance(b, &d.bins).sqrt();
            if dist < 1e-6 {
                close += 1;
            } else {
                println!("    rotation {:?}/{:?} keypoint {:?}: L2 {dist:.3e}", r.perm, r.sign, key);
            }
        }
    }
    let elapsed = t.elapsed();
    let frac = close as f64 / pairs.max(1) as f64;
    outcome(
        keypoint_failures == 0 && pairs > 0 && frac >= 0.95 && elapsed < Duration::from_secs(300),
        format!(
            "{} keypoints, {keypoint_failures}/24 rotations broke the correspondence, {close}/{pairs} descriptor pairs within 1e-6 ({:.1}%) in {elapsed:.2?}",
            base.keypoints.len(),
            100.0 * frac
        ),
    )
}

fn kmeans_contract() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let points: Vec<Vec<f64>> = (0..10_000).map(|_| (0..528).map(|_| rng.random::<f64>()).collect()).collect();
    let runs: Vec<_> = [1, 2, 8]
        .into_iter()
        .map(|n| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .unwrap()
                .install(|| kmeans(&points, 50, 20, 11).unwrap())
        })
        .collect();
    let sse = &runs[0].sse_history;
    let monotone = sse.windows(2).all(|w| w[1] <= w[0]);
    let bits = |c: &[Vec<f64>]| c.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
    let identical = runs.iter().all(|r| bits(&r.centroids) == bits(&runs[0].centroids) && r.sse_history == *sse);
    let elapsed = t.elapsed();
    outcome(
        monotone && identical && elapsed < Duration::from_secs(120),
        format!(
            "{} iterations, SSE {:.1} -> {:.1}, nonincreasing {monotone}, identical across 1/2/8 threads {identical} in {elapsed:.2?}",
            runs[0].iterations_run,
            sse.first().copied().unwrap_or(f64::NAN),
            sse.last().copied().unwrap_or(f64::NAN)
        ),
    )
}

// NN, FT, ST and DCG recomputed straight from their definitions
fn reference_metrics(rel: &[bool]) -> [f64; 4] {
    let c = rel.iter().filter(|&&r| r).count();
    let hits = |n: usize| rel.iter().take(n).filter(|&&r| r).count() as f64;
    let dcg: f64 = rel
        .iter()
        .enumerate()
        .filter(|(_, &r)| r)
        .map(|(i, _)| if i == 0 { 1.0 } else { 1.0 / ((i + 1) as f64).log2() })
        .sum();
    let ideal: f64 = 1.0 + (2..=c).map(|i| 1.0 / (i as f64).log2()).sum::<f64>();
    [hits(1), hits(c) / c as f64, hits(2 * c) / c as f64, dcg / ideal]
}

fn as_array(s: &Statistics) -> [f64; 4] {
    [s.nn, s.first_tier, s.second_tier, s.dcg]
}

fn metric_oracles() -> Outcome {
    let example = metrics_from_relevance(&[true, false, true]).unwrap().dcg;
    let perfect = as_array(&metrics_from_relevance(&[true, true, true, false, false, false]).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(2..60);
        let mut rel: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        if !rel.contains(&true) {
            rel[rng.random_range(0..n)] = true;
        }
        let got = as_array(&metrics_from_relevance(&rel).unwrap());
        for (a, b) in got.iter().zip(reference_metrics(&rel)) {
            worst = worst.max((a - b).abs());
        }
    }
    let ok = (example - 0.81546).abs() < 1e-5 && perfect == [1.0; 4] && worst < 1e-12;
    outcome(ok, format!("DCG example {example:.5}, perfect ranking {perfect:?}, oracle max |err| {worst:.1e}"))
}

fn end_to_end_retrieval() -> Outcome {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let cfg = retrieval_config();
    let manifest = generate_corpus(&Family::ALL, 8, 1, dir.path()).unwrap();
    let run = evaluate_manifest(&manifest, &cfg).unwrap();
    let m = &run.report.mean;
    let elapsed = t.elapsed();
    outcome(
        m.nn >= 0.85 && m.first_tier >= 0.5 && elapsed < Duration::from_secs(600),
        format!(
            "NN {:.3} FT {:.3} ST {:.3} DCG {:.3}, k {}, {} descriptors in {elapsed:.2?}",
            m.nn,
            m.first_tier,
            m.second_tier,
            m.dcg,
            run.codebook.k,
            run.descriptor_counts.iter().sum::<usize>()
        ),
    )
}

fn voxelizer_analytic() -> Outcome {
    let sphere = shapes::sphere(5, [0.0; 3], 1.0);
    let g = voxelize_model(&sphere, 64, 4).unwrap();
    let diameter = 2.0 / g.voxel_size;
    let fill = g.occupied_count() as f64 / diameter.powi(3);
    let fill_err = (fill - std::f64::consts::PI / 6.0).abs() / (std::f64::consts::PI / 6.0);

    let cube = shapes::cuboid([-0.7, -0.2, 0.1], [0.3, 0.8, 1.1]);
    let c = voxelize_model(&cube, 32, 3).unwrap();
    let analytic = (1.0 / c.voxel_size).powi(3);
    let cube_err = (c.occupied_count() as f64 - analytic).abs() / analytic;
    outcome(
        fill_err < 0.05 && cube_err < 0.06,
        format!(
            "sphere fill {fill:.4} (rel err {:.2}%), cube {} voxels vs {analytic:.0} (rel err {:.2}%)",
            100.0 * fill_err,
            c.occupied_count(),
            100.0 * cube_err
        ),
    )
}

fn keypoint_matching() -> Outcome {
    // the default 66-bin layout; coarser layouts can produce identical descriptors,
    // which the ratio test rightly rejects as ambiguous
    let cfg = PipelineConfig {
        n_bins: PipelineConfig::default().n_bins,
        ..retrieval_config()
    };
    let mesh = multi_limb_star(&star_limbs(&mut ChaCha8Rng::seed_from_u64(3)));
    let own = features_from_mesh(&mesh, &cfg).unwrap().vectors();
    let distinct: BTreeSet<Vec<u64>> = own.iter().map(|v| v.iter().map(|x| x.to_bits()).collect()).collect();
    let self_matches = match_keypoints(&own, &own, cfg.ratio).unwrap();
    let self_ok = !own.is_empty() && self_matches.len() == own.len() && self_matches.iter().all(|m| m.a == m.b && m.d1 == 0.0);

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut disagreements = 0;
    for _ in 0..50 {
        let dim = rng.random_range(2..12);
        let mut set = |n: usize| -> Vec<Vec<f64>> { (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect() };
        let a = set(20);
        let b = set(25);
        let got: Vec<(usize, usize)> = match_keypoints(&a, &b, 0.8).unwrap().iter().map(|m| (m.a, m.b)).collect();
        let mut want = Vec::new();
        for (i, x) in a.iter().enumerate() {
            let mut d: Vec<(f64, usize)> = b
                .iter()
                .enumerate()
                .map(|(j, y)| (x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt(), j))
                .collect();
            d.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
            if d[1].0 > 0.0 && d[0].0 / d[1].0 < 0.8 {
                want.push((i, d[0].1));
            }
        }
        if got != want {
            disagreements += 1;
        }
    }
    outcome(
        self_ok && disagreements == 0,
        format!(
            "self-match {}/{} zero-distance pairs ({} distinct descriptors), {disagreements}/50 random sets disagree with brute force",
            self_matches.len(),
            own.len(),
            distinct.len()
        ),
    )
}

fn benchmark_report(path: &Path) {
    let manifest = CorpusManifest::read(path).expect("benchmark manifest reads");
    let cfg = retrieval_config();
    let run = evaluate_manifest(&manifest, &cfg).expect("benchmark evaluates");
    let m = &run.report.mean;
    println!(
        "benchmark {} models, {} classes: NN {:.3} FT {:.3} ST {:.3} DCG {:.3} (reference row: NN 0.972 FT 0.658 ST 0.784 DCG 0.921)",
        run.report.n_models,
        run.report.class_sizes.len(),
        m.nn,
        m.first_tier,
        m.second_tier,
        m.dcg
    );
}

fn main() {
    // `cargo test -- --list` and filters pass through here; keep them harmless.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let filter = args.iter().find(|a| !a.starts_with('-'));
    let checks: [(&str, fn() -> Outcome); 9] = [
        ("geodesic_sphere_counts", geodesic_counts),
        ("separable_smoothing_matches_direct_convolution", convolution_oracle),
        ("extrema_match_brute_force", extrema_oracle),
        ("axis_rotation_equivariance", rotation_equivariance),
        ("kmeans_monotone_and_thread_independent", kmeans_contract),
        ("retrieval_metric_oracles", metric_oracles),
        ("synthetic_corpus_retrieval", end_to_end_retrieval),
        ("voxelizer_analytic_volumes", voxelizer_analytic),
        ("ratio_test_matching", keypoint_matching),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        if filter.is_some_and(|f| !name.contains(f.as_str())) {
            continue;
        }
        let o = check();
        println!("[{}] {}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        failed += usize::from(!o.pass);
    }
    if let Some(path) = std::env::var_os("SALIENT3D_BENCH_MANIFEST") {
        benchmark_report(Path::new(&path));
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
