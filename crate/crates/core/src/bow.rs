//! Visual-word codebook (seeded k-means), per-model word histograms, histogram
//! distance and ratio-test keypoint matching.
//!
//! Everything here is deterministic for a given seed regardless of the rayon
//! thread count: parallel steps only compute per-point values, and every
//! reduction runs sequentially in ascending point index.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{parse_err, Error, Result};

pub const DEFAULT_CODEBOOK_SIZE: usize = 3000;
pub const DEFAULT_ITERATIONS: usize = 20;
pub const DEFAULT_RATIO: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub centroids: Vec<Vec<f64>>,
    pub k: usize,
    pub dim: usize,
    pub seed: u64,
    pub iterations_run: usize,
    /// Within-cluster sum of squares after each assignment step.
    pub sse_history: Vec<f64>,
}

/// Squared Euclidean distance with a fixed four-lane accumulation order.
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += (x - y) * (x - y);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Index of the nearest centroid (lowest index on ties) and its squared distance.
pub fn nearest_centroid(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn check_dims(features: &[Vec<f64>]) -> Result<usize> {
    let dim = features.first().map_or(0, Vec::len);
    if let Some(i) = features.iter().position(|f| f.len() != dim) {
        return Err(Error::DimensionMismatch(format!(
            "feature {i} has dimension {}, expected {dim}",
            features[i].len()
        )));
    }
    Ok(dim)
}

fn kmeans_pp(features: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = features.len();
    let mut chosen = vec![false; n];
    let first = rng.random_range(0..n);
    chosen[first] = true;
    let mut centroids = vec![features[first].clone()];
    let mut d2: Vec<f64> = features.par_iter().map(|f| squared_distance(f, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let r = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                acc += d;
                if d > 0.0 && acc > r {
                    pick = Some(i);
                    break;
                }
            }
            // rounding can leave r just above the final partial sum
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).expect("positive total"))
        } else {
            // fewer distinct points than k
            (0..n).find(|&i| !chosen[i]).expect("k <= n")
        };
        chosen[pick] = true;
        let c = features[pick].clone();
        d2.par_iter_mut()
            .zip(features.par_iter())
            .for_each(|(d, f)| *d = d.min(squared_distance(f, &c)));
        centroids.push(c);
    }
    centroids
}

/// Seeded k-means++ followed by at most `iterations` Lloyd updates, stopping
/// early once no assignment changes. Run inside a rayon pool to bound threads.
pub fn kmeans(features: &[Vec<f64>], k: usize, iterations: usize, seed: u64) -> Result<Codebook> {
    let n = features.len();
    if n == 0 {
        return Err(Error::InvalidParameter("no features to cluster".into()));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("k = {k} must be in 1..={n}")));
    }
    if iterations == 0 {
        return Err(Error::InvalidParameter("iterations must be positive".into()));
    }
    let dim = check_dims(features)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_pp(features, k, &mut rng);

    let mut assignment: Vec<usize> = vec![usize::MAX; n];
    let mut sse_history: Vec<f64> = Vec::with_capacity(iterations + 1);
    let mut iterations_run = 0;
    loop {
        let nearest: Vec<(usize, f64)> = features.par_iter().map(|f| nearest_centroid(f, &centroids)).collect();
        let sse: f64 = nearest.iter().map(|p| p.1).sum();
        if let Some(&prev) = sse_history.last() {
            assert!(sse <= prev + 1e-9 * prev.abs().max(1.0), "k-means SSE rose from {prev} to {sse}");
        }
        sse_history.push(sse);
        let changed = nearest.iter().zip(&assignment).any(|(p, &a)| p.0 != a);
        if !changed || iterations_run == iterations {
            break;
        }
        for (a, p) in assignment.iter_mut().zip(&nearest) {
            *a = p.0;
        }

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (f, &a) in features.iter().zip(&assignment) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(f) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                let inv = counts[j] as f64;
                centroids[j] = sums[j].iter().map(|s| s / inv).collect();
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            // move the worst-fitting point of a multi-point cluster into cluster j
            let far: Vec<f64> = features
                .par_iter()
                .zip(assignment.par_iter())
                .map(|(f, &a)| if counts[a] > 1 { squared_distance(f, &centroids[a]) } else { -1.0 })
                .collect();
            let mut best = None;
            for (i, &d) in far.iter().enumerate() {
                if d >= 0.0 && best.is_none_or(|(_, bd)| d > bd) {
                    best = Some((i, d));
                }
            }
            let Some((p, _)) = best else { break };
            log::debug!("k-means: re-seeding empty cluster {j} from point {p}");
            counts[assignment[p]] -= 1;
            counts[j] = 1;
            assignment[p] = j;
            centroids[j] = features[p].clone();
        }
        iterations_run += 1;
    }

    Ok(Codebook {
        centroids,
        k,
        dim,
        seed,
        iterations_run,
        sse_history,
    })
}

impl Codebook {
    /// First line "k,D,seed,iterations" (values), then one centroid per line.
    /// Values use the shortest representation that parses back exactly.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{},{},{},{}\n", self.k, self.dim, self.seed, self.iterations_run);
        for c in &self.centroids {
            for (i, v) in c.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, head) = lines.next().ok_or_else(|| Error::Format("empty codebook file".into()))?;
        let h: Vec<&str> = head.split(',').map(str::trim).collect();
        if h.len() != 4 {
            return Err(parse_err(1, "expected k,D,seed,iterations"));
        }
        let num = |s: &str| s.parse::<u64>().map_err(|_| parse_err(1, format!("bad integer {s:?}")));
        let (k, dim, seed, iterations_run) = (num(h[0])? as usize, num(h[1])? as usize, num(h[2])?, num(h[3])? as usize);
        let mut centroids = Vec::with_capacity(k);
        for (i, line) in lines {
            let row = line
                .split(',')
                .map(|s| s.trim().parse::<f64>().map_err(|_| parse_err(i + 1, format!("bad number {s:?}"))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != dim {
                return Err(parse_err(i + 1, format!("expected {dim} values, found {}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(i + 1, "non-finite centroid value"));
            }
            centroids.push(row);
        }
        if centroids.len() != k {
            return Err(Error::Format(format!("header says k = {k}, found {} rows", centroids.len())));
        }
        Ok(Self {
            centroids,
            k,
            dim,
            seed,
            iterations_run,
            sse_history: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    Raw,
    #[default]
    #[serde(alias = "L1")]
    L1,
}

impl Normalization {
    pub fn as_str(&self) -> &'static str {
        match self {
            Normalization::Raw => "raw",
            Normalization::L1 => "l1",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BowHistogram {
    pub model_id: String,
    pub counts: Vec<f64>,
    pub normalization: Normalization,
    /// Set when the model had no descriptors; the histogram is all zeros.
    pub empty: bool,
}

/// Word histogram of one model.
pub fn quantize(descriptors: &[Vec<f64>], codebook: &Codebook, model_id: &str, normalization: Normalization) -> Result<BowHistogram> {
    if let Some(d) = descriptors.iter().find(|d| d.len() != codebook.dim) {
        return Err(Error::DimensionMismatch(format!(
            "descriptor dimension {} does not match codebook dimension {}",
            d.len(),
            codebook.dim
        )));
    }
    let words: Vec<usize> = descriptors.par_iter().map(|d| nearest_centroid(d, &codebook.centroids).0).collect();
    let mut counts = vec![0.0; codebook.k];
    for w in words {
        counts[w] += 1.0;
    }
    let empty = descriptors.is_empty();
    if empty {
        log::warn!("model {model_id} has no descriptors; histogram is all zeros");
    } else if normalization == Normalization::L1 {
        let n = descriptors.len() as f64;
        for c in &mut counts {
            *c /= n;
        }
    }
    Ok(BowHistogram {
        model_id: model_id.to_string(),
        counts,
        normalization,
        empty,
    })
}

pub fn histogram_distance(a: &BowHistogram, b: &BowHistogram) -> Result<f64> {
    if a.counts.len() != b.counts.len() {
        return Err(Error::DimensionMismatch(format!(
            "histogram lengths differ: {} vs {}",
            a.counts.len(),
            b.counts.len()
        )));
    }
    if a.normalization != b.normalization {
        return Err(Error::InvalidParameter(format!(
            "normalization differs: {} vs {}",
            a.normalization.as_str(),
            b.normalization.as_str()
        )));
    }
    Ok(a.counts.iter().zip(&b.counts).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointMatch {
    pub a: usize,
    pub b: usize,
    pub d1: f64,
    pub d2: f64,
}

/// Nearest neighbor in `b` for every descriptor of `a`, kept when d1/d2 < ratio.
pub fn match_keypoints(a: &[Vec<f64>], b: &[Vec<f64>], ratio: f64) -> Result<Vec<KeypointMatch>> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::InvalidParameter(format!("ratio must be in (0, 1], got {ratio}")));
    }
    if a.is_empty() {
        return Err(Error::InvalidParameter("first descriptor set is empty".into()));
    }
    if b.len() < 2 {
        return Err(Error::InvalidParameter("ratio test needs at least two descriptors in the second set".into()));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|d| d.len() != dim) {
        return Err(Error::DimensionMismatch("descriptor sets have mixed dimensions".into()));
    }
    let out = a
        .par_iter()
        .enumerate()
        .filter_map(|(i, x)| {
            let (mut first, mut second) = ((usize::MAX, f64::INFINITY), f64::INFINITY);
            for (j, y) in b.iter().enumerate() {
                let d = squared_distance(x, y);
                if d < first.1 {
                    second = first.1;
                    first = (j, d);
                } else if d < second {
                    second = d;
                }
            }
            let (d1, d2) = (first.1.sqrt(), second.sqrt());
            (d2 > 0.0 && d1 / d2 < ratio).then_some(KeypointMatch { a: i, b: first.0, d1, d2 })
        })
        .collect();
    Ok(out)
}

pub fn matches_to_csv(matches: &[KeypointMatch]) -> String {
    let mut out = String::from("ai,bi,d1,d2\n");
    for m in matches {
        let _ = writeln!(out, "{},{},{},{}", m.a, m.b, crate::sig9(m.d1), crate::sig9(m.d2));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub label: String,
    pub counts: Vec<f64>,
    pub normalization: Normalization,
}

/// Saved histograms keyed by model id.
pub type HistogramIndex = BTreeMap<String, IndexEntry>;

pub fn index_entry_histogram(model_id: &str, e: &IndexEntry) -> BowHistogram {
    BowHistogram {
        model_id: model_id.to_string(),
        counts: e.counts.clone(),
        normalization: e.normalization,
        empty: e.counts.iter().all(|&c| c == 0.0),
    }
}
