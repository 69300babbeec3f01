//! The full chain from a mesh or voxel grid to descriptors, and from a labeled
//! corpus to a codebook, word histograms and an evaluation report.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::bow::{kmeans, quantize, BowHistogram, Codebook, HistogramIndex, IndexEntry};
use crate::config::{PipelineConfig, SurfaceBand};
use crate::descriptor::{describe_all, Descriptor};
use crate::error::{Error, Result};
use crate::eval::{evaluate_corpus, EvalReport};
use crate::geodesic::OrientationBins;
use crate::keypoints::{assign_normals, detect_extrema, filter_surface, Keypoint};
use crate::mesh::{read_mesh_file, TriangleMesh};
use crate::scale_space::{build_scale_space, ScaleSpace};
use crate::synthetic::CorpusManifest;
use crate::voxel::{shell_voxels, surface_voxels, voxelize_model, VoxelGrid};

#[derive(Debug, Clone)]
pub struct ModelFeatures {
    /// Surface keypoints with normals, before descriptor filtering.
    pub keypoints: Vec<Keypoint>,
    /// One per keypoint whose window was not degenerate, in keypoint order.
    pub descriptors: Vec<Descriptor>,
}

impl ModelFeatures {
    pub fn vectors(&self) -> Vec<Vec<f64>> {
        self.descriptors.iter().map(|d| d.bins.clone()).collect()
    }
}

pub fn scale_space_for(grid: &VoxelGrid, cfg: &PipelineConfig) -> Result<ScaleSpace> {
    build_scale_space(grid, cfg.base_delta, &cfg.k_values, cfg.dog_mode)
}

/// Surface keypoints with normals.
pub fn keypoints_for(grid: &VoxelGrid, space: &ScaleSpace, cfg: &PipelineConfig) -> Result<Vec<Keypoint>> {
    let raw = detect_extrema(space, cfg.extrema_threshold, cfg.extrema_scope)?;
    let mut mask = surface_voxels(grid);
    if cfg.surface_band == SurfaceBand::Both {
        for (m, s) in mask.iter_mut().zip(shell_voxels(grid)) {
            *m |= s;
        }
    }
    let surface = filter_surface(raw, &mask, grid.dims);
    Ok(assign_normals(space, surface))
}

pub fn features_from_grid(grid: &VoxelGrid, cfg: &PipelineConfig) -> Result<ModelFeatures> {
    let space = scale_space_for(grid, cfg)?;
    let keypoints = keypoints_for(grid, &space, cfg)?;
    let bins = OrientationBins::new(cfg.bin_layout()?)?;
    let descriptors = describe_all(&space, &keypoints, &bins, &cfg.descriptor);
    Ok(ModelFeatures { keypoints, descriptors })
}

pub fn features_from_mesh(mesh: &TriangleMesh, cfg: &PipelineConfig) -> Result<ModelFeatures> {
    features_from_grid(&voxelize_model(mesh, cfg.resolution, cfg.padding)?, cfg)
}

/// Features of every manifest entry, in manifest order.
pub fn corpus_features(manifest: &CorpusManifest, cfg: &PipelineConfig) -> Result<Vec<ModelFeatures>> {
    manifest
        .entries
        .par_iter()
        .map(|e| {
            let mesh = read_mesh_file(&e.path)?;
            let f = features_from_mesh(&mesh, cfg).map_err(|err| match err {
                Error::NonWatertight { .. } | Error::DegenerateMesh(_) => {
                    Error::DegenerateMesh(format!("{}: {err}", e.model_id))
                }
                other => other,
            })?;
            log::info!("{}: {} keypoints, {} descriptors", e.model_id, f.keypoints.len(), f.descriptors.len());
            Ok(f)
        })
        .collect()
}

/// Codebook over the pooled descriptors, with k capped at the descriptor count.
pub fn train_codebook(features: &[Vec<Vec<f64>>], cfg: &PipelineConfig) -> Result<Codebook> {
    let pooled: Vec<Vec<f64>> = features.iter().flatten().cloned().collect();
    if pooled.is_empty() {
        return Err(Error::InvalidParameter("no descriptors to train a codebook on".into()));
    }
    let k = cfg.codebook.k.min(pooled.len());
    kmeans(&pooled, k, cfg.codebook.iterations, cfg.codebook.seed)
}

pub fn histograms(ids: &[String], features: &[Vec<Vec<f64>>], codebook: &Codebook, cfg: &PipelineConfig) -> Result<Vec<BowHistogram>> {
    ids.iter()
        .zip(features)
        .map(|(id, f)| quantize(f, codebook, id, cfg.normalization))
        .collect()
}

pub fn build_index(hists: &[BowHistogram], labels: &BTreeMap<String, String>) -> Result<HistogramIndex> {
    hists
        .iter()
        .map(|h| {
            let label = labels.get(&h.model_id).ok_or_else(|| Error::MissingLabel(h.model_id.clone()))?;
            Ok((
                h.model_id.clone(),
                IndexEntry {
                    label: label.clone(),
                    counts: h.counts.clone(),
                    normalization: h.normalization,
                },
            ))
        })
        .collect()
}

pub struct CorpusRun {
    pub codebook: Codebook,
    pub histograms: Vec<BowHistogram>,
    pub report: EvalReport,
    pub descriptor_counts: Vec<usize>,
}

/// Features, codebook, histograms and the leave-one-in evaluation of a manifest.
pub fn evaluate_manifest(manifest: &CorpusManifest, cfg: &PipelineConfig) -> Result<CorpusRun> {
    cfg.validate()?;
    let feats = corpus_features(manifest, cfg)?;
    let vectors: Vec<Vec<Vec<f64>>> = feats.iter().map(ModelFeatures::vectors).collect();
    let codebook = train_codebook(&vectors, cfg)?;
    let ids: Vec<String> = manifest.entries.iter().map(|e| e.model_id.clone()).collect();
    let hists = histograms(&ids, &vectors, &codebook, cfg)?;
    let labels = manifest.labels();
    let method = format!("local-{}x{}-k{}", 8, cfg.n_bins, codebook.k);
    let mut report = evaluate_corpus(&hists, &labels, &method)?;
    report.parameters = serde_json::json!({
        "config": cfg,
        "config_digest": cfg.digest(),
        "codebook_k": codebook.k,
        "codebook_iterations_run": codebook.iterations_run,
        "total_descriptors": vectors.iter().map(Vec::len).sum::<usize>(),
    });
    Ok(CorpusRun {
        descriptor_counts: vectors.iter().map(Vec::len).collect(),
        codebook,
        histograms: hists,
        report,
    })
}
