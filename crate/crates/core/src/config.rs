//! Pipeline parameters, read from TOML. Unknown keys are rejected and every
//! field is range-checked.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bow::{Normalization, DEFAULT_CODEBOOK_SIZE, DEFAULT_ITERATIONS, DEFAULT_RATIO};
use crate::descriptor::DescriptorOptions;
use crate::error::{Error, Result};
use crate::geodesic::BinLayout;
use crate::keypoints::{ExtremaScope, DEFAULT_THRESHOLD};
use crate::scale_space::{default_k_values, DogMode, DEFAULT_BASE_DELTA};

/// Which voxels count as lying on the surface when filtering keypoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SurfaceBand {
    /// Occupied voxels with an empty 6-neighbor.
    #[default]
    Inner,
    /// Those plus the empty voxels with an occupied 6-neighbor.
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodebookConfig {
    /// Upper bound on the codebook size; the feature count caps it further.
    pub k: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self {
            k: DEFAULT_CODEBOOK_SIZE,
            iterations: DEFAULT_ITERATIONS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub resolution: usize,
    pub padding: usize,
    pub base_delta: f64,
    pub k_values: Vec<f64>,
    pub dog_mode: DogMode,
    pub extrema_threshold: f64,
    pub extrema_scope: ExtremaScope,
    pub surface_band: SurfaceBand,
    /// Orientation bins per subblock: 6, 18, 66, 258, 1026 or 4098 sphere vertices, or 32 / 128 face centers.
    pub n_bins: usize,
    pub descriptor: DescriptorOptions,
    pub codebook: CodebookConfig,
    pub normalization: Normalization,
    pub ratio: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            resolution: 64,
            padding: 4,
            base_delta: DEFAULT_BASE_DELTA,
            k_values: default_k_values(),
            dog_mode: DogMode::VsBase,
            extrema_threshold: DEFAULT_THRESHOLD,
            extrema_scope: ExtremaScope::Adjacent,
            surface_band: SurfaceBand::Inner,
            n_bins: 66,
            descriptor: DescriptorOptions::default(),
            codebook: CodebookConfig::default(),
            normalization: Normalization::L1,
            ratio: DEFAULT_RATIO,
        }
    }
}

fn bad(msg: String) -> Error {
    Error::Config(msg)
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| bad(e.to_string().trim().replace('\n', " ")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical TOML form.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn bin_layout(&self) -> Result<BinLayout> {
        BinLayout::for_bin_count(self.n_bins).map_err(|e| bad(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(8..=1024).contains(&self.resolution) {
            return Err(bad(format!("resolution must be in 8..=1024, got {}", self.resolution)));
        }
        if self.padding < 1 || 2 * self.padding >= self.resolution {
            return Err(bad(format!("padding must be ≥ 1 and below resolution/2, got {}", self.padding)));
        }
        if !(self.base_delta.is_finite() && self.base_delta > 0.0) {
            return Err(bad(format!("base_delta must be positive, got {}", self.base_delta)));
        }
        let needed = match self.dog_mode {
            DogMode::VsBase => 3,
            DogMode::Adjacent => 4,
        };
        if self.k_values.len() < needed {
            return Err(bad(format!("k_values needs at least {needed} entries for three DoG levels")));
        }
        if self.k_values[0] <= 0.0 || self.k_values.iter().any(|k| !k.is_finite()) || self.k_values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(bad("k_values must be positive, finite and strictly increasing".into()));
        }
        if !(self.extrema_threshold.is_finite() && self.extrema_threshold >= 0.0) {
            return Err(bad(format!("extrema_threshold must be ≥ 0, got {}", self.extrema_threshold)));
        }
        self.bin_layout()?;
        if !(self.descriptor.clamp > 0.0 && self.descriptor.clamp <= 1.0) {
            return Err(bad(format!("descriptor.clamp must be in (0, 1], got {}", self.descriptor.clamp)));
        }
        if self.codebook.k == 0 || self.codebook.iterations == 0 {
            return Err(bad("codebook.k and codebook.iterations must be positive".into()));
        }
        if !(self.ratio > 0.0 && self.ratio <= 1.0) {
            return Err(bad(format!("ratio must be in (0, 1], got {}", self.ratio)));
        }
        Ok(())
    }
}
