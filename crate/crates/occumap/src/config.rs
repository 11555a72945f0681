//! Experiment configuration: one TOML file drives every CLI command.
//! Unknown keys are rejected; every field has a default; the config hash is
//! computed over the canonical re-serialization, so it is stable under key
//! reordering in the source file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::InterpolatorConfig;
use crate::dataset::{DatasetSpec, TerrainSource};
use crate::error::{Error, Result};
use crate::nn::TrainConfig;
use crate::propagation::PropagationParams;

/// Terrain section: synthesized by default, or loaded from `file`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TerrainConfig {
    pub width: usize,
    pub height: usize,
    pub cell_size_m: f64,
    pub roughness: f64,
    pub seed: u64,
    /// When set, load this ASCII grid instead of synthesizing.
    pub file: Option<PathBuf>,
}

impl Default for TerrainConfig {
    fn default() -> Self {
        TerrainConfig {
            width: 128,
            height: 128,
            cell_size_m: 50.0,
            roughness: 0.13,
            seed: 7,
            file: None,
        }
    }
}

impl TerrainConfig {
    pub fn source(&self) -> TerrainSource {
        match &self.file {
            Some(path) => TerrainSource::File { path: path.clone() },
            None => TerrainSource::Synthesize {
                width: self.width,
                height: self.height,
                cell_size_m: self.cell_size_m,
                roughness: self.roughness,
                seed: self.seed,
            },
        }
    }
}

/// Sweep section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    /// tau | n_sensors | noise | tnr | one_bit
    pub kind: String,
    pub values: Vec<f64>,
    pub eval_seeds: Vec<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            kind: "noise".into(),
            values: vec![-5.0, 0.0, 5.0, 10.0, 15.0],
            eval_seeds: vec![1, 2, 3],
        }
    }
}

/// ROC section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RocConfig {
    pub thetas: Vec<f64>,
}

impl Default for RocConfig {
    fn default() -> Self {
        RocConfig { thetas: (1..10).map(|i| i as f64 / 10.0).collect() }
    }
}

/// Full experiment configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub terrain: TerrainConfig,
    pub propagation: PropagationParams,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub baseline: InterpolatorConfig,
    pub roc: RocConfig,
    /// Test-split size for the `dataset` command and sweeps.
    pub test_maps_per_count: u32,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.propagation.validate()?;
        self.dataset.validate()?;
        self.train.validate()?;
        if self.test_maps_per_count == 0 && self.effective_test_maps() == 0 {
            return Err(Error::Config("test_maps_per_count must be >= 1".into()));
        }
        Ok(())
    }

    pub fn effective_test_maps(&self) -> u32 {
        if self.test_maps_per_count == 0 {
            6
        } else {
            self.test_maps_per_count
        }
    }

    /// Canonical serialized form (struct field order, independent of the
    /// source file's key order).
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("config serialize: {e}")))
    }

    /// SHA-256 over the canonical serialization, hex-encoded.
    pub fn hash(&self) -> Result<String> {
        let canon = self.canonical_toml()?;
        let digest = Sha256::digest(canon.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
