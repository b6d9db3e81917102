//! Experiment configuration in TOML with `[data]`, `[network]`, `[train]` and
//! `[output]` sections. Every field has a default; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, load_idx, synth_blobs, synth_two_rings, Dataset};
use crate::error::{Error, Result};
use crate::mapping::MappingKind;
use crate::metrics::OpsModel;
use crate::network::{LayerSpec, NetworkSpec};
use crate::train::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataKind {
    Blobs,
    Rings,
    Idx,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub kind: DataKind,
    /// Sample count for synthetic data.
    pub samples: usize,
    /// Class count for blobs.
    pub classes: usize,
    /// IDX image file.
    pub images: Option<PathBuf>,
    /// IDX label file.
    pub labels: Option<PathBuf>,
    /// CSV file, label in the last column.
    pub path: Option<PathBuf>,
    pub has_header: bool,
    /// Keep only the first `limit` samples after loading.
    pub limit: Option<usize>,
    pub train_fraction: f32,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            kind: DataKind::Blobs,
            samples: 500,
            classes: 3,
            images: None,
            labels: None,
            path: None,
            has_header: true,
            limit: None,
            train_fraction: 0.8,
        }
    }
}

/// Seed offsets keep data generation, splitting and initialization on
/// separate streams derived from the one experiment seed.
pub const DATA_STREAM: u64 = 0xda7a;
pub const SPLIT_STREAM: u64 = 0x5b117;
pub const INIT_STREAM: u64 = 0x1417;

impl DataConfig {
    /// Loads or generates the dataset. Relative paths resolve against `base`.
    pub fn load(&self, seed: u64, base: &Path) -> Result<Dataset> {
        let resolve = |p: &Option<PathBuf>, what: &str| -> Result<PathBuf> {
            let p = p
                .as_ref()
                .ok_or_else(|| Error::Config(format!("data.{what} is required for kind {:?}", self.kind)))?;
            Ok(if p.is_absolute() { p.clone() } else { base.join(p) })
        };
        let ds = match self.kind {
            DataKind::Blobs => synth_blobs(self.samples, self.classes, seed ^ DATA_STREAM)?,
            DataKind::Rings => synth_two_rings(self.samples, seed ^ DATA_STREAM)?,
            DataKind::Idx => load_idx(resolve(&self.images, "images")?, resolve(&self.labels, "labels")?)?,
            DataKind::Csv => load_csv(resolve(&self.path, "path")?, self.has_header)?,
        };
        match self.limit {
            Some(n) => ds.head(n),
            None => Ok(ds),
        }
    }

    /// Loads and splits into train and held-out sets.
    pub fn load_split(&self, seed: u64, base: &Path) -> Result<(Dataset, Dataset)> {
        self.load(seed, base)?.split(self.train_fraction, seed ^ SPLIT_STREAM)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub write_csv: bool,
    pub write_json: bool,
    pub eval_batch_size: usize,
    pub energy: OpsModel,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("runs/default"),
            write_csv: true,
            write_json: true,
            eval_batch_size: 128,
            energy: OpsModel::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub data: DataConfig,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub output: OutputConfig,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            input: vec![2],
            time_steps: 4,
            mapping: MappingKind::Stsu,
            layers: vec![LayerSpec::Fc { out: 32 }, LayerSpec::Fc { out: 3 }],
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.output.energy.validate()?;
        if self.output.eval_batch_size == 0 {
            return Err(Error::Config("output.eval_batch_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.data.train_fraction) {
            return Err(Error::Config("data.train_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }
}
