use serde::{Deserialize, Serialize};

use crate::backbone::ModelConfig;
use crate::data::{self, Dataset, Split, SyntheticSpec};
use crate::error::{Error, Result};
use crate::numerics::{AdamWConfig, Scalar};

/// The fixed-hyperparameter supervised regime.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Constant for the whole run.
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Random z rotation of every training sample, fresh each epoch.
    pub augment: bool,
    /// Draw the first FPS anchor at random for training samples.
    pub fps_random_start: bool,
    /// Stop once test accuracy reaches this percentage.
    pub stop_at_oa: Option<f64>,
    /// Parameter-name prefixes whose gradients are zeroed before each update.
    pub freeze: Vec<String>,
    /// Record 0 instead of measured wall time so metric files are
    /// reproducible byte for byte.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamWConfig::default();
        Self {
            lr: 1e-4,
            batch_size: 16,
            epochs: 100,
            seed: 0,
            weight_decay: adam.weight_decay,
            beta1: adam.beta1,
            beta2: adam.beta2,
            eps: adam.eps,
            augment: true,
            fps_random_start: false,
            stop_at_oa: None,
            freeze: Vec::new(),
            deterministic: false,
        }
    }
}

impl TrainConfig {
    pub fn adamw(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be ≥ 1".into()));
        }
        if self.weight_decay < 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("invalid AdamW hyperparameters".into()));
        }
        Ok(())
    }
}

/// Numeric precision of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Where a run's clouds come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// Generated, then split 85/15.
    Synthetic(SyntheticSpec),
    /// CSV manifest; split 85/15 unless a separate test manifest is given.
    Manifest { path: String, test_path: Option<String> },
}

impl DataSource {
    pub const TRAIN_FRACTION: f64 = 0.85;

    /// Loads and splits the data with clouds of `n_points` each.
    pub fn load<T: Scalar>(&self, n_points: usize, seed: u64) -> Result<Split<T>> {
        match self {
            DataSource::Synthetic(spec) => {
                let spec = SyntheticSpec { n_points, ..spec.clone() };
                let ds: Dataset<T> = data::gen_synthetic(&spec)?;
                data::split(&ds, Self::TRAIN_FRACTION, seed)
            }
            DataSource::Manifest { path, test_path: None } => {
                let ds = data::load_manifest(path, n_points, seed)?;
                data::split(&ds, Self::TRAIN_FRACTION, seed)
            }
            DataSource::Manifest {
                path,
                test_path: Some(test),
            } => {
                let train: Dataset<T> = data::load_manifest(path, n_points, seed)?;
                let test: Dataset<T> = data::load_manifest(test, n_points, seed)?;
                if train.class_names != test.class_names {
                    return Err(Error::Config("train and test manifests list different classes".into()));
                }
                Ok(Split { train, test })
            }
        }
    }

    /// Number of classes without loading any cloud.
    pub fn num_classes(&self) -> Result<usize> {
        match self {
            DataSource::Synthetic(spec) => {
                let mut names = spec
                    .classes
                    .iter()
                    .map(|c| data::Shape::parse(c).map(|s| s.name()))
                    .collect::<Result<Vec<_>>>()?;
                names.sort_unstable();
                names.dedup();
                Ok(names.len())
            }
            DataSource::Manifest { path, .. } => Ok(data::read_manifest(path)?.classes.len()),
        }
    }
}

/// Everything that determines a run; stored verbatim in every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataSource,
    pub precision: Precision,
    pub out_dir: String,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }
}
