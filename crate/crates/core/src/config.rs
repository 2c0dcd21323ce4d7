//! Run configuration: every pipeline setting in one TOML file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{SplitOptions, SOURCE_FPS};
use crate::nn::{ConvStack, Family, ModelSpec, TrainConfig};
use crate::preprocess::PreprocessConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub fps: u32,
    pub length: usize,
    #[serde(default = "one")]
    pub train_hop: usize,
    #[serde(default = "one")]
    pub eval_hop: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_history_s: Option<f64>,
}

fn one() -> usize {
    1
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { fps: SOURCE_FPS, length: 104, train_hop: 1, eval_hop: 1, max_history_s: None }
    }
}

/// Architecture by family; expands to a [`ModelSpec`] once the input shape
/// is known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    TdDense {
        td_units: Vec<usize>,
        dense_units: Vec<usize>,
    },
    Lstm {
        units: Vec<usize>,
    },
    Conv1d {
        layers: usize,
        filters: usize,
        kernel_size: usize,
        stride: usize,
        padding: crate::nn::Padding,
        #[serde(default)]
        double_filters: bool,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pool_sections: Option<usize>,
    },
}

impl ModelConfig {
    pub fn family(&self) -> Family {
        match self {
            ModelConfig::TdDense { .. } => Family::TdDense,
            ModelConfig::Lstm { .. } => Family::Lstm,
            ModelConfig::Conv1d { .. } => Family::Conv1d,
        }
    }

    pub fn to_spec(&self, input_shape: (usize, usize)) -> Result<ModelSpec> {
        let spec = match self {
            ModelConfig::TdDense { td_units, dense_units } => ModelSpec::td_dense(input_shape, td_units, dense_units),
            ModelConfig::Lstm { units } => ModelSpec::lstm(input_shape, units),
            &ModelConfig::Conv1d { layers, filters, kernel_size, stride, padding, double_filters, pool_sections } => {
                ModelSpec::conv1d(
                    input_shape,
                    &ConvStack { layers, filters, kernel_size, stride, padding, double_filters, pool_sections },
                )
            }
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::TdDense { td_units: vec![32; 4], dense_units: vec![64; 2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ratio")]
    pub split_ratio: f64,
    #[serde(default)]
    pub holdout_workers: Vec<String>,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

fn default_ratio() -> f64 {
    0.8
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            seed: 0,
            split_ratio: default_ratio(),
            holdout_workers: Vec::new(),
            window: WindowConfig::default(),
            preprocess: PreprocessConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML. Unknown keys are rejected with the key named.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.preprocess.validate()?;
        self.train.validate()?;
        if self.window.fps == 0 || SOURCE_FPS % self.window.fps != 0 {
            return Err(Error::NonDivisorRate { source_fps: SOURCE_FPS, target: self.window.fps });
        }
        self.split_options().to_window_params().check()?;
        self.model_spec()?;
        if !(0.0..=1.0).contains(&self.split_ratio) {
            return Err(Error::InvalidConfig(format!("split_ratio {} outside [0, 1]", self.split_ratio)));
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        self.model.to_spec((self.window.length, self.preprocess.feature_len()))
    }

    /// Train settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train }
    }

    pub fn split_options(&self) -> SplitOptions {
        SplitOptions {
            ratio: self.split_ratio,
            holdout_workers: self.holdout_workers.clone(),
            fps: self.window.fps,
            window_len: self.window.length,
            train_hop: self.window.train_hop,
            eval_hop: self.window.eval_hop,
            max_history_s: self.window.max_history_s,
        }
    }
}
