//! Run configuration: one TOML file, every section optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tbooster::connector::{ConnectorConfig, ConnectorTrainConfig};
use tbooster::pipeline::PipelineConfig;
use tbooster::splitter::{SplitterConfig, SplitterTrainConfig};
use tbooster::synth::SynthConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateConfig {
    pub delta_s: Vec<f64>,
    pub delta_c: Vec<f64>,
    pub heads: Vec<usize>,
    /// Connector training iterations per head count.
    pub heads_iterations: u64,
    /// Frames within which a predicted split counts as a hit.
    pub ap_tolerance: usize,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            delta_s: vec![0.5, 0.7, 0.9],
            delta_c: vec![0.5, 0.7, 0.9, 1.1],
            heads: vec![1, 2, 4, 8],
            heads_iterations: 2000,
            ap_tolerance: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub synth: SynthConfig,
    pub splitter: SplitterConfig,
    pub splitter_train: SplitterTrainConfig,
    pub connector: ConnectorConfig,
    pub connector_train: ConnectorTrainConfig,
    pub pipeline: PipelineConfig,
    pub ablate: AblateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("out"),
            synth: SynthConfig::default(),
            splitter: SplitterConfig::default(),
            splitter_train: SplitterTrainConfig::default(),
            connector: ConnectorConfig::default(),
            connector_train: ConnectorTrainConfig::default(),
            pipeline: PipelineConfig::default(),
            ablate: AblateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::file(path, e))?;
        Self::from_toml(&text).map_err(|msg| CliError::Config {
            path: path.to_path_buf(),
            msg,
        })
    }

    /// Training settings with the global seed applied.
    pub fn splitter_train(&self) -> SplitterTrainConfig {
        SplitterTrainConfig {
            seed: self.seed,
            ..self.splitter_train.clone()
        }
    }

    pub fn connector_train(&self) -> ConnectorTrainConfig {
        ConnectorTrainConfig {
            seed: self.seed,
            ..self.connector_train.clone()
        }
    }

    /// Checks every section and the dimensions shared between them.
    pub fn validate(&self) -> CliResult<()> {
        self.synth.validate()?;
        self.splitter.validate()?;
        self.connector.validate()?;
        self.pipeline.validate()?;
        let bad = |m: String| Err(CliError::Usage(m));
        let k = self.synth.features.dim;
        if self.splitter.feature_dim != k || self.connector.feature_dim != k {
            return bad(format!(
                "splitter.feature_dim ({}) and connector.feature_dim ({}) must equal synth.features.dim ({k})",
                self.splitter.feature_dim, self.connector.feature_dim
            ));
        }
        if self.splitter.window != self.pipeline.window || self.synth.window != self.pipeline.window {
            return bad("splitter.window, synth.window and pipeline.window must agree".into());
        }
        let st = &self.splitter_train;
        if st.iterations == 0 || st.batch_size == 0 || !(st.lr > 0.0) || !(0.0..=1.0).contains(&st.positive_fraction) {
            return bad("splitter_train needs iterations ≥ 1, batch_size ≥ 1, lr > 0 and positive_fraction in [0, 1]".into());
        }
        let ct = &self.connector_train;
        if ct.iterations == 0 || ct.p < 2 || ct.s < 1 || ct.max_frames < 1 || !(ct.lr > 0.0) {
            return bad("connector_train needs iterations ≥ 1, p ≥ 2, s ≥ 1, max_frames ≥ 1 and lr > 0".into());
        }
        let a = &self.ablate;
        if a.delta_s.iter().any(|&d| !(d > 0.0 && d < 1.0)) {
            return bad("ablate.delta_s values must lie in (0, 1)".into());
        }
        if a.delta_c.iter().any(|&d| !(d > 0.0 && d <= 2.0)) {
            return bad("ablate.delta_c values must lie in (0, 2]".into());
        }
        if let Some(&h) = a.heads.iter().find(|&&h| h == 0 || self.connector.model_dim % h != 0) {
            return bad(format!(
                "ablate.heads: {h} does not divide connector.model_dim ({})",
                self.connector.model_dim
            ));
        }
        if a.heads_iterations == 0 {
            return bad("ablate.heads_iterations must be positive".into());
        }
        Ok(())
    }
}
