//! Declarative run configuration, read from TOML.
//!
//! Every section has defaults, so an empty file is a valid configuration.
//! Unknown keys are rejected. The configuration hash (SHA-256 of the
//! canonical JSON form) is stamped into every artifact a run writes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gmap::local_side;
use crate::ingest::{parse_annotations, AnnotationFormat, HorizonConfig, IngestError, Scene};
use crate::model::{ModelConfig, TrainConfig};
use crate::pipeline::MapConfig;
use crate::recwin::WindowConfig;
use crate::social::SocialParams;
use crate::synth;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {msg}")]
    Read { path: String, msg: String },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("dataset file missing for scene {scene}: {path}")]
    MissingData { scene: String, path: String },
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory holding `<scene>.txt` annotation files.
    pub dir: PathBuf,
    /// Per-scene file overrides, relative to `dir` unless absolute.
    pub files: BTreeMap<String, PathBuf>,
    pub scenes: Vec<String>,
    /// Generate the scenes instead of reading files.
    pub synthetic: bool,
    /// Generator seed for synthetic scenes.
    pub synthetic_seed: u64,
    /// Window-start stride in frames for sample cutting.
    pub stride: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data"),
            files: BTreeMap::new(),
            scenes: synth::BENCHMARK_SCENES.iter().map(|s| s.to_string()).collect(),
            synthetic: false,
            synthetic_seed: 0,
            stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Scene used for the record-period experiment.
    pub dynamic_scene: String,
    /// Cap on training samples per fold; 0 keeps all.
    pub max_train_samples: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            dynamic_scene: "univ".to_string(),
            max_train_samples: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub horizon: HorizonConfig,
    pub record_window: WindowConfig,
    pub map: MapConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub social: SocialParams,
    pub eval: EvalConfig,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config is always representable")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.horizon.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.record_window.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.social.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.model.t_obs != self.horizon.t_obs || self.model.t_pred != self.horizon.t_pred {
            return bad(format!(
                "model horizon {}+{} differs from horizon {}+{}",
                self.model.t_obs, self.model.t_pred, self.horizon.t_obs, self.horizon.t_pred
            ));
        }
        if !(self.map.resolution > 0.0 && self.map.half_side > 0.0) {
            return bad("map resolution and half_side must be positive".into());
        }
        let side = local_side(self.map.half_side, self.map.resolution);
        if side != self.model.local_side {
            return bad(format!(
                "local map side {side} (2 * {} / {}) differs from model.local_side {}",
                self.map.half_side, self.map.resolution, self.model.local_side
            ));
        }
        if side % 4 != 0 || side == 0 {
            return bad(format!("local map side {side} must be a positive multiple of 4"));
        }
        let m = &self.model;
        if [m.embed_dim, m.hidden_dim, m.feature_dim, m.decoder_hidden_per_step, m.conv1_channels, m.conv2_channels]
            .contains(&0)
        {
            return bad("model dimensions must be positive".into());
        }
        if !(self.train.lr > 0.0) || self.train.epochs == 0 || self.train.chunk_size == 0 {
            return bad("train needs epochs >= 1, lr > 0, chunk_size >= 1".into());
        }
        if self.data.stride == 0 {
            return bad("data.stride must be >= 1".into());
        }
        if self.data.scenes.is_empty() {
            return bad("data.scenes is empty".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded. The output directory
    /// is left out, so the same run written elsewhere keeps its hash.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn scene_path(&self, scene: &str) -> PathBuf {
        match self.data.files.get(scene) {
            Some(p) if p.is_absolute() => p.clone(),
            Some(p) => self.data.dir.join(p),
            None => self.data.dir.join(format!("{scene}.txt")),
        }
    }

    /// Reads (or generates) every configured scene, in configuration order.
    pub fn load_scenes(&self) -> Result<Vec<Scene>, ConfigError> {
        self.data
            .scenes
            .iter()
            .map(|name| {
                if self.data.synthetic {
                    let c = synth::SynthConfig::preset(name, self.data.synthetic_seed)
                        .ok_or_else(|| ConfigError::Invalid(format!("no synthetic preset named {name}")))?;
                    return Ok(synth::generate(&c));
                }
                let path = self.scene_path(name);
                if !path.exists() {
                    return Err(ConfigError::MissingData {
                        scene: name.clone(),
                        path: path.display().to_string(),
                    });
                }
                Ok(parse_annotations(&path, AnnotationFormat::FrameRows)?.with_name(name))
            })
            .collect()
    }
}
