//! Experiment configuration file (TOML), the experiment manifest with
//! per-stage completion status, and the single-process lock.
//!
//! One experiment = one config file = one directory under the artifact
//! root. The effective config is snapshotted into the experiment directory
//! on first use and must not change afterwards; stages record their
//! completion in `manifest.json` so re-invocations skip finished work.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::synth::{gen_glyph_single_label, gen_shapes_depth, gen_shapes_l2i, ShapesSceneSpec};
use crate::trainer::TrainConfig;
use crate::{Error, Result};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

/// Environment variable overriding the artifact root directory.
pub const ARTIFACT_ROOT_ENV: &str = "CONTRARIO_ARTIFACTS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSection {
    pub id: String,
    #[serde(default)]
    pub artifact_root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataSection {
    /// One of `shapes-l2i`, `shapes-depth`, `glyphs`.
    pub generator: String,
    pub image_size: usize,
    pub n_classes: usize,
    pub train: usize,
    pub val: usize,
    pub seed: u64,
    pub jitter_amp: f32,
    pub noise_std: f32,
    pub shapes_min: usize,
    pub shapes_max: usize,
    pub depth_max: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let s = ShapesSceneSpec::desk_default(1234);
        Self {
            generator: "shapes-l2i".into(),
            image_size: s.image_size,
            n_classes: s.n_classes,
            train: 2000,
            val: 500,
            seed: s.seed,
            jitter_amp: s.jitter_amp,
            noise_std: s.noise_std,
            shapes_min: s.shapes_min,
            shapes_max: s.shapes_max,
            depth_max: s.depth_max,
        }
    }
}

impl DataSection {
    pub fn scene_spec(&self) -> ShapesSceneSpec {
        ShapesSceneSpec {
            image_size: self.image_size,
            n_classes: self.n_classes,
            shapes_min: self.shapes_min,
            shapes_max: self.shapes_max,
            jitter_amp: self.jitter_amp,
            noise_std: self.noise_std,
            depth_max: self.depth_max,
            seed: self.seed,
        }
    }

    pub fn generate(&self) -> Result<Dataset> {
        match self.generator.as_str() {
            "shapes-l2i" => gen_shapes_l2i(&self.scene_spec(), self.train, self.val),
            "shapes-depth" => gen_shapes_depth(&self.scene_spec(), self.train, self.val),
            "glyphs" => gen_glyph_single_label(
                self.n_classes,
                self.image_size,
                self.train,
                self.val,
                self.seed,
            ),
            other => Err(Error::InvalidConfig(format!("unknown dataset generator '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeSection {
    /// Number of validation samples to probe.
    pub n: usize,
    pub bins: usize,
    /// Raw-score classification threshold.
    pub threshold: f64,
    /// Fine-tune the discriminator to optimality before probing.
    pub optimal: bool,
    /// Checkpoint epoch to probe; defaults to the final epoch.
    pub at_epoch: Option<usize>,
    pub extra_epochs: usize,
    /// Reproduce training-time behaviour (dropout + batch statistics).
    pub train_mode: bool,
    /// Constant-condition boundary probes: `uniform:<k>` or `empty`.
    pub constant_probes: Vec<String>,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self {
            n: 500,
            bins: 100,
            threshold: 0.0,
            optimal: true,
            at_epoch: None,
            extra_epochs: 1,
            train_mode: false,
            constant_probes: vec!["uniform:1".into(), "empty".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    /// Task-appropriate conditional quality metrics (mIoU or depth errors).
    pub quality: bool,
    pub label_acc: bool,
    pub ndb: bool,
    pub ndb_k: usize,
    pub ndb_alpha: f64,
    pub ndb_patch: usize,
    /// Validation samples used for NDB features.
    pub ndb_samples: usize,
    pub seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            quality: true,
            label_acc: false,
            ndb: false,
            ndb_k: 10,
            ndb_alpha: 0.05,
            ndb_patch: 16,
            ndb_samples: 200,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub probe: ProbeSection,
    #[serde(default)]
    pub eval: EvalSection,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig =
            toml::from_str(&text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if cfg.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported config schema version {}",
                cfg.schema_version
            )));
        }
        if cfg.experiment.id.is_empty()
            || cfg.experiment.id.contains(['/', '\\'])
            || cfg.experiment.id.starts_with('.')
        {
            return Err(Error::InvalidConfig("experiment id must be a plain directory name".into()));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Artifact root precedence: CLI flag (handled by the caller) >
    /// `CONTRARIO_ARTIFACTS` > config > `./artifacts`.
    pub fn artifact_root(&self, cli_root: Option<&Path>) -> PathBuf {
        if let Some(p) = cli_root {
            return p.to_path_buf();
        }
        if let Ok(env_root) = std::env::var(ARTIFACT_ROOT_ENV) {
            if !env_root.is_empty() {
                return PathBuf::from(env_root);
            }
        }
        self.experiment
            .artifact_root
            .clone()
            .unwrap_or_else(|| PathBuf::from("artifacts"))
    }

    pub fn experiment_dir(&self, cli_root: Option<&Path>) -> PathBuf {
        self.artifact_root(cli_root).join(&self.experiment.id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Complete,
    Incomplete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub status: StageStatus,
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub schema_version: u32,
    pub experiment_id: String,
    pub stages: BTreeMap<String, StageRecord>,
}

impl ExperimentManifest {
    pub fn new(experiment_id: &str) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            experiment_id: experiment_id.to_string(),
            stages: BTreeMap::new(),
        }
    }

    pub fn path(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    pub fn load_or_new(dir: &Path, experiment_id: &str) -> Result<Self> {
        let path = Self::path(dir);
        if !path.exists() {
            return Ok(Self::new(experiment_id));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Self = serde_json::from_str(&text).map_err(|e| Error::Serde(e.to_string()))?;
        if m.experiment_id != experiment_id {
            return Err(Error::InvalidConfig(format!(
                "manifest belongs to experiment '{}', config says '{}'",
                m.experiment_id, experiment_id
            )));
        }
        Ok(m)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = Self::path(dir);
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))?;
        fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }

    pub fn is_complete(&self, stage: &str) -> bool {
        self.stages.get(stage).map_or(false, |s| s.status == StageStatus::Complete)
    }

    pub fn mark(&mut self, stage: &str, status: StageStatus, artifacts: Vec<String>) {
        self.stages.insert(stage.to_string(), StageRecord { status, artifacts });
    }
}

/// Write the effective config snapshot on first use; later invocations must
/// match it byte-for-byte (the config is immutable after creation).
pub fn ensure_config_snapshot(dir: &Path, cfg: &ExperimentConfig) -> Result<()> {
    let path = dir.join("config.snapshot.toml");
    let current = cfg.to_toml()?;
    if path.exists() {
        let existing = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        if existing != current {
            return Err(Error::InvalidConfig(format!(
                "config differs from the snapshot at {}; start a new experiment id instead of mutating this one",
                path.display()
            )));
        }
        return Ok(());
    }
    fs::write(&path, current).map_err(|e| Error::io(&path, e))
}

/// Exclusive experiment lock; the file holds the owner PID and is removed on
/// drop.
pub struct ExperimentLock {
    path: PathBuf,
}

impl ExperimentLock {
    pub fn acquire(dir: &Path, experiment_id: &str) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                use std::io::Write;
                let _ = write!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(Error::Locked(experiment_id.to_string(), path))
            }
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for ExperimentLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
