//! Declarative run configuration shared by every CLI command.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::consistency::LabelParams;
use crate::decouple::DecoupleConfig;
use crate::eval::EvalConfig;
use crate::nbv::NbvConfig;
use crate::scene::presets::{self, RigSpec, SceneSpec};
use crate::uncertainty::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Built-in scenes, parameterized by the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    PerturbedSphere,
    SingleRegionSphere,
    SpecularSphere,
    SphereWithBump,
}

impl Preset {
    pub fn spec(self, seed: u64) -> SceneSpec {
        match self {
            Self::PerturbedSphere => presets::perturbed_sphere(seed),
            Self::SingleRegionSphere => presets::single_region_sphere(seed),
            Self::SpecularSphere => presets::specular_sphere(seed),
            Self::SphereWithBump => presets::sphere_with_bump(seed),
        }
    }
}

/// Label generation controls. The intersection mode is chosen per stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConsistencyConfig {
    pub patch_size: usize,
    pub k_best: usize,
    pub occlusion: bool,
    pub occlusion_offset: f64,
    pub n_samples: usize,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        let p = LabelParams::default();
        Self { patch_size: p.patch_size, k_best: p.k_best, occlusion: p.occlusion, occlusion_offset: p.occlusion_offset, n_samples: p.n_samples }
    }
}

impl ConsistencyConfig {
    pub fn params(&self) -> LabelParams {
        LabelParams {
            patch_size: self.patch_size,
            k_best: self.k_best,
            occlusion: self.occlusion,
            occlusion_offset: self.occlusion_offset,
            n_samples: self.n_samples,
            ..LabelParams::default()
        }
    }
}

/// The `labels` command's batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelDumpConfig {
    pub rays: usize,
}

impl Default for LabelDumpConfig {
    fn default() -> Self {
        Self { rays: 1024 }
    }
}

/// Variants swept by the `ablate` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateConfig {
    pub patch_sizes: Vec<usize>,
    pub decouple: Vec<bool>,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self { patch_sizes: vec![1, 7, 11, 15], decouple: vec![true, false] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Explicit scene; exclusive with `preset`.
    pub scene: Option<SceneSpec>,
    pub preset: Option<Preset>,
    pub rig: RigSpec,
    pub consistency: ConsistencyConfig,
    pub train: TrainConfig,
    pub decouple: DecoupleConfig,
    pub eval: EvalConfig,
    pub nbv: NbvConfig,
    pub labels: LabelDumpConfig,
    pub ablate: AblateConfig,
    /// Seeds scene generation and label dumps; added to every stage's own seed.
    pub seed: u64,
    pub output: PathBuf,
    /// Worker threads; `None` leaves the choice to the environment.
    pub threads: Option<usize>,
    /// Omit run-dependent metadata such as timings from outputs.
    pub deterministic: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scene: None,
            preset: None,
            rig: RigSpec::default(),
            consistency: ConsistencyConfig::default(),
            train: TrainConfig::default(),
            decouple: DecoupleConfig::default(),
            eval: EvalConfig::default(),
            nbv: NbvConfig::default(),
            labels: LabelDumpConfig::default(),
            ablate: AblateConfig::default(),
            seed: 0,
            output: PathBuf::from("out"),
            threads: None,
            deterministic: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read { path: path.to_path_buf(), reason: e.to_string() })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// The scene to generate, from `scene` or `preset`.
    pub fn scene_spec(&self) -> Result<SceneSpec, ConfigError> {
        match (&self.scene, self.preset) {
            (Some(s), None) => Ok(s.clone()),
            (None, Some(p)) => Ok(p.spec(self.seed)),
            (None, None) => Err(ConfigError::Invalid("no scene: set `scene` or `preset`".into())),
            (Some(_), Some(_)) => Err(ConfigError::Invalid("`scene` and `preset` are mutually exclusive".into())),
        }
    }

    /// Checks everything that does not depend on the scene.
    pub fn validate_common(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.rig.validate().or_else(|e| bad(format!("rig: {e}")))?;
        let c = &self.consistency;
        if c.patch_size == 0 || c.patch_size % 2 == 0 {
            return bad(format!("consistency.patch_size must be odd and >= 1, got {}", c.patch_size));
        }
        if c.k_best == 0 {
            return bad("consistency.k_best must be >= 1".into());
        }
        if c.n_samples < 2 {
            return bad("consistency.n_samples must be >= 2".into());
        }
        if !(c.occlusion_offset >= 0.0) {
            return bad("consistency.occlusion_offset must be >= 0".into());
        }
        self.train.validate().or_else(|e| bad(format!("train: {e}")))?;
        let d = &self.decouple;
        if !(d.lambda > 0.0) || d.lobe_dims < 2 || d.stride == 0 {
            return bad("decouple: lambda must be > 0, lobe_dims >= 2, stride >= 1".into());
        }
        let e = &self.eval;
        if e.point_stride == 0 || e.chamfer_dims < 2 {
            return bad("eval: point_stride must be >= 1 and chamfer_dims >= 2".into());
        }
        if let Some(p) = e.miss_penalty {
            if !(p >= 0.0) {
                return bad("eval.miss_penalty must be >= 0".into());
            }
        }
        self.nbv.validate().or_else(|e| bad(format!("nbv: {e}")))?;
        if self.ablate.patch_sizes.iter().any(|&k| k == 0 || k % 2 == 0) {
            return bad("ablate.patch_sizes must be odd and >= 1".into());
        }
        if self.ablate.patch_sizes.is_empty() || self.ablate.decouple.is_empty() {
            return bad("ablate needs at least one patch size and one decouple setting".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be >= 1".into());
        }
        Ok(())
    }

    /// [`Self::validate_common`] plus the scene.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_common()?;
        self.scene_spec()?.validate().map_err(|e| ConfigError::Invalid(format!("scene: {e}")))
    }
}
