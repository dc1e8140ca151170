//! Run configuration: one flat `key = value` file (TOML syntax) covering
//! dataset synthesis, initialization, rendering, losses, training and meshing.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::loss::LossWeights;
use crate::render::RenderConfig;
use crate::train::{InitConfig, TrainConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SceneKind {
    #[default]
    GlossyPlane,
    UnitSphere,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub scene: SceneKind,
    pub width: usize,
    pub height: usize,
    /// Number of views (glossy plane only; the sphere always uses 12).
    pub views: usize,
    /// Azimuth span of the glossy-plane camera arc in degrees; 360 gives a full ring.
    pub arc_degrees: f64,
    /// Surface samples drawn for the sparse initial point cloud.
    pub init_points: usize,
    /// Samples brighter than this specular term in any view are dropped from
    /// the initial cloud, mimicking feature matching failing on highlights.
    pub init_specular_cutoff: f64,
    /// Dense analytic surface samples used as the Chamfer reference.
    pub reference_points: usize,
    pub synth_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            scene: SceneKind::GlossyPlane,
            width: 64,
            height: 64,
            views: 8,
            arc_degrees: 105.0,
            init_points: 2500,
            init_specular_cutoff: 0.8,
            reference_points: 20_000,
            synth_seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::Config {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if self.width == 0 || self.height == 0 {
            return bad("width", "image size must be positive");
        }
        if self.views < 2 {
            return bad("views", "need at least 2 views");
        }
        if !(self.arc_degrees > 0.0 && self.arc_degrees <= 360.0) {
            return bad("arc_degrees", "must be in (0, 360]");
        }
        if self.init_points == 0 {
            return bad("init_points", "must be positive");
        }
        if self.reference_points == 0 {
            return bad("reference_points", "must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeshConfig {
    /// Voxel size is the largest side of the surface bounding box over this.
    pub voxel_divisions: usize,
    /// TSDF truncation in voxels.
    pub truncation_voxels: f64,
    /// Points sampled from the extracted mesh for evaluation.
    pub mesh_samples: usize,
    pub mesh_seed: u64,
}

impl Default for MeshConfig {
    fn default() -> Self {
        MeshConfig {
            voxel_divisions: 64,
            truncation_voxels: 4.0,
            mesh_samples: 10_000,
            mesh_seed: 0,
        }
    }
}

impl MeshConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, reason: &str| {
            Err(Error::Config {
                key: key.into(),
                reason: reason.into(),
            })
        };
        if self.voxel_divisions < 2 {
            return bad("voxel_divisions", "must be at least 2");
        }
        if !(self.truncation_voxels > 1.0) {
            return bad("truncation_voxels", "truncation must exceed one voxel");
        }
        if self.mesh_samples == 0 {
            return bad("mesh_samples", "must be positive");
        }
        Ok(())
    }
}

/// Every tunable of a run. Keys are flat: the sections only group fields in code.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    #[serde(flatten)]
    pub synth: SynthConfig,
    #[serde(flatten)]
    pub init: InitConfig,
    #[serde(flatten)]
    pub render: RenderConfig,
    #[serde(flatten)]
    pub loss: LossWeights,
    #[serde(flatten)]
    pub train: TrainConfig,
    #[serde(flatten)]
    pub mesh: MeshConfig,
}

impl RunConfig {
    /// Parses config text. Unknown keys and ill-typed values are reported by
    /// key name; omitted keys keep their defaults.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config {
            key: e
                .span()
                .map(|s| text[..s.start].lines().count().max(1))
                .map_or("<syntax>".into(), |l| format!("<line {l}>")),
            reason: e.message().to_string(),
        })?;
        let defaults = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
        for (key, value) in &table {
            if !defaults.contains_key(key) {
                return Err(Error::Config {
                    key: key.clone(),
                    reason: "unknown key".into(),
                });
            }
            let mut probe = defaults.clone();
            probe.insert(key.clone(), value.clone());
            if let Err(e) = probe.try_into::<RunConfig>() {
                return Err(Error::Config {
                    key: key.clone(),
                    reason: e.message().to_string(),
                });
            }
        }
        let cfg: RunConfig =
            toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| Error::Config {
                    key: "<config>".into(),
                    reason: e.message().to_string(),
                })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.render.validate()?;
        self.loss.validate()?;
        self.train.validate()?;
        self.mesh.validate()
    }

    /// The fully resolved config as flat `key = value` lines.
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}
