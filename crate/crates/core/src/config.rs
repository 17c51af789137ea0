//! Run configuration: one TOML file drives the whole pipeline, every
//! field has a desk-scale default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::student::{RayEncoder, StudentShape};
use crate::teacher::NerfConfig;
use crate::volume::SampleMode;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Path to a scene TOML; the built-in blob scene when empty.
    pub scene: Option<String>,
    pub train_views: usize,
    pub test_views: usize,
    pub teacher: TeacherSection,
    pub distill: DistillSection,
    pub student: StudentSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scene: None,
            train_views: 40,
            test_views: 10,
            teacher: TeacherSection::default(),
            distill: DistillSection::default(),
            student: StudentSection::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherSection {
    pub width: usize,
    pub trunk_depth: usize,
    pub skip_layer: usize,
    pub pos_octaves: usize,
    pub dir_octaves: usize,
    pub n_samples: usize,
    pub iters: u64,
    pub batch_rays: usize,
    pub lr0: f64,
    pub eval_every: u64,
    /// Reference-renderer quadrature count for oracle images.
    pub reference_samples: usize,
}

impl Default for TeacherSection {
    fn default() -> Self {
        TeacherSection {
            width: 256,
            trunk_depth: 8,
            skip_layer: 4,
            pos_octaves: 10,
            dir_octaves: 4,
            n_samples: 192,
            iters: 100_000,
            batch_rays: 1024,
            lr0: 5e-4,
            eval_every: 0,
            reference_samples: 1024,
        }
    }
}

impl TeacherSection {
    pub fn nerf_config(&self, background: [f64; 3]) -> NerfConfig {
        NerfConfig {
            width: self.width,
            trunk_depth: self.trunk_depth,
            skip_layer: self.skip_layer,
            pos_octaves: self.pos_octaves,
            dir_octaves: self.dir_octaves,
            n_samples: self.n_samples,
            background,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillSection {
    /// Pseudo dataset size in image-equivalents of the scene resolution.
    pub pseudo_images: usize,
    pub include_real: bool,
}

impl Default for DistillSection {
    fn default() -> Self {
        DistillSection {
            pseudo_images: 2000,
            include_real: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct StudentSection {
    /// Named width/depth config, e.g. "W64D24".
    pub model: String,
    pub residual: bool,
    /// "kpoint" or "plucker".
    pub encoder: String,
    pub k: usize,
    pub octaves: usize,
    pub r: f64,
    pub batch: usize,
    pub iters: u64,
    pub lr0: f64,
    pub eval_every: u64,
}

impl Default for StudentSection {
    fn default() -> Self {
        StudentSection {
            model: "W64D24".to_string(),
            residual: true,
            encoder: "kpoint".to_string(),
            k: 16,
            octaves: 10,
            r: 0.2,
            batch: 8192,
            iters: 50_000,
            lr0: 5e-4,
            eval_every: 0,
        }
    }
}

impl StudentSection {
    pub fn shape(&self) -> Result<StudentShape> {
        let mut shape = StudentShape::build_config(&self.model)?;
        shape.residual = self.residual;
        Ok(shape)
    }

    pub fn ray_encoder(&self) -> Result<RayEncoder> {
        match self.encoder.as_str() {
            "kpoint" => Ok(RayEncoder::k_point(self.k, self.octaves, SampleMode::Train)),
            "plucker" => Ok(RayEncoder::plucker(self.octaves)),
            other => Err(Error::Config(format!("unknown encoder {other:?}"))),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}
