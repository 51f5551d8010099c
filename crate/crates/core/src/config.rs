//! Run configuration shared by the CLI, the forge and the service.
//!
//! A config file is a single JSON object; missing keys take their defaults.
//! `key=value` overrides use dotted paths (`camera.fx=600`) and the value is
//! parsed as JSON when possible, otherwise taken as a string.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geom::{CameraModel, GeomError, Vec3};
use crate::raster::SegmentMode;
use crate::trajectory::SamplerBounds;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "POSETRAJ_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid override `{0}`: expected key=value")]
    Override(String),
    #[error("invalid config value: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraConfig {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// Horizontal distance is `ring_radius * cos(elevation)` from the target.
    pub ring_radius: f64,
    pub elevation_deg: f64,
    /// Measured from world `+x` towards `+y`.
    pub azimuth_deg: f64,
    pub target: [f64; 3],
}

impl Default for CameraConfig {
    fn default() -> Self {
        Self {
            fx: 580.0,
            fy: 580.0,
            cx: 288.0,
            cy: 160.0,
            ring_radius: 4.0,
            elevation_deg: 30.0,
            azimuth_deg: -90.0,
            target: [0.0; 3],
        }
    }
}

impl CameraConfig {
    pub fn eye(&self) -> Vec3 {
        let (el, az) = (
            self.elevation_deg.to_radians(),
            self.azimuth_deg.to_radians(),
        );
        Vec3::from(self.target)
            + self.ring_radius * Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin())
    }

    pub fn build(&self, width: u32, height: u32) -> Result<CameraModel, GeomError> {
        CameraModel::look_at(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            width,
            height,
            self.eye(),
            Vec3::from(self.target),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForgeConfig {
    pub root_seed: u64,
    pub object_catalog_path: PathBuf,
    pub output_dir: PathBuf,
    pub samples_per_object: u32,
    pub steps: u32,
    pub keyframes: u32,
    /// Frames per training clip.
    pub training_frames: u32,
    pub width: u32,
    pub height: u32,
    pub camera: CameraConfig,
    pub trajectory_stroke: u32,
    pub bbox_stroke: u32,
    pub bbox_color: [u8; 3],
    pub segment_mode: SegmentMode,
    pub lambda_spa: f64,
    pub workers: usize,
    /// Scenes whose center moves more than this between keyframes are resampled.
    pub max_center_step_px: f64,
    /// Also resample scenes whose center leaves the image.
    pub require_center_in_frame: bool,
    pub max_retries: u32,
    pub sampler: SamplerBounds,
}

impl Default for ForgeConfig {
    fn default() -> Self {
        Self {
            root_seed: 0,
            object_catalog_path: PathBuf::from("catalog.jsonl"),
            output_dir: PathBuf::from("out"),
            samples_per_object: 5,
            steps: 200,
            keyframes: 32,
            training_frames: 14,
            width: 576,
            height: 320,
            camera: CameraConfig::default(),
            trajectory_stroke: 3,
            bbox_stroke: 3,
            bbox_color: [255, 0, 0],
            segment_mode: SegmentMode::PerStep,
            lambda_spa: 1.0,
            workers: 4,
            max_center_step_px: 80.0,
            require_center_in_frame: true,
            max_retries: 16,
            sampler: SamplerBounds::default(),
        }
    }
}

impl ForgeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("samples_per_object", self.samples_per_object as usize),
            ("steps", self.steps as usize),
            ("training_frames", self.training_frames as usize),
            ("width", self.width as usize),
            ("height", self.height as usize),
            ("workers", self.workers),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::Invalid(format!("{name} must be positive")));
        }
        if self.keyframes < 2 || self.keyframes > self.steps {
            return Err(ConfigError::Invalid(format!(
                "need 2 <= keyframes <= steps, got keyframes={} steps={}",
                self.keyframes, self.steps
            )));
        }
        if self.training_frames > self.keyframes {
            return Err(ConfigError::Invalid(format!(
                "training_frames {} exceeds keyframes {}",
                self.training_frames, self.keyframes
            )));
        }
        if !(self.lambda_spa.is_finite() && self.lambda_spa >= 0.0) {
            return Err(ConfigError::Invalid(format!(
                "lambda_spa must be a non-negative number, got {}",
                self.lambda_spa
            )));
        }
        if !(self.max_center_step_px.is_finite() && self.max_center_step_px > 0.0) {
            return Err(ConfigError::Invalid(
                "max_center_step_px must be positive".into(),
            ));
        }
        self.sampler_bounds()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.camera_model()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Sampler bounds with the configured step and keyframe counts.
    pub fn sampler_bounds(&self) -> SamplerBounds {
        SamplerBounds {
            steps: self.steps,
            keyframes: self.keyframes,
            ..self.sampler
        }
    }

    pub fn camera_model(&self) -> Result<CameraModel, GeomError> {
        self.camera.build(self.width, self.height)
    }

    /// Parses and validates a config document.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path` (or defaults when `None`) and applies `key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.to_path_buf(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?
            }
            None => serde_json::to_value(Self::default()).expect("default config serializes"),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: Self =
            serde_json::from_value(value).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn apply_override(root: &mut Value, assignment: &str) -> Result<(), ConfigError> {
    let (key, raw) = assignment
        .split_once('=')
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
    let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| ConfigError::Override(assignment.to_string()))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), parsed);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one part")
}
