//! Per-stage training conditions, camera dropout, spatial-loss frame sampling
//! and reference loss reductions.
//!
//! | stage                  | initial image   | camera          | target              |
//! |------------------------|-----------------|-----------------|---------------------|
//! | `StageOneBbox`         | bbox-augmented  | never           | bbox-augmented video|
//! | `StageTwoAppearance`   | plain           | never           | plain video         |
//! | `FinetuneCamera`       | plain           | kept w.p. 1/2   | plain video         |
//!
//! Losses are element means, so a sum over frames folds into the mean.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forge::{self, DatasetManifest, SCHEMA_VERSION};
use crate::geom::Pose;
use crate::seed;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConditioningError {
    #[error("frame {frame_index}: camera-finetune stage requires a camera pose")]
    MissingCamera { frame_index: u32 },
    #[error("frame {frame_index}: stage {stage:?} takes no camera pose")]
    UnexpectedCamera { stage: Stage, frame_index: u32 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: {left} vs {right} elements")]
    ShapeMismatch { left: usize, right: usize },
    #[error("non-finite loss input")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    StageOneBbox,
    StageTwoAppearance,
    FinetuneCamera,
}

impl Stage {
    pub const ALL: [Stage; 3] = [
        Stage::StageOneBbox,
        Stage::StageTwoAppearance,
        Stage::FinetuneCamera,
    ];
}

impl std::str::FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "one" | "1" | "stage_one_bbox" => Ok(Stage::StageOneBbox),
            "two" | "2" | "stage_two_appearance" => Ok(Stage::StageTwoAppearance),
            "finetune" | "3" | "finetune_camera" => Ok(Stage::FinetuneCamera),
            other => Err(format!("unknown stage `{other}` (one|two|finetune)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialImageKind {
    BboxAugmented,
    Plain,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    BboxAugmentedVideo,
    PlainVideo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditioningSet {
    pub stage: Stage,
    pub frame_index: u32,
    pub trajectory_image: String,
    pub initial_image_kind: InitialImageKind,
    pub camera_pose: Option<Pose>,
    pub target_kind: TargetKind,
}

/// Builds the condition for frame `frame_index`. In the camera-finetune stage
/// the pose is kept or dropped by a fair coin drawn from `rng_seed`.
pub fn assemble_condition(
    stage: Stage,
    frame_index: u32,
    trajectory_image: impl Into<String>,
    camera_pose: Option<Pose>,
    rng_seed: u64,
) -> Result<ConditioningSet, ConditioningError> {
    let (initial_image_kind, target_kind, camera_pose) = match (stage, camera_pose) {
        (Stage::StageOneBbox | Stage::StageTwoAppearance, Some(_)) => {
            return Err(ConditioningError::UnexpectedCamera { stage, frame_index })
        }
        (Stage::FinetuneCamera, None) => {
            return Err(ConditioningError::MissingCamera { frame_index })
        }
        (Stage::StageOneBbox, None) => (
            InitialImageKind::BboxAugmented,
            TargetKind::BboxAugmentedVideo,
            None,
        ),
        (Stage::StageTwoAppearance, None) => {
            (InitialImageKind::Plain, TargetKind::PlainVideo, None)
        }
        (Stage::FinetuneCamera, Some(pose)) => {
            let keep = seed::rng(rng_seed).random_bool(0.5);
            (
                InitialImageKind::Plain,
                TargetKind::PlainVideo,
                keep.then_some(pose),
            )
        }
    };
    Ok(ConditioningSet {
        stage,
        frame_index,
        trajectory_image: trajectory_image.into(),
        initial_image_kind,
        camera_pose,
        target_kind,
    })
}

/// Uniform frame index in `1..=frame_count` for the spatial loss.
pub fn sample_spatial_frame(frame_count: u32, rng_seed: u64) -> Result<u32, ConditioningError> {
    if frame_count < 1 {
        return Err(ConditioningError::Domain(
            "frame count must be at least 1".into(),
        ));
    }
    Ok(seed::rng(rng_seed).random_range(1..=frame_count))
}

fn mean_squared_difference(a: &[f64], b: &[f64]) -> Result<f64, ConditioningError> {
    if a.len() != b.len() {
        return Err(ConditioningError::ShapeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(ConditioningError::Domain("loss inputs are empty".into()));
    }
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.len() as f64)
}

/// Denoising loss: mean squared difference over every element of every frame.
pub fn loss_mse(predicted: &[f64], target: &[f64]) -> Result<f64, ConditioningError> {
    mean_squared_difference(predicted, target)
}

/// Spatial loss on the single sampled frame `j`.
pub fn loss_spa(predicted_j: &[f64], target_j: &[f64]) -> Result<f64, ConditioningError> {
    mean_squared_difference(predicted_j, target_j)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    lambda_spa: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { lambda_spa: 1.0 }
    }
}

impl LossWeights {
    pub fn new(lambda_spa: f64) -> Result<Self, ConditioningError> {
        if !(lambda_spa.is_finite() && lambda_spa >= 0.0) {
            return Err(ConditioningError::Domain(format!(
                "lambda_spa must be finite and non-negative, got {lambda_spa}"
            )));
        }
        Ok(Self { lambda_spa })
    }

    pub fn lambda_spa(&self) -> f64 {
        self.lambda_spa
    }
}

pub fn loss_total(mse: f64, spa: f64, weights: &LossWeights) -> Result<f64, ConditioningError> {
    if !(mse.is_finite() && spa.is_finite()) {
        return Err(ConditioningError::NonFinite);
    }
    Ok(mse + weights.lambda_spa * spa)
}

/// Row-major rotation (9 values) followed by translation (3 values).
pub type CameraRow = [f64; 12];

pub const IDENTITY_ROW: CameraRow = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];

/// Encodes each extrinsic relative to the first (`E_i ∘ E_1⁻¹`), so the rows
/// do not depend on the choice of world frame.
pub fn camera_track_encode(extrinsics: &[Pose]) -> Vec<CameraRow> {
    let Some(first) = extrinsics.first() else {
        return Vec::new();
    };
    let first_inv = first.inverse();
    extrinsics
        .iter()
        .map(|e| {
            let rel = e.compose(&first_inv);
            let r = rel.rotation_matrix();
            let t = rel.translation();
            [
                r[(0, 0)],
                r[(0, 1)],
                r[(0, 2)],
                r[(1, 0)],
                r[(1, 1)],
                r[(1, 2)],
                r[(2, 0)],
                r[(2, 1)],
                r[(2, 2)],
                t.x,
                t.y,
                t.z,
            ]
        })
        .collect()
}

/// Inverse of [`camera_track_encode`] given the first extrinsic.
pub fn camera_track_decode(rows: &[CameraRow], first: &Pose) -> Vec<Pose> {
    rows.iter()
        .map(|row| {
            let r = nalgebra::Matrix3::from_row_slice(&row[..9]);
            let rel = Pose::from_matrix(&r, nalgebra::Vector3::new(row[9], row[10], row[11]));
            rel.compose(first)
        })
        .collect()
}

/// One line of a batch manifest; the record a trainer consumes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLine {
    pub schema_version: u32,
    pub scene_id: String,
    pub stage: Stage,
    pub frame_index: u32,
    pub clip_length: u32,
    /// Frame whose single-frame reconstruction feeds the spatial loss.
    pub spatial_frame: u32,
    pub trajectory_image: String,
    pub initial_image_kind: InitialImageKind,
    /// Wireframe layer to composite onto the initial frame, bbox stages only.
    pub bbox_overlay: Option<String>,
    pub camera: Option<CameraRow>,
    pub target_kind: TargetKind,
}

/// Batch lines for the first `clip_length` keyframes of a scene. Image paths
/// are relative to the dataset root. The clip's padding frame points at the
/// scene's last trajectory image, which is always blank.
pub fn assemble_scene(
    manifest: &DatasetManifest,
    stage: Stage,
    clip_length: u32,
) -> Result<Vec<BatchLine>, ConditioningError> {
    let available = manifest.frames.len() as u32;
    if clip_length < 1 || clip_length > available {
        return Err(ConditioningError::Domain(format!(
            "clip length {clip_length} outside 1..={available}"
        )));
    }
    let id = &manifest.scene_id;
    let clip = &manifest.frames[..clip_length as usize];
    let extrinsics: Vec<Pose> = clip.iter().map(|f| f.camera_extrinsic).collect();
    let rows = camera_track_encode(&extrinsics);
    let dropout_root = seed::derive_labeled(manifest.seed, "camera_dropout");
    let spatial_frame = sample_spatial_frame(
        clip_length,
        seed::derive_labeled(manifest.seed, "spatial_frame"),
    )?;

    clip.iter()
        .zip(&rows)
        .map(|(frame, row)| {
            let i = frame.frame_index;
            let traj = if i < clip_length {
                forge::image_rel_path(id, "traj", i)
            } else {
                forge::image_rel_path(id, "traj", available)
            };
            let camera = (stage == Stage::FinetuneCamera).then_some(frame.camera_extrinsic);
            let set = assemble_condition(
                stage,
                i,
                traj,
                camera,
                seed::derive(dropout_root, u64::from(i)),
            )?;
            Ok(BatchLine {
                schema_version: SCHEMA_VERSION,
                scene_id: id.clone(),
                stage,
                frame_index: i,
                clip_length,
                spatial_frame,
                trajectory_image: set.trajectory_image,
                initial_image_kind: set.initial_image_kind,
                bbox_overlay: (set.initial_image_kind == InitialImageKind::BboxAugmented)
                    .then(|| forge::image_rel_path(id, "bbox", i)),
                camera: set.camera_pose.map(|_| *row),
                target_kind: set.target_kind,
            })
        })
        .collect()
}
