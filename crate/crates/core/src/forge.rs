//! Synthetic scene forging.
//!
//! Each scene is a pure function of `(scene seed, object, config)`: the object
//! is normalized to unit height, a trajectory is sampled and evaluated into a
//! pose track, and every keyframe is annotated with the projected center and
//! box corners under the fixed scene camera. A draw is rejected and resampled
//! with the next retry seed when the center goes behind the camera, jumps more
//! than the configured pixel bound between keyframes, or (when required)
//! leaves the image.
//!
//! Dataset layout under the output directory:
//!
//! ```text
//! manifests/{scene_id}.json
//! scenes/{scene_id}.scene.json
//! images/{scene_id}/traj_{i:03}.png   i = 1..=keyframes, last one blank
//! images/{scene_id}/bbox_{i:03}.png   box wireframe on black
//! ```
//!
//! The CLI also writes `tracks/{scene_id}.tracks.json` (the center track as an
//! evaluation reference) and `batches/{stage}.jsonl`.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::ForgeConfig;
use crate::geom::{Box3, CameraModel, GeomError, Pose};
use crate::raster::{self, Image, PointTrack, RasterError};
use crate::seed;
use crate::trajectory::{self, TrajectoryError, TrajectorySpec};

pub const FPS: u32 = 5;
pub const SCHEMA_VERSION: u32 = 1;
pub const MAX_DRAG_POINTS: usize = 8;

#[derive(Debug, Error)]
pub enum ForgeError {
    #[error("object `{object_id}` is degenerate: {reason}")]
    DegenerateObject { object_id: String, reason: String },
    #[error("scene {scene_id}: object left the camera view in all {attempts} attempts")]
    CameraMiss { scene_id: String, attempts: u32 },
    #[error("domain error: {0}")]
    Domain(String),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("unsupported schema version {found} (expected {expected})")]
    SchemaVersion { found: u32, expected: u32 },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ForgeError + '_ {
    move |source| ForgeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub object_id: String,
    /// Axis-aligned extents in the object's native units; z is height.
    pub raw_extents: [f64; 3],
    /// Opaque mesh reference for the external renderer.
    pub mesh_uri: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    /// 1-based.
    pub frame_index: u32,
    pub object_pose: Pose,
    pub center_pixel: [f64; 2],
    /// Absent when any corner is behind the camera.
    pub bbox_corners_pixel: Option<[[f64; 2]; 8]>,
    pub camera_extrinsic: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub scene_id: String,
    pub seed: u64,
    /// Number of rejected trajectory draws before this one was accepted.
    pub attempt: u32,
    pub object: ObjectRecord,
    pub normalization_scale: f64,
    pub box_half_extents: [f64; 3],
    pub spec: TrajectorySpec,
    pub camera: CameraModel,
    pub fps: u32,
    pub frames: Vec<FrameAnnotation>,
}

impl DatasetManifest {
    pub fn center_track(&self) -> PointTrack {
        PointTrack::new(self.frames.iter().map(|f| f.center_pixel).collect())
    }

    pub fn frame_box(&self, frame: &FrameAnnotation) -> Box3 {
        Box3 {
            half_extents: self.box_half_extents,
            pose: frame.object_pose,
        }
    }

    pub fn frame_camera(&self, frame: &FrameAnnotation) -> CameraModel {
        self.camera.with_extrinsic(frame.camera_extrinsic)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ForgeError> {
        let m: Self = serde_json::from_str(text).map_err(|e| ForgeError::Parse {
            path: PathBuf::new(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(ForgeError::SchemaVersion {
                found: m.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self, ForgeError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text).map_err(|e| match e {
            ForgeError::Parse { line, message, .. } => ForgeError::Parse {
                path: path.to_path_buf(),
                line,
                message,
            },
            other => other,
        })
    }
}

/// Axis-aligned pixel rectangle, `min` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Rect {
    pub fn bounding(points: &[[f64; 2]]) -> Option<Rect> {
        let first = points.first()?;
        let mut r = Rect {
            min: *first,
            max: *first,
        };
        for p in points {
            r.min = [r.min[0].min(p[0]), r.min[1].min(p[1])];
            r.max = [r.max[0].max(p[0]), r.max[1].max(p[1])];
        }
        Some(r)
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..2).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    pub fn center(&self) -> [f64; 2] {
        [
            (self.min[0] + self.max[0]) / 2.0,
            (self.min[1] + self.max[1]) / 2.0,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DragPointSet {
    pub initial_points: Vec<[f64; 2]>,
    pub tracks: Vec<PointTrack>,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct DegenerateExtents(pub String);

/// Scale that brings the object to unit height.
pub fn normalize_object(raw_extents: [f64; 3]) -> Result<f64, DegenerateExtents> {
    if raw_extents.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(DegenerateExtents(format!(
            "extents {raw_extents:?} must be finite and positive"
        )));
    }
    if raw_extents[2] < 1e-12 {
        return Err(DegenerateExtents(format!(
            "height {} is below 1e-12",
            raw_extents[2]
        )));
    }
    if raw_extents[0] <= 0.0 || raw_extents[1] <= 0.0 {
        return Err(DegenerateExtents(format!(
            "extents {raw_extents:?} must be positive"
        )));
    }
    Ok(1.0 / raw_extents[2])
}

/// Filesystem-safe scene identifier.
pub fn scene_id(object_id: &str, seed: u64) -> String {
    let safe: String = object_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}-{seed:016x}")
}

fn annotate(
    camera: &CameraModel,
    half_extents: [f64; 3],
    poses: &[Pose],
) -> Option<Vec<FrameAnnotation>> {
    poses
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let center = camera.project_point(pose.translation()).ok()?;
            let corners = Box3 {
                half_extents,
                pose: *pose,
            }
            .corners();
            let mut pixels = [[0.0; 2]; 8];
            let mut visible = true;
            for (out, c) in pixels.iter_mut().zip(&corners) {
                match camera.project_point(c) {
                    Ok(p) => *out = p.pixel,
                    Err(_) => visible = false,
                }
            }
            Some(FrameAnnotation {
                frame_index: i as u32 + 1,
                object_pose: *pose,
                center_pixel: center.pixel,
                bbox_corners_pixel: visible.then_some(pixels),
                camera_extrinsic: *camera.extrinsic(),
            })
        })
        .collect()
}

fn in_frame(camera: &CameraModel, p: [f64; 2]) -> bool {
    p[0] >= 0.0
        && p[1] >= 0.0
        && p[0] < f64::from(camera.width())
        && p[1] < f64::from(camera.height())
}

/// Largest pixel distance between consecutive centers.
pub fn max_center_step(frames: &[FrameAnnotation]) -> f64 {
    frames
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].center_pixel, w[1].center_pixel);
            (b[0] - a[0]).hypot(b[1] - a[1])
        })
        .fold(0.0, f64::max)
}

/// Forges one scene.
pub fn forge_scene(
    seed: u64,
    object: &ObjectRecord,
    config: &ForgeConfig,
) -> Result<DatasetManifest, ForgeError> {
    let scale =
        normalize_object(object.raw_extents).map_err(|reason| ForgeError::DegenerateObject {
            object_id: object.object_id.clone(),
            reason: reason.0,
        })?;
    let half_extents = [
        scale * object.raw_extents[0] / 2.0,
        scale * object.raw_extents[1] / 2.0,
        0.5,
    ];
    let camera = config.camera_model()?;
    let bounds = config.sampler_bounds();
    let scene_id = scene_id(&object.object_id, seed);
    let attempts = config.max_retries + 1;

    for attempt in 0..attempts {
        let spec = trajectory::sample_trajectory_spec(
            seed::derive(seed, u64::from(attempt)),
            Some(&bounds),
        )?;
        let track = trajectory::build_pose_track(&spec, 1.0)?;
        let Some(frames) = annotate(&camera, half_extents, &track.poses) else {
            continue;
        };
        if max_center_step(&frames) > config.max_center_step_px {
            continue;
        }
        if config.require_center_in_frame
            && !frames.iter().all(|f| in_frame(&camera, f.center_pixel))
        {
            continue;
        }
        return Ok(DatasetManifest {
            schema_version: SCHEMA_VERSION,
            scene_id,
            seed,
            attempt,
            object: object.clone(),
            normalization_scale: scale,
            box_half_extents: half_extents,
            spec,
            camera,
            fps: FPS,
            frames,
        });
    }
    Err(ForgeError::CameraMiss { scene_id, attempts })
}

/// One scene of a dataset: object `object_index`, sample `sample`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenePlan {
    pub index: u64,
    pub object_index: usize,
    pub sample: u32,
    pub seed: u64,
}

/// Scene `k` of object `j` has index `j * samples_per_object + k` and seed
/// `seed::derive(root_seed, index)`.
pub fn plan_scenes(object_count: usize, config: &ForgeConfig) -> Vec<ScenePlan> {
    let per = config.samples_per_object;
    (0..object_count)
        .flat_map(|j| (0..per).map(move |k| (j, k)))
        .map(|(j, k)| {
            let index = j as u64 * u64::from(per) + u64::from(k);
            ScenePlan {
                index,
                object_index: j,
                sample: k,
                seed: seed::derive(config.root_seed, index),
            }
        })
        .collect()
}

pub fn read_catalog(path: &Path) -> Result<Vec<ObjectRecord>, ForgeError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| ForgeError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Trajectory segment images for the keyframe center track.
pub fn trajectory_images(
    manifest: &DatasetManifest,
    config: &ForgeConfig,
) -> Result<Vec<Image>, RasterError> {
    let track = manifest.center_track();
    (1..=track.len())
        .map(|i| {
            raster::draw_segment_image(
                &track,
                i,
                manifest.camera.width(),
                manifest.camera.height(),
                config.trajectory_stroke,
                config.segment_mode,
            )
        })
        .collect()
}

/// Box wireframes on a black canvas, one per keyframe.
pub fn bbox_images(
    manifest: &DatasetManifest,
    config: &ForgeConfig,
) -> Result<Vec<Image>, RasterError> {
    let blank = Image::new(manifest.camera.width(), manifest.camera.height(), 3);
    manifest
        .frames
        .iter()
        .map(|f| {
            raster::draw_bbox_overlay(
                &blank,
                &manifest.frame_camera(f),
                &manifest.frame_box(f),
                config.bbox_color,
                config.bbox_stroke,
            )
        })
        .collect()
}

pub fn manifest_path(out: &Path, scene_id: &str) -> PathBuf {
    out.join("manifests").join(format!("{scene_id}.json"))
}

pub fn scene_path(out: &Path, scene_id: &str) -> PathBuf {
    out.join("scenes").join(format!("{scene_id}.scene.json"))
}

/// Image path relative to the output directory.
pub fn image_rel_path(scene_id: &str, kind: &str, i: u32) -> String {
    format!("images/{scene_id}/{kind}_{i:03}.png")
}

/// Writes the manifest, scene export and conditioning images of one scene.
pub fn write_scene(
    manifest: &DatasetManifest,
    config: &ForgeConfig,
    out: &Path,
) -> Result<(), ForgeError> {
    let write = |path: PathBuf, bytes: &[u8]| -> Result<(), ForgeError> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        std::fs::write(&path, bytes).map_err(io_err(&path))
    };
    write(
        manifest_path(out, &manifest.scene_id),
        manifest.to_json().as_bytes(),
    )?;
    write(
        scene_path(out, &manifest.scene_id),
        export_scene(manifest).to_json().as_bytes(),
    )?;
    let images = trajectory_images(manifest, config)?
        .into_iter()
        .map(|img| ("traj", img))
        .enumerate()
        .chain(
            bbox_images(manifest, config)?
                .into_iter()
                .map(|img| ("bbox", img))
                .enumerate(),
        );
    for (i, (kind, img)) in images {
        let mut bytes = Vec::new();
        img.encode_png(&mut bytes)?;
        write(
            out.join(image_rel_path(&manifest.scene_id, kind, i as u32 + 1)),
            &bytes,
        )?;
    }
    Ok(())
}

/// Outcome of forging one planned scene.
#[derive(Debug)]
pub struct SceneOutcome {
    pub plan: ScenePlan,
    pub result: Result<DatasetManifest, ForgeError>,
}

/// Forges every planned scene on a pool of `config.workers` threads. Results
/// come back in plan order whatever the worker count.
pub fn forge_dataset(catalog: &[ObjectRecord], config: &ForgeConfig) -> Vec<SceneOutcome> {
    let plans = plan_scenes(catalog.len(), config);
    let run = || {
        plans
            .par_iter()
            .map(|plan| SceneOutcome {
                plan: *plan,
                result: forge_scene(plan.seed, &catalog[plan.object_index], config),
            })
            .collect()
    };
    match rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
    {
        Ok(pool) => pool.install(run),
        Err(_) => run(),
    }
}

/// Drag points sampled uniformly in `rect`, each following the displacement
/// of `center_track` relative to its first point.
pub fn sample_drag_points_along(
    center_track: &PointTrack,
    rect: &Rect,
    n: usize,
    rng_seed: u64,
) -> Result<DragPointSet, ForgeError> {
    if !(1..=MAX_DRAG_POINTS).contains(&n) {
        return Err(ForgeError::Domain(format!(
            "drag point count must satisfy 1 <= n <= {MAX_DRAG_POINTS}, got {n}"
        )));
    }
    let finite = rect.min.iter().chain(&rect.max).all(|v| v.is_finite());
    if !finite || rect.min[0] >= rect.max[0] || rect.min[1] >= rect.max[1] {
        return Err(ForgeError::Domain(format!("rectangle {rect:?} is empty")));
    }
    let Some(origin) = center_track.points.first().copied() else {
        return Err(ForgeError::Domain("center track is empty".into()));
    };
    let mut rng = seed::rng(rng_seed);
    let initial_points: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let v: f64 = rng.random();
            [
                rect.min[0] + u * (rect.max[0] - rect.min[0]),
                rect.min[1] + v * (rect.max[1] - rect.min[1]),
            ]
        })
        .collect();
    let tracks = initial_points
        .iter()
        .map(|p| {
            PointTrack::new(
                center_track
                    .points
                    .iter()
                    .map(|c| [p[0] + (c[0] - origin[0]), p[1] + (c[1] - origin[1])])
                    .collect(),
            )
        })
        .collect();
    Ok(DragPointSet {
        initial_points,
        tracks,
    })
}

pub fn sample_drag_points(
    manifest: &DatasetManifest,
    frame_1_rect: &Rect,
    n: usize,
    rng_seed: u64,
) -> Result<DragPointSet, ForgeError> {
    sample_drag_points_along(&manifest.center_track(), frame_1_rect, n, rng_seed)
}

/// Camera block of a scene document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneCamera {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    /// Always `"x_right_y_down_z_forward"`.
    pub convention: String,
    pub world_to_camera: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneKeyframe {
    pub frame_index: u32,
    pub time_s: f64,
    pub step_index: u32,
    pub object_to_world: Pose,
}

/// Hand-off document for an external renderer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneDocument {
    pub schema_version: u32,
    pub scene_id: String,
    pub object_id: String,
    pub mesh_uri: String,
    pub normalization_scale: f64,
    pub up_axis: String,
    pub fps: u32,
    pub steps: u32,
    pub camera: SceneCamera,
    pub keyframes: Vec<SceneKeyframe>,
}

impl SceneDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scene serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ForgeError> {
        let doc: Self = serde_json::from_str(text).map_err(|e| ForgeError::Parse {
            path: PathBuf::new(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if doc.schema_version != SCHEMA_VERSION {
            return Err(ForgeError::SchemaVersion {
                found: doc.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        Ok(doc)
    }
}

pub fn export_scene(manifest: &DatasetManifest) -> SceneDocument {
    let steps = trajectory::subsample_keyframes(manifest.spec.steps, manifest.spec.keyframes)
        .unwrap_or_default();
    let cam = &manifest.camera;
    SceneDocument {
        schema_version: SCHEMA_VERSION,
        scene_id: manifest.scene_id.clone(),
        object_id: manifest.object.object_id.clone(),
        mesh_uri: manifest.object.mesh_uri.clone(),
        normalization_scale: manifest.normalization_scale,
        up_axis: "z".into(),
        fps: manifest.fps,
        steps: manifest.spec.steps,
        camera: SceneCamera {
            fx: cam.fx(),
            fy: cam.fy(),
            cx: cam.cx(),
            cy: cam.cy(),
            width: cam.width(),
            height: cam.height(),
            convention: "x_right_y_down_z_forward".into(),
            world_to_camera: *cam.extrinsic(),
        },
        keyframes: manifest
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| SceneKeyframe {
                frame_index: f.frame_index,
                time_s: f64::from(f.frame_index - 1) / f64::from(manifest.fps),
                step_index: steps.get(i).copied().unwrap_or_default(),
                object_to_world: f.object_pose,
            })
            .collect(),
    }
}
