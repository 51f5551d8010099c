//! Trajectory-following accuracy and dataset self-consistency checks.
//!
//! ObjMC is the mean, over tracks and frames, of the squared Euclidean pixel
//! distance between corresponding generated and reference points. The
//! displacement variant compares frame-to-frame motion vectors instead.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::forge::{self, DatasetManifest, SCHEMA_VERSION};
use crate::raster::PointTrack;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("unsupported schema version {found} (expected {SCHEMA_VERSION})")]
    SchemaVersion { found: u64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
}

/// Point tracks extracted from one video, all of equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackFile {
    pub schema_version: u32,
    pub video_id: String,
    pub fps: f64,
    /// `[width, height]` of the frames the tracks were measured on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<[u32; 2]>,
    pub tracks: Vec<PointTrack>,
}

impl TrackFile {
    pub fn new(video_id: impl Into<String>, fps: f64, tracks: Vec<PointTrack>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            video_id: video_id.into(),
            fps,
            resolution: None,
            tracks,
        }
    }

    /// The keyframe center track of a forged scene.
    pub fn from_manifest(m: &DatasetManifest) -> Self {
        Self {
            resolution: Some([m.camera.width(), m.camera.height()]),
            ..Self::new(m.scene_id.clone(), f64::from(m.fps), vec![m.center_track()])
        }
    }

    pub fn track_len(&self) -> usize {
        self.tracks.first().map_or(0, PointTrack::len)
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(EvalError::SchemaVersion {
                found: u64::from(self.schema_version),
            });
        }
        let len = self.track_len();
        if let Some((k, t)) = self.tracks.iter().enumerate().find(|(_, t)| t.len() != len) {
            return Err(EvalError::ShapeMismatch(format!(
                "track {k} has {} points, track 0 has {len}",
                t.len()
            )));
        }
        for (k, t) in self.tracks.iter().enumerate() {
            for (i, p) in t.points.iter().enumerate() {
                if let Some(axis) = p.iter().position(|v| !v.is_finite()) {
                    return Err(EvalError::Parse {
                        location: point_location(k, i, axis),
                        message: "coordinate is not finite".into(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("track file serializes");
        s.push('\n');
        s
    }

    /// Parses and validates a track file. Bare `NaN`/`Infinity` tokens, as
    /// written by some JSON encoders, are read so that the offending frame can
    /// be named in the error.
    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        let value: Value =
            serde_json::from_str(&quote_non_finite_tokens(text)).map_err(|e| EvalError::Parse {
                location: format!("line {} column {}", e.line(), e.column()),
                message: e.to_string(),
            })?;
        let field = |name: &str| {
            value.get(name).ok_or_else(|| EvalError::Parse {
                location: name.to_string(),
                message: "missing field".into(),
            })
        };
        let version = field("schema_version")?
            .as_u64()
            .ok_or_else(|| EvalError::Parse {
                location: "schema_version".into(),
                message: "expected an unsigned integer".into(),
            })?;
        if version != u64::from(SCHEMA_VERSION) {
            return Err(EvalError::SchemaVersion { found: version });
        }
        let video_id = field("video_id")?
            .as_str()
            .ok_or_else(|| EvalError::Parse {
                location: "video_id".into(),
                message: "expected a string".into(),
            })?
            .to_string();
        let fps = field("fps")?.as_f64().ok_or_else(|| EvalError::Parse {
            location: "fps".into(),
            message: "expected a number".into(),
        })?;
        let resolution = match value.get("resolution") {
            None | Some(Value::Null) => None,
            Some(v) => Some(
                serde_json::from_value(v.clone()).map_err(|e| EvalError::Parse {
                    location: "resolution".into(),
                    message: e.to_string(),
                })?,
            ),
        };
        let raw_tracks = field("tracks")?
            .as_array()
            .ok_or_else(|| EvalError::Parse {
                location: "tracks".into(),
                message: "expected an array".into(),
            })?;
        let mut tracks = Vec::with_capacity(raw_tracks.len());
        for (k, raw) in raw_tracks.iter().enumerate() {
            let raw_points = raw.as_array().ok_or_else(|| EvalError::Parse {
                location: format!("tracks[{k}]"),
                message: "expected an array of points".into(),
            })?;
            let mut points = Vec::with_capacity(raw_points.len());
            for (i, p) in raw_points.iter().enumerate() {
                points.push(parse_point(p, k, i)?);
            }
            tracks.push(PointTrack::new(points));
        }
        let file = TrackFile {
            schema_version: SCHEMA_VERSION,
            video_id,
            fps,
            resolution,
            tracks,
        };
        file.validate()?;
        Ok(file)
    }
}

fn point_location(track: usize, frame: usize, axis: usize) -> String {
    format!(
        "tracks[{track}][{frame}].{} (track {track}, frame {})",
        ["x", "y"][axis],
        frame + 1
    )
}

fn parse_point(v: &Value, track: usize, frame: usize) -> Result<[f64; 2], EvalError> {
    let coords = v
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| EvalError::Parse {
            location: format!(
                "tracks[{track}][{frame}] (track {track}, frame {})",
                frame + 1
            ),
            message: "expected an [x, y] pair".into(),
        })?;
    let mut out = [0.0; 2];
    for (axis, c) in coords.iter().enumerate() {
        out[axis] = match c.as_f64() {
            Some(x) if x.is_finite() => x,
            _ => {
                return Err(EvalError::Parse {
                    location: point_location(track, frame, axis),
                    message: format!("coordinate {c} is not a finite number"),
                })
            }
        };
    }
    Ok(out)
}

/// Rewrites bare `NaN`, `Infinity` and `-Infinity` outside strings as string
/// literals so the document parses and the bad value can be located.
fn quote_non_finite_tokens(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut in_string = false;
    let mut escaped = false;
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if in_string {
            out.push(c);
            if escaped {
                escaped = false;
            } else if c == '\\' {
                escaped = true;
            } else if c == '"' {
                in_string = false;
            }
            rest = &rest[c.len_utf8()..];
            continue;
        }
        if c == '"' {
            in_string = true;
        }
        if let Some(token) = ["-Infinity", "Infinity", "NaN"]
            .into_iter()
            .find(|t| rest.starts_with(t))
        {
            out.push('"');
            out.push_str(token);
            out.push('"');
            rest = &rest[token.len()..];
            continue;
        }
        out.push(c);
        rest = &rest[c.len_utf8()..];
    }
    out
}

pub fn ingest_tracks(path: &Path) -> Result<TrackFile, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    TrackFile::from_json(&text)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjmcMode {
    /// Per-frame point positions.
    #[default]
    Position,
    /// Frame-to-frame displacement vectors.
    Displacement,
}

impl std::str::FromStr for ObjmcMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "position" => Ok(Self::Position),
            "displacement" => Ok(Self::Displacement),
            other => Err(format!(
                "unknown ObjMC mode `{other}` (position|displacement)"
            )),
        }
    }
}

fn check_shapes(generated: &TrackFile, reference: &TrackFile) -> Result<(), EvalError> {
    if generated.tracks.len() != reference.tracks.len() {
        return Err(EvalError::ShapeMismatch(format!(
            "{} generated tracks vs {} reference tracks",
            generated.tracks.len(),
            reference.tracks.len()
        )));
    }
    for (k, (g, r)) in generated.tracks.iter().zip(&reference.tracks).enumerate() {
        if g.len() != r.len() {
            return Err(EvalError::ShapeMismatch(format!(
                "track {k}: {} generated points vs {} reference points",
                g.len(),
                r.len()
            )));
        }
    }
    Ok(())
}

fn squared_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (a[0] - b[0], a[1] - b[1]);
    dx * dx + dy * dy
}

/// Position ObjMC in squared pixels.
pub fn objmc(generated: &TrackFile, reference: &TrackFile) -> Result<f64, EvalError> {
    objmc_with(generated, reference, ObjmcMode::Position)
}

pub fn objmc_with(
    generated: &TrackFile,
    reference: &TrackFile,
    mode: ObjmcMode,
) -> Result<f64, EvalError> {
    check_shapes(generated, reference)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (g, r) in generated.tracks.iter().zip(&reference.tracks) {
        match mode {
            ObjmcMode::Position => {
                for (a, b) in g.points.iter().zip(&r.points) {
                    sum += squared_distance(*a, *b);
                    count += 1;
                }
            }
            ObjmcMode::Displacement => {
                for (gw, rw) in g.points.windows(2).zip(r.points.windows(2)) {
                    let dg = [gw[1][0] - gw[0][0], gw[1][1] - gw[0][1]];
                    let dr = [rw[1][0] - rw[0][0], rw[1][1] - rw[0][1]];
                    sum += squared_distance(dg, dr);
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(EvalError::EmptyInput(format!(
            "no comparable points in `{}`",
            generated.video_id
        )));
    }
    Ok(sum / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoScore {
    pub video_id: String,
    pub objmc: f64,
    pub tracks: usize,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub mode: ObjmcMode,
    pub resolution: Option<[u32; 2]>,
    pub videos: Vec<VideoScore>,
    pub mean_objmc: f64,
}

/// Scores every `(generated, reference)` pair; the report is sorted by video
/// id. The resolution comes from the reference files when they record one.
pub fn evaluate(
    pairs: &[(TrackFile, TrackFile)],
    mode: ObjmcMode,
    fallback_resolution: Option<[u32; 2]>,
) -> Result<EvalReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput("no videos to evaluate".into()));
    }
    let mut videos = pairs
        .par_iter()
        .map(|(g, r)| {
            Ok(VideoScore {
                video_id: r.video_id.clone(),
                objmc: objmc_with(g, r, mode)?,
                tracks: r.tracks.len(),
                frames: r.track_len(),
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    videos.sort_by(|a, b| a.video_id.cmp(&b.video_id));
    let mean_objmc = videos.iter().map(|v| v.objmc).sum::<f64>() / videos.len() as f64;
    Ok(EvalReport {
        schema_version: SCHEMA_VERSION,
        mode,
        resolution: pairs[0].1.resolution.or(fallback_resolution),
        videos,
        mean_objmc,
    })
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let res = self
            .resolution
            .map_or("unknown".to_string(), |[w, h]| format!("{w}x{h}"));
        s.push_str(&format!("ObjMC ({:?}, px^2 at {res})\n", self.mode));
        s.push_str(&format!(
            "{:<40} {:>6} {:>6} {:>14}\n",
            "video_id", "tracks", "frames", "objmc"
        ));
        for v in &self.videos {
            s.push_str(&format!(
                "{:<40} {:>6} {:>6} {:>14.4}\n",
                v.video_id, v.tracks, v.frames, v.objmc
            ));
        }
        s.push_str(&format!(
            "{:<40} {:>6} {:>6} {:>14.4}\n",
            "mean", "", "", self.mean_objmc
        ));
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// 1-based frames that failed, when the check is per frame.
    pub failing_frames: Vec<u32>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfCheckReport {
    pub scene_id: String,
    pub checks: Vec<CheckResult>,
}

impl SelfCheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const REPROJECTION_TOLERANCE_PX: f64 = 1e-6;

/// Re-derives every annotation of a manifest and reports each check.
pub fn manifest_self_check(manifest: &DatasetManifest, max_step_px: f64) -> SelfCheckReport {
    let mut checks = Vec::new();
    let frames = &manifest.frames;

    let expected = manifest.spec.keyframes as usize;
    let numbered = frames
        .iter()
        .enumerate()
        .all(|(i, f)| f.frame_index as usize == i + 1);
    checks.push(CheckResult {
        name: "keyframe_count".into(),
        passed: frames.len() == expected && numbered,
        failing_frames: Vec::new(),
        detail: format!("{} frames, spec expects {expected}", frames.len()),
    });

    let mut center_fail = Vec::new();
    let mut bbox_fail = Vec::new();
    let mut worst_center = 0.0f64;
    let mut worst_corner = 0.0f64;
    for f in frames {
        let cam = manifest.frame_camera(f);
        match cam.project_point(f.object_pose.translation()) {
            Ok(p) => {
                let err = squared_distance(p.pixel, f.center_pixel).sqrt();
                worst_center = worst_center.max(err);
                if err.is_nan() || err > REPROJECTION_TOLERANCE_PX {
                    center_fail.push(f.frame_index);
                }
            }
            Err(_) => center_fail.push(f.frame_index),
        }
        let projected: Option<Vec<[f64; 2]>> = manifest
            .frame_box(f)
            .corners()
            .iter()
            .map(|c| cam.project_point(c).ok().map(|p| p.pixel))
            .collect();
        let ok = match (projected, &f.bbox_corners_pixel) {
            (Some(expected), Some(stored)) => {
                let err = expected
                    .iter()
                    .zip(stored)
                    .map(|(a, b)| squared_distance(*a, *b).sqrt())
                    .fold(0.0, f64::max);
                worst_corner = worst_corner.max(err);
                err <= REPROJECTION_TOLERANCE_PX
            }
            (None, None) => true,
            _ => false,
        };
        if !ok {
            bbox_fail.push(f.frame_index);
        }
    }
    checks.push(CheckResult {
        name: "center_reprojection".into(),
        passed: center_fail.is_empty(),
        failing_frames: center_fail,
        detail: format!("max error {worst_center:.3e} px"),
    });
    checks.push(CheckResult {
        name: "bbox_reprojection".into(),
        passed: bbox_fail.is_empty(),
        failing_frames: bbox_fail,
        detail: format!("max error {worst_corner:.3e} px"),
    });

    let step_fail: Vec<u32> = frames
        .windows(2)
        .filter(|w| squared_distance(w[0].center_pixel, w[1].center_pixel).sqrt() > max_step_px)
        .map(|w| w[1].frame_index)
        .collect();
    checks.push(CheckResult {
        name: "center_continuity".into(),
        passed: step_fail.is_empty(),
        failing_frames: step_fail,
        detail: format!(
            "max step {:.3} px, bound {max_step_px} px",
            forge::max_center_step(frames)
        ),
    });

    let centers = TrackFile::from_manifest(manifest);
    let self_score = objmc(&centers, &centers);
    checks.push(CheckResult {
        name: "objmc_self".into(),
        passed: matches!(self_score, Ok(v) if v == 0.0),
        failing_frames: Vec::new(),
        detail: format!("{self_score:?}"),
    });

    SelfCheckReport {
        scene_id: manifest.scene_id.clone(),
        checks,
    }
}
