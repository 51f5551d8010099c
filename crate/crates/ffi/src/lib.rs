//! C ABI over the posetraj library.
//!
//! Every fallible function returns a [`PtStatus`]; on failure a description is
//! available from [`pt_last_error_message`] on the same thread. Objects are
//! handed out as opaque pointers and must be released with their `_free`
//! function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use posetraj::config::ForgeConfig;
use posetraj::eval::{self, EvalError, TrackFile};
use posetraj::forge::{self, ForgeError, ObjectRecord};
use posetraj::geom::{CameraModel, GeomError, Vec3};
use posetraj::raster::PointTrack;
use posetraj::trajectory::{self, PoseTrack, Template, TrajectorySpec};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BehindCamera = 3,
    ShapeMismatch = 4,
    CameraMiss = 5,
    Parse = 6,
    Panic = 7,
}

/// Trajectory template: 0 is a single arc, 1 an S-curve.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PtTrajectorySpec {
    pub template_kind: u32,
    pub start_x: f64,
    pub start_y: f64,
    pub initial_heading: f64,
    pub radius: f64,
    pub swept_angle: f64,
    pub steps: u32,
    pub keyframes: u32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PtPose {
    /// Unit quaternion `w, x, y, z`.
    pub rotation: [f64; 4],
    pub translation: [f64; 3],
    /// Unwrapped yaw.
    pub heading: f64,
}

pub struct PtCamera {
    inner: CameraModel,
}

pub struct PtPoseTrack {
    inner: PoseTrack,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

type Failure = (PtStatus, String);

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PtStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PtStatus::Ok,
        Ok(Err((status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            PtStatus::Panic
        }
    }
}

fn invalid(e: impl std::fmt::Display) -> Failure {
    (PtStatus::InvalidArgument, e.to_string())
}

fn geom_failure(e: GeomError) -> Failure {
    match e {
        GeomError::BehindCamera { .. } => (PtStatus::BehindCamera, e.to_string()),
        other => invalid(other),
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err((PtStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{name}` is not UTF-8")))
}

fn to_spec(s: &PtTrajectorySpec) -> Result<TrajectorySpec, Failure> {
    let template = match s.template_kind {
        0 => Template::Arc,
        1 => Template::SCurve,
        other => return Err(invalid(format!("unknown template kind {other}"))),
    };
    Ok(TrajectorySpec {
        template,
        start: [s.start_x, s.start_y],
        initial_heading: s.initial_heading,
        radius: s.radius,
        swept_angle: s.swept_angle,
        steps: s.steps,
        keyframes: s.keyframes,
    })
}

fn from_spec(s: &TrajectorySpec) -> PtTrajectorySpec {
    PtTrajectorySpec {
        template_kind: match s.template {
            Template::Arc => 0,
            Template::SCurve => 1,
        },
        start_x: s.start[0],
        start_y: s.start[1],
        initial_heading: s.initial_heading,
        radius: s.radius,
        swept_angle: s.swept_angle,
        steps: s.steps,
        keyframes: s.keyframes,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pt_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates the default dataset camera (576x320, ring radius 4, 30° elevation).
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn pt_camera_default(out: *mut *mut PtCamera) -> PtStatus {
    guard(|| {
        non_null(out, "out")?;
        let inner = ForgeConfig::default()
            .camera_model()
            .map_err(geom_failure)?;
        *out = Box::into_raw(Box::new(PtCamera { inner }));
        Ok(())
    })
}

/// Creates a camera at `eye` looking at `target` with world `+z` up.
///
/// # Safety
/// `eye` and `target` must each point to 3 readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_camera_look_at(
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    eye: *const f64,
    target: *const f64,
    out: *mut *mut PtCamera,
) -> PtStatus {
    guard(|| {
        non_null(eye, "eye")?;
        non_null(target, "target")?;
        non_null(out, "out")?;
        let eye = Vec3::from_column_slice(std::slice::from_raw_parts(eye, 3));
        let target = Vec3::from_column_slice(std::slice::from_raw_parts(target, 3));
        let inner = CameraModel::look_at(fx, fy, cx, cy, width, height, eye, target)
            .map_err(geom_failure)?;
        *out = Box::into_raw(Box::new(PtCamera { inner }));
        Ok(())
    })
}

/// # Safety
/// `camera` must be NULL or a pointer from a `pt_camera_*` constructor not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pt_camera_free(camera: *mut PtCamera) {
    if !camera.is_null() {
        drop(Box::from_raw(camera));
    }
}

/// Projects a world point; fails with `BEHIND_CAMERA` at or behind the camera plane.
///
/// # Safety
/// `camera` must be live; `point` must point to 3 doubles, `pixel` to 2
/// writable doubles; `depth` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn pt_camera_project(
    camera: *const PtCamera,
    point: *const f64,
    pixel: *mut f64,
    depth: *mut f64,
) -> PtStatus {
    guard(|| {
        non_null(camera, "camera")?;
        non_null(point, "point")?;
        non_null(pixel, "pixel")?;
        let p = Vec3::from_column_slice(std::slice::from_raw_parts(point, 3));
        let proj = (*camera).inner.project_point(&p).map_err(geom_failure)?;
        *pixel = proj.pixel[0];
        *pixel.add(1) = proj.pixel[1];
        if !depth.is_null() {
            *depth = proj.depth;
        }
        Ok(())
    })
}

/// Draws a trajectory spec from the default parameter ranges.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_trajectory_sample(seed: u64, out: *mut PtTrajectorySpec) -> PtStatus {
    guard(|| {
        non_null(out, "out")?;
        let spec = trajectory::sample_trajectory_spec(seed, None).map_err(invalid)?;
        *out = from_spec(&spec);
        Ok(())
    })
}

/// Builds the per-keyframe pose track of `spec` for an object of the given height.
///
/// # Safety
/// `spec` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pt_pose_track_build(
    spec: *const PtTrajectorySpec,
    object_height: f64,
    out: *mut *mut PtPoseTrack,
) -> PtStatus {
    guard(|| {
        non_null(spec, "spec")?;
        non_null(out, "out")?;
        let spec = to_spec(&*spec)?;
        let inner = trajectory::build_pose_track(&spec, object_height).map_err(invalid)?;
        *out = Box::into_raw(Box::new(PtPoseTrack { inner }));
        Ok(())
    })
}

/// Number of keyframes in a track; 0 for NULL.
///
/// # Safety
/// `track` must be NULL or live.
#[no_mangle]
pub unsafe extern "C" fn pt_pose_track_len(track: *const PtPoseTrack) -> usize {
    if track.is_null() {
        0
    } else {
        (*track).inner.len()
    }
}

/// # Safety
/// `track` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pt_pose_track_get(
    track: *const PtPoseTrack,
    index: usize,
    out: *mut PtPose,
) -> PtStatus {
    guard(|| {
        non_null(track, "track")?;
        non_null(out, "out")?;
        let t = &(*track).inner;
        let pose = t
            .poses
            .get(index)
            .ok_or_else(|| invalid(format!("index {index} out of range 0..{}", t.len())))?;
        *out = PtPose {
            rotation: pose.quaternion_wxyz(),
            translation: pose.translation_array(),
            heading: t.headings[index],
        };
        Ok(())
    })
}

/// # Safety
/// `track` must be NULL or a pointer from [`pt_pose_track_build`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pt_pose_track_free(track: *mut PtPoseTrack) {
    if !track.is_null() {
        drop(Box::from_raw(track));
    }
}

/// Forges one scene and returns its manifest as JSON in `*out`, to be released
/// with [`pt_string_free`]. `config_json` may be NULL for the defaults.
///
/// # Safety
/// `object_id` must be a NUL-terminated string, `raw_extents` 3 readable
/// doubles, `config_json` NULL or NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pt_forge_scene_json(
    seed: u64,
    object_id: *const c_char,
    raw_extents: *const f64,
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> PtStatus {
    guard(|| {
        non_null(raw_extents, "raw_extents")?;
        non_null(out, "out")?;
        let object_id = read_str(object_id, "object_id")?;
        let config = if config_json.is_null() {
            ForgeConfig::default()
        } else {
            ForgeConfig::from_json(read_str(config_json, "config_json")?)
                .map_err(|e| (PtStatus::Parse, e.to_string()))?
        };
        let e = std::slice::from_raw_parts(raw_extents, 3);
        let object = ObjectRecord {
            object_id: object_id.to_string(),
            raw_extents: [e[0], e[1], e[2]],
            mesh_uri: String::new(),
        };
        let manifest = forge::forge_scene(seed, &object, &config).map_err(|e| match e {
            ForgeError::CameraMiss { .. } => (PtStatus::CameraMiss, e.to_string()),
            other => invalid(other),
        })?;
        *out = CString::new(manifest.to_json())
            .map_err(invalid)?
            .into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pt_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Position ObjMC between two track sets laid out as `[track][frame][x, y]`.
///
/// # Safety
/// `generated` and `reference` must each point to `tracks * frames * 2`
/// readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pt_objmc(
    generated: *const f64,
    reference: *const f64,
    tracks: usize,
    frames: usize,
    out: *mut f64,
) -> PtStatus {
    guard(|| {
        non_null(generated, "generated")?;
        non_null(reference, "reference")?;
        non_null(out, "out")?;
        let len = tracks
            .checked_mul(frames)
            .and_then(|n| n.checked_mul(2))
            .ok_or_else(|| invalid("track dimensions overflow"))?;
        let load = |p: *const f64| {
            let flat = std::slice::from_raw_parts(p, len);
            let tracks = flat
                .chunks_exact(2 * frames.max(1))
                .take(tracks)
                .map(|t| PointTrack::new(t.chunks_exact(2).map(|c| [c[0], c[1]]).collect()))
                .collect();
            TrackFile::new("ffi", 0.0, tracks)
        };
        let score = eval::objmc(&load(generated), &load(reference)).map_err(|e| match e {
            EvalError::ShapeMismatch(_) => (PtStatus::ShapeMismatch, e.to_string()),
            other => invalid(other),
        })?;
        *out = score;
        Ok(())
    })
}
