//! Local JSON service backing the trajectory designer.
//!
//! Every handler is a pure function of the request body and the immutable
//! startup config, so identical requests produce identical bytes. The axum
//! router is a thin shell over [`handle`].

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::ForgeConfig;
use crate::forge::{self, DragPointSet, Rect, MAX_DRAG_POINTS, SCHEMA_VERSION};
use crate::geom::{Box3, CameraModel, GeomError, Pose, Vec3};
use crate::raster::PointTrack;
use crate::trajectory::{self, SamplerBounds, TrajectorySpec};

pub const DEFAULT_PORT: u16 = 8717;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ServiceError {
    InvalidBody(Vec<FieldError>),
    /// A projected point lies at or behind the camera plane.
    BehindCamera {
        frame_index: u32,
        depth: f64,
    },
    /// A polyline vertex whose viewing ray never meets the object plane.
    RayMiss {
        vertex: usize,
    },
}

impl ServiceError {
    fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self::InvalidBody(vec![FieldError {
            field: field.into(),
            message: message.into(),
        }])
    }

    pub fn status(&self) -> u16 {
        match self {
            Self::InvalidBody(_) => 400,
            Self::BehindCamera { .. } | Self::RayMiss { .. } => 422,
        }
    }

    fn body(&self) -> serde_json::Value {
        let error = match self {
            Self::InvalidBody(fields) => serde_json::json!({
                "code": "invalid_body",
                "fields": fields,
            }),
            Self::BehindCamera { frame_index, depth } => serde_json::json!({
                "code": "behind_camera",
                "frame_index": frame_index,
                "depth": depth,
            }),
            Self::RayMiss { vertex } => serde_json::json!({
                "code": "ray_misses_plane",
                "vertex": vertex,
            }),
        };
        serde_json::json!({ "schema_version": SCHEMA_VERSION, "error": error })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreviewRequest {
    pub schema_version: u32,
    /// Parametric trajectory; exclusive with `polyline`.
    #[serde(default)]
    pub spec: Option<TrajectorySpec>,
    /// User-drawn path in pixels, lifted onto the plane through the object center.
    #[serde(default)]
    pub polyline: Option<Vec<[f64; 2]>>,
    /// Defaults to the configured camera.
    #[serde(default)]
    pub camera: Option<CameraModel>,
    /// Full box extents in world units; defaults to a unit cube.
    #[serde(default)]
    pub box_extents: Option<[f64; 3]>,
    /// Samples for a polyline; defaults to the configured keyframe count.
    #[serde(default)]
    pub keyframes: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewKeyframe {
    pub frame_index: u32,
    pub pose: Pose,
    /// Unwrapped yaw.
    pub heading: f64,
    pub center_pixel: [f64; 2],
    pub bbox_corners_pixel: [[f64; 2]; 8],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreviewResponse {
    pub schema_version: u32,
    pub camera: CameraModel,
    pub box_half_extents: [f64; 3],
    pub keyframes: Vec<PreviewKeyframe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRequest {
    pub schema_version: u32,
    pub seed: u64,
    #[serde(default)]
    pub bounds: Option<SamplerBounds>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResponse {
    pub schema_version: u32,
    pub spec: TrajectorySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DragRequest {
    pub schema_version: u32,
    pub rect: Rect,
    pub n: usize,
    pub seed: u64,
    /// Center pixel per frame; without it the points stay put.
    #[serde(default)]
    pub center_track: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DragResponse {
    pub schema_version: u32,
    #[serde(flatten)]
    pub points: DragPointSet,
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ServiceError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { String::new() } else { path };
        ServiceError::field(field, e.into_inner().to_string())
    })
}

fn check_version(v: u32) -> Result<(), ServiceError> {
    if v == SCHEMA_VERSION {
        Ok(())
    } else {
        Err(ServiceError::field(
            "schema_version",
            format!("unsupported version {v}, expected {SCHEMA_VERSION}"),
        ))
    }
}

fn behind(frame_index: u32) -> impl Fn(GeomError) -> ServiceError {
    move |e| match e {
        GeomError::BehindCamera { depth } => ServiceError::BehindCamera { frame_index, depth },
        other => ServiceError::field("camera", other.to_string()),
    }
}

/// Poses along a spec or a drawn polyline, with their projections.
pub fn preview(
    req: &PreviewRequest,
    default_camera: &CameraModel,
    default_keyframes: u32,
) -> Result<PreviewResponse, ServiceError> {
    check_version(req.schema_version)?;
    let camera = req.camera.unwrap_or(*default_camera);
    let extents = req.box_extents.unwrap_or([1.0; 3]);
    if extents.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(ServiceError::field(
            "box_extents",
            "extents must be positive",
        ));
    }
    let height = extents[2];
    let half = extents.map(|e| e / 2.0);

    let (poses, headings) = match (&req.spec, &req.polyline) {
        (Some(spec), None) => {
            let track = trajectory::build_pose_track(spec, height)
                .map_err(|e| ServiceError::field("spec", e.to_string()))?;
            (track.poses, track.headings)
        }
        (None, Some(polyline)) => {
            let count = req.keyframes.unwrap_or(default_keyframes);
            polyline_poses(&camera, polyline, count, height)?
        }
        _ => {
            return Err(ServiceError::field(
                "spec",
                "exactly one of `spec` and `polyline` is required",
            ))
        }
    };

    let mut keyframes = Vec::with_capacity(poses.len());
    for (i, (pose, heading)) in poses.into_iter().zip(headings).enumerate() {
        let frame_index = i as u32 + 1;
        let center = camera
            .project_point(pose.translation())
            .map_err(behind(frame_index))?;
        let corners = Box3 {
            half_extents: half,
            pose,
        }
        .corners();
        let mut pixels = [[0.0; 2]; 8];
        for (out, c) in pixels.iter_mut().zip(&corners) {
            *out = camera.project_point(c).map_err(behind(frame_index))?.pixel;
        }
        keyframes.push(PreviewKeyframe {
            frame_index,
            pose,
            heading,
            center_pixel: center.pixel,
            bbox_corners_pixel: pixels,
        });
    }
    Ok(PreviewResponse {
        schema_version: SCHEMA_VERSION,
        camera,
        box_half_extents: half,
        keyframes,
    })
}

/// Lifts pixel vertices onto the plane `z = height / 2` and resamples the
/// resulting ground path by arc length.
fn polyline_poses(
    camera: &CameraModel,
    polyline: &[[f64; 2]],
    count: u32,
    height: f64,
) -> Result<(Vec<Pose>, Vec<f64>), ServiceError> {
    if count < 2 {
        return Err(ServiceError::field(
            "keyframes",
            "need at least 2 keyframes",
        ));
    }
    let z = height / 2.0;
    let mut ground = Vec::with_capacity(polyline.len());
    for (k, px) in polyline.iter().enumerate() {
        if px.iter().any(|v| !v.is_finite()) {
            return Err(ServiceError::field(
                format!("polyline[{k}]"),
                "coordinates must be finite",
            ));
        }
        let (origin, dir) = camera.pixel_ray(*px);
        let t = (z - origin.z) / dir.z;
        if !(t.is_finite() && t > 0.0) {
            return Err(ServiceError::RayMiss { vertex: k });
        }
        let p = origin + t * dir;
        ground.push([p.x, p.y]);
    }
    let samples = trajectory::resample_polyline(&ground, count as usize)
        .map_err(|e| ServiceError::field("polyline", e.to_string()))?;
    Ok(samples
        .into_iter()
        .map(|(p, h)| (Pose::from_yaw(h, Vec3::new(p[0], p[1], z)), h))
        .unzip())
}

pub fn sample(req: &SampleRequest, config: &ForgeConfig) -> Result<SampleResponse, ServiceError> {
    check_version(req.schema_version)?;
    let bounds = req.bounds.unwrap_or_else(|| config.sampler_bounds());
    let spec = trajectory::sample_trajectory_spec(req.seed, Some(&bounds))
        .map_err(|e| ServiceError::field("bounds", e.to_string()))?;
    Ok(SampleResponse {
        schema_version: SCHEMA_VERSION,
        spec,
    })
}

pub fn drag(req: &DragRequest) -> Result<DragResponse, ServiceError> {
    check_version(req.schema_version)?;
    if !(1..=MAX_DRAG_POINTS).contains(&req.n) {
        return Err(ServiceError::field(
            "n",
            format!("n must satisfy 1 <= n <= {MAX_DRAG_POINTS}, got {}", req.n),
        ));
    }
    let track = PointTrack::new(
        req.center_track
            .clone()
            .unwrap_or_else(|| vec![req.rect.center()]),
    );
    let points = forge::sample_drag_points_along(&track, &req.rect, req.n, req.seed)
        .map_err(|e| ServiceError::field("rect", e.to_string()))?;
    Ok(DragResponse {
        schema_version: SCHEMA_VERSION,
        points,
    })
}

/// Immutable state shared by all requests.
#[derive(Debug, Clone)]
pub struct ServiceState {
    pub config: ForgeConfig,
    pub camera: CameraModel,
}

impl ServiceState {
    pub fn new(config: ForgeConfig) -> Result<Self, GeomError> {
        let camera = config.camera_model()?;
        Ok(Self { config, camera })
    }
}

fn respond<T: Serialize>(result: Result<T, ServiceError>) -> (u16, Vec<u8>) {
    let (status, value) = match result {
        Ok(v) => (200, serde_json::to_value(v).expect("response serializes")),
        Err(e) => (e.status(), e.body()),
    };
    let mut bytes = serde_json::to_vec(&value).expect("json value serializes");
    bytes.push(b'\n');
    (status, bytes)
}

/// Routes one request; returns the status code and JSON body.
pub fn handle(state: &ServiceState, method: &str, path: &str, body: &[u8]) -> (u16, Vec<u8>) {
    match (method, path) {
        ("GET", "/v1/health") => respond::<_>(Ok(serde_json::json!({ "status": "ok" }))),
        ("POST", "/v1/trajectory/preview") => {
            respond(parse(body).and_then(|r| preview(&r, &state.camera, state.config.keyframes)))
        }
        ("POST", "/v1/trajectory/sample") => {
            respond(parse(body).and_then(|r| sample(&r, &state.config)))
        }
        ("POST", "/v1/drag/sample") => respond(parse(body).and_then(|r| drag(&r))),
        _ => {
            let mut bytes = serde_json::to_vec(&serde_json::json!({
                "schema_version": SCHEMA_VERSION,
                "error": { "code": "not_found", "path": path },
            }))
            .expect("json value serializes");
            bytes.push(b'\n');
            (404, bytes)
        }
    }
}

fn to_response((status, body): (u16, Vec<u8>)) -> Response {
    let status = StatusCode::from_u16(status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

pub fn router(state: Arc<ServiceState>) -> Router {
    let route = |path: &'static str| {
        move |State(s): State<Arc<ServiceState>>, body: Bytes| async move {
            to_response(handle(&s, "POST", path, &body))
        }
    };
    Router::new()
        .route(
            "/v1/health",
            get(|State(s): State<Arc<ServiceState>>| async move {
                to_response(handle(&s, "GET", "/v1/health", &[]))
            }),
        )
        .route(
            "/v1/trajectory/preview",
            post(route("/v1/trajectory/preview")),
        )
        .route(
            "/v1/trajectory/sample",
            post(route("/v1/trajectory/sample")),
        )
        .route("/v1/drag/sample", post(route("/v1/drag/sample")))
        .with_state(state)
}

pub async fn serve(addr: SocketAddr, state: ServiceState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Arc::new(state))).await
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> ServiceState {
        ServiceState::new(ForgeConfig::default()).unwrap()
    }

    fn json(bytes: &[u8]) -> serde_json::Value {
        serde_json::from_slice(bytes).unwrap()
    }

    #[test]
    fn health() {
        let (status, body) = handle(&state(), "GET", "/v1/health", b"");
        assert_eq!(status, 200);
        assert_eq!(json(&body), serde_json::json!({ "status": "ok" }));
    }

    #[test]
    fn drag_limits_point_count() {
        let body = |n: usize| {
            format!(
                r#"{{"schema_version":1,"rect":{{"min":[10,10],"max":[50,40]}},"n":{n},"seed":3}}"#
            )
        };
        let (status, bytes) = handle(&state(), "POST", "/v1/drag/sample", body(9).as_bytes());
        assert_eq!(status, 400);
        assert_eq!(json(&bytes)["error"]["fields"][0]["field"], "n");
        let (status, bytes) = handle(&state(), "POST", "/v1/drag/sample", body(8).as_bytes());
        assert_eq!(status, 200);
        assert_eq!(json(&bytes)["initial_points"].as_array().unwrap().len(), 8);
    }

    #[test]
    fn invalid_bodies_name_the_field() {
        let s = state();
        let (status, bytes) = handle(
            &s,
            "POST",
            "/v1/trajectory/sample",
            br#"{"schema_version":1,"seed":"x"}"#,
        );
        assert_eq!(status, 400);
        assert_eq!(json(&bytes)["error"]["fields"][0]["field"], "seed");
        let (status, _) = handle(
            &s,
            "POST",
            "/v1/trajectory/sample",
            br#"{"schema_version":2,"seed":1}"#,
        );
        assert_eq!(status, 400);
        let (status, _) = handle(&s, "POST", "/v1/trajectory/preview", b"not json");
        assert_eq!(status, 400);
        let (status, _) = handle(&s, "POST", "/v1/nope", b"{}");
        assert_eq!(status, 404);
    }

    #[test]
    fn behind_camera_is_unprocessable() {
        // the default camera sits at y = -2*sqrt(3); a path through y = -5 passes behind it
        let body = br#"{"schema_version":1,"spec":{"template":"arc","start":[0,-5],
            "initial_heading":0,"radius":1,"swept_angle":1,"steps":200,"keyframes":32}}"#;
        let (status, bytes) = handle(&state(), "POST", "/v1/trajectory/preview", body);
        assert_eq!(status, 422);
        assert_eq!(json(&bytes)["error"]["code"], "behind_camera");
    }

    #[test]
    fn polyline_above_horizon_misses_plane() {
        let body = br#"{"schema_version":1,"polyline":[[100,-500],[200,-500]]}"#;
        let (status, bytes) = handle(&state(), "POST", "/v1/trajectory/preview", body);
        assert_eq!(status, 422);
        assert_eq!(json(&bytes)["error"]["code"], "ray_misses_plane");
    }
}
