//! Rigid transforms, the pinhole camera and 3D box corners.
//!
//! Conventions used throughout the crate and in every file format:
//!
//! * World frame is right-handed and z-up; the floor is the plane `z = 0`.
//! * Camera frame is right-handed with `+x` right, `+y` down and `+z` along
//!   the optical axis.
//! * [`CameraModel::extrinsic`] maps world points into the camera frame.
//! * Quaternions are serialized as `[w, x, y, z]`.

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Points at or closer than this depth (camera frame) cannot be imaged.
pub const NEAR_PLANE: f64 = 1e-9;

pub type Vec3 = Vector3<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeomError {
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid box: {0}")]
    InvalidBox(String),
    #[error("invalid pose: {0}")]
    InvalidPose(String),
}

/// A rigid transform: rotation followed by translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vec3,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    rotation: [f64; 4],
    translation: [f64; 3],
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        PoseRepr {
            rotation: p.quaternion_wxyz(),
            translation: p.translation_array(),
        }
    }
}

impl TryFrom<PoseRepr> for Pose {
    type Error = GeomError;

    fn try_from(r: PoseRepr) -> Result<Self, Self::Error> {
        Pose::from_wxyz(r.rotation, r.translation)
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Builds a pose from a `[w, x, y, z]` quaternion, which is normalized.
    pub fn from_wxyz(q: [f64; 4], t: [f64; 3]) -> Result<Self, GeomError> {
        let quat = Quaternion::new(q[0], q[1], q[2], q[3]);
        let norm = quat.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(GeomError::InvalidPose(format!(
                "quaternion {q:?} cannot be normalized"
            )));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(GeomError::InvalidPose(format!(
                "translation {t:?} is not finite"
            )));
        }
        // Already-unit input is kept bit-exact so serialized poses round-trip.
        let rotation = if (norm - 1.0).abs() <= 1e-12 {
            UnitQuaternion::new_unchecked(quat)
        } else {
            UnitQuaternion::from_quaternion(quat)
        };
        Ok(Self {
            rotation,
            translation: Vec3::from(t),
        })
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    /// Rotation about the world z axis by `yaw` radians, then translation.
    pub fn from_yaw(yaw: f64, t: Vec3) -> Self {
        Self::new(UnitQuaternion::from_axis_angle(&Vec3::z_axis(), yaw), t)
    }

    /// Builds a pose from a rotation matrix that is assumed orthonormal.
    pub fn from_matrix(r: &Matrix3<f64>, t: Vec3) -> Self {
        let rot = Rotation3::from_matrix_unchecked(*r);
        Self::new(UnitQuaternion::from_rotation_matrix(&rot), t)
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.rotation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn translation_array(&self) -> [f64; 3] {
        [self.translation.x, self.translation.y, self.translation.z]
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    /// Yaw about world z in `(-pi, pi]`, valid for z-axis rotations.
    pub fn yaw(&self) -> f64 {
        let r = self.rotation_matrix();
        r[(1, 0)].atan2(r[(0, 0)])
    }

    /// `self ∘ other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        let mut rotation = self.rotation * other.rotation;
        rotation.renormalize();
        Pose {
            rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let mut rotation = self.rotation.inverse();
        rotation.renormalize();
        Pose {
            rotation,
            translation: -(rotation * self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    /// Rotation angle of the pose in radians, in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        self.rotation.angle()
    }
}

/// Pinhole camera with a world-to-camera extrinsic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRepr", into = "CameraRepr")]
pub struct CameraModel {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    extrinsic: Pose,
}

#[derive(Serialize, Deserialize)]
struct CameraRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: u32,
    height: u32,
    extrinsic: Pose,
}

impl From<CameraModel> for CameraRepr {
    fn from(c: CameraModel) -> Self {
        CameraRepr {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            extrinsic: c.extrinsic,
        }
    }
}

impl TryFrom<CameraRepr> for CameraModel {
    type Error = GeomError;

    fn try_from(r: CameraRepr) -> Result<Self, Self::Error> {
        CameraModel::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height, r.extrinsic)
    }
}

/// Result of projecting a point into the image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub pixel: [f64; 2],
    pub depth: f64,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        extrinsic: Pose,
    ) -> Result<Self, GeomError> {
        if !(fx.is_finite() && fx > 0.0 && fy.is_finite() && fy > 0.0) {
            return Err(GeomError::InvalidCamera(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        if width == 0 || height == 0 {
            return Err(GeomError::InvalidCamera(format!(
                "image size must be positive, got {width}x{height}"
            )));
        }
        if !(cx >= 0.0 && cx < width as f64 && cy >= 0.0 && cy < height as f64) {
            return Err(GeomError::InvalidCamera(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            extrinsic,
        })
    }

    /// Camera at `eye` looking at `target` with world `+z` as up.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: u32,
        height: u32,
        eye: Vec3,
        target: Vec3,
    ) -> Result<Self, GeomError> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(GeomError::InvalidCamera("eye coincides with target".into()));
        }
        let forward = forward.normalize();
        let right = forward.cross(&Vec3::z());
        if right.norm() < 1e-12 {
            return Err(GeomError::InvalidCamera(
                "viewing direction is parallel to the up axis".into(),
            ));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let r = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let extrinsic = Pose::from_matrix(&r, -(r * eye));
        Self::new(fx, fy, cx, cy, width, height, extrinsic)
    }

    pub fn fx(&self) -> f64 {
        self.fx
    }
    pub fn fy(&self) -> f64 {
        self.fy
    }
    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn extrinsic(&self) -> &Pose {
        &self.extrinsic
    }

    pub fn with_extrinsic(&self, extrinsic: Pose) -> Self {
        Self { extrinsic, ..*self }
    }

    pub fn to_camera_frame(&self, world: &Vec3) -> Vec3 {
        self.extrinsic.transform_point(world)
    }

    /// Pinhole projection of a camera-frame point, without a depth check.
    pub fn project_camera_point(&self, p: &Vec3) -> [f64; 2] {
        [self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy]
    }

    /// Projects a world point. The pixel may fall outside the image.
    pub fn project_point(&self, world: &Vec3) -> Result<Projection, GeomError> {
        let p = self.to_camera_frame(world);
        if p.z <= NEAR_PLANE {
            return Err(GeomError::BehindCamera { depth: p.z });
        }
        Ok(Projection {
            pixel: self.project_camera_point(&p),
            depth: p.z,
        })
    }

    /// World point at camera-frame depth `depth` along the ray through `pixel`.
    pub fn unproject(&self, pixel: [f64; 2], depth: f64) -> Vec3 {
        let p = Vec3::new(
            (pixel[0] - self.cx) / self.fx * depth,
            (pixel[1] - self.cy) / self.fy * depth,
            depth,
        );
        self.extrinsic.inverse().transform_point(&p)
    }

    /// World-space ray `(origin, unit direction)` through a pixel.
    pub fn pixel_ray(&self, pixel: [f64; 2]) -> (Vec3, Vec3) {
        let cam_to_world = self.extrinsic.inverse();
        let dir_cam = Vec3::new(
            (pixel[0] - self.cx) / self.fx,
            (pixel[1] - self.cy) / self.fy,
            1.0,
        );
        let origin = *cam_to_world.translation();
        let dir = (cam_to_world.rotation() * dir_cam).normalize();
        (origin, dir)
    }
}

/// An oriented 3D box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub half_extents: [f64; 3],
    /// Box-to-world transform.
    pub pose: Pose,
}

/// Index pairs of the 12 box edges. Corners joined by an edge differ in one bit.
pub const BOX_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

impl Box3 {
    pub fn new(half_extents: [f64; 3], pose: Pose) -> Result<Self, GeomError> {
        if half_extents.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
            return Err(GeomError::InvalidBox(format!(
                "half extents must be positive, got {half_extents:?}"
            )));
        }
        Ok(Self { half_extents, pose })
    }

    /// The 8 world-space corners. Corner `k` takes the `+` sign on x when bit 0
    /// of `k` is set, on y for bit 1 and on z for bit 2.
    pub fn corners(&self) -> [Vec3; 8] {
        let [hx, hy, hz] = self.half_extents;
        std::array::from_fn(|k| {
            let sign = |bit: usize| if k >> bit & 1 == 1 { 1.0 } else { -1.0 };
            let local = Vec3::new(sign(0) * hx, sign(1) * hy, sign(2) * hz);
            self.pose.transform_point(&local)
        })
    }
}
