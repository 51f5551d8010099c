//! Rotational trajectory templates, their sampler and pose-track evaluation.
//!
//! A trajectory lives on the floor plane. Its heading is the direction of
//! travel and the object's yaw is locked to it, so an arc that sweeps `θ`
//! turns the object by `θ` about the arc's center.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Pose, Vec3};
use crate::seed;

pub const DEFAULT_STEPS: u32 = 200;
pub const DEFAULT_KEYFRAMES: u32 = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid override `{field}`: {reason}")]
    InvalidOverride { field: &'static str, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Template {
    /// A single circular arc.
    Arc,
    /// Two arcs of opposite curvature, each sweeping half the angle.
    SCurve,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub template: Template,
    pub start: [f64; 2],
    pub initial_heading: f64,
    pub radius: f64,
    /// Signed; positive turns counter-clockwise seen from above.
    pub swept_angle: f64,
    pub steps: u32,
    pub keyframes: u32,
}

/// Closed interval used to bound sampled parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

impl Bounds {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    fn check(&self, field: &'static str, min: f64) -> Result<(), TrajectoryError> {
        let reason = if !(self.lo.is_finite() && self.hi.is_finite()) {
            Some(format!("bounds [{}, {}] are not finite", self.lo, self.hi))
        } else if self.lo > self.hi {
            Some(format!("bounds [{}, {}] are inverted", self.lo, self.hi))
        } else if self.lo < min {
            Some(format!("lower bound {} is below {min}", self.lo))
        } else {
            None
        };
        match reason {
            Some(reason) => Err(TrajectoryError::InvalidOverride { field, reason }),
            None => Ok(()),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        self.lo + (self.hi - self.lo) * rng.random::<f64>()
    }
}

/// Parameter ranges for [`sample_trajectory_spec`]. The default ranges are
/// radius 1 to 1.5 units, a sweep of 90° to 180°, a start inside the unit disk
/// and an initial heading of 0° to 90° from `+x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerBounds {
    pub radius: Bounds,
    pub swept_magnitude: Bounds,
    pub start_radius: f64,
    pub initial_heading: Bounds,
    /// Forces a template instead of a fair coin flip.
    pub template: Option<Template>,
    pub steps: u32,
    pub keyframes: u32,
}

impl Default for SamplerBounds {
    fn default() -> Self {
        Self {
            radius: Bounds::new(1.0, 1.5),
            swept_magnitude: Bounds::new(FRAC_PI_2, PI),
            start_radius: 1.0,
            initial_heading: Bounds::new(0.0, FRAC_PI_2),
            template: None,
            steps: DEFAULT_STEPS,
            keyframes: DEFAULT_KEYFRAMES,
        }
    }
}

impl SamplerBounds {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        self.radius.check("radius", f64::MIN_POSITIVE)?;
        self.swept_magnitude.check("swept_magnitude", 0.0)?;
        self.initial_heading
            .check("initial_heading", f64::NEG_INFINITY)?;
        if !(self.start_radius.is_finite() && self.start_radius >= 0.0) {
            return Err(TrajectoryError::InvalidOverride {
                field: "start_radius",
                reason: format!("must be a non-negative number, got {}", self.start_radius),
            });
        }
        if self.keyframes < 2 || self.keyframes > self.steps {
            return Err(TrajectoryError::InvalidOverride {
                field: "keyframes",
                reason: format!(
                    "need 2 <= keyframes <= steps, got keyframes={} steps={}",
                    self.keyframes, self.steps
                ),
            });
        }
        Ok(())
    }
}

/// Draws a trajectory spec; the same seed always yields the same spec.
pub fn sample_trajectory_spec(
    rng_seed: u64,
    bounds: Option<&SamplerBounds>,
) -> Result<TrajectorySpec, TrajectoryError> {
    let defaults = SamplerBounds::default();
    let b = bounds.unwrap_or(&defaults);
    b.validate()?;
    let mut rng = seed::rng(rng_seed);

    let coin = rng.random_bool(0.5);
    let template = b.template.unwrap_or(if coin {
        Template::SCurve
    } else {
        Template::Arc
    });
    // Uniform by area over the disk.
    let rho = b.start_radius * rng.random::<f64>().sqrt();
    let phi = TAU * rng.random::<f64>();
    let initial_heading = b.initial_heading.sample(&mut rng);
    let radius = b.radius.sample(&mut rng);
    let magnitude = b.swept_magnitude.sample(&mut rng);
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };

    Ok(TrajectorySpec {
        template,
        start: [rho * phi.cos(), rho * phi.sin()],
        initial_heading,
        radius,
        swept_angle: sign * magnitude,
        steps: b.steps,
        keyframes: b.keyframes,
    })
}

/// One constant-curvature piece of a curve.
#[derive(Debug, Clone, Copy)]
struct Piece {
    start: [f64; 2],
    heading: f64,
    radius: f64,
    sweep: f64,
}

impl Piece {
    /// Position and heading at fraction `u` of the piece. A zero sweep is a
    /// straight run of length `radius`.
    fn eval(&self, u: f64) -> ([f64; 2], f64) {
        if self.sweep == 0.0 {
            let (sin, cos) = self.heading.sin_cos();
            return (
                [
                    self.start[0] + u * self.radius * cos,
                    self.start[1] + u * self.radius * sin,
                ],
                self.heading,
            );
        }
        let side = self.sweep.signum();
        let c = self.center();
        let heading = self.heading + u * self.sweep;
        let (sin, cos) = heading.sin_cos();
        (
            [
                c[0] + side * self.radius * sin,
                c[1] - side * self.radius * cos,
            ],
            heading,
        )
    }

    fn center(&self) -> [f64; 2] {
        let side = self.sweep.signum();
        let (sin, cos) = self.heading.sin_cos();
        [
            self.start[0] - side * self.radius * sin,
            self.start[1] + side * self.radius * cos,
        ]
    }
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let finite = self.start.iter().all(|v| v.is_finite())
            && self.initial_heading.is_finite()
            && self.swept_angle.is_finite();
        if !finite {
            return Err(TrajectoryError::Domain("spec has non-finite fields".into()));
        }
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return Err(TrajectoryError::Domain(format!(
                "radius must be positive, got {}",
                self.radius
            )));
        }
        if self.keyframes < 2 || self.keyframes > self.steps {
            return Err(TrajectoryError::Domain(format!(
                "need 2 <= keyframes <= steps, got keyframes={} steps={}",
                self.keyframes, self.steps
            )));
        }
        Ok(())
    }

    fn pieces(&self) -> Vec<Piece> {
        match self.template {
            Template::Arc => vec![Piece {
                start: self.start,
                heading: self.initial_heading,
                radius: self.radius,
                sweep: self.swept_angle,
            }],
            Template::SCurve => {
                let half = self.swept_angle / 2.0;
                // straight halves split the run length
                let radius = if half == 0.0 {
                    self.radius / 2.0
                } else {
                    self.radius
                };
                let first = Piece {
                    start: self.start,
                    heading: self.initial_heading,
                    radius,
                    sweep: half,
                };
                let (start, heading) = first.eval(1.0);
                vec![
                    first,
                    Piece {
                        start,
                        heading,
                        radius,
                        sweep: -half,
                    },
                ]
            }
        }
    }

    /// Total path length: `radius * |swept_angle|`, or `radius` for a zero sweep.
    pub fn arc_length(&self) -> f64 {
        if self.swept_angle == 0.0 {
            self.radius
        } else {
            self.radius * self.swept_angle.abs()
        }
    }

    /// Position and heading at curve parameter `s` in `[0, 1]`.
    pub fn eval(&self, s: f64) -> Result<([f64; 2], f64), TrajectoryError> {
        if !(0.0..=1.0).contains(&s) {
            return Err(TrajectoryError::Domain(format!(
                "curve parameter {s} outside [0, 1]"
            )));
        }
        let pieces = self.pieces();
        Ok(match pieces.as_slice() {
            [single] => single.eval(s),
            [first, _] if s <= 0.5 => first.eval(2.0 * s),
            [_, second] => second.eval(2.0 * s - 1.0),
            _ => unreachable!("a template has one or two pieces"),
        })
    }

    /// Rotation center (on the floor) of the piece active at `s`, if curved.
    pub fn rotation_center(&self, s: f64) -> Option<[f64; 2]> {
        let pieces = self.pieces();
        let piece = if s <= 0.5 || pieces.len() == 1 {
            pieces[0]
        } else {
            pieces[1]
        };
        (piece.sweep != 0.0).then(|| piece.center())
    }
}

/// Free-function form of [`TrajectorySpec::eval`].
pub fn eval_curve(spec: &TrajectorySpec, s: f64) -> Result<([f64; 2], f64), TrajectoryError> {
    spec.eval(s)
}

/// Evenly spaced indices into `0..steps`, including both ends.
pub fn subsample_keyframes(steps: u32, keyframes: u32) -> Result<Vec<u32>, TrajectoryError> {
    if keyframes < 2 {
        return Err(TrajectoryError::Domain(format!(
            "need at least 2 keyframes, got {keyframes}"
        )));
    }
    if keyframes > steps {
        return Err(TrajectoryError::Domain(format!(
            "keyframes {keyframes} exceeds steps {steps}"
        )));
    }
    let span = u64::from(steps - 1);
    let den = u64::from(keyframes - 1);
    // round(i * span / den), halves rounded up, in exact integer arithmetic
    Ok((0..u64::from(keyframes))
        .map(|i| ((2 * i * span + den) / (2 * den)) as u32)
        .collect())
}

/// Per-keyframe object poses along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseTrack {
    pub spec: TrajectorySpec,
    pub object_height: f64,
    /// Indices into the `steps` animation samples that became keyframes.
    pub step_indices: Vec<u32>,
    pub poses: Vec<Pose>,
    /// Unwrapped heading (= yaw) per keyframe.
    pub headings: Vec<f64>,
    /// Rotation center of the active arc per keyframe, at object-center height.
    pub rotation_centers: Vec<Option<[f64; 3]>>,
}

impl PoseTrack {
    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

pub fn build_pose_track(
    spec: &TrajectorySpec,
    object_height: f64,
) -> Result<PoseTrack, TrajectoryError> {
    if !(object_height.is_finite() && object_height > 0.0) {
        return Err(TrajectoryError::Domain(format!(
            "object height must be positive, got {object_height}"
        )));
    }
    spec.validate()?;
    let step_indices = subsample_keyframes(spec.steps, spec.keyframes)?;
    let z = object_height / 2.0;
    let last = f64::from(spec.steps - 1);

    let mut poses = Vec::with_capacity(step_indices.len());
    let mut headings = Vec::with_capacity(step_indices.len());
    let mut rotation_centers = Vec::with_capacity(step_indices.len());
    for &k in &step_indices {
        let s = f64::from(k) / last;
        let (p, heading) = spec.eval(s)?;
        poses.push(Pose::from_yaw(heading, Vec3::new(p[0], p[1], z)));
        headings.push(heading);
        rotation_centers.push(spec.rotation_center(s).map(|c| [c[0], c[1], z]));
    }
    Ok(PoseTrack {
        spec: *spec,
        object_height,
        step_indices,
        poses,
        headings,
        rotation_centers,
    })
}

/// Resamples a polyline to `count` points evenly spaced by arc length.
/// Each sample carries the direction of the segment it lies on; a sample
/// exactly on an interior vertex takes the outgoing segment.
pub fn resample_polyline(
    points: &[[f64; 2]],
    count: usize,
) -> Result<Vec<([f64; 2], f64)>, TrajectoryError> {
    if count < 2 {
        return Err(TrajectoryError::Domain(format!(
            "need at least 2 samples, got {count}"
        )));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(TrajectoryError::Domain(
            "polyline has non-finite points".into(),
        ));
    }
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(points.len());
    for p in points {
        if pts.last() != Some(p) {
            pts.push(*p);
        }
    }
    if pts.len() < 2 {
        return Err(TrajectoryError::Domain(
            "polyline needs at least two distinct points".into(),
        ));
    }
    let lengths: Vec<f64> = pts
        .windows(2)
        .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
        .collect();
    let total: f64 = lengths.iter().sum();

    let mut out = Vec::with_capacity(count);
    let mut seg = 0;
    let mut seg_start = 0.0;
    let mut prev_heading: Option<f64> = None;
    for k in 0..count {
        let target = total * k as f64 / (count - 1) as f64;
        while seg + 1 < lengths.len() && target >= seg_start + lengths[seg] {
            seg_start += lengths[seg];
            seg += 1;
        }
        let (a, b) = (pts[seg], pts[seg + 1]);
        let u = ((target - seg_start) / lengths[seg]).clamp(0.0, 1.0);
        let mut heading = (b[1] - a[1]).atan2(b[0] - a[0]);
        if let Some(prev) = prev_heading {
            heading = prev + wrap_angle(heading - prev);
        }
        prev_heading = Some(heading);
        out.push((
            [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])],
            heading,
        ));
    }
    Ok(out)
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}
