//! Conditioning-signal rasterization: per-frame trajectory segment images and
//! 3D bounding-box wireframe overlays.
//!
//! Lines are integer Bresenham lines between rounded endpoints, thickened by
//! stamping a disk `{(dx, dy) : dx² + dy² < r²}` with `r = ⌈stroke / 2⌉` at
//! every lit pixel. Segments are clipped against a margin around the image
//! before rasterization, so arbitrarily distant endpoints cost nothing.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{Box3, CameraModel, Vec3, BOX_EDGES, NEAR_PLANE};

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("image {image_w}x{image_h}x{channels} does not match camera {camera_w}x{camera_h}x3")]
    ImageMismatch {
        image_w: u32,
        image_h: u32,
        channels: u8,
        camera_w: u32,
        camera_h: u32,
    },
    #[error("png encoding failed: {0}")]
    Png(#[from] png::EncodingError),
    #[error("png decoding failed: {0}")]
    PngDecode(#[from] png::DecodingError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 8-bit row-major raster with 1 or 3 interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: u32,
    height: u32,
    channels: u8,
    data: Vec<u8>,
}

impl Image {
    pub fn new(width: u32, height: u32, channels: u8) -> Self {
        assert!(channels == 1 || channels == 3, "channels must be 1 or 3");
        Self {
            width,
            height,
            channels,
            data: vec![0; width as usize * height as usize * channels as usize],
        }
    }

    pub fn from_raw(
        width: u32,
        height: u32,
        channels: u8,
        data: Vec<u8>,
    ) -> Result<Self, RasterError> {
        if channels != 1 && channels != 3 {
            return Err(RasterError::Domain(format!(
                "unsupported channel count {channels}"
            )));
        }
        let expected = width as usize * height as usize * channels as usize;
        if data.len() != expected {
            return Err(RasterError::Domain(format!(
                "buffer holds {} bytes, expected {expected}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }
    pub fn height(&self) -> u32 {
        self.height
    }
    pub fn channels(&self) -> u8 {
        self.channels
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: u32, y: u32) -> &[u8] {
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        &self.data[i..i + c]
    }

    pub fn is_blank(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Coordinates of pixels that differ from `other`, in row-major order.
    pub fn diff_pixels(&self, other: &Image) -> Vec<(u32, u32)> {
        assert_eq!(
            (self.width, self.height, self.channels),
            (other.width, other.height, other.channels)
        );
        let c = self.channels as usize;
        self.data
            .chunks_exact(c)
            .zip(other.data.chunks_exact(c))
            .enumerate()
            .filter(|(_, (a, b))| a != b)
            .map(|(i, _)| {
                (
                    (i % self.width as usize) as u32,
                    (i / self.width as usize) as u32,
                )
            })
            .collect()
    }

    fn paint(&mut self, x: i64, y: i64, color: &[u8; 3]) {
        if x < 0 || y < 0 || x >= i64::from(self.width) || y >= i64::from(self.height) {
            return;
        }
        let c = self.channels as usize;
        let i = (y as usize * self.width as usize + x as usize) * c;
        self.data[i..i + c].copy_from_slice(&color[..c]);
    }

    pub fn encode_png<W: Write>(&self, w: W) -> Result<(), RasterError> {
        let mut enc = png::Encoder::new(w, self.width, self.height);
        enc.set_color(match self.channels {
            1 => png::ColorType::Grayscale,
            _ => png::ColorType::Rgb,
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(&self.data)?;
        writer.finish()?;
        Ok(())
    }

    pub fn write_png(&self, path: &Path) -> Result<(), RasterError> {
        let mut buf = Vec::new();
        self.encode_png(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_png(path: &Path) -> Result<Self, RasterError> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut reader = png::Decoder::new(file).read_info()?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| RasterError::Domain("png too large".into()))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf)?;
        buf.truncate(info.buffer_size());
        let channels = match (info.color_type, info.bit_depth) {
            (png::ColorType::Grayscale, png::BitDepth::Eight) => 1,
            (png::ColorType::Rgb, png::BitDepth::Eight) => 3,
            other => {
                return Err(RasterError::Domain(format!(
                    "unsupported png format {other:?}"
                )))
            }
        };
        Self::from_raw(info.width, info.height, channels, buf)
    }
}

/// A pixel-space track `(x_i, y_i), i = 1..L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointTrack {
    pub points: Vec<[f64; 2]>,
}

impl PointTrack {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// How trajectory image `i` relates to the track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SegmentMode {
    /// Only the segment from point `i` to point `i + 1`.
    #[default]
    PerStep,
    /// Every segment from point 1 up to point `i + 1`.
    Cumulative,
}

pub const WHITE: [u8; 3] = [255, 255, 255];
pub const RED: [u8; 3] = [255, 0, 0];

fn stamp_radius(stroke: u32) -> i64 {
    i64::from(stroke.div_ceil(2))
}

fn disk_offsets(radius: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            if dx * dx + dy * dy < radius * radius {
                out.push((dx, dy));
            }
        }
    }
    out
}

/// Clips segment `a`→`b` to the rectangle `[lo, hi]²` (Liang-Barsky).
fn clip_segment(
    a: [f64; 2],
    b: [f64; 2],
    lo: [f64; 2],
    hi: [f64; 2],
) -> Option<([f64; 2], [f64; 2])> {
    let d = [b[0] - a[0], b[1] - a[1]];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for axis in 0..2 {
        for (p, q) in [
            (-d[axis], a[axis] - lo[axis]),
            (d[axis], hi[axis] - a[axis]),
        ] {
            if p == 0.0 {
                if q < 0.0 {
                    return None;
                }
            } else {
                let t = q / p;
                if p < 0.0 {
                    t0 = t0.max(t);
                } else {
                    t1 = t1.min(t);
                }
            }
        }
    }
    if t0 > t1 {
        return None;
    }
    Some((
        [a[0] + t0 * d[0], a[1] + t0 * d[1]],
        [a[0] + t1 * d[0], a[1] + t1 * d[1]],
    ))
}

/// Draws a thick segment. Non-finite endpoints draw nothing.
fn draw_line(img: &mut Image, a: [f64; 2], b: [f64; 2], stroke: u32, color: &[u8; 3]) {
    if a.iter().chain(&b).any(|v| !v.is_finite()) {
        return;
    }
    let r = stamp_radius(stroke);
    let margin = (r + 1) as f64;
    let lo = [-margin, -margin];
    let hi = [
        f64::from(img.width) + margin,
        f64::from(img.height) + margin,
    ];
    let Some((a, b)) = clip_segment(a, b, lo, hi) else {
        return;
    };
    let disk = disk_offsets(r);
    let (mut x, mut y) = (a[0].round() as i64, a[1].round() as i64);
    let (x1, y1) = (b[0].round() as i64, b[1].round() as i64);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        for &(ox, oy) in &disk {
            img.paint(x + ox, y + oy, color);
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Trajectory segment image `i` (1-based) of `track`: the segment from point
/// `i` to point `i + 1` in white on black. Image `L` is left all zero.
pub fn draw_segment_image(
    track: &PointTrack,
    i: usize,
    width: u32,
    height: u32,
    stroke: u32,
    mode: SegmentMode,
) -> Result<Image, RasterError> {
    let l = track.len();
    if i < 1 || i > l {
        return Err(RasterError::Domain(format!(
            "frame index {i} outside 1..={l}"
        )));
    }
    let mut img = Image::new(width, height, 1);
    if i == l {
        return Ok(img);
    }
    let first = match mode {
        SegmentMode::PerStep => i,
        SegmentMode::Cumulative => 1,
    };
    for k in first..=i {
        draw_line(
            &mut img,
            track.points[k - 1],
            track.points[k],
            stroke,
            &WHITE,
        );
    }
    Ok(img)
}

/// Pixel-space segments of the box edges that can be imaged. An edge with
/// one endpoint behind the camera is cut at the near plane first.
pub fn bbox_segments(cam: &CameraModel, bbox: &Box3) -> Vec<([f64; 2], [f64; 2])> {
    let corners = bbox.corners().map(|c| cam.to_camera_frame(&c));
    BOX_EDGES
        .iter()
        .filter_map(|&(i, j)| {
            let (mut a, mut b) = (corners[i], corners[j]);
            match (a.z > NEAR_PLANE, b.z > NEAR_PLANE) {
                (false, false) => return None,
                (false, true) => a = cut_at_near(&a, &b),
                (true, false) => b = cut_at_near(&b, &a),
                (true, true) => {}
            }
            Some((cam.project_camera_point(&a), cam.project_camera_point(&b)))
        })
        .collect()
}

fn cut_at_near(behind: &Vec3, front: &Vec3) -> Vec3 {
    let t = (NEAR_PLANE - behind.z) / (front.z - behind.z);
    let mut p = behind + (front - behind) * t;
    p.z = NEAR_PLANE;
    p
}

/// Draws the projected box wireframe over a copy of `base`.
pub fn draw_bbox_overlay(
    base: &Image,
    cam: &CameraModel,
    bbox: &Box3,
    color: [u8; 3],
    stroke: u32,
) -> Result<Image, RasterError> {
    if base.channels != 3 || base.width != cam.width() || base.height != cam.height() {
        return Err(RasterError::ImageMismatch {
            image_w: base.width,
            image_h: base.height,
            channels: base.channels,
            camera_w: cam.width(),
            camera_h: cam.height(),
        });
    }
    let mut out = base.clone();
    for (a, b) in bbox_segments(cam, bbox) {
        draw_line(&mut out, a, b, stroke, &color);
    }
    Ok(out)
}

/// Draws the full polyline of `track` over a copy of `base`. Grayscale images
/// take the first color component.
pub fn draw_track_overlay(base: &Image, track: &PointTrack, color: [u8; 3], stroke: u32) -> Image {
    let mut out = base.clone();
    match track.points.as_slice() {
        [] => {}
        [p] => draw_line(&mut out, *p, *p, stroke, &color),
        pts => {
            for w in pts.windows(2) {
                draw_line(&mut out, w[0], w[1], stroke, &color);
            }
        }
    }
    out
}
