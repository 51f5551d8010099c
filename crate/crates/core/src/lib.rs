//! Forge and evaluation toolkit for pose-aware, trajectory-guided video
//! generation: rotational trajectory sampling with 6D pose tracks, projected
//! bounding boxes, conditioning images, per-stage training records and the
//! ObjMC trajectory-accuracy metric.
//!
//! World frame is z-up; cameras look along `+z` with `x` right and `y` down.

pub mod conditioning;
pub mod config;
pub mod eval;
pub mod forge;
pub mod geom;
pub mod raster;
pub mod seed;
pub mod service;
pub mod trajectory;
