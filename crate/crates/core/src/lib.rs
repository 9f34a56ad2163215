//! Chain-of-Sight corpus tooling for monocular 3D detection.
//!
//! The crate turns camera-frame 3D box annotations into interleaved 2D→3D
//! training text and scores model output with volumetric AP₃D:
//!
//! 1. [`geometry`] – box types, rotation views, pinhole projection, visibility and truncation.
//! 2. [`iou3d`] – exact oriented-box IoU plus a Monte-Carlo oracle.
//! 3. [`codec`] – the wire grammar, encoder and tolerant decoder.
//! 4. [`curation`] – dataset adapters, filtering and canonical depth-sorted lines.
//! 5. [`negatives`] – absent-category sampling under per-image and corpus caps.
//! 6. [`packaging`] – conversation records, grounding prompts and annotation jobs.
//! 7. [`packing`] – tiling, token accounting and online context packing.
//! 8. [`eval`] – greedy matching and AP over IoU-threshold sweeps.
//!
//! Geometry, IoU and evaluation are generic over [`Scalar`] (`f32` or `f64`);
//! the aliases below fix the scalar to `f64`, which the file-based pipeline uses.

pub mod codec;
pub mod curation;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod iou3d;
pub mod linalg;
pub mod negatives;
pub mod packaging;
pub mod packing;
pub mod scalar;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Vec3 = linalg::Vec3<f64>;
pub type Mat3 = linalg::Mat3<f64>;
pub type CameraIntrinsics = geometry::CameraIntrinsics<f64>;
pub type Rotation = geometry::Rotation<f64>;
pub type Box3D = geometry::Box3D<f64>;
pub type Box2D = geometry::Box2D<f64>;
pub type Rect = geometry::Rect<f64>;
pub type SceneInstance = codec::SceneInstance<f64>;

pub type Box3DF32 = geometry::Box3D<f32>;
pub type RotationF32 = geometry::Rotation<f32>;
pub type CameraIntrinsicsF32 = geometry::CameraIntrinsics<f32>;
