//! Seven-dimensional Gaussian splatting on the CPU.
//!
//! A scene is a cloud of [`Gaussian7D`] primitives, each a joint normal
//! distribution over position, time and view direction. Rendering a frame
//! conditions every primitive on the frame's timestamp and per-primitive view
//! direction ([`slice`]), which yields an ordinary 3D Gaussian that is then
//! projected and alpha-composited by a tile-based rasterizer ([`render`]).
//! Everything on that path is differentiable, and [`train`] fits a cloud plus
//! the optional residual refinement networks ([`refine`]) to posed,
//! timestamped images.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod camera;
pub mod decompose;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod io;
pub mod loss;
pub mod metrics;
pub mod optim;
pub mod refine;
pub mod render;
pub mod shading;
pub mod slice;
pub mod train;
pub mod verify;

pub use camera::CameraFrame;
pub use decompose::extract_scale_rotation;
pub use error::{Error, Result};
pub use gaussian::{assemble_covariance, partition, CovarianceBlocks, Gaussian7D};
pub use refine::{encode_time, MlpRefiner};
pub use render::{render, render_backward, FrameBuffer, RenderSettings};
pub use slice::{modulation, slice_joint, slice_two_stage, OpacityMode, SliceConfig, Sliced3D, SlicingMode};
