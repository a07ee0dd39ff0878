//! Depth-only camera localization against a 3D Gaussian splatting map.
//!
//! The pipeline renders depth from a fixed Gaussian scene with a
//! differentiable tile rasterizer and recovers the world-to-camera pose of
//! a query depth image with Adam on a masked L1 depth + Sobel contour loss.

// Negated comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod dataio;
pub mod error;
pub mod eval;
pub mod geom;
pub mod grad;
pub mod image;
pub mod knn;
pub mod loss;
pub mod pose_opt;
pub mod renderer;
pub mod scene_init;

pub use error::{Error, Result};
pub use geom::{CameraIntrinsics, Pose, Quaternion};
pub use image::{DepthImage, Image, Mask};
pub use renderer::{render, Gaussian, GaussianScene, RenderConfig, RenderOutput};
