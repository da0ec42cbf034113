//! Pseudo-LiDAR camera pose regression.
//!
//! Depth maps are lifted into camera-frame point clouds with the pinhole
//! model, summarised by a PointNet-style stream (set abstraction followed by
//! a shared perceptron and max pooling, no alignment transforms), optionally
//! fused with an attention-refined image feature, and regressed to a
//! position plus log-quaternion orientation under a loss with learnable
//! translation/rotation weights.
//!
//! Everything trains on the small reverse-mode engine in [`autodiff`].

pub mod autodiff;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod models;
pub mod ply;
pub mod pointcloud;
pub mod pose;
pub mod synth;
pub mod train;

pub use autodiff::{AdamState, Graph, ParamId, ParamStore, Parameter, Tensor, Var};
pub use error::{Error, Result};
pub use geometry::{CameraIntrinsics, DepthMap, PointCloud, RgbImage};
pub use models::{ModelConfig, ModelKind, PoseModel};
pub use pose::{LossWeights, Pose, UnitQuaternion};
