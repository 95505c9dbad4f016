//! Keyframe bundle adjustment for video camera poses.
//!
//! Poses, focal length and low-resolution inverse depth are solved jointly
//! from dense optical flow, sparse point tracks and a monocular depth prior.
//! Non-keyframes are then infilled against their neighbouring keyframes, and
//! full-resolution video depth is aligned to the solved geometry.
//!
//! External networks are modelled by provider traits in [`pipeline`]. The
//! [`sim`] module renders a synthetic scene that serves every provider with
//! exact (optionally noisy) data.

pub mod depth_align;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod pipeline;
pub mod residuals;
pub mod sim;
pub mod solver;
pub mod tracker;

pub use error::{Error, Result};
pub use geometry::{CameraModel, CubeRig, Intrinsics, Pose};
pub use graph::{BAGraph, Edge, Keyframe, ViewId};
pub use grid::{FlowField, Grid, InvDepthMap, Mask};
pub use metrics::Trajectory;
pub use pipeline::{PipelineConfig, PipelineOutput, Providers};
pub use residuals::{TermSwitches, Track, TrackSet};
pub use sim::{SimConfig, SimDataset};
pub use solver::SolverConfig;

/// Ratio between full-resolution images and the optimized depth/flow grids.
pub const LOW_RES_FACTOR: usize = 8;
