//! Pose algebra and camera models.

mod camera;
mod pose;
mod rectify;
mod rig;

pub use camera::{CameraModel, Intrinsics, ProjectionJacobians, Ray, THETA_MAX};
pub use pose::{hat, Pose};
pub use rectify::{rectify_unified_to_pinhole, RemapTable};
pub use rig::{CubeFace, CubeRig};
