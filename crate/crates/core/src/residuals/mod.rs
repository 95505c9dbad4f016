//! Energy terms and their linearization.
//!
//! Every term is evaluated on the low-resolution grid. Pixel `(x, y)` of a
//! keyframe sits at continuous coordinate `(x, y)`, i.e. full-resolution
//! coordinate `(8x, 8y)`.

mod energy;
mod splat;

pub use energy::{
    assemble_energy, evaluate_energy, linearize, track_residual, EnergyConfig, EnergyTerms,
    TermSwitches,
};
pub use splat::{splat_tracks, Track, TrackSet};

use nalgebra::{Matrix2, Matrix2x6, Vector2, Vector3};

use crate::geometry::{hat, Intrinsics, Pose};
use crate::grid::{is_valid_depth, FlowField, Grid, InvDepthMap, Mask};

/// Residuals of one flow term together with their Jacobians.
///
/// Pose Jacobians are with respect to a left perturbation of the source view's
/// world-from-camera pose; the destination Jacobian is its negation.
#[derive(Debug, Clone, Default)]
pub struct ResidualBlock {
    pub values: Vec<Vector2<f64>>,
    pub weights: Vec<f64>,
    pub jac_pose_src: Vec<Matrix2x6<f64>>,
    pub jac_depth: Vec<Vector2<f64>>,
    /// Derivative with respect to the (low-resolution) `(f, alpha)`.
    pub jac_intrinsics: Vec<Matrix2<f64>>,
}

impl ResidualBlock {
    pub fn weighted_sum_of_squares(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.weights)
            .map(|(r, w)| w * r.norm_squared())
            .sum()
    }
}

/// Scalar per-pixel residuals with unit Jacobian on the depth they regularize.
#[derive(Debug, Clone, Default)]
pub struct ScalarResidualBlock {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ScalarResidualBlock {
    pub fn weighted_sum_of_squares(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.weights)
            .map(|(r, w)| w * r * r)
            .sum()
    }
}

/// Linearized residual of a single pixel.
#[derive(Debug, Clone, Copy)]
pub struct PixelResidual {
    pub value: Vector2<f64>,
    pub jac_pose_src: Matrix2x6<f64>,
    pub jac_depth: Vector2<f64>,
    pub jac_intrinsics: Matrix2<f64>,
}

/// Predicted pixel in view `j` of pixel `u` of view `i` at inverse depth `d`.
///
/// Returns `None` when the pixel has no valid ray or lands behind the camera.
#[inline]
pub fn reproject(
    pose_i: &Pose,
    pose_j_inv: &Pose,
    u: &Vector2<f64>,
    d: f64,
    k: &Intrinsics,
) -> Option<Vector2<f64>> {
    let ray = k.ray(u).ok()?;
    let world = pose_i.transform_homogeneous(&ray, d);
    let pj = pose_j_inv.transform_homogeneous(&world, d);
    k.project(&pj).ok()
}

/// Full linearization of the flow residual at one pixel.
pub fn linearize_pixel(
    pose_i: &Pose,
    pose_j: &Pose,
    u: &Vector2<f64>,
    d: f64,
    k: &Intrinsics,
    target: &Vector2<f64>,
) -> Option<PixelResidual> {
    let (ray, dray) = k.ray_with_jacobian(u).ok()?;
    let world: Vector3<f64> = pose_i.transform_homogeneous(&ray, d);
    let rj_t = pose_j.rotation.inverse().to_rotation_matrix().into_inner();
    let pj = rj_t * (world - pose_j.translation * d);
    let (px, jac) = k.project_with_jacobians(&pj).ok()?;
    let jp = jac.point * rj_t;
    let mut dx = Matrix2x6::zeros();
    dx.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jp * d));
    dx.fixed_view_mut::<2, 3>(0, 3)
        .copy_from(&(-jp * hat(&world)));
    let jac_depth = jp * (pose_i.translation - pose_j.translation);
    let ri = pose_i.rotation_matrix();
    let jac_intrinsics = jac.intrinsics + jp * ri * dray;
    Some(PixelResidual {
        value: px - target,
        jac_pose_src: dx,
        jac_depth,
        jac_intrinsics,
    })
}

/// Dense flow term of one edge: `proj(T_j^-1 T_i unproj(u, D[u])) - u - F[u]` per pixel,
/// weighted by the flow confidence. Pixels without valid depth or without a
/// valid projection get weight zero.
pub fn dense_flow_residual(
    pose_i: &Pose,
    pose_j: &Pose,
    depth: &InvDepthMap,
    k: &Intrinsics,
    flow: &FlowField,
) -> ResidualBlock {
    let n = depth.len();
    let mut block = ResidualBlock {
        values: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
        jac_pose_src: Vec::with_capacity(n),
        jac_depth: Vec::with_capacity(n),
        jac_intrinsics: Vec::with_capacity(n),
    };
    for idx in 0..n {
        let (x, y) = depth.coords(idx);
        let u = Vector2::new(x as f64, y as f64);
        let d = depth.as_slice()[idx];
        let target = u + flow.flow.as_slice()[idx];
        let w = flow.weight.as_slice()[idx];
        let lin = if is_valid_depth(d) && w > 0.0 {
            linearize_pixel(pose_i, pose_j, &u, d, k, &target)
        } else {
            None
        };
        match lin {
            Some(p) => {
                block.values.push(p.value);
                block.weights.push(w);
                block.jac_pose_src.push(p.jac_pose_src);
                block.jac_depth.push(p.jac_depth);
                block.jac_intrinsics.push(p.jac_intrinsics);
            }
            _ => {
                block.values.push(Vector2::zeros());
                block.weights.push(0.0);
                block.jac_pose_src.push(Matrix2x6::zeros());
                block.jac_depth.push(Vector2::zeros());
                block.jac_intrinsics.push(Matrix2::zeros());
            }
        }
    }
    block
}

/// Depth regularizer: `r[u] = D[u] - D_prior[u]` weighted by `m[u]`.
/// Pixels with an invalid depth or prior get weight zero.
pub fn depth_prior_residual(
    depth: &InvDepthMap,
    prior: &InvDepthMap,
    confidence: &Grid<f64>,
) -> ScalarResidualBlock {
    assert!(depth.same_shape(prior) && depth.same_shape(confidence));
    let mut out = ScalarResidualBlock {
        values: Vec::with_capacity(depth.len()),
        weights: Vec::with_capacity(depth.len()),
    };
    for ((d, p), m) in depth.iter().zip(prior.iter()).zip(confidence.iter()) {
        if is_valid_depth(*d) && is_valid_depth(*p) && *m > 0.0 {
            out.values.push(d - p);
            out.weights.push(*m);
        } else {
            out.values.push(0.0);
            out.weights.push(0.0);
        }
    }
    out
}

/// Multiplies flow confidences by the static mask; flow vectors are untouched.
pub fn apply_static_mask(flow: &FlowField, mask: &Mask) -> FlowField {
    assert!(
        flow.weight.same_shape(mask),
        "mask and flow dimensions differ"
    );
    let weight = Grid::from_vec(
        flow.width(),
        flow.height(),
        flow.weight
            .iter()
            .zip(mask.iter())
            .map(|(w, m)| if *m { *w } else { 0.0 })
            .collect(),
    );
    FlowField {
        flow: flow.flow.clone(),
        weight,
    }
}
