//! Rigid transforms on SE(3) with a unit-quaternion rotation.
//!
//! Poses map camera coordinates to world coordinates. Tangent vectors are
//! ordered `[rho (translation), omega (rotation)]` and updates are applied
//! on the left: `exp(xi) * T`.

use nalgebra::{Matrix3, Matrix4, Quaternion, UnitQuaternion, Vector3, Vector6};

/// Below this rotation angle the SO(3) Jacobians use their Taylor series.
const SMALL_ANGLE: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

/// Skew-symmetric cross-product matrix.
#[inline]
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Left Jacobian of SO(3); maps a rotation vector to the `V` matrix of SE(3) exp.
fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let w = hat(omega);
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        let a = 0.5 - theta2 / 24.0;
        let b = 1.0 / 6.0 - theta2 / 120.0;
        return Matrix3::identity() + a * w + b * w * w;
    }
    let theta = theta2.sqrt();
    let a = (1.0 - theta.cos()) / theta2;
    let b = (theta - theta.sin()) / (theta2 * theta);
    Matrix3::identity() + a * w + b * w * w
}

fn so3_left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = omega.norm_squared();
    let w = hat(omega);
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        let c = 1.0 / 12.0 + theta2 / 720.0;
        return Matrix3::identity() - 0.5 * w + c * w * w;
    }
    let theta = theta2.sqrt();
    let half = 0.5 * theta;
    let c = (1.0 - half * half.cos() / half.sin()) / theta2;
    Matrix3::identity() - 0.5 * w + c * w * w
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    /// Builds a pose from `[qx, qy, qz, qw]` components, normalizing the quaternion.
    pub fn from_parts(t: [f64; 3], q: [f64; 4]) -> Self {
        let quat = Quaternion::new(q[3], q[0], q[1], q[2]);
        Self::new(UnitQuaternion::from_quaternion(quat), Vector3::from(t))
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_matrix(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let inv = self.rotation.inverse();
        Pose {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }

    #[inline]
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Applies the pose to a homogeneous point `(p, w)`, returning the 3-part.
    #[inline]
    pub fn transform_homogeneous(&self, p: &Vector3<f64>, w: f64) -> Vector3<f64> {
        self.rotation * p + self.translation * w
    }

    pub fn exp(xi: &Vector6<f64>) -> Pose {
        let rho = xi.fixed_rows::<3>(0).into_owned();
        let omega = xi.fixed_rows::<3>(3).into_owned();
        let rotation = UnitQuaternion::from_scaled_axis(omega);
        let translation = so3_left_jacobian(&omega) * rho;
        Pose {
            rotation,
            translation,
        }
    }

    pub fn log(&self) -> Vector6<f64> {
        let omega = self.rotation.scaled_axis();
        let rho = so3_left_jacobian_inv(&omega) * self.translation;
        let mut xi = Vector6::zeros();
        xi.fixed_rows_mut::<3>(0).copy_from(&rho);
        xi.fixed_rows_mut::<3>(3).copy_from(&omega);
        xi
    }

    /// Left-multiplicative retraction `exp(xi) * self`.
    pub fn retract(&self, xi: &Vector6<f64>) -> Pose {
        let mut p = Pose::exp(xi).compose(self);
        p.rotation.renormalize();
        p
    }

    /// Geodesic interpolation: `self * exp(s * log(self^-1 * other))`.
    pub fn interpolate(&self, other: &Pose, s: f64) -> Pose {
        let delta = self.inverse().compose(other).log();
        self.compose(&Pose::exp(&(delta * s)))
    }

    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let d = self.inverse().compose(other);
        (d.translation.norm(), d.rotation_angle())
    }
}

impl std::ops::Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        self.compose(&rhs)
    }
}
