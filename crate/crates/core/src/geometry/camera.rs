//! Radial camera models with a single focal length and a centered principal point.
//!
//! A camera-frame point at angle `theta` from the optical axis and azimuth `phi`
//! lands at `f * q(theta) * (cos phi, sin phi) + (W/2, H/2)`. The pinhole model
//! uses `q = tan(theta)`; the unified model divides by `1 + alpha * sqrt(tan^2 + 1)`.
//! For a point `(x, y, z)` with `z > 0` this reduces to `f * x / (z + alpha * |p|)`.

use nalgebra::{Matrix2, Matrix2x3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Largest admissible angle between a ray and the optical axis.
pub const THETA_MAX: f64 = 89.5 * std::f64::consts::PI / 180.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CameraModel {
    Pinhole,
    Unified,
}

impl CameraModel {
    pub fn name(&self) -> &'static str {
        match self {
            CameraModel::Pinhole => "pinhole",
            CameraModel::Unified => "unified",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "pinhole" => Some(CameraModel::Pinhole),
            "unified" => Some(CameraModel::Unified),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Intrinsics {
    pub model: CameraModel,
    /// Focal length in pixels, shared by both axes.
    pub f: f64,
    /// Unified-model distortion in [0, 1); ignored (zero) for pinhole.
    pub alpha: f64,
    pub width: u32,
    pub height: u32,
}

/// Angular coordinates of a camera-frame direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub theta: f64,
    pub phi: f64,
}

impl Ray {
    pub fn from_point(p: &Vector3<f64>) -> Self {
        let r = p.x.hypot(p.y);
        let theta = r.atan2(p.z);
        let phi = if r == 0.0 { 0.0 } else { p.y.atan2(p.x) };
        Self { theta, phi }
    }
}

/// Derivatives of a projected pixel.
#[derive(Debug, Clone, Copy)]
pub struct ProjectionJacobians {
    /// d(pixel)/d(point), 2x3.
    pub point: Matrix2x3<f64>,
    /// d(pixel)/d(f, alpha); only the first `Intrinsics::param_count` columns are parameters.
    pub intrinsics: Matrix2<f64>,
}

impl Intrinsics {
    pub fn pinhole(f: f64, width: u32, height: u32) -> Self {
        Self {
            model: CameraModel::Pinhole,
            f,
            alpha: 0.0,
            width,
            height,
        }
    }

    pub fn unified(f: f64, alpha: f64, width: u32, height: u32) -> Self {
        Self {
            model: CameraModel::Unified,
            f,
            alpha,
            width,
            height,
        }
    }

    /// Pinhole camera with the given horizontal field of view in degrees.
    pub fn from_fov(fov_deg: f64, width: u32, height: u32) -> Self {
        let f = (width as f64 / 2.0) / (fov_deg.to_radians() / 2.0).tan();
        Self::pinhole(f, width, height)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.f.is_finite() && self.f > 0.0) {
            return Err(Error::InvalidInput(format!(
                "focal must be positive, got {}",
                self.f
            )));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::InvalidInput(format!(
                "alpha must lie in [0, 1), got {}",
                self.alpha
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::MissingResolution);
        }
        Ok(())
    }

    #[inline]
    pub fn principal_point(&self) -> Vector2<f64> {
        Vector2::new(self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    /// Effective distortion: pinhole is the unified model with alpha = 0.
    #[inline]
    pub fn effective_alpha(&self) -> f64 {
        match self.model {
            CameraModel::Pinhole => 0.0,
            CameraModel::Unified => self.alpha,
        }
    }

    /// Number of optimizable parameters: `[f]` or `[f, alpha]`.
    pub fn param_count(&self) -> usize {
        match self.model {
            CameraModel::Pinhole => 1,
            CameraModel::Unified => 2,
        }
    }

    /// Horizontal field of view in degrees (pinhole interpretation).
    pub fn horizontal_fov_deg(&self) -> f64 {
        2.0 * (self.width as f64 / (2.0 * self.f)).atan().to_degrees()
    }

    /// The same camera with all pixel quantities divided by `factor`.
    pub fn downsample(&self, factor: u32) -> Result<Self> {
        if self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::Config(format!(
                "image size {}x{} must be a multiple of {factor}",
                self.width, self.height
            )));
        }
        Ok(Self {
            f: self.f / factor as f64,
            width: self.width / factor,
            height: self.height / factor,
            ..*self
        })
    }

    /// Radial mapping `q(theta)`.
    pub fn radial(&self, theta: f64) -> f64 {
        let t = theta.tan();
        t / (1.0 + self.effective_alpha() * (t * t + 1.0).sqrt())
    }

    #[inline]
    fn check_projectable(&self, p: &Vector3<f64>) -> Result<()> {
        if !(p.z > 0.0) || !p.iter().all(|v| v.is_finite()) {
            return Err(Error::DegeneratePoint(format!(
                "z = {} is not in front of the camera",
                p.z
            )));
        }
        let r = p.x.hypot(p.y);
        if r.atan2(p.z) >= THETA_MAX {
            return Err(Error::DegeneratePoint(format!(
                "ray angle exceeds {:.1} degrees",
                THETA_MAX.to_degrees()
            )));
        }
        Ok(())
    }

    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        self.check_projectable(p)?;
        let a = self.effective_alpha();
        let d = p.z + a * p.norm();
        Ok(Vector2::new(p.x, p.y) * (self.f / d) + self.principal_point())
    }

    /// Projection together with its point and intrinsics derivatives.
    pub fn project_with_jacobians(
        &self,
        p: &Vector3<f64>,
    ) -> Result<(Vector2<f64>, ProjectionJacobians)> {
        self.check_projectable(p)?;
        let a = self.effective_alpha();
        let rho = p.norm();
        let d = p.z + a * rho;
        let inv_d = 1.0 / d;
        let f = self.f;
        let uv = Vector2::new(p.x * inv_d, p.y * inv_d);
        // dd/dp
        let dd = if rho > 0.0 {
            Vector3::new(a * p.x / rho, a * p.y / rho, 1.0 + a * p.z / rho)
        } else {
            Vector3::new(0.0, 0.0, 1.0)
        };
        let fd = f * inv_d;
        let point = Matrix2x3::new(
            fd - fd * uv.x * dd.x,
            -fd * uv.x * dd.y,
            -fd * uv.x * dd.z,
            -fd * uv.y * dd.x,
            fd - fd * uv.y * dd.y,
            -fd * uv.y * dd.z,
        );
        let d_alpha = -f * rho * inv_d;
        let intrinsics = Matrix2::new(uv.x, uv.x * d_alpha, uv.y, uv.y * d_alpha);
        Ok((
            uv * f + self.principal_point(),
            ProjectionJacobians { point, intrinsics },
        ))
    }

    /// Viewing direction of a pixel, scaled so that its z component is 1.
    pub fn ray(&self, px: &Vector2<f64>) -> Result<Vector3<f64>> {
        self.ray_with_jacobian(px).map(|(r, _)| r)
    }

    /// Unit-z ray and its derivative with respect to `(f, alpha)` (3x2).
    pub fn ray_with_jacobian(
        &self,
        px: &Vector2<f64>,
    ) -> Result<(Vector3<f64>, nalgebra::Matrix3x2<f64>)> {
        let m = (px - self.principal_point()) / self.f;
        let r2 = m.norm_squared();
        let a = self.effective_alpha();
        let s = (1.0 + (1.0 - a * a) * r2).sqrt();
        let num = a + s;
        let den = s - a * r2;
        if !(den > 0.0) {
            return Err(Error::DegeneratePoint(format!(
                "pixel ({}, {}) lies outside the model's field of view",
                px.x, px.y
            )));
        }
        let k = num / den;
        let ray = Vector3::new(m.x * k, m.y * k, 1.0);
        if (ray.x.hypot(ray.y)).atan() >= THETA_MAX {
            return Err(Error::DegeneratePoint(format!(
                "pixel ({}, {}) exceeds the maximum ray angle",
                px.x, px.y
            )));
        }
        let ds_dr2 = (1.0 - a * a) / (2.0 * s);
        let dk_dr2 = (ds_dr2 * den - num * (ds_dr2 - a)) / (den * den);
        let ds_da = -a * r2 / s;
        let dk_da = ((1.0 + ds_da) * den - num * (ds_da - r2)) / (den * den);
        let dr2_df = -2.0 * r2 / self.f;
        let dk_df = dk_dr2 * dr2_df;
        let jac = nalgebra::Matrix3x2::new(
            -m.x / self.f * k + m.x * dk_df,
            m.x * dk_da,
            -m.y / self.f * k + m.y * dk_df,
            m.y * dk_da,
            0.0,
            0.0,
        );
        Ok((ray, jac))
    }

    /// Camera-frame point at the given pixel and inverse (z-)depth.
    pub fn unproject(&self, px: &Vector2<f64>, inv_depth: f64) -> Result<Vector3<f64>> {
        if !(inv_depth > 0.0) || !inv_depth.is_finite() {
            return Err(Error::InvalidDepth(inv_depth));
        }
        Ok(self.ray(px)? / inv_depth)
    }

    /// Whether a pixel lies inside `[0, W) x [0, H)` (full-image bounds).
    #[inline]
    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }

    /// Whether a pixel lies inside the grid spanned by integer pixel centers.
    #[inline]
    pub fn contains_grid(&self, px: &Vector2<f64>) -> bool {
        px.x >= -0.5
            && px.y >= -0.5
            && px.x <= self.width as f64 - 0.5
            && px.y <= self.height as f64 - 0.5
    }
}
