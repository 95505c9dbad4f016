use nalgebra::{UnitQuaternion, Vector3};

use super::{Intrinsics, Pose};

/// Faces of the 360 cube rig, in rig-frame order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CubeFace {
    Front,
    Back,
    Left,
    Right,
    Up,
    Down,
}

impl CubeFace {
    pub const ALL: [CubeFace; 6] = [
        CubeFace::Front,
        CubeFace::Back,
        CubeFace::Left,
        CubeFace::Right,
        CubeFace::Up,
        CubeFace::Down,
    ];

    /// Rig-from-camera rotation. Camera frames are x right, y down, z forward.
    pub fn rotation(&self) -> UnitQuaternion<f64> {
        use std::f64::consts::{FRAC_PI_2, PI};
        match self {
            CubeFace::Front => UnitQuaternion::identity(),
            CubeFace::Back => UnitQuaternion::from_axis_angle(&Vector3::y_axis(), PI),
            CubeFace::Left => UnitQuaternion::from_axis_angle(&Vector3::y_axis(), -FRAC_PI_2),
            CubeFace::Right => UnitQuaternion::from_axis_angle(&Vector3::y_axis(), FRAC_PI_2),
            CubeFace::Up => UnitQuaternion::from_axis_angle(&Vector3::x_axis(), FRAC_PI_2),
            CubeFace::Down => UnitQuaternion::from_axis_angle(&Vector3::x_axis(), -FRAC_PI_2),
        }
    }
}

/// Six axis-aligned pinhole cameras sharing one optical center.
#[derive(Debug, Clone, PartialEq)]
pub struct CubeRig {
    pub faces: [Pose; 6],
    pub face_intrinsics: Intrinsics,
}

impl CubeRig {
    /// Square faces of `size` pixels with a 90 degree field of view.
    pub fn new(size: u32) -> Self {
        let faces = CubeFace::ALL.map(|f| Pose::new(f.rotation(), Vector3::zeros()));
        Self {
            faces,
            face_intrinsics: Intrinsics::pinhole(size as f64 / 2.0, size, size),
        }
    }

    pub fn extrinsics(&self) -> Vec<Pose> {
        self.faces.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn faces_point_along_axes() {
        let rig = CubeRig::new(64);
        let fwd = Vector3::new(0.0, 0.0, 1.0);
        let dirs: Vec<_> = rig.faces.iter().map(|p| p.rotation * fwd).collect();
        let expect = [
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::new(-1.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, -1.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
        ];
        for (d, e) in dirs.iter().zip(expect.iter()) {
            assert!((d - e).norm() < 1e-12, "{d:?} vs {e:?}");
        }
        assert!((rig.face_intrinsics.horizontal_fov_deg() - 90.0).abs() < 1e-9);
    }
}
