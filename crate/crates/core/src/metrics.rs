//! Trajectory, focal and epipolar error metrics plus the shuttle protocol.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{hat, Intrinsics, Pose};

/// Timestamped camera-to-world poses.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub timestamps: Vec<f64>,
    pub poses: Vec<Pose>,
}

impl Trajectory {
    pub fn new(timestamps: Vec<f64>, poses: Vec<Pose>) -> Result<Self> {
        if timestamps.len() != poses.len() {
            return Err(Error::InvalidInput(format!(
                "{} timestamps for {} poses",
                timestamps.len(),
                poses.len()
            )));
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput(
                "timestamps must be strictly increasing".into(),
            ));
        }
        Ok(Self { timestamps, poses })
    }

    /// Poses stamped with their index.
    pub fn from_poses(poses: Vec<Pose>) -> Self {
        Self {
            timestamps: (0..poses.len()).map(|i| i as f64).collect(),
            poses,
        }
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn positions(&self) -> Vec<Vector3<f64>> {
        self.poses.iter().map(|p| p.translation).collect()
    }

    /// Sum of distances between consecutive positions.
    pub fn path_length(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| (w[1].translation - w[0].translation).norm())
            .sum()
    }

    /// Applies `x -> s R x + t` to every pose.
    pub fn transformed(&self, sim: &Similarity) -> Self {
        let q =
            UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(sim.rotation));
        Self {
            timestamps: self.timestamps.clone(),
            poses: self
                .poses
                .iter()
                .map(|p| Pose::new(q * p.rotation, sim.apply(&p.translation)))
                .collect(),
        }
    }

    /// Positions scaled about the origin.
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            timestamps: self.timestamps.clone(),
            poses: self
                .poses
                .iter()
                .map(|p| Pose::new(p.rotation, p.translation * s))
                .collect(),
        }
    }
}

/// `x -> scale * rotation * x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub aligned: Trajectory,
    pub transform: Similarity,
    /// Reference positions were (near) collinear, so the rotation is not unique.
    pub degenerate: bool,
}

/// Least-squares rigid (or similarity) alignment of `est` onto `reference`.
pub fn umeyama_align(
    est: &Trajectory,
    reference: &Trajectory,
    with_scale: bool,
) -> Result<Alignment> {
    let n = est.len();
    if n != reference.len() {
        return Err(Error::InvalidInput(format!(
            "trajectory lengths differ: {n} vs {}",
            reference.len()
        )));
    }
    if n < 3 {
        return Err(Error::InvalidInput(
            "alignment needs at least 3 poses".into(),
        ));
    }
    let x = est.positions();
    let y = reference.positions();
    let nf = n as f64;
    let mx = x.iter().sum::<Vector3<f64>>() / nf;
    let my = y.iter().sum::<Vector3<f64>>() / nf;
    let mut cov = Matrix3::zeros();
    let mut var_x = 0.0;
    let mut spread_y = Matrix3::zeros();
    for (a, b) in x.iter().zip(&y) {
        let (da, db) = (a - mx, b - my);
        cov += db * da.transpose();
        var_x += da.norm_squared();
        spread_y += db * db.transpose();
    }
    cov /= nf;
    var_x /= nf;
    let sv = spread_y.symmetric_eigenvalues();
    let mut ev: Vec<f64> = sv.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let degenerate = ev[1] <= 1e-12 * ev[0].max(1e-300);

    let svd = cov.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Matrix3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let rotation = u * s * v_t;
    let scale = if with_scale && var_x > 0.0 {
        (Matrix3::from_diagonal(&svd.singular_values) * s).trace() / var_x
    } else {
        1.0
    };
    let translation = my - rotation * mx * scale;
    let transform = Similarity {
        rotation,
        translation,
        scale,
    };
    Ok(Alignment {
        aligned: est.transformed(&transform),
        transform,
        degenerate,
    })
}

fn check_lengths(est: &Trajectory, reference: &Trajectory) -> Result<()> {
    if est.len() != reference.len() || est.is_empty() {
        return Err(Error::InvalidInput(format!(
            "trajectory lengths differ or are empty: {} vs {}",
            est.len(),
            reference.len()
        )));
    }
    Ok(())
}

/// RMSE of position differences (no alignment applied).
pub fn ate(est: &Trajectory, reference: &Trajectory) -> Result<f64> {
    check_lengths(est, reference)?;
    let sum: f64 = est
        .poses
        .iter()
        .zip(&reference.poses)
        .map(|(a, b)| (a.translation - b.translation).norm_squared())
        .sum();
    Ok((sum / est.len() as f64).sqrt())
}

/// ATE after Umeyama alignment.
pub fn ate_aligned(est: &Trajectory, reference: &Trajectory, with_scale: bool) -> Result<f64> {
    let al = umeyama_align(est, reference, with_scale)?;
    ate(&al.aligned, reference)
}

/// Discrepancies `(translation, rotation in degrees)` of the relative motions over `(i, i + delta)`.
fn relative_errors(
    est: &Trajectory,
    reference: &Trajectory,
    delta: usize,
) -> Result<Vec<(f64, f64)>> {
    check_lengths(est, reference)?;
    if delta == 0 || est.len() <= delta {
        return Err(Error::InvalidInput(format!(
            "delta {delta} needs more than {} poses",
            est.len()
        )));
    }
    Ok((0..est.len() - delta)
        .map(|i| {
            let de = est.poses[i].inverse().compose(&est.poses[i + delta]);
            let dr = reference.poses[i]
                .inverse()
                .compose(&reference.poses[i + delta]);
            let dt = dr
                .rotation
                .inverse_transform_vector(&(de.translation - dr.translation));
            (
                dt.norm(),
                rotation_between(&dr.rotation, &de.rotation).to_degrees(),
            )
        })
        .collect())
}

/// Angle of `a^-1 b`, exactly zero when `a == b`.
fn rotation_between(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> f64 {
    if a == b {
        return 0.0;
    }
    let q = a.inverse() * b;
    2.0 * q.imag().norm().atan2(q.w.abs())
}

fn rmse(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    (s / n.max(1) as f64).sqrt()
}

/// RMSE of relative translation errors.
pub fn rte(est: &Trajectory, reference: &Trajectory, delta: usize) -> Result<f64> {
    Ok(rmse(
        relative_errors(est, reference, delta)?
            .into_iter()
            .map(|e| e.0),
    ))
}

/// RMSE of relative rotation errors in degrees.
pub fn rre(est: &Trajectory, reference: &Trajectory, delta: usize) -> Result<f64> {
    Ok(rmse(
        relative_errors(est, reference, delta)?
            .into_iter()
            .map(|e| e.1),
    ))
}

/// RTE/RRE averaged over several frame gaps.
pub fn multi_delta_relative(
    est: &Trajectory,
    reference: &Trajectory,
    deltas: &[usize],
) -> Result<(f64, f64)> {
    let mut acc = (0.0, 0.0);
    for &d in deltas {
        acc.0 += rte(est, reference, d)?;
        acc.1 += rre(est, reference, d)?;
    }
    let n = deltas.len().max(1) as f64;
    Ok((acc.0 / n, acc.1 / n))
}

/// Absolute difference of horizontal fields of view in degrees.
pub fn focal_error(k_est: &Intrinsics, k_gt: &Intrinsics) -> f64 {
    (k_est.horizontal_fov_deg() - k_gt.horizontal_fov_deg()).abs()
}

fn calibration(k: &Intrinsics) -> Matrix3<f64> {
    let c = k.principal_point();
    Matrix3::new(k.f, 0.0, c.x, 0.0, k.f, c.y, 0.0, 0.0, 1.0)
}

/// Fundamental matrix for `x_j = R x_i + t` where `rel = (R, t)` maps camera `i`
/// coordinates into camera `j`; satisfies `y^T F x = 0` with `x` in `i`, `y` in `j`.
pub fn fundamental_from_relative(rel: &Pose, k: &Intrinsics) -> Result<Matrix3<f64>> {
    if rel.translation.norm() < 1e-12 {
        return Err(Error::ZeroBaseline);
    }
    let kinv = calibration(k).try_inverse().expect("focal is positive");
    Ok(kinv.transpose() * hat(&rel.translation) * rel.rotation_matrix() * kinv)
}

/// Matches `(x in frame i, y in frame j)` in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePairMatches {
    pub i: usize,
    pub j: usize,
    pub points: Vec<(Vector2<f64>, Vector2<f64>)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceSet {
    pub pairs: Vec<FramePairMatches>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampsonReport {
    /// Mean over frame pairs of the mean per-match Sampson distance, in pixels.
    pub error: f64,
    pub pairs_used: usize,
    /// Matches skipped because the denominator vanished.
    pub skipped: usize,
}

/// Sampson distance of one match; `None` at the epipoles.
pub fn sampson_distance(f: &Matrix3<f64>, x: &Vector2<f64>, y: &Vector2<f64>) -> Option<f64> {
    let xh = Vector3::new(x.x, x.y, 1.0);
    let yh = Vector3::new(y.x, y.y, 1.0);
    let fx = f * xh;
    let fty = f.transpose() * yh;
    let den = (fx.x * fx.x + fx.y * fx.y + fty.x * fty.x + fty.y * fty.y).sqrt();
    let num = yh.dot(&fx).abs();
    (den > 1e-300 * num.max(1.0) && den > 0.0).then(|| num / den)
}

/// Mean Sampson error of `traj` (camera-to-world) and pinhole `k` over the correspondences.
pub fn sampson_error(
    traj: &Trajectory,
    k: &Intrinsics,
    matches: &CorrespondenceSet,
) -> Result<SampsonReport> {
    let mut total = 0.0;
    let mut used = 0;
    let mut skipped = 0;
    for pair in &matches.pairs {
        if pair.i >= traj.len() || pair.j >= traj.len() || pair.points.is_empty() {
            continue;
        }
        let rel = traj.poses[pair.j].inverse().compose(&traj.poses[pair.i]);
        let f = match fundamental_from_relative(&rel, k) {
            Ok(f) => f,
            Err(Error::ZeroBaseline) => {
                skipped += pair.points.len();
                continue;
            }
            Err(e) => return Err(e),
        };
        let mut sum = 0.0;
        let mut count = 0;
        for (x, y) in &pair.points {
            match sampson_distance(&f, x, y) {
                Some(d) => {
                    sum += d;
                    count += 1;
                }
                None => skipped += 1,
            }
        }
        if count > 0 {
            total += sum / count as f64;
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::NoValidPairs);
    }
    Ok(SampsonReport {
        error: total / used as f64,
        pairs_used: used,
        skipped,
    })
}

/// Output of one engine run.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineOutput {
    /// One pose per fed frame, in feeding order.
    pub poses: Vec<Pose>,
    pub intrinsics: Intrinsics,
}

/// Anything that estimates poses for a sequence of frames.
pub trait PoseEngine {
    /// Runs on the given frame indices in the given order.
    fn estimate(&self, frames: &[usize]) -> Result<EngineOutput>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShuttleReport {
    pub s_ate: f64,
    pub s_rte: f64,
    pub s_rre: f64,
    pub s_focal: f64,
}

/// Scales a trajectory to unit path length.
pub fn normalize_length(t: &Trajectory) -> Result<Trajectory> {
    let len = t.path_length();
    if !(len > 1e-12) {
        return Err(Error::NormalizationDegenerate);
    }
    Ok(t.scaled(1.0 / len))
}

/// Shuttle errors between two runs over the same frames (both indexed by frame).
pub fn shuttle_compare(
    forward: &Trajectory,
    backward: &Trajectory,
    k_forward: &Intrinsics,
    k_backward: &Intrinsics,
) -> Result<ShuttleReport> {
    let a = normalize_length(forward)?;
    let b = normalize_length(backward)?;
    let aligned = umeyama_align(&b, &a, false)?.aligned;
    Ok(ShuttleReport {
        s_ate: ate(&aligned, &a)?,
        s_rte: rte(&aligned, &a, 1)?,
        s_rre: rre(&aligned, &a, 1)?,
        s_focal: focal_error(k_forward, k_backward),
    })
}

/// Runs `engine` forward and on the reversed frame order, then compares the runs.
pub fn shuttle_eval(engine: &dyn PoseEngine, n_frames: usize) -> Result<ShuttleReport> {
    let order: Vec<usize> = (0..n_frames).collect();
    let reversed: Vec<usize> = order.iter().rev().copied().collect();
    let fwd = engine.estimate(&order)?;
    let bwd = engine.estimate(&reversed)?;
    if fwd.poses.len() != n_frames || bwd.poses.len() != n_frames {
        return Err(Error::InvalidInput(
            "engine returned the wrong number of poses".into(),
        ));
    }
    let t_fwd = Trajectory::from_poses(fwd.poses);
    let t_bwd = Trajectory::from_poses(bwd.poses.into_iter().rev().collect());
    shuttle_compare(&t_fwd, &t_bwd, &fwd.intrinsics, &bwd.intrinsics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector6;

    fn sample_traj(n: usize) -> Trajectory {
        Trajectory::from_poses(
            (0..n)
                .map(|i| {
                    let s = i as f64;
                    Pose::exp(&Vector6::new(
                        s * 0.3,
                        (s * 0.7).sin(),
                        0.1 * s * s,
                        0.05 * s,
                        0.1 * (s * 0.3).cos(),
                        -0.02 * s,
                    ))
                })
                .collect(),
        )
    }

    fn rigid() -> Pose {
        Pose::exp(&Vector6::new(1.0, -2.0, 0.5, 0.3, -0.2, 0.9))
    }

    fn apply_left(t: &Trajectory, g: &Pose) -> Trajectory {
        Trajectory::from_poses(t.poses.iter().map(|p| g.compose(p)).collect())
    }

    #[test]
    fn identical_trajectories_align_to_identity() {
        let t = sample_traj(10);
        let al = umeyama_align(&t, &t, false).unwrap();
        assert!((al.transform.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(al.transform.translation.norm() < 1e-12);
        assert!(ate(&al.aligned, &t).unwrap() < 1e-12);
        assert_eq!(rte(&t, &t, 1).unwrap(), 0.0);
        assert_eq!(rre(&t, &t, 1).unwrap(), 0.0);
    }

    #[test]
    fn rigid_transform_is_recovered() {
        let t = sample_traj(10);
        let moved = apply_left(&t, &rigid());
        assert!(ate_aligned(&moved, &t, false).unwrap() < 1e-12);
        // Relative metrics do not see a global transform.
        assert!(rte(&moved, &t, 1).unwrap() < 1e-12);
        assert!(rre(&moved, &t, 2).unwrap() < 1e-6);
    }

    #[test]
    fn scale_is_recovered() {
        let t = sample_traj(8);
        let al = umeyama_align(&t.scaled(2.0), &t, true).unwrap();
        assert!((al.transform.scale - 0.5).abs() < 1e-12);
        let al = umeyama_align(&t, &t.scaled(2.0), true).unwrap();
        assert!((al.transform.scale - 2.0).abs() < 1e-12);
    }

    #[test]
    fn collinear_positions_are_flagged() {
        let t = Trajectory::from_poses(
            (0..5)
                .map(|i| Pose::from_translation(Vector3::new(i as f64, 0.0, 0.0)))
                .collect(),
        );
        assert!(umeyama_align(&t, &t, false).unwrap().degenerate);
        assert!(
            !umeyama_align(&sample_traj(5), &sample_traj(5), false)
                .unwrap()
                .degenerate
        );
    }

    #[test]
    fn single_offset_ate() {
        let n = 9;
        let t = sample_traj(n);
        let mut e = t.clone();
        e.poses[4].translation.x += 0.1;
        let direct = {
            let s: f64 = e
                .poses
                .iter()
                .zip(&t.poses)
                .map(|(a, b)| (a.translation - b.translation).norm_squared())
                .sum();
            (s / n as f64).sqrt()
        };
        let v = ate(&e, &t).unwrap();
        assert!((v - direct).abs() < 1e-15);
        assert!((v - 0.1 / (n as f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn per_step_rotation_bias() {
        let n = 10;
        let reference = Trajectory::from_poses(
            (0..n)
                .map(|i| Pose::from_translation(Vector3::new(i as f64, 0.0, 0.0)))
                .collect(),
        );
        let step = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), 1f64.to_radians());
        let est = Trajectory::from_poses(
            (0..n)
                .map(|i| Pose::new(step.powf(i as f64), Vector3::new(i as f64, 0.0, 0.0)))
                .collect(),
        );
        assert!((rre(&est, &reference, 1).unwrap() - 1.0).abs() < 1e-9);
        assert!((rre(&est, &reference, 2).unwrap() - 2.0).abs() < 1e-9);
    }

    #[test]
    fn ate_invariant_to_common_transform() {
        let a = sample_traj(7);
        let mut b = a.clone();
        b.poses[2].translation.y += 0.3;
        let g = rigid();
        let before = ate_aligned(&b, &a, false).unwrap();
        let after = ate_aligned(&apply_left(&b, &g), &apply_left(&a, &g), false).unwrap();
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn focal_error_examples() {
        let gt = Intrinsics::pinhole(554.26, 640, 480);
        assert_eq!(focal_error(&gt, &gt), 0.0);
        let est = Intrinsics::pinhole(489.9, 640, 480);
        let expected = 2.0 * (320.0f64 / 489.9).atan().to_degrees()
            - 2.0 * (320.0f64 / 554.26).atan().to_degrees();
        assert!((focal_error(&est, &gt) - expected).abs() < 1e-12);
        assert!((focal_error(&est, &gt) - 6.6).abs() < 0.4);
        assert_eq!(focal_error(&est, &gt), focal_error(&gt, &est));
    }

    fn scene_matches(rel: &Pose, k: &Intrinsics, n: usize) -> Vec<(Vector2<f64>, Vector2<f64>)> {
        (0..n)
            .map(|m| {
                let s = m as f64;
                let p = Vector3::new(
                    (s * 0.37).sin() * 2.0,
                    (s * 0.61).cos() * 1.5,
                    4.0 + (s * 0.23).sin(),
                );
                let q = rel.transform_point(&p);
                (k.project(&p).unwrap(), k.project(&q).unwrap())
            })
            .collect()
    }

    #[test]
    fn fundamental_properties() {
        let k = Intrinsics::pinhole(300.0, 640, 480);
        let rel = Pose::exp(&Vector6::new(0.3, 0.05, -0.1, 0.02, 0.05, -0.01));
        let f = fundamental_from_relative(&rel, &k).unwrap();
        for (x, y) in scene_matches(&rel, &k, 20) {
            let v = Vector3::new(y.x, y.y, 1.0).dot(&(f * Vector3::new(x.x, x.y, 1.0)));
            assert!(v.abs() < 1e-10 * f.norm() * 640.0 * 640.0);
        }
        let sv = f.singular_values();
        let (mx, mn) = (sv.max(), sv.min());
        assert!(mn < 1e-10 * mx);
        assert!(matches!(
            fundamental_from_relative(&Pose::identity(), &k),
            Err(Error::ZeroBaseline)
        ));
    }

    #[test]
    fn pure_x_translation_with_identity_calibration() {
        // f = 1 and a zero-sized image put K at the identity.
        let k = Intrinsics::pinhole(1.0, 0, 0);
        let f = fundamental_from_relative(&Pose::from_translation(Vector3::new(2.0, 0.0, 0.0)), &k)
            .unwrap();
        let expected = Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -2.0, 0.0, 2.0, 0.0);
        assert!((f - expected).norm() < 1e-15);
    }

    fn two_frame_setup() -> (Trajectory, Intrinsics, CorrespondenceSet, Matrix3<f64>) {
        let k = Intrinsics::pinhole(300.0, 640, 480);
        let p0 = Pose::identity();
        let p1 = Pose::exp(&Vector6::new(0.5, 0.1, 0.05, 0.01, -0.03, 0.02));
        let traj = Trajectory::from_poses(vec![p0, p1]);
        let rel = p1.inverse().compose(&p0);
        let set = CorrespondenceSet {
            pairs: vec![FramePairMatches {
                i: 0,
                j: 1,
                points: scene_matches(&rel, &k, 12),
            }],
        };
        let f = fundamental_from_relative(&rel, &k).unwrap();
        (traj, k, set, f)
    }

    #[test]
    fn sampson_exact_matches_are_zero() {
        let (traj, k, set, _) = two_frame_setup();
        let r = sampson_error(&traj, &k, &set).unwrap();
        assert!(r.error < 1e-9);
        assert_eq!(r.pairs_used, 1);
        assert!(matches!(
            sampson_error(&traj, &k, &CorrespondenceSet::default()),
            Err(Error::NoValidPairs)
        ));
    }

    #[test]
    fn sampson_scale_and_swap_invariance() {
        let (_, _, set, f) = two_frame_setup();
        for (x, y) in &set.pairs[0].points {
            let y = y + Vector2::new(1.5, -0.7);
            let d = sampson_distance(&f, x, &y).unwrap();
            assert!((sampson_distance(&(f * -3.7), x, &y).unwrap() - d).abs() < 1e-12 * d.max(1.0));
            assert!(
                (sampson_distance(&f.transpose(), &y, x).unwrap() - d).abs() < 1e-12 * d.max(1.0)
            );
        }
    }

    #[test]
    fn sampson_single_perpendicular_perturbation() {
        let (traj, k, mut set, f) = two_frame_setup();
        let n_matches = set.pairs[0].points.len();
        let (x, y) = set.pairs[0].points[3];
        let line = f * Vector3::new(x.x, x.y, 1.0);
        let normal = Vector2::new(line.x, line.y);
        let moved = y + normal.normalize() * 2.0;
        set.pairs[0].points[3].1 = moved;
        // Point-to-line distance is 2 px; Sampson divides by both line gradients.
        let yh = Vector3::new(moved.x, moved.y, 1.0);
        let dist = yh.dot(&line).abs() / normal.norm();
        assert!((dist - 2.0).abs() < 1e-9);
        let lt = f.transpose() * yh;
        let oracle =
            dist * normal.norm() / (normal.norm_squared() + lt.x * lt.x + lt.y * lt.y).sqrt();
        let r = sampson_error(&traj, &k, &set).unwrap();
        assert!((r.error - oracle / n_matches as f64).abs() < 1e-9);
        assert!(r.error > 0.5 * 2.0 / n_matches as f64 && r.error <= 2.0 / n_matches as f64);
    }

    struct Replay {
        traj: Vec<Pose>,
        k: Intrinsics,
    }

    impl PoseEngine for Replay {
        fn estimate(&self, frames: &[usize]) -> Result<EngineOutput> {
            // Express poses relative to the first fed frame, as an engine would.
            let first = self.traj[frames[0]].inverse();
            Ok(EngineOutput {
                poses: frames
                    .iter()
                    .map(|&f| first.compose(&self.traj[f]))
                    .collect(),
                intrinsics: self.k,
            })
        }
    }

    #[test]
    fn shuttle_of_consistent_engine_is_zero() {
        let engine = Replay {
            traj: sample_traj(12).poses,
            k: Intrinsics::pinhole(200.0, 256, 192),
        };
        let r = shuttle_eval(&engine, 12).unwrap();
        assert!(
            r.s_ate < 1e-6 && r.s_rte < 1e-6 && r.s_rre < 1e-6 && r.s_focal == 0.0,
            "{r:?}"
        );
    }

    #[test]
    fn shuttle_matches_direct_computation() {
        let a = sample_traj(6);
        let mut b = a.clone();
        b.poses[3].translation += Vector3::new(0.2, -0.1, 0.05);
        let b = apply_left(&b, &rigid()).scaled(3.0);
        let k = Intrinsics::pinhole(200.0, 256, 192);
        let r = shuttle_compare(&a, &b, &k, &k).unwrap();
        // Oracle: normalize, brute-force rigid fit by Umeyama on normalized sets, RMSE.
        let na = a.scaled(1.0 / a.path_length());
        let nb = b.scaled(1.0 / b.path_length());
        let al = umeyama_align(&nb, &na, false).unwrap().aligned;
        let s: f64 = al
            .poses
            .iter()
            .zip(&na.poses)
            .map(|(p, q)| (p.translation - q.translation).norm_squared())
            .sum();
        assert!((r.s_ate - (s / 6.0).sqrt()).abs() < 1e-12);
        let swapped = shuttle_compare(&b, &a, &k, &k).unwrap();
        assert!((r.s_ate - swapped.s_ate).abs() < 1e-12);
        assert!((r.s_rte - swapped.s_rte).abs() < 1e-12);
        assert!((r.s_rre - swapped.s_rre).abs() < 1e-9);
    }

    #[test]
    fn static_camera_cannot_be_normalized() {
        let t = Trajectory::from_poses(vec![Pose::identity(); 5]);
        let k = Intrinsics::pinhole(200.0, 256, 192);
        assert!(matches!(
            shuttle_compare(&t, &t, &k, &k),
            Err(Error::NormalizationDegenerate)
        ));
    }

    #[test]
    fn timestamps_must_increase() {
        assert!(Trajectory::new(vec![0.0, 0.0], vec![Pose::identity(); 2]).is_err());
        assert!(Trajectory::new(vec![0.0, 1.0], vec![Pose::identity(); 2]).is_ok());
    }
}
