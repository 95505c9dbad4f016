//! Synthetic scenes with exact depth, flow, tracks and masks.

use std::f64::consts::PI;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Intrinsics, Pose};
use crate::graph::ViewId;
use crate::grid::{FlowField, Grid, Image, InvDepthMap, Mask};
use crate::metrics::{CorrespondenceSet, FramePairMatches, Trajectory};
use crate::residuals::Track;
use crate::LOW_RES_FACTOR;

/// Rays are considered occluded when something is hit this much closer (relative).
const OCCLUSION_TOLERANCE: f64 = 1e-6;

/// A textured rectangle `origin + a u + b v`, `a in [0, u_len]`, `b in [0, v_len]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub origin: Vector3<f64>,
    pub u: Vector3<f64>,
    pub v: Vector3<f64>,
    pub u_len: f64,
    pub v_len: f64,
    pub texture_seed: f64,
}

impl Quad {
    /// `u` and `v` are normalized; they must be orthogonal.
    pub fn new(origin: Vector3<f64>, u: Vector3<f64>, v: Vector3<f64>, texture_seed: f64) -> Self {
        Self {
            origin,
            u: u.normalize(),
            v: v.normalize(),
            u_len: u.norm(),
            v_len: v.norm(),
            texture_seed,
        }
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.u.cross(&self.v)
    }

    /// Ray parameter `t > 0` of the hit `c + t d`, with the in-plane coordinates.
    pub fn intersect(&self, c: &Vector3<f64>, d: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let n = self.normal();
        let denom = n.dot(d);
        if denom.abs() < 1e-15 {
            return None;
        }
        let t = n.dot(&(self.origin - c)) / denom;
        if !(t > 1e-9) {
            return None;
        }
        let rel = c + d * t - self.origin;
        let (a, b) = (rel.dot(&self.u), rel.dot(&self.v));
        (a >= 0.0 && b >= 0.0 && a <= self.u_len && b <= self.v_len).then_some((t, a, b))
    }
}

/// An axis-aligned box in its own frame, carried along relative to the camera rig.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicBox {
    pub half_extents: Vector3<f64>,
    /// Offset of the box centre in rig coordinates at frame 0.
    pub offset: Vector3<f64>,
    /// Amplitude of the lateral drift relative to the rig.
    pub drift: f64,
}

impl DynamicBox {
    /// Rig-from-box pose at `frame`.
    pub fn offset_at(&self, frame: usize) -> Pose {
        let k = frame as f64;
        Pose::from_translation(self.offset + Vector3::new(self.drift * (0.15 * k).sin(), 0.0, 0.0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryKind {
    /// Forward drift with sinusoidal sway and yaw.
    Sinusoidal,
    /// The sinusoidal path traversed out and back, so the video reads the same reversed.
    Palindromic,
    /// No motion at all.
    Static,
}

impl TrajectoryKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sinusoidal" => Some(Self::Sinusoidal),
            "palindromic" => Some(Self::Palindromic),
            "static" => Some(Self::Static),
            _ => None,
        }
    }
}

/// Rig pose along the reference path at parameter `s` in [0, 1].
pub fn path_pose(s: f64) -> Pose {
    let w = 2.0 * PI * s;
    let yaw = 0.25 * w.sin();
    Pose::new(
        UnitQuaternion::from_axis_angle(&Vector3::y_axis(), yaw),
        Vector3::new(0.8 * w.sin(), 0.15 * (2.0 * w).sin(), s),
    )
}

pub fn make_trajectory(kind: TrajectoryKind, n: usize) -> Vec<Pose> {
    let last = n.saturating_sub(1).max(1);
    (0..n)
        .map(|k| match kind {
            TrajectoryKind::Sinusoidal => path_pose(k as f64 / last as f64),
            TrajectoryKind::Palindromic => {
                let dist = (2 * k).abs_diff(last);
                path_pose(1.0 - dist as f64 / last as f64)
            }
            TrajectoryKind::Static => Pose::identity(),
        })
        .collect()
}

/// What a ray hit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hit {
    /// Ray parameter; equals camera depth for unit-z rays.
    pub t: f64,
    pub point: Vector3<f64>,
    pub dynamic: bool,
    pub texture: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub quads: Vec<Quad>,
    /// Free-floating points used for epipolar correspondences.
    pub points: Vec<Vector3<f64>>,
    pub dynamic: Option<DynamicBox>,
    /// World-from-rig pose per frame.
    pub trajectory: Vec<Pose>,
    pub seed: u64,
}

/// Deterministic RNG for one `(seed, a, b, tag)` stream.
pub fn stream_rng(seed: u64, a: u64, b: u64, tag: u64) -> ChaCha8Rng {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for v in [a, b, tag] {
        h = splitmix(h ^ v.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    }
    ChaCha8Rng::seed_from_u64(h)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const TAG_POINTS: u64 = 1;
const TAG_FLOW: u64 = 2;
const TAG_TRACKS: u64 = 3;
const TAG_PRIOR: u64 = 4;

fn texture(a: f64, b: f64, seed: f64) -> f32 {
    let v = 0.5
        + 0.2 * (3.1 * a + seed).sin() * (2.7 * b - 0.5 * seed).cos()
        + 0.15 * (7.3 * a + 5.1 * b + 1.3 * seed).sin()
        + 0.1 * (11.0 * a - 6.0 * b).cos() * (9.0 * b + seed).sin();
    v as f32
}

impl Scene {
    /// Back wall, floor and left wall forming an open box, plus a point sprinkle.
    pub fn default_scene(n_frames: usize, kind: TrajectoryKind, dynamic: bool, seed: u64) -> Self {
        let quads = vec![
            // Back wall at z = 7.
            Quad::new(
                Vector3::new(-3.0, -4.0, 7.0),
                Vector3::new(14.0, 0.0, 0.0),
                Vector3::new(0.0, 5.6, 0.0),
                0.0,
            ),
            // Floor at y = 1.6 (y points down).
            Quad::new(
                Vector3::new(-3.0, 1.6, -3.0),
                Vector3::new(0.0, 0.0, 10.0),
                Vector3::new(14.0, 0.0, 0.0),
                1.7,
            ),
            // Left wall at x = -3.
            Quad::new(
                Vector3::new(-3.0, -4.0, -3.0),
                Vector3::new(0.0, 5.6, 0.0),
                Vector3::new(0.0, 0.0, 10.0),
                3.1,
            ),
        ];
        let mut rng = stream_rng(seed, 0, 0, TAG_POINTS);
        let points = (0..500)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-2.5..5.0),
                    rng.random_range(-2.0..1.5),
                    rng.random_range(2.5..6.8),
                )
            })
            .collect();
        Self {
            quads,
            points,
            dynamic: dynamic.then_some(DynamicBox {
                half_extents: Vector3::new(0.71, 0.53, 0.25),
                offset: Vector3::new(0.0, 0.1, 2.5),
                drift: 0.3,
            }),
            trajectory: make_trajectory(kind, n_frames),
            seed,
        }
    }

    pub fn n_frames(&self) -> usize {
        self.trajectory.len()
    }

    /// World-from-box pose at `frame`.
    pub fn box_pose(&self, frame: usize) -> Option<Pose> {
        self.dynamic
            .map(|b| self.trajectory[frame].compose(&b.offset_at(frame)))
    }

    /// First surface hit by `c + t d` (t > 0) at `frame`.
    pub fn cast(&self, frame: usize, c: &Vector3<f64>, d: &Vector3<f64>) -> Option<Hit> {
        let mut best: Option<Hit> = None;
        for q in &self.quads {
            if let Some((t, a, b)) = q.intersect(c, d) {
                if best.is_none_or(|h| t < h.t) {
                    best = Some(Hit {
                        t,
                        point: c + d * t,
                        dynamic: false,
                        texture: texture(a, b, q.texture_seed),
                    });
                }
            }
        }
        if let (Some(b), Some(pose)) = (self.dynamic, self.box_pose(frame)) {
            let inv = pose.inverse();
            let lc = inv.transform_point(c);
            let ld = inv.rotation * d;
            if let Some((t, local)) = slab(&lc, &ld, &b.half_extents) {
                if best.is_none_or(|h| t < h.t) {
                    best = Some(Hit {
                        t,
                        point: c + d * t,
                        dynamic: true,
                        texture: texture(local.x + local.z, local.y - local.z, 5.3),
                    });
                }
            }
        }
        best
    }

    /// Whether `p` is visible from `c` at `frame` (nothing strictly in between).
    pub fn visible(&self, frame: usize, c: &Vector3<f64>, p: &Vector3<f64>) -> bool {
        match self.cast(frame, c, &(p - c)) {
            Some(h) => h.t >= 1.0 - OCCLUSION_TOLERANCE,
            None => true,
        }
    }
}

/// Entry of a ray into an axis-aligned box centred at the origin.
fn slab(c: &Vector3<f64>, d: &Vector3<f64>, half: &Vector3<f64>) -> Option<(f64, Vector3<f64>)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    for a in 0..3 {
        if d[a].abs() < 1e-15 {
            if c[a].abs() > half[a] {
                return None;
            }
            continue;
        }
        let (mut lo, mut hi) = ((-half[a] - c[a]) / d[a], (half[a] - c[a]) / d[a]);
        if lo > hi {
            std::mem::swap(&mut lo, &mut hi);
        }
        t0 = t0.max(lo);
        t1 = t1.min(hi);
    }
    (t0 <= t1 && t0 > 1e-9).then(|| (t0, c + d * t0))
}

/// Inverse depth and static mask of a view on the pixel grid of `k`.
pub fn render_depth(
    scene: &Scene,
    frame: usize,
    view: &Pose,
    k: &Intrinsics,
) -> (InvDepthMap, Mask) {
    let (w, h) = (k.width as usize, k.height as usize);
    let rows: Vec<Vec<(f64, bool)>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    let Ok(ray) = k.ray(&Vector2::new(x as f64, y as f64)) else {
                        return (f64::NAN, true);
                    };
                    match scene.cast(frame, &view.translation, &(view.rotation * ray)) {
                        Some(hit) => (1.0 / hit.t, !hit.dynamic),
                        None => (f64::NAN, true),
                    }
                })
                .collect()
        })
        .collect();
    let flat: Vec<(f64, bool)> = rows.into_iter().flatten().collect();
    (
        Grid::from_vec(w, h, flat.iter().map(|p| p.0).collect()),
        Grid::from_vec(w, h, flat.iter().map(|p| p.1).collect()),
    )
}

/// Grayscale rendering of the scene textures (0 where nothing is hit).
pub fn render_image(scene: &Scene, frame: usize, view: &Pose, k: &Intrinsics) -> Image {
    let (w, h) = (k.width as usize, k.height as usize);
    let rows: Vec<Vec<f32>> = (0..h)
        .into_par_iter()
        .map(|y| {
            (0..w)
                .map(|x| {
                    k.ray(&Vector2::new(x as f64, y as f64))
                        .ok()
                        .and_then(|ray| {
                            scene.cast(frame, &view.translation, &(view.rotation * ray))
                        })
                        .map_or(0.0, |h| h.texture)
                })
                .collect()
        })
        .collect();
    Grid::from_vec(w, h, rows.into_iter().flatten().collect())
}

/// Where the surface seen at `px` in view `i` appears in view `j`, if it is visible there.
fn transfer(
    scene: &Scene,
    fi: usize,
    vi: &Pose,
    fj: usize,
    vj: &Pose,
    k: &Intrinsics,
    px: &Vector2<f64>,
    allow_dynamic: bool,
) -> Option<(Vector2<f64>, bool)> {
    let ray = k.ray(px).ok()?;
    let hit = scene.cast(fi, &vi.translation, &(vi.rotation * ray))?;
    if hit.dynamic && !allow_dynamic {
        return None;
    }
    let pj = if hit.dynamic {
        let bi = scene.box_pose(fi)?;
        let bj = scene.box_pose(fj)?;
        bj.transform_point(&bi.inverse().transform_point(&hit.point))
    } else {
        hit.point
    };
    if !scene.visible(fj, &vj.translation, &pj) {
        return None;
    }
    let q = k.project(&vj.inverse().transform_point(&pj)).ok()?;
    Some((q, hit.dynamic))
}

/// Flow from view `i` to view `j` on the grid of `k`, with optional Gaussian noise.
///
/// Static and dynamic pixels get weight 1; occluded, empty or out-of-grid pixels get 0.
pub fn induced_flow(
    scene: &Scene,
    (fi, vi): (usize, &Pose),
    (fj, vj): (usize, &Pose),
    k: &Intrinsics,
    sigma: f64,
    noise_stream: u64,
) -> FlowField {
    let (w, h) = (k.width as usize, k.height as usize);
    let mut out = FlowField::zeros(w, h);
    let values: Vec<Option<Vector2<f64>>> = (0..w * h)
        .into_par_iter()
        .map(|idx| {
            let px = Vector2::new((idx % w) as f64, (idx / w) as f64);
            if fi == fj && vi == vj {
                let ray = k.ray(&px).ok()?;
                scene.cast(fi, &vi.translation, &(vi.rotation * ray))?;
                return Some(Vector2::zeros());
            }
            let (q, _) = transfer(scene, fi, vi, fj, vj, k, &px, true)?;
            k.contains_grid(&q).then(|| q - px)
        })
        .collect();
    let mut rng = stream_rng(
        scene.seed,
        fi as u64,
        fj as u64,
        TAG_FLOW ^ (noise_stream << 8),
    );
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    for (idx, v) in values.into_iter().enumerate() {
        if let Some(f) = v {
            let mut f = f;
            if sigma > 0.0 {
                f += Vector2::new(normal.sample(&mut rng), normal.sample(&mut rng));
            }
            out.flow.as_mut_slice()[idx] = f;
            out.weight.as_mut_slice()[idx] = 1.0;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackSampling {
    /// Source points sit exactly on low-resolution pixel centres.
    GridAligned,
    /// Source points are uniform over the full-resolution image.
    Uniform,
}

/// Random surface points seen in both views, in full-resolution pixels.
/// Noise perturbs the destination point only.
#[allow(clippy::too_many_arguments)]
pub fn sample_tracks(
    scene: &Scene,
    (fi, vi): (usize, &Pose),
    (fj, vj): (usize, &Pose),
    k: &Intrinsics,
    count: usize,
    sigma: f64,
    sampling: TrackSampling,
    include_dynamic: bool,
    stream: u64,
) -> Vec<Track> {
    let mut rng = stream_rng(scene.seed, fi as u64, fj as u64, TAG_TRACKS ^ (stream << 8));
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let (w, h) = (k.width as usize, k.height as usize);
    let s = LOW_RES_FACTOR;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count * 8 {
        if out.len() >= count {
            break;
        }
        let p_i = match sampling {
            TrackSampling::GridAligned => Vector2::new(
                (rng.random_range(0..w.div_ceil(s)) * s) as f64,
                (rng.random_range(0..h.div_ceil(s)) * s) as f64,
            ),
            TrackSampling::Uniform => Vector2::new(
                rng.random_range(0.0..(w - 1) as f64),
                rng.random_range(0.0..(h - 1) as f64),
            ),
        };
        let Some((mut p_j, _)) = transfer(scene, fi, vi, fj, vj, k, &p_i, include_dynamic) else {
            continue;
        };
        if sigma > 0.0 {
            p_j += Vector2::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
        if !k.contains(&p_j) {
            continue;
        }
        out.push(Track {
            frame_i: fi,
            p_i,
            frame_j: fj,
            p_j,
            confidence: 1.0,
        });
    }
    out
}

/// Projections of the point sprinkle into consecutive frames where visible in both.
pub fn correspondences(scene: &Scene, views: &[Pose], k: &Intrinsics) -> CorrespondenceSet {
    let project = |f: usize, p: &Vector3<f64>| -> Option<Vector2<f64>> {
        let v = &views[f];
        if !scene.visible(f, &v.translation, p) {
            return None;
        }
        let q = k.project(&v.inverse().transform_point(p)).ok()?;
        k.contains(&q).then_some(q)
    };
    CorrespondenceSet {
        pairs: (1..views.len())
            .map(|j| FramePairMatches {
                i: j - 1,
                j,
                points: scene
                    .points
                    .iter()
                    .filter_map(|p| Some((project(j - 1, p)?, project(j, p)?)))
                    .collect(),
            })
            .filter(|m| !m.points.is_empty())
            .collect(),
    }
}

/// Settings of a simulated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub width: u32,
    pub height: u32,
    pub fov_deg: f64,
    pub model: CameraModel,
    pub alpha: f64,
    pub n_frames: usize,
    pub seed: u64,
    pub trajectory: TrajectoryKind,
    pub dynamic: bool,
    /// Flow noise in low-resolution pixels.
    pub flow_noise: f64,
    /// Track noise in full-resolution pixels.
    pub track_noise: f64,
    /// Relative noise on the depth prior.
    pub prior_noise: f64,
    pub tracks_per_pair: usize,
    pub track_sampling: TrackSampling,
    /// Affine distortion `(alpha, beta)` of the video depth in inverse-depth space.
    pub video_depth_affine: (f64, f64),
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            width: 256,
            height: 192,
            fov_deg: 60.0,
            model: CameraModel::Pinhole,
            alpha: 0.0,
            n_frames: 100,
            seed: 0,
            trajectory: TrajectoryKind::Sinusoidal,
            dynamic: false,
            flow_noise: 0.0,
            track_noise: 0.0,
            prior_noise: 0.0,
            tracks_per_pair: 256,
            track_sampling: TrackSampling::GridAligned,
            video_depth_affine: (2.0, 0.3),
        }
    }
}

/// A simulated video with every oracle output the engine consumes.
#[derive(Debug, Clone)]
pub struct SimDataset {
    pub config: SimConfig,
    pub scene: Scene,
    /// Ground-truth full-resolution intrinsics.
    pub intrinsics: Intrinsics,
    /// Rig-from-camera extrinsics.
    pub rig: Vec<Pose>,
}

impl SimDataset {
    pub fn new(config: SimConfig) -> Result<Self> {
        let f = (config.width as f64 / 2.0) / (config.fov_deg.to_radians() / 2.0).tan();
        let intrinsics = match config.model {
            CameraModel::Pinhole => Intrinsics::pinhole(f, config.width, config.height),
            CameraModel::Unified => {
                Intrinsics::unified(f, config.alpha, config.width, config.height)
            }
        };
        Self::with_rig(config, intrinsics, vec![Pose::identity()])
    }

    pub fn with_rig(config: SimConfig, intrinsics: Intrinsics, rig: Vec<Pose>) -> Result<Self> {
        intrinsics.validate()?;
        intrinsics.downsample(LOW_RES_FACTOR as u32)?;
        if config.n_frames == 0 {
            return Err(Error::Config("n_frames must be positive".into()));
        }
        if rig.is_empty() {
            return Err(Error::Config("rig needs at least one camera".into()));
        }
        let scene = Scene::default_scene(
            config.n_frames,
            config.trajectory,
            config.dynamic,
            config.seed,
        );
        Ok(Self {
            config,
            scene,
            intrinsics,
            rig,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.config.n_frames
    }

    pub fn low_res(&self) -> Intrinsics {
        self.intrinsics
            .downsample(LOW_RES_FACTOR as u32)
            .expect("checked at construction")
    }

    /// Ground-truth world-from-camera pose of a view.
    pub fn view_pose(&self, v: ViewId) -> Pose {
        self.scene.trajectory[v.frame].compose(&self.rig[v.camera])
    }

    pub fn gt_trajectory(&self) -> Trajectory {
        Trajectory::from_poses(self.scene.trajectory.clone())
    }

    fn check(&self, v: ViewId) -> Result<()> {
        if v.frame >= self.n_frames() || v.camera >= self.rig.len() {
            return Err(Error::ProviderFailure {
                frame: v.frame,
                message: format!("view {}/{} does not exist", v.frame, v.camera),
            });
        }
        Ok(())
    }

    pub fn flow(&self, i: ViewId, j: ViewId) -> Result<FlowField> {
        self.check(i)?;
        self.check(j)?;
        let stream = (i.camera * 64 + j.camera) as u64;
        Ok(induced_flow(
            &self.scene,
            (i.frame, &self.view_pose(i)),
            (j.frame, &self.view_pose(j)),
            &self.low_res(),
            self.config.flow_noise,
            stream,
        ))
    }

    pub fn tracks(&self, i: ViewId, j: ViewId) -> Result<Vec<Track>> {
        self.check(i)?;
        self.check(j)?;
        Ok(sample_tracks(
            &self.scene,
            (i.frame, &self.view_pose(i)),
            (j.frame, &self.view_pose(j)),
            &self.intrinsics,
            self.config.tracks_per_pair,
            self.config.track_noise,
            self.config.track_sampling,
            false,
            (i.camera * 64 + j.camera) as u64,
        ))
    }

    /// Ground-truth inverse depth and static mask on the low-resolution grid.
    pub fn gt_depth(&self, v: ViewId) -> Result<(InvDepthMap, Mask)> {
        self.check(v)?;
        Ok(render_depth(
            &self.scene,
            v.frame,
            &self.view_pose(v),
            &self.low_res(),
        ))
    }

    pub fn gt_depth_hd(&self, v: ViewId) -> Result<(InvDepthMap, Mask)> {
        self.check(v)?;
        Ok(render_depth(
            &self.scene,
            v.frame,
            &self.view_pose(v),
            &self.intrinsics,
        ))
    }

    /// Metric prior as a network conditioned on focal `k.f` would predict it:
    /// inverse depth scales with `f_true / f`.
    fn scaled_prior(
        &self,
        v: ViewId,
        mut inv: InvDepthMap,
        k: &Intrinsics,
        tag: u64,
    ) -> InvDepthMap {
        let scale = self.intrinsics.f / k.f;
        let sigma = self.config.prior_noise;
        let mut rng = stream_rng(
            self.config.seed,
            v.frame as u64,
            v.camera as u64,
            TAG_PRIOR ^ (tag << 8),
        );
        let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
        for d in inv.as_mut_slice() {
            if d.is_finite() {
                *d *= scale;
                if sigma > 0.0 {
                    *d *= (1.0 + normal.sample(&mut rng)).max(0.1);
                }
            }
        }
        inv
    }

    /// Low-resolution prior inverse depth and its confidence.
    pub fn prior(&self, v: ViewId, k: &Intrinsics) -> Result<(InvDepthMap, Grid<f64>)> {
        let (inv, _) = self.gt_depth(v)?;
        let m = inv.map(|d| if d.is_finite() { 1.0 } else { 0.0 });
        Ok((self.scaled_prior(v, inv, k, 0), m))
    }

    pub fn prior_hd(&self, v: ViewId, k: &Intrinsics) -> Result<InvDepthMap> {
        let (inv, _) = self.gt_depth_hd(v)?;
        Ok(self.scaled_prior(v, inv, k, 1))
    }

    pub fn mask(&self, v: ViewId) -> Result<Mask> {
        Ok(self.gt_depth(v)?.1)
    }

    pub fn mask_hd(&self, v: ViewId) -> Result<Mask> {
        Ok(self.gt_depth_hd(v)?.1)
    }

    /// Full-resolution affine-invariant depth: `1 / D_vda = (1 / D - beta) / alpha`.
    pub fn video_depth(&self, v: ViewId) -> Result<Grid<f64>> {
        let (a, b) = self.config.video_depth_affine;
        let (inv, _) = self.gt_depth_hd(v)?;
        Ok(inv.map(|d| {
            let inv_vda = (d - b) / a;
            if d.is_finite() && inv_vda > 0.0 {
                1.0 / inv_vda
            } else {
                f64::NAN
            }
        }))
    }

    pub fn image(&self, v: ViewId) -> Result<Image> {
        self.check(v)?;
        Ok(render_image(
            &self.scene,
            v.frame,
            &self.view_pose(v),
            &self.intrinsics,
        ))
    }

    /// Sprinkle correspondences between consecutive frames of camera 0.
    pub fn correspondences(&self) -> CorrespondenceSet {
        let views: Vec<Pose> = (0..self.n_frames())
            .map(|f| self.view_pose(ViewId::mono(f)))
            .collect();
        correspondences(&self.scene, &views, &self.intrinsics)
    }
}
