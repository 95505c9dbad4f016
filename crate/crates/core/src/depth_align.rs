//! Full-resolution metric depth from bundle-adjusted keyframe depth and an
//! affine-invariant video depth, fitted in inverse depth with momentum smoothing.

use nalgebra::{Matrix2, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::graph::BAGraph;
use crate::grid::{is_valid_depth, Grid, InvDepthMap, Mask};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignConfig {
    /// Reprojection radius for the consistency check, in low-resolution pixels.
    pub tau_px: f64,
    /// Relative depth tolerance for the consistency check.
    pub tau_rel: f64,
    /// Below this coverage the metric prior replaces the BA depth.
    pub tau_lo: f64,
    /// At or above this coverage the BA depth is used directly.
    pub tau_hi: f64,
    pub momentum: f64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            tau_px: 2.0,
            tau_rel: 0.05,
            tau_lo: 0.005,
            tau_hi: 0.20,
            momentum: 0.9,
        }
    }
}

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.tau_px >= 0.0
            && self.tau_rel >= 0.0
            && (0.0..=1.0).contains(&self.tau_lo)
            && self.tau_lo <= self.tau_hi
            && self.tau_hi <= 1.0
            && (0.0..1.0).contains(&self.momentum);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "invalid alignment settings {self:?}"
            )))
        }
    }
}

/// Sparse full-resolution inverse depth; NaN marks pixels without a value.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseDepthMap {
    pub values: InvDepthMap,
    pub coverage: f64,
}

impl SparseDepthMap {
    pub fn new(values: InvDepthMap) -> Self {
        let valid = values.iter().filter(|v| is_valid_depth(**v)).count();
        let coverage = if values.is_empty() {
            0.0
        } else {
            valid as f64 / values.len() as f64
        };
        Self { values, coverage }
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        is_valid_depth(*self.values.get(x, y))
    }
}

/// World points of every keyframe pixel that another keyframe confirms.
///
/// A point is kept when, projected into some other depth-carrying keyframe, a
/// pixel within `tau_px` holds a depth within `tau_rel` of the predicted one.
/// With a single keyframe there is nothing to check against and all points are kept.
pub fn consistent_points(graph: &BAGraph, cfg: &AlignConfig) -> Result<Vec<Vector3<f64>>> {
    if graph.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let k = graph.low_res_intrinsics()?;
    let with_depth: Vec<usize> = (0..graph.len())
        .filter(|i| graph.keyframes[*i].has_depth())
        .collect();
    if with_depth.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let poses: Vec<Pose> = (0..graph.len()).map(|i| graph.view_pose(i)).collect();
    let inverses: Vec<Pose> = poses.iter().map(Pose::inverse).collect();
    let check = with_depth.len() > 1;
    let per_kf: Vec<Vec<Vector3<f64>>> = with_depth
        .par_iter()
        .map(|&a| {
            let depth = graph.keyframes[a].best_depth();
            let mut out = Vec::new();
            for (idx, d) in depth.iter().enumerate() {
                if !is_valid_depth(*d) {
                    continue;
                }
                let (x, y) = depth.coords(idx);
                let Ok(local) = k.unproject(&Vector2::new(x as f64, y as f64), *d) else {
                    continue;
                };
                let world = poses[a].transform_point(&local);
                let keep = !check
                    || with_depth.iter().filter(|b| **b != a).any(|&b| {
                        confirms(
                            graph.keyframes[b].best_depth(),
                            &inverses[b],
                            &k,
                            &world,
                            cfg,
                        )
                    });
                if keep {
                    out.push(world);
                }
            }
            out
        })
        .collect();
    Ok(per_kf.into_iter().flatten().collect())
}

fn confirms(
    depth: &InvDepthMap,
    inv_pose: &Pose,
    k: &Intrinsics,
    world: &Vector3<f64>,
    cfg: &AlignConfig,
) -> bool {
    let p = inv_pose.transform_point(world);
    let Ok(q) = k.project(&p) else {
        return false;
    };
    let z = p.norm();
    let r = cfg.tau_px.floor() as i64;
    let (cx, cy) = (q.x.round() as i64, q.y.round() as i64);
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            if x < 0 || y < 0 || x >= depth.width() as i64 || y >= depth.height() as i64 {
                continue;
            }
            let (xf, yf) = (x as f64 - q.x, y as f64 - q.y);
            if xf.hypot(yf) > cfg.tau_px {
                continue;
            }
            let d = *depth.get(x as usize, y as usize);
            if !is_valid_depth(d) {
                continue;
            }
            // Compare range along the observed ray with the predicted range.
            let Ok(obs) = k.unproject(&Vector2::new(x as f64, y as f64), d) else {
                continue;
            };
            let range = obs.norm();
            if (range - z).abs() <= cfg.tau_rel * range {
                return true;
            }
        }
    }
    false
}

/// Z-buffered nearest-pixel projection of world points into a full-resolution view.
pub fn project_points(points: &[Vector3<f64>], pose: &Pose, k: &Intrinsics) -> SparseDepthMap {
    let (w, h) = (k.width as usize, k.height as usize);
    let mut values = Grid::new(w, h, f64::NAN);
    let inv = pose.inverse();
    for world in points {
        let p = inv.transform_point(world);
        if p.z <= 0.0 {
            continue;
        }
        let Ok(q) = k.project(&p) else {
            continue;
        };
        let (x, y) = (q.x.round(), q.y.round());
        if x < 0.0 || y < 0.0 || x >= w as f64 || y >= h as f64 {
            continue;
        }
        let d = 1.0 / p.z;
        let cell = values.get_mut(x as usize, y as usize);
        // Closest point wins: largest inverse depth.
        if !(*cell >= d) {
            *cell = d;
        }
    }
    SparseDepthMap::new(values)
}

/// Consistency-filtered keyframe depth splatted into the view at `pose`.
pub fn aggregate_ba_depth(
    graph: &BAGraph,
    pose: &Pose,
    k: &Intrinsics,
    cfg: &AlignConfig,
) -> Result<SparseDepthMap> {
    Ok(project_points(&consistent_points(graph, cfg)?, pose, k))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineFit {
    pub alpha: f64,
    pub beta: f64,
    /// Fewer than two distinct samples; `(1, 0)` returned.
    pub degenerate: bool,
    pub samples: usize,
}

/// Samples `(1 / D_vda, 1 / D_ba)` over valid, static pixels.
pub fn affine_samples(
    video_depth: &Grid<f64>,
    sparse: &SparseDepthMap,
    mask: Option<&Mask>,
) -> Result<Vec<(f64, f64)>> {
    if !video_depth.same_shape(&sparse.values) || mask.is_some_and(|m| !m.same_shape(video_depth)) {
        return Err(Error::InvalidInput(
            "alignment inputs differ in resolution".into(),
        ));
    }
    Ok((0..video_depth.len())
        .filter(|i| mask.is_none_or(|m| m.as_slice()[*i]))
        .filter_map(|i| {
            let (dv, ib) = (video_depth.as_slice()[i], sparse.values.as_slice()[i]);
            (dv.is_finite() && dv > 0.0 && is_valid_depth(ib)).then(|| (1.0 / dv, ib))
        })
        .collect())
}

/// `sum (alpha x + beta - y)^2`.
pub fn affine_objective(samples: &[(f64, f64)], alpha: f64, beta: f64) -> f64 {
    samples
        .iter()
        .map(|(x, y)| (alpha * x + beta - y).powi(2))
        .sum()
}

/// Gradient of [`affine_objective`] with respect to `(alpha, beta)`.
pub fn affine_gradient(samples: &[(f64, f64)], alpha: f64, beta: f64) -> Vector2<f64> {
    samples
        .iter()
        .map(|(x, y)| 2.0 * (alpha * x + beta - y) * Vector2::new(*x, 1.0))
        .sum()
}

/// Closed-form least squares for `alpha x + beta ~ y`.
pub fn fit_affine_samples(samples: &[(f64, f64)]) -> AffineFit {
    let n = samples.len();
    let degenerate = AffineFit {
        alpha: 1.0,
        beta: 0.0,
        degenerate: true,
        samples: n,
    };
    if n < 2 {
        return degenerate;
    }
    // Centre the data to keep the 2x2 system well conditioned.
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / n as f64;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / n as f64;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in samples {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let scale = samples.iter().map(|s| s.0 * s.0).sum::<f64>();
    if sxx <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
        return degenerate;
    }
    let alpha = sxy / sxx;
    AffineFit {
        alpha,
        beta: my - alpha * mx,
        degenerate: false,
        samples: n,
    }
}

/// Affine map from video inverse depth to BA inverse depth over masked pixels.
pub fn fit_affine(
    video_depth: &Grid<f64>,
    sparse: &SparseDepthMap,
    mask: Option<&Mask>,
) -> Result<AffineFit> {
    Ok(fit_affine_samples(&affine_samples(
        video_depth,
        sparse,
        mask,
    )?))
}

/// Normal-equation matrix of the affine fit, exposed for conditioning checks.
pub fn affine_normal_matrix(samples: &[(f64, f64)]) -> Matrix2<f64> {
    samples
        .iter()
        .map(|(x, _)| Matrix2::new(x * x, *x, *x, 1.0))
        .sum()
}

/// Momentum-smoothed affine parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineState {
    pub alpha_hat: f64,
    pub beta_hat: f64,
    pub momentum: f64,
    pub initialized: bool,
}

impl AffineState {
    pub fn new(momentum: f64) -> Self {
        Self {
            alpha_hat: 1.0,
            beta_hat: 0.0,
            momentum,
            initialized: false,
        }
    }
}

/// Exponential moving average of the per-frame fit. The first accepted fit
/// initializes the state; fits with non-positive scale are ignored.
pub fn momentum_update(state: AffineState, alpha: f64, beta: f64) -> AffineState {
    if !(alpha > 0.0) || !beta.is_finite() || !alpha.is_finite() {
        return state;
    }
    if !state.initialized {
        return AffineState {
            alpha_hat: alpha,
            beta_hat: beta,
            initialized: true,
            ..state
        };
    }
    let m = state.momentum;
    AffineState {
        alpha_hat: m * state.alpha_hat + (1.0 - m) * alpha,
        beta_hat: m * state.beta_hat + (1.0 - m) * beta,
        ..state
    }
}

/// Metric depth `1 / (alpha_hat / D_vda + beta_hat)`; NaN where the denominator is not positive.
pub fn compose_hd_depth(video_depth: &Grid<f64>, state: &AffineState) -> Grid<f64> {
    video_depth.map(|d| {
        let inv = state.alpha_hat / d + state.beta_hat;
        if d.is_finite() && *d > 0.0 && inv > 0.0 {
            1.0 / inv
        } else {
            f64::NAN
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Direct,
    Infilled,
    Prior,
}

/// Chooses the alignment target by coverage. `infill` handles the middle band.
pub fn coverage_gate(
    sparse: SparseDepthMap,
    prior: Option<&InvDepthMap>,
    cfg: &AlignConfig,
    infill: &dyn Fn(SparseDepthMap) -> SparseDepthMap,
) -> (GateDecision, SparseDepthMap) {
    if sparse.coverage >= cfg.tau_hi {
        (GateDecision::Direct, sparse)
    } else if sparse.coverage >= cfg.tau_lo {
        (GateDecision::Infilled, infill(sparse))
    } else {
        match prior {
            Some(p) => (GateDecision::Prior, SparseDepthMap::new(p.clone())),
            None => (GateDecision::Prior, sparse),
        }
    }
}

/// Per-frame inputs to the alignment pass.
#[derive(Debug, Clone)]
pub struct FrameAlignInput {
    pub pose: Pose,
    pub video_depth: Grid<f64>,
    pub mask: Option<Mask>,
    pub prior: Option<InvDepthMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameAlignment {
    /// Metric depth (not inverse); NaN where invalid.
    pub depth: Grid<f64>,
    pub fit: AffineFit,
    pub state: AffineState,
    pub decision: GateDecision,
    pub coverage: f64,
}

/// Aggregates BA depth per frame in parallel, then runs the sequential momentum pass.
pub fn align_sequence(
    points: &[Vector3<f64>],
    k: &Intrinsics,
    frames: &[FrameAlignInput],
    cfg: &AlignConfig,
) -> Result<Vec<FrameAlignment>> {
    cfg.validate()?;
    let identity = |s: SparseDepthMap| s;
    let fits: Vec<(AffineFit, GateDecision, f64)> = frames
        .par_iter()
        .map(|f| {
            let sparse = project_points(points, &f.pose, k);
            let coverage = sparse.coverage;
            let (decision, target) = coverage_gate(sparse, f.prior.as_ref(), cfg, &identity);
            let fit = fit_affine(&f.video_depth, &target, f.mask.as_ref())?;
            Ok((fit, decision, coverage))
        })
        .collect::<Result<_>>()?;
    let mut state = AffineState::new(cfg.momentum);
    Ok(frames
        .iter()
        .zip(fits)
        .map(|(f, (fit, decision, coverage))| {
            if !fit.degenerate {
                state = momentum_update(state, fit.alpha, fit.beta);
            }
            FrameAlignment {
                depth: compose_hd_depth(&f.video_depth, &state),
                fit,
                state,
                decision,
                coverage,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Keyframe;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane_keyframe(frame: usize, pose: Pose, k_low: &Intrinsics, plane_z: f64) -> Keyframe {
        let (w, h) = (k_low.width as usize, k_low.height as usize);
        // Fronto-parallel world plane z = plane_z seen from a pure translation.
        let d = Grid::from_fn(w, h, |_, _| 1.0 / (plane_z - pose.translation.z));
        let m = Grid::new(w, h, 1.0);
        Keyframe::new(frame, 0, pose, d, m, Grid::new(w, h, true))
    }

    fn two_view_graph() -> BAGraph {
        let k = Intrinsics::pinhole(64.0, 128, 96);
        let kl = k.downsample(8).unwrap();
        let mut g = BAGraph::new(k);
        g.push_keyframe(plane_keyframe(0, Pose::identity(), &kl, 4.0));
        let p1 = Pose::from_translation(Vector3::new(0.1, 0.0, 0.2));
        g.push_keyframe(plane_keyframe(1, p1, &kl, 4.0));
        g
    }

    #[test]
    fn single_keyframe_projects_onto_itself() {
        let mut g = two_view_graph();
        g.keyframes.truncate(1);
        let k = g.intrinsics;
        let s = aggregate_ba_depth(&g, &Pose::identity(), &k, &AlignConfig::default()).unwrap();
        assert!((s.coverage - (16.0 * 12.0) / (128.0 * 96.0)).abs() < 1e-12);
        for y in 0..12 {
            for x in 0..16 {
                assert!((s.values.get(8 * x, 8 * y) - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn consistent_plane_keeps_all_points() {
        let g = two_view_graph();
        let pts = consistent_points(&g, &AlignConfig::default()).unwrap();
        // Every point lands within the other view for this small baseline, except
        // the ones that leave the frustum.
        let kl = g.low_res_intrinsics().unwrap();
        let mut expected = 0;
        for (a, b) in [(0, 1), (1, 0)] {
            let inv = g.view_pose(b).inverse();
            let d = g.keyframes[a].best_depth();
            for idx in 0..d.len() {
                let (x, y) = d.coords(idx);
                let world = g.view_pose(a).transform_point(
                    &kl.unproject(&Vector2::new(x as f64, y as f64), d.as_slice()[idx])
                        .unwrap(),
                );
                let q = kl.project(&inv.transform_point(&world)).unwrap();
                let inside = q.x.round() >= -2.0
                    && q.y.round() >= -2.0
                    && q.x.round() <= 17.0
                    && q.y.round() <= 13.0;
                if inside
                    && confirms(
                        g.keyframes[b].best_depth(),
                        &inv,
                        &kl,
                        &world,
                        &AlignConfig::default(),
                    )
                {
                    expected += 1;
                }
            }
        }
        assert_eq!(pts.len(), expected);
        assert!(pts.len() > 300);
    }

    #[test]
    fn corrupted_depth_is_rejected() {
        let mut g = two_view_graph();
        let d = &mut g.keyframes[1].prior_inv_depth;
        let w = d.width();
        for idx in 0..d.len() {
            if idx % w < w / 2 {
                d.as_mut_slice()[idx] *= 0.5; // depth x2
            }
        }
        let cfg = AlignConfig::default();
        let pts = consistent_points(&g, &cfg).unwrap();
        let kl = g.low_res_intrinsics().unwrap();
        // Brute-force recount of survivors from keyframe 1.
        let p1 = g.view_pose(1);
        let inv0 = g.view_pose(0).inverse();
        let d1 = g.keyframes[1].best_depth();
        let mut survivors = 0;
        let mut corrupted_survivors = 0;
        for idx in 0..d1.len() {
            let (x, y) = d1.coords(idx);
            let world = p1.transform_point(
                &kl.unproject(&Vector2::new(x as f64, y as f64), d1.as_slice()[idx])
                    .unwrap(),
            );
            if confirms(g.keyframes[0].best_depth(), &inv0, &kl, &world, &cfg) {
                survivors += 1;
                if x < w / 2 {
                    corrupted_survivors += 1;
                }
            }
            // Every survivor is in the output cloud.
            if pts.iter().any(|p| (p - world).norm() < 1e-12) {
                assert!(confirms(
                    g.keyframes[0].best_depth(),
                    &inv0,
                    &kl,
                    &world,
                    &cfg
                ));
            }
        }
        assert_eq!(corrupted_survivors, 0);
        assert!(survivors > 0);
    }

    #[test]
    fn affine_fit_identity_and_exact_corruption() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vda = Grid::from_fn(40, 30, |_, _| rng.random_range(1.0..8.0));
        let same = SparseDepthMap::new(vda.map(|d| 1.0 / d));
        let f = fit_affine(&vda, &same, None).unwrap();
        assert!((f.alpha - 1.0).abs() < 1e-12 && f.beta.abs() < 1e-12);
        let corrupted = SparseDepthMap::new(vda.map(|d| 2.0 / d + 0.3));
        let f = fit_affine(&vda, &corrupted, None).unwrap();
        assert!((f.alpha - 2.0).abs() < 1e-9 && (f.beta - 0.3).abs() < 1e-9);
    }

    #[test]
    fn affine_fit_beats_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let samples: Vec<(f64, f64)> = (0..200)
            .map(|_| {
                let x: f64 = rng.random_range(0.1..1.0);
                (x, 1.7 * x - 0.2 + rng.random_range(-0.05..0.05))
            })
            .collect();
        let fit = fit_affine_samples(&samples);
        let best = affine_objective(&samples, fit.alpha, fit.beta);
        let mut grid_best = f64::INFINITY;
        let mut a = 0.1;
        while a <= 10.0 {
            // Optimal beta for fixed alpha is closed-form; scan beta on a grid near it.
            let b0 = samples.iter().map(|(x, y)| y - a * x).sum::<f64>() / samples.len() as f64;
            for k in -2..=2 {
                let b = ((b0 / 1e-3).round() + k as f64) * 1e-3;
                if (-1.0..=1.0).contains(&b) {
                    grid_best = grid_best.min(affine_objective(&samples, a, b));
                }
            }
            a += 1e-3;
        }
        assert!(best <= grid_best + 1e-12);
        for (da, db) in [
            (1e-3, 0.0),
            (-1e-3, 0.0),
            (0.0, 1e-3),
            (0.0, -1e-3),
            (1e-3, 1e-3),
            (-1e-3, 1e-3),
        ] {
            assert!(affine_objective(&samples, fit.alpha + da, fit.beta + db) >= best);
        }
    }

    #[test]
    fn degenerate_fit_is_flagged() {
        let f = fit_affine_samples(&[(0.5, 1.0), (0.5, 2.0)]);
        assert!(f.degenerate && f.alpha == 1.0 && f.beta == 0.0);
        assert!(fit_affine_samples(&[(0.5, 1.0)]).degenerate);
    }

    #[test]
    fn affine_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let s: Vec<(f64, f64)> = (0..10)
                .map(|_| (rng.random_range(0.1..2.0), rng.random_range(0.0..3.0)))
                .collect();
            let (a, b) = (rng.random_range(0.2..4.0), rng.random_range(-1.0..1.0));
            let g = affine_gradient(&s, a, b);
            let h = 1e-6;
            let fa = (affine_objective(&s, a + h, b) - affine_objective(&s, a - h, b)) / (2.0 * h);
            let fb = (affine_objective(&s, a, b + h) - affine_objective(&s, a, b - h)) / (2.0 * h);
            assert!((g.x - fa).abs() <= 1e-5 * g.x.abs().max(1.0));
            assert!((g.y - fb).abs() <= 1e-5 * g.y.abs().max(1.0));
        }
    }

    #[test]
    fn momentum_recursion() {
        let mut s = AffineState::new(0.9);
        let mut out = Vec::new();
        for a in [1.0, 2.0, 2.0] {
            s = momentum_update(s, a, 0.0);
            out.push(s.alpha_hat);
        }
        let expected = [
            1.0,
            0.9 * 1.0 + 0.1 * 2.0,
            0.9 * (0.9 * 1.0 + 0.1 * 2.0) + 0.1 * 2.0,
        ];
        for (o, e) in out.iter().zip(expected) {
            assert!((o - e).abs() < 1e-12);
        }
        assert!((out[1] - 1.1).abs() < 1e-12 && (out[2] - 1.19).abs() < 1e-12);
        let mut s = AffineState::new(0.0);
        s = momentum_update(s, 3.0, 1.0);
        s = momentum_update(s, 5.0, -1.0);
        assert_eq!((s.alpha_hat, s.beta_hat), (5.0, -1.0));
        let prev = s;
        assert_eq!(momentum_update(prev, -1.0, 0.0), prev);
    }

    #[test]
    fn momentum_is_convex_and_converges() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = AffineState::new(0.7);
        s = momentum_update(s, 1.0, 0.0);
        for _ in 0..100 {
            let a = rng.random_range(0.1..5.0);
            let n = momentum_update(s, a, 0.0);
            assert!(
                n.alpha_hat >= s.alpha_hat.min(a) - 1e-15
                    && n.alpha_hat <= s.alpha_hat.max(a) + 1e-15
            );
            s = n;
        }
        for _ in 0..200 {
            s = momentum_update(s, 2.5, 0.4);
        }
        assert!((s.alpha_hat - 2.5).abs() < 1e-12 && (s.beta_hat - 0.4).abs() < 1e-12);
    }

    #[test]
    fn compose_cases() {
        let vda = Grid::from_vec(3, 1, vec![1.0, 2.0, 4.0]);
        let mut s = AffineState::new(0.0);
        s = momentum_update(s, 1.0, 0.0);
        assert_eq!(compose_hd_depth(&vda, &s), vda);
        let s2 = AffineState {
            alpha_hat: 2.0,
            ..s
        };
        assert_eq!(compose_hd_depth(&vda, &s2).as_slice(), &[0.5, 1.0, 2.0]);
        let s3 = AffineState {
            alpha_hat: 1.0,
            beta_hat: -0.6,
            ..s
        };
        let out = compose_hd_depth(&vda, &s3);
        assert!((out.as_slice()[0] - 2.5).abs() < 1e-12);
        assert!(out.as_slice()[1].is_nan() && out.as_slice()[2].is_nan());
    }

    #[test]
    fn coverage_gate_bands() {
        let cfg = AlignConfig {
            tau_lo: 0.01,
            tau_hi: 0.2,
            ..Default::default()
        };
        let prior = Grid::new(10, 10, 0.5);
        let called = std::cell::Cell::new(false);
        let infill = |s: SparseDepthMap| {
            called.set(true);
            s
        };
        let empty = SparseDepthMap::new(Grid::new(10, 10, f64::NAN));
        let (d, out) = coverage_gate(empty, Some(&prior), &cfg, &infill);
        assert_eq!(d, GateDecision::Prior);
        assert_eq!(out.coverage, 1.0);
        let full = SparseDepthMap::new(Grid::new(10, 10, 0.3));
        assert_eq!(
            coverage_gate(full.clone(), Some(&prior), &cfg, &infill),
            (GateDecision::Direct, full)
        );
        assert!(!called.get());
        let mut v = Grid::new(100, 1, f64::NAN);
        for i in 0..3 {
            v.as_mut_slice()[i] = 1.0;
        }
        let partial = SparseDepthMap::new(v);
        assert!((partial.coverage - 0.03).abs() < 1e-15);
        let (d, _) = coverage_gate(partial, None, &cfg, &infill);
        assert_eq!(d, GateDecision::Infilled);
        assert!(called.get());
    }

    #[test]
    fn projection_never_invents_pixels() {
        let k = Intrinsics::pinhole(50.0, 64, 48);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vector3<f64>> = (0..300)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-3.0..3.0),
                    rng.random_range(-2.0..2.0),
                    rng.random_range(-1.0..6.0),
                )
            })
            .collect();
        let s = project_points(&pts, &Pose::identity(), &k);
        let mut covered = Grid::new(64, 48, false);
        let mut nearest = Grid::new(64, 48, f64::NAN);
        for p in &pts {
            if p.z <= 0.0 {
                continue;
            }
            if let Ok(q) = k.project(p) {
                let (x, y) = (q.x.round(), q.y.round());
                if x >= 0.0 && y >= 0.0 && x < 64.0 && y < 48.0 {
                    covered.set(x as usize, y as usize, true);
                    let c = nearest.get_mut(x as usize, y as usize);
                    if !(*c >= 1.0 / p.z) {
                        *c = 1.0 / p.z;
                    }
                }
            }
        }
        for i in 0..s.values.len() {
            assert_eq!(
                is_valid_depth(s.values.as_slice()[i]),
                covered.as_slice()[i]
            );
            if covered.as_slice()[i] {
                assert_eq!(s.values.as_slice()[i], nearest.as_slice()[i]);
            }
        }
    }
}
