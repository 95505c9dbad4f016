use nalgebra::{DMatrix, DVector};

use crate::geometry::{Intrinsics, Pose};
use crate::graph::BAGraph;
use crate::grid::{is_valid_depth, InvDepthMap};

/// Inverse depth is kept inside this range by every update.
pub const INV_DEPTH_RANGE: (f64, f64) = (1e-4, 1e4);
/// Upper bound on the unified-model distortion.
pub const ALPHA_MAX: f64 = 0.999;

/// Values of all unknowns during a solve.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveState {
    /// World-from-rig pose per keyframe.
    pub poses: Vec<Pose>,
    pub depths: Vec<InvDepthMap>,
    /// Full-resolution intrinsics.
    pub intrinsics: Intrinsics,
}

impl SolveState {
    pub fn from_graph(graph: &BAGraph) -> Self {
        Self {
            poses: graph.keyframes.iter().map(|k| k.pose).collect(),
            depths: graph
                .keyframes
                .iter()
                .map(|k| k.inv_depth.clone())
                .collect(),
            intrinsics: graph.intrinsics,
        }
    }

    /// World-from-camera pose of keyframe `kf`.
    pub fn view_pose(&self, graph: &BAGraph, kf: usize) -> Pose {
        self.poses[kf].compose(&graph.rig[graph.keyframes[kf].camera])
    }

    /// Applies a camera step `dx` and depth step `dy` (indexed like the layout).
    pub fn apply(&self, layout: &Layout, dx: &DVector<f64>, dy: &[f64]) -> Self {
        let mut out = self.clone();
        for (pose, off) in out.poses.iter_mut().zip(&layout.pose_offset) {
            if let Some(o) = off {
                let xi = nalgebra::Vector6::from_iterator(dx.rows(*o, 6).iter().copied());
                *pose = pose.retract(&xi);
            }
        }
        if let Some(o) = layout.intrinsics_offset {
            out.intrinsics.f *= dx[o].exp();
            if layout.n_intrinsics > 1 {
                out.intrinsics.alpha = (out.intrinsics.alpha + dx[o + 1]).clamp(0.0, ALPHA_MAX);
            }
        }
        for (depth, start) in out.depths.iter_mut().zip(&layout.depth_start) {
            if let Some(s) = start {
                for (d, step) in depth.as_mut_slice().iter_mut().zip(&dy[*s..]) {
                    if is_valid_depth(*d) {
                        *d = (*d + step).clamp(INV_DEPTH_RANGE.0, INV_DEPTH_RANGE.1);
                    }
                }
            }
        }
        out
    }

    /// Copies the state back into the graph.
    pub fn write_back(&self, graph: &mut BAGraph, layout: &Layout) {
        for (i, kf) in graph.keyframes.iter_mut().enumerate() {
            kf.pose = self.poses[i];
            if layout.depth_free[i] {
                kf.inv_depth = self.depths[i].clone();
                kf.optimized = true;
            }
        }
        graph.intrinsics = self.intrinsics;
    }
}

/// Which variables a solve may move.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveScope {
    /// Per-keyframe flag; views of one timestamp must agree.
    pub pose_free: Vec<bool>,
    pub depth_free: Vec<bool>,
    /// Edge ids that contribute residuals.
    pub active_edges: Vec<usize>,
    pub optimize_intrinsics: bool,
}

impl SolveScope {
    /// Everything free except the first keyframe's pose.
    pub fn full(graph: &BAGraph, optimize_intrinsics: bool) -> Self {
        let first_frame = graph.keyframes.first().map(|k| k.frame_index);
        Self {
            pose_free: graph
                .keyframes
                .iter()
                .map(|k| Some(k.frame_index) != first_frame)
                .collect(),
            depth_free: graph.keyframes.iter().map(|k| k.has_depth()).collect(),
            active_edges: (0..graph.edges.len()).collect(),
            optimize_intrinsics,
        }
    }
}

/// Mapping from graph variables to positions in the camera parameter vector.
///
/// Camera parameters are the free pose blocks (6 each, one per timestamp)
/// followed by the intrinsics (`log f`, then `alpha` for the unified model).
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub pose_offset: Vec<Option<usize>>,
    pub n_pose_blocks: usize,
    pub intrinsics_offset: Option<usize>,
    pub n_intrinsics: usize,
    pub depth_free: Vec<bool>,
    /// Index of each free keyframe's first pixel among the depth unknowns.
    pub depth_start: Vec<Option<usize>>,
    pub n_depth: usize,
    pub active_edges: Vec<usize>,
}

impl Layout {
    pub fn new(graph: &BAGraph, scope: &SolveScope) -> Self {
        let mut by_frame: Vec<(usize, usize)> = Vec::new();
        let mut pose_offset = vec![None; graph.len()];
        let mut next = 0;
        for (i, kf) in graph.keyframes.iter().enumerate() {
            if !scope.pose_free[i] {
                continue;
            }
            let off = match by_frame.iter().find(|(f, _)| *f == kf.frame_index) {
                Some((_, o)) => *o,
                None => {
                    let o = next;
                    next += 6;
                    by_frame.push((kf.frame_index, o));
                    o
                }
            };
            pose_offset[i] = Some(off);
        }
        let n_intrinsics = if scope.optimize_intrinsics {
            graph.intrinsics.param_count()
        } else {
            0
        };
        let depth_free: Vec<bool> = scope
            .depth_free
            .iter()
            .zip(&graph.keyframes)
            .map(|(f, k)| *f && k.has_depth())
            .collect();
        let mut n_depth = 0;
        let depth_start = depth_free
            .iter()
            .zip(&graph.keyframes)
            .map(|(free, k)| {
                free.then(|| {
                    let s = n_depth;
                    n_depth += k.inv_depth.len();
                    s
                })
            })
            .collect();
        Self {
            pose_offset,
            n_pose_blocks: next / 6,
            intrinsics_offset: scope.optimize_intrinsics.then_some(next),
            n_intrinsics,
            depth_free,
            depth_start,
            n_depth,
            active_edges: scope.active_edges.clone(),
        }
    }

    pub fn n_cam(&self) -> usize {
        self.n_pose_blocks * 6 + self.n_intrinsics
    }
}

/// One eliminable inverse-depth unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthVar {
    pub keyframe: u32,
    pub pixel: u32,
    /// Diagonal Hessian entry.
    pub h: f64,
    /// Gradient entry.
    pub g: f64,
    /// Non-zero entries of the camera-depth coupling column, by camera index.
    pub coupling: Vec<(u32, f64)>,
}

/// Gauss-Newton normal equations `H dx = -g` split into camera and depth parts.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalEquations {
    pub h_cc: DMatrix<f64>,
    pub g_c: DVector<f64>,
    pub depth: Vec<DepthVar>,
}

impl NormalEquations {
    pub fn zeros(n_cam: usize) -> Self {
        Self {
            h_cc: DMatrix::zeros(n_cam, n_cam),
            g_c: DVector::zeros(n_cam),
            depth: Vec::new(),
        }
    }

    pub fn n_cam(&self) -> usize {
        self.g_c.len()
    }

    /// Levenberg-style damping: every diagonal entry scaled by `1 + lambda`.
    pub fn damped(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        for i in 0..out.n_cam() {
            out.h_cc[(i, i)] *= 1.0 + lambda;
        }
        for d in &mut out.depth {
            d.h *= 1.0 + lambda;
        }
        out
    }

    /// The full symmetric system with camera unknowns first, then depths.
    pub fn to_dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let nc = self.n_cam();
        let n = nc + self.depth.len();
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        h.view_mut((0, 0), (nc, nc)).copy_from(&self.h_cc);
        g.rows_mut(0, nc).copy_from(&self.g_c);
        for (k, d) in self.depth.iter().enumerate() {
            let r = nc + k;
            h[(r, r)] = d.h;
            g[r] = d.g;
            for &(c, v) in &d.coupling {
                h[(c as usize, r)] += v;
                h[(r, c as usize)] += v;
            }
        }
        (h, g)
    }
}

/// Camera system left after eliminating every depth unknown.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Depth unknowns whose diagonal was too small to eliminate; their step is zero.
    pub frozen: Vec<usize>,
}

/// Diagonal entries at or below this are treated as singular and frozen.
pub const SINGULAR_DEPTH: f64 = 1e-12;

/// Eliminates the (diagonal) depth block: `S = H_cc - H_cd H_dd^-1 H_dc`,
/// `b = -g_c + H_cd H_dd^-1 g_d`.
pub fn schur_eliminate_depth(ne: &NormalEquations) -> ReducedSystem {
    let mut s = ne.h_cc.clone();
    let mut rhs = -&ne.g_c;
    let mut frozen = Vec::new();
    for (k, d) in ne.depth.iter().enumerate() {
        if !(d.h > SINGULAR_DEPTH) {
            frozen.push(k);
            continue;
        }
        let inv = 1.0 / d.h;
        for &(a, va) in &d.coupling {
            let a = a as usize;
            rhs[a] += va * d.g * inv;
            let sa = va * inv;
            for &(b, vb) in &d.coupling {
                s[(a, b as usize)] -= sa * vb;
            }
        }
    }
    ReducedSystem {
        matrix: s,
        rhs,
        frozen,
    }
}

/// Depth steps given the camera step: `dy = (-g_d - H_dc dx) / h_d`.
pub fn back_substitute(
    ne: &NormalEquations,
    reduced: &ReducedSystem,
    dx: &DVector<f64>,
) -> Vec<f64> {
    let mut frozen = reduced.frozen.iter().peekable();
    ne.depth
        .iter()
        .enumerate()
        .map(|(k, d)| {
            if frozen.peek() == Some(&&k) {
                frozen.next();
                return 0.0;
            }
            let coupled: f64 = d.coupling.iter().map(|&(c, v)| v * dx[c as usize]).sum();
            (-d.g - coupled) / d.h
        })
        .collect()
}
