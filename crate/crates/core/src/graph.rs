//! Keyframe graph: vertices carry poses and low-resolution inverse depth,
//! directed edges carry the flow measurements between two views.

use std::collections::HashSet;
use std::fmt::Write as _;

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::grid::{is_valid_depth, FlowField, Grid, InvDepthMap, Mask};
use crate::LOW_RES_FACTOR;

/// One camera's image at one timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ViewId {
    pub frame: usize,
    pub camera: usize,
}

impl ViewId {
    pub fn mono(frame: usize) -> Self {
        Self { frame, camera: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Keyframe {
    /// Ordinal of the source frame in the video.
    pub frame_index: usize,
    /// Rig camera this view was captured by (0 for monocular input).
    pub camera: usize,
    /// World-from-rig pose. Views of one timestamp share it.
    pub pose: Pose,
    pub inv_depth: InvDepthMap,
    pub prior_inv_depth: InvDepthMap,
    /// Prior confidence `m` in [0, 1].
    pub prior_uncertainty: Grid<f64>,
    pub static_mask: Mask,
    /// Set once `inv_depth` has gone through at least one solve.
    pub optimized: bool,
}

impl Keyframe {
    /// A keyframe whose depth starts at its prior.
    pub fn new(
        frame_index: usize,
        camera: usize,
        pose: Pose,
        prior_inv_depth: InvDepthMap,
        prior_uncertainty: Grid<f64>,
        static_mask: Mask,
    ) -> Self {
        Self {
            frame_index,
            camera,
            pose,
            inv_depth: prior_inv_depth.clone(),
            prior_inv_depth,
            prior_uncertainty,
            static_mask,
            optimized: false,
        }
    }

    /// A pose-only node with no depth, used as the free vertex of an infill graph.
    pub fn pose_only(frame_index: usize, camera: usize, pose: Pose) -> Self {
        let empty = Grid::from_vec(0, 0, Vec::new());
        Self {
            frame_index,
            camera,
            pose,
            inv_depth: empty.clone(),
            prior_inv_depth: empty.clone(),
            prior_uncertainty: empty,
            static_mask: Grid::from_vec(0, 0, Vec::new()),
            optimized: false,
        }
    }

    pub fn view(&self) -> ViewId {
        ViewId {
            frame: self.frame_index,
            camera: self.camera,
        }
    }

    pub fn has_depth(&self) -> bool {
        !self.inv_depth.is_empty()
    }

    /// The depth used for geometric reasoning: optimized if available, otherwise the prior.
    pub fn best_depth(&self) -> &InvDepthMap {
        if self.optimized {
            &self.inv_depth
        } else {
            &self.prior_inv_depth
        }
    }

    pub fn valid_pixel_count(&self) -> usize {
        self.best_depth()
            .iter()
            .filter(|d| is_valid_depth(**d))
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeDirection {
    Bidirectional,
    Unidirectional,
}

impl EdgeDirection {
    pub fn tag(&self) -> &'static str {
        match self {
            EdgeDirection::Bidirectional => "bi",
            EdgeDirection::Unidirectional => "uni",
        }
    }
}

/// A directed constraint from `src` (whose depth is used) to `dst`.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    /// Dense flow; the source's static mask is applied at evaluation time.
    pub flow: FlowField,
    /// Splatted sparse tracks, if any were available for this pair.
    pub sparse: Option<FlowField>,
    pub direction: EdgeDirection,
    pub covisibility: f64,
}

/// Flow payload for a new edge.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgePayload {
    pub flow: FlowField,
    pub sparse: Option<FlowField>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BAGraph {
    pub keyframes: Vec<Keyframe>,
    pub edges: Vec<Edge>,
    /// Full-resolution intrinsics shared by all views.
    pub intrinsics: Intrinsics,
    /// Rig-from-camera extrinsics, one per camera; `[identity]` for monocular input.
    pub rig: Vec<Pose>,
    edge_keys: HashSet<(usize, usize, EdgeDirection)>,
}

impl BAGraph {
    pub fn new(intrinsics: Intrinsics) -> Self {
        Self::with_rig(intrinsics, vec![Pose::identity()])
    }

    pub fn with_rig(intrinsics: Intrinsics, rig: Vec<Pose>) -> Self {
        Self {
            keyframes: Vec::new(),
            edges: Vec::new(),
            intrinsics,
            rig,
            edge_keys: HashSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn push_keyframe(&mut self, kf: Keyframe) -> usize {
        self.keyframes.push(kf);
        self.keyframes.len() - 1
    }

    /// Intrinsics at the resolution of depth and flow grids.
    pub fn low_res_intrinsics(&self) -> Result<Intrinsics> {
        self.intrinsics.downsample(LOW_RES_FACTOR as u32)
    }

    /// World-from-camera pose of a view.
    pub fn view_pose(&self, kf: usize) -> Pose {
        let k = &self.keyframes[kf];
        k.pose.compose(&self.rig[k.camera])
    }

    pub fn has_edge(&self, src: usize, dst: usize) -> bool {
        self.edge_keys
            .contains(&(src, dst, EdgeDirection::Bidirectional))
            || self
                .edge_keys
                .contains(&(src, dst, EdgeDirection::Unidirectional))
    }

    /// Inserts an edge unless an identical `(src, dst, direction)` edge exists.
    /// Returns whether the edge was added.
    pub fn add_edge(&mut self, edge: Edge) -> Result<bool> {
        if edge.src == edge.dst {
            return Err(Error::InvalidInput("edge endpoints must differ".into()));
        }
        if edge.src >= self.len() || edge.dst >= self.len() {
            return Err(Error::InvalidInput(format!(
                "edge ({}, {}) references a missing keyframe",
                edge.src, edge.dst
            )));
        }
        let src = &self.keyframes[edge.src];
        if src.has_depth()
            && (edge.flow.width() != src.inv_depth.width()
                || edge.flow.height() != src.inv_depth.height())
        {
            return Err(Error::InvalidInput(format!(
                "flow {}x{} does not match depth grid {}x{}",
                edge.flow.width(),
                edge.flow.height(),
                src.inv_depth.width(),
                src.inv_depth.height()
            )));
        }
        let key = (edge.src, edge.dst, edge.direction);
        if !self.edge_keys.insert(key) {
            return Ok(false);
        }
        self.edges.push(edge);
        Ok(true)
    }

    /// Text dump with one `EDGE i j dir covis` line per edge.
    pub fn dump_edges(&self) -> String {
        let mut out = String::new();
        for e in &self.edges {
            let _ = writeln!(
                out,
                "EDGE {} {} {} {:.6}",
                e.src,
                e.dst,
                e.direction.tag(),
                e.covisibility
            );
        }
        out
    }
}

/// Fraction of `i`'s valid depth pixels that land inside `j`'s image in front of it.
pub fn covisibility(graph: &BAGraph, i: usize, j: usize) -> Result<f64> {
    let k = graph.low_res_intrinsics()?;
    let src = &graph.keyframes[i];
    let depth = src.best_depth();
    let rel = graph.view_pose(j).inverse().compose(&graph.view_pose(i));
    let mut valid = 0usize;
    let mut seen = 0usize;
    for (idx, &d) in depth.iter().enumerate() {
        if !is_valid_depth(d) {
            continue;
        }
        let (x, y) = depth.coords(idx);
        let Ok(ray) = k.ray(&Vector2::new(x as f64, y as f64)) else {
            continue;
        };
        valid += 1;
        let p = rel.transform_homogeneous(&ray, d);
        if let Ok(px) = k.project(&p) {
            if k.contains_grid(&px) {
                seen += 1;
            }
        }
    }
    if valid == 0 {
        return Err(Error::EmptyDepth(i));
    }
    Ok(seen as f64 / valid as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowParams {
    pub window_size: usize,
    pub covis_threshold: f64,
    /// Keyframes at most this many indices apart are connected unconditionally.
    pub temporal_radius: usize,
}

impl Default for WindowParams {
    fn default() -> Self {
        Self {
            window_size: 8,
            covis_threshold: 0.5,
            temporal_radius: 3,
        }
    }
}

/// Directed pairs that a new keyframe's sliding window should add to the graph.
///
/// The new keyframe is connected both ways to the previous keyframes within the
/// temporal radius (capped by the window size); any other in-window pair of the
/// same camera whose covisibility reaches the threshold is connected as well.
/// Pairs already present are omitted, so rerunning on the updated graph yields nothing.
pub fn build_frontend_window(
    graph: &BAGraph,
    new_kf: usize,
    params: &WindowParams,
) -> Result<Vec<(usize, usize)>> {
    let camera = graph.keyframes[new_kf].camera;
    let window: Vec<usize> = (0..=new_kf)
        .rev()
        .filter(|&k| graph.keyframes[k].camera == camera)
        .take(params.window_size + 1)
        .collect();
    let mut pairs = Vec::new();
    let push = |a: usize, b: usize, pairs: &mut Vec<(usize, usize)>| {
        for (s, d) in [(a, b), (b, a)] {
            if !graph.has_edge(s, d) && !pairs.contains(&(s, d)) {
                pairs.push((s, d));
            }
        }
    };
    let radius = params.temporal_radius.min(params.window_size);
    for &old in window.iter().skip(1).take(radius) {
        push(old, new_kf, &mut pairs);
    }
    for (ai, &a) in window.iter().enumerate() {
        for &b in window.iter().skip(ai + 1) {
            let (lo, hi) = (a.min(b), a.max(b));
            if pairs.contains(&(lo, hi)) || graph.has_edge(lo, hi) {
                continue;
            }
            if pair_covisible(graph, lo, hi, params.covis_threshold)? {
                push(lo, hi, &mut pairs);
            }
        }
    }
    pairs.sort_unstable();
    Ok(pairs)
}

/// Pairs for a full-graph solve: all same-camera keyframes within the temporal
/// radius plus every covisible pair, in both directions.
pub fn build_backend_pairs(graph: &BAGraph, params: &WindowParams) -> Result<Vec<(usize, usize)>> {
    let mut pairs = Vec::new();
    for a in 0..graph.len() {
        for b in (a + 1)..graph.len() {
            let (ka, kb) = (&graph.keyframes[a], &graph.keyframes[b]);
            if ka.camera != kb.camera {
                continue;
            }
            let rank_gap = graph.keyframes[a + 1..=b]
                .iter()
                .filter(|k| k.camera == ka.camera)
                .count();
            let connect = rank_gap <= params.temporal_radius
                || pair_covisible(graph, a, b, params.covis_threshold)?;
            if connect {
                for (s, d) in [(a, b), (b, a)] {
                    if !graph.has_edge(s, d) {
                        pairs.push((s, d));
                    }
                }
            }
        }
    }
    Ok(pairs)
}

fn pair_covisible(graph: &BAGraph, a: usize, b: usize, threshold: f64) -> Result<bool> {
    let forward = match covisibility(graph, a, b) {
        Ok(c) => c,
        Err(Error::EmptyDepth(_)) => 0.0,
        Err(e) => return Err(e),
    };
    if forward >= threshold {
        return Ok(true);
    }
    let backward = match covisibility(graph, b, a) {
        Ok(c) => c,
        Err(Error::EmptyDepth(_)) => 0.0,
        Err(e) => return Err(e),
    };
    Ok(backward >= threshold)
}

/// Local problem that recovers one non-keyframe pose from its nearest keyframes.
#[derive(Debug, Clone)]
pub struct InfillGraph {
    pub graph: BAGraph,
    /// Keyframe ids (in the source graph) used as anchors.
    pub anchors: Vec<usize>,
    /// Index of the free pose-only vertex inside `graph`.
    pub free: usize,
}

/// Indices of the two keyframes of `camera` temporally nearest to `frame`:
/// the bracketing pair, or the last two when the frame lies past the end.
pub fn infill_anchors(graph: &BAGraph, frame: usize, camera: usize) -> Result<Vec<usize>> {
    let cams: Vec<usize> = (0..graph.len())
        .filter(|&k| graph.keyframes[k].camera == camera)
        .collect();
    if cams.is_empty() {
        return Err(Error::NoKeyframes);
    }
    let after = cams
        .iter()
        .position(|&k| graph.keyframes[k].frame_index > frame);
    let anchors = match after {
        Some(0) => cams.iter().take(2).copied().collect(),
        Some(p) => vec![cams[p - 1], cams[p]],
        None => cams.iter().rev().take(2).rev().copied().collect(),
    };
    Ok(anchors)
}

/// Builds the infill graph for a non-keyframe: copies of the anchor keyframes plus a
/// pose-only vertex, connected by unidirectional anchor-to-frame edges. `payload`
/// supplies the flow for each `(anchor keyframe, frame, camera)`; anchors without
/// data are skipped. Only the new vertex's pose is meant to be optimized.
pub fn build_infill_graph(
    graph: &BAGraph,
    frame: usize,
    initial_pose: Pose,
    mut payload: impl FnMut(&Keyframe, usize) -> Result<Option<EdgePayload>>,
) -> Result<InfillGraph> {
    if graph.is_empty() {
        return Err(Error::NoKeyframes);
    }
    let cameras: Vec<usize> = {
        let mut c: Vec<usize> = graph.keyframes.iter().map(|k| k.camera).collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    let mut local = BAGraph::with_rig(graph.intrinsics, graph.rig.clone());
    let mut anchors = Vec::new();
    let mut pending = Vec::new();
    for &cam in &cameras {
        for a in infill_anchors(graph, frame, cam)? {
            let kf = &graph.keyframes[a];
            if let Some(p) = payload(kf, cam)? {
                let id = local.push_keyframe(kf.clone());
                anchors.push(a);
                pending.push((id, cam, p));
            }
        }
    }
    let mut free = usize::MAX;
    for &cam in &cameras {
        let id = local.push_keyframe(Keyframe::pose_only(frame, cam, initial_pose));
        if free == usize::MAX {
            free = id;
        }
        for (src, _, p) in pending.iter().filter(|(_, c, _)| *c == cam) {
            local.add_edge(Edge {
                src: *src,
                dst: id,
                flow: p.flow.clone(),
                sparse: p.sparse.clone(),
                direction: EdgeDirection::Unidirectional,
                covisibility: f64::NAN,
            })?;
        }
    }
    Ok(InfillGraph {
        graph: local,
        anchors,
        free,
    })
}
