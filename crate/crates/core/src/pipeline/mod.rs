//! Video-level driver: keyframe selection, frontend and backend solves, pose
//! infill for the remaining frames, and the depth alignment pass.

mod export;
pub mod providers;

use std::sync::Arc;

use log::{debug, info, warn};
use rayon::prelude::*;

pub use export::{export_dataset, ExportOptions};
pub use providers::{
    DepthPriorProvider, FileDataset, FlowProvider, MaskProvider, Providers, SimProvider,
    TrackProvider, VideoDepthProvider,
};

use crate::depth_align::{
    align_sequence, consistent_points, AlignConfig, FrameAlignInput, FrameAlignment,
};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::graph::{
    build_backend_pairs, build_frontend_window, build_infill_graph, covisibility, BAGraph, Edge,
    EdgeDirection, EdgePayload, Keyframe, ViewId, WindowParams,
};
use crate::grid::Grid;
use crate::metrics::{EngineOutput, PoseEngine};
use crate::residuals::{splat_tracks, TermSwitches, TrackSet};
use crate::sim::SimDataset;
use crate::solver::{gauss_newton, solve_scoped, SolveScope, SolverConfig};
use crate::tracker::motion_magnitude;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Mean low-resolution motion (pixels) that promotes a frame to keyframe.
    pub keyframe_threshold: f64,
    pub window: WindowParams,
    /// Covisibility needed for an edge between different rig cameras.
    pub rig_covisibility: f64,
    pub frontend: SolverConfig,
    pub backend: SolverConfig,
    /// Keyframe counts that trigger a full-graph solve (one also runs at the end).
    pub backend_schedule: Vec<usize>,
    /// Backend solve and prior refresh rounds per trigger.
    pub refresh_rounds: usize,
    pub use_tracks: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            keyframe_threshold: 2.4,
            window: WindowParams::default(),
            rig_covisibility: 0.3,
            frontend: SolverConfig::frontend(),
            backend: SolverConfig::backend(),
            backend_schedule: vec![8, 16, 64],
            refresh_rounds: 3,
            use_tracks: true,
        }
    }
}

impl PipelineConfig {
    pub fn set_switches(&mut self, s: TermSwitches) {
        self.frontend.energy.switches = s;
        self.backend.energy.switches = s;
    }

    pub fn validate(&self) -> Result<()> {
        self.frontend.validate()?;
        self.backend.validate()?;
        if !(self.keyframe_threshold >= 0.0) {
            return Err(Error::Config(
                "keyframe threshold must be non-negative".into(),
            ));
        }
        if self.window.window_size == 0 {
            return Err(Error::Config("window size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.window.covis_threshold)
            || !(0.0..=1.0).contains(&self.rig_covisibility)
        {
            return Err(Error::Config(
                "covisibility thresholds must lie in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// How the starting intrinsics are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraInit {
    pub intrinsics: Option<Intrinsics>,
    pub resolution: Option<(u32, u32)>,
    pub fov_deg: f64,
}

impl Default for CameraInit {
    fn default() -> Self {
        Self {
            intrinsics: None,
            resolution: None,
            fov_deg: 60.0,
        }
    }
}

/// Configured intrinsics if present, otherwise a pinhole with the default field of view.
pub fn init_intrinsics(init: &CameraInit) -> Result<Intrinsics> {
    if let Some(k) = init.intrinsics {
        k.validate()?;
        return Ok(k);
    }
    let (w, h) = init.resolution.ok_or(Error::MissingResolution)?;
    let k = Intrinsics::from_fov(init.fov_deg, w, h);
    k.validate()?;
    Ok(k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameOutcome {
    /// Index of the new keyframe timestamp.
    Keyframe(usize),
    Skipped,
}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    /// World-from-rig pose per processed frame, in processing order.
    pub poses: Vec<Pose>,
    /// Frames whose infill failed and carry an interpolated pose.
    pub fallback: Vec<bool>,
    /// Processing positions of keyframe timestamps.
    pub keyframes: Vec<usize>,
    pub intrinsics: Intrinsics,
    /// Keyframe counts at which the backend ran.
    pub backend_runs: Vec<usize>,
    pub final_energy: f64,
    pub graph: BAGraph,
}

pub struct VideoSession {
    pub config: PipelineConfig,
    pub providers: Providers,
    pub graph: BAGraph,
    /// Source frame ids in processing order.
    frames: Vec<usize>,
    keyframes: Vec<usize>,
    processed: usize,
    backend_runs: Vec<usize>,
    last_energy: f64,
}

impl VideoSession {
    pub fn new(
        config: PipelineConfig,
        providers: Providers,
        intrinsics: Intrinsics,
        rig: Vec<Pose>,
        frames: Vec<usize>,
    ) -> Result<Self> {
        config.validate()?;
        intrinsics.validate()?;
        intrinsics.downsample(crate::LOW_RES_FACTOR as u32)?;
        if rig.is_empty() {
            return Err(Error::Config("rig needs at least one camera".into()));
        }
        Ok(Self {
            config,
            providers,
            graph: BAGraph::with_rig(intrinsics, rig),
            frames,
            keyframes: Vec::new(),
            processed: 0,
            backend_runs: Vec::new(),
            last_energy: f64::NAN,
        })
    }

    pub fn n_cameras(&self) -> usize {
        self.graph.rig.len()
    }

    pub fn keyframe_positions(&self) -> &[usize] {
        &self.keyframes
    }

    pub fn backend_runs(&self) -> &[usize] {
        &self.backend_runs
    }

    fn view(&self, pos: usize, camera: usize) -> ViewId {
        ViewId {
            frame: self.frames[pos],
            camera,
        }
    }

    fn kf_ids_at(&self, pos: usize) -> Vec<usize> {
        (0..self.graph.len())
            .filter(|&k| self.graph.keyframes[k].frame_index == pos)
            .collect()
    }

    fn timestamp_pose(&self, pos: usize) -> Pose {
        let id = self.kf_ids_at(pos)[0];
        self.graph.keyframes[id].pose
    }

    fn make_keyframe(&self, pos: usize, camera: usize, pose: Pose) -> Result<Keyframe> {
        let v = self.view(pos, camera);
        let (prior, m) = self.providers.prior.prior(v, &self.graph.intrinsics)?;
        let mask = self
            .providers
            .mask
            .mask(v)?
            .unwrap_or_else(|| Grid::new(prior.width(), prior.height(), true));
        let k = self.graph.low_res_intrinsics()?;
        let (w, h) = (k.width as usize, k.height as usize);
        if prior.width() != w
            || prior.height() != h
            || !mask.same_shape(&prior)
            || !m.same_shape(&prior)
        {
            return Err(Error::ProviderFailure {
                frame: v.frame,
                message: format!("prior or mask is not {w}x{h}"),
            });
        }
        Ok(Keyframe::new(pos, camera, pose, prior, m, mask))
    }

    /// Motion of `pos` relative to the last keyframe, or `None` when nothing measures it.
    fn motion_since_last(&self, pos: usize) -> Result<Option<f64>> {
        let last = *self.keyframes.last().expect("bootstrap keyframe exists");
        let (a, b) = (self.view(last, 0), self.view(pos, 0));
        let flow = self.providers.flow.flow(a, b)?;
        let tracks = match (&self.providers.tracks, self.config.use_tracks) {
            (Some(t), true) => TrackSet::new(t.tracks(a, b)?),
            _ => TrackSet::default(),
        };
        match motion_magnitude(flow.as_ref(), &tracks) {
            Ok(m) => Ok(Some(m)),
            Err(Error::NoMotionData) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Flow and splatted tracks from view `src` to view `dst`.
    fn payload(&self, src: ViewId, dst: ViewId) -> Result<Option<EdgePayload>> {
        let Some(flow) = self.providers.flow.flow(src, dst)? else {
            return Ok(None);
        };
        let sparse = match (&self.providers.tracks, self.config.use_tracks) {
            (Some(t), true) => {
                let tracks = t.tracks(src, dst)?;
                (!tracks.is_empty())
                    .then(|| splat_tracks(&tracks, None, flow.width(), flow.height()))
            }
            _ => None,
        };
        Ok(Some(EdgePayload { flow, sparse }))
    }

    fn connect(&mut self, pairs: &[(usize, usize)], direction: EdgeDirection) -> Result<usize> {
        let mut added = 0;
        for &(s, d) in pairs {
            if self.graph.has_edge(s, d) {
                continue;
            }
            let (src, dst) = (&self.graph.keyframes[s], &self.graph.keyframes[d]);
            let (sv, dv) = (
                self.view(src.frame_index, src.camera),
                self.view(dst.frame_index, dst.camera),
            );
            let Some(p) = self.payload(sv, dv)? else {
                debug!("no flow for {sv:?} -> {dv:?}");
                continue;
            };
            let covis = covisibility(&self.graph, s, d).unwrap_or(0.0);
            if self.graph.add_edge(Edge {
                src: s,
                dst: d,
                flow: p.flow,
                sparse: p.sparse,
                direction,
                covisibility: covis,
            })? {
                added += 1;
            }
        }
        Ok(added)
    }

    /// Cross-camera edges among the views of the two newest keyframe timestamps.
    fn rig_pairs(&self) -> Result<Vec<(usize, usize)>> {
        if self.n_cameras() < 2 {
            return Ok(Vec::new());
        }
        let mut ids = Vec::new();
        for &pos in self.keyframes.iter().rev().take(2) {
            ids.extend(self.kf_ids_at(pos));
        }
        let newest = *self.keyframes.last().unwrap();
        let mut pairs = Vec::new();
        for &a in &ids {
            for &b in &ids {
                let (ka, kb) = (&self.graph.keyframes[a], &self.graph.keyframes[b]);
                if ka.camera == kb.camera || (ka.frame_index != newest && kb.frame_index != newest)
                {
                    continue;
                }
                if !self.graph.has_edge(a, b)
                    && covisibility(&self.graph, a, b).unwrap_or(0.0)
                        >= self.config.rig_covisibility
                {
                    pairs.push((a, b));
                }
            }
        }
        Ok(pairs)
    }

    /// Constant-velocity guess for a new keyframe timestamp.
    fn extrapolate(&self, pos: usize) -> Pose {
        match self.keyframes.len() {
            0 => Pose::identity(),
            1 => self.timestamp_pose(self.keyframes[0]),
            n => {
                let (p0, p1) = (self.keyframes[n - 2], self.keyframes[n - 1]);
                let (a, b) = (self.timestamp_pose(p0), self.timestamp_pose(p1));
                let ratio = (pos - p1) as f64 / (p1 - p0) as f64;
                a.interpolate(&b, 1.0 + ratio)
            }
        }
    }

    fn add_keyframe(&mut self, pos: usize) -> Result<usize> {
        let pose = self.extrapolate(pos);
        let mut new_ids = Vec::new();
        for cam in 0..self.n_cameras() {
            let kf = self.make_keyframe(pos, cam, pose)?;
            new_ids.push(self.graph.push_keyframe(kf));
        }
        self.keyframes.push(pos);
        for &id in &new_ids {
            let pairs = build_frontend_window(&self.graph, id, &self.config.window)?;
            self.connect(&pairs, EdgeDirection::Bidirectional)?;
        }
        let cross = self.rig_pairs()?;
        self.connect(&cross, EdgeDirection::Unidirectional)?;
        Ok(self.keyframes.len() - 1)
    }

    fn frontend_solve(&mut self) -> Result<()> {
        let start = self
            .keyframes
            .len()
            .saturating_sub(self.config.window.window_size + 1);
        let window = &self.keyframes[start..];
        let first = self.keyframes[0];
        let in_window = |k: &Keyframe| window.contains(&k.frame_index);
        let active: Vec<usize> = (0..self.graph.edges.len())
            .filter(|&e| {
                let ed = &self.graph.edges[e];
                in_window(&self.graph.keyframes[ed.src]) && in_window(&self.graph.keyframes[ed.dst])
            })
            .collect();
        if active.is_empty() {
            return Ok(());
        }
        let touched: Vec<bool> = (0..self.graph.len())
            .map(|k| {
                active
                    .iter()
                    .any(|&e| self.graph.edges[e].src == k || self.graph.edges[e].dst == k)
            })
            .collect();
        let scope = SolveScope {
            pose_free: self
                .graph
                .keyframes
                .iter()
                .enumerate()
                .map(|(i, k)| in_window(k) && k.frame_index != first && touched[i])
                .collect(),
            depth_free: self
                .graph
                .keyframes
                .iter()
                .enumerate()
                .map(|(i, k)| in_window(k) && k.has_depth() && touched[i])
                .collect(),
            active_edges: active,
            optimize_intrinsics: false,
        };
        let cfg = SolverConfig {
            optimize_intrinsics: false,
            ..self.config.frontend
        };
        match solve_scoped(&mut self.graph, &scope, &cfg) {
            Ok(r) => {
                self.last_energy = r.final_energy.total;
                Ok(())
            }
            Err(e @ (Error::DivergedEnergy(_) | Error::NotPositiveDefinite { .. })) => {
                warn!(
                    "frontend solve failed at keyframe {}: {e}",
                    self.keyframes.len() - 1
                );
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    /// Handles the next frame in processing order.
    pub fn process_frame(&mut self) -> Result<FrameOutcome> {
        let pos = self.processed;
        if pos >= self.frames.len() {
            return Err(Error::InvalidInput("all frames already processed".into()));
        }
        self.processed += 1;
        if self.keyframes.is_empty() {
            return self.add_keyframe(pos).map(FrameOutcome::Keyframe);
        }
        let motion = self.motion_since_last(pos)?;
        match motion {
            Some(m) if m < self.config.keyframe_threshold => return Ok(FrameOutcome::Skipped),
            Some(m) => debug!("frame {pos}: motion {m:.3}"),
            None => debug!("frame {pos}: no motion data, forcing a keyframe"),
        }
        let idx = self.add_keyframe(pos)?;
        self.frontend_solve()?;
        self.maybe_backend(false)?;
        Ok(FrameOutcome::Keyframe(idx))
    }

    /// Runs the backend when the keyframe count hits the schedule, or at the end.
    /// Returns whether a solve ran.
    pub fn maybe_backend(&mut self, end_of_video: bool) -> Result<bool> {
        let count = self.keyframes.len();
        let scheduled = self.config.backend_schedule.contains(&count);
        if count < 2 || self.backend_runs.last() == Some(&count) || !(scheduled || end_of_video) {
            return Ok(false);
        }
        let pairs = build_backend_pairs(&self.graph, &self.config.window)?;
        self.connect(&pairs, EdgeDirection::Bidirectional)?;
        if self.graph.edges.is_empty() {
            return Ok(false);
        }
        let cfg = self.config.backend;
        for round in 0..self.config.refresh_rounds.max(1) {
            let f_old = self.graph.intrinsics.f;
            let report = gauss_newton(&mut self.graph, &cfg)?;
            self.last_energy = report.final_energy.total;
            let f_new = self.graph.intrinsics.f;
            info!(
                "backend at {count} keyframes, round {round}: energy {:.6e}, f {f_old:.4} -> {f_new:.4}",
                report.final_energy.total
            );
            if f_new == f_old {
                break;
            }
            refresh_priors(&mut self.graph, f_old, f_new);
            if ((f_new / f_old) - 1.0).abs() < 1e-9 {
                break;
            }
        }
        self.backend_runs.push(count);
        Ok(true)
    }

    fn interpolated_pose(&self, pos: usize) -> Pose {
        let kfs = &self.keyframes;
        match kfs.iter().position(|&k| k > pos) {
            Some(0) => self.timestamp_pose(kfs[0]),
            Some(i) => {
                let (a, b) = (kfs[i - 1], kfs[i]);
                let s = (pos - a) as f64 / (b - a) as f64;
                self.timestamp_pose(a)
                    .interpolate(&self.timestamp_pose(b), s)
            }
            None => self.extrapolate(pos),
        }
    }

    fn infill_one(&self, pos: usize) -> Result<Pose> {
        let init = self.interpolated_pose(pos);
        let local = build_infill_graph(&self.graph, pos, init, |kf, cam| {
            self.payload(self.view(kf.frame_index, kf.camera), self.view(pos, cam))
        })?;
        let mut g = local.graph;
        if g.edges.is_empty() {
            return Err(Error::ProviderFailure {
                frame: self.frames[pos],
                message: "no flow to any anchor keyframe".into(),
            });
        }
        let scope = SolveScope {
            pose_free: g
                .keyframes
                .iter()
                .map(|k| k.frame_index == pos && !k.has_depth())
                .collect(),
            depth_free: vec![false; g.len()],
            active_edges: (0..g.edges.len()).collect(),
            optimize_intrinsics: false,
        };
        let cfg = SolverConfig {
            optimize_intrinsics: false,
            ..self.config.frontend
        };
        solve_scoped(&mut g, &scope, &cfg)?;
        Ok(g.keyframes[local.free].pose)
    }

    /// Poses for every processed frame; non-keyframes are solved in parallel.
    pub fn infill_all(&self) -> (Vec<Pose>, Vec<bool>) {
        (0..self.processed)
            .into_par_iter()
            .map(|pos| {
                if self.keyframes.binary_search(&pos).is_ok() {
                    return (self.timestamp_pose(pos), false);
                }
                match self.infill_one(pos) {
                    Ok(p) => (p, false),
                    Err(e) => {
                        warn!(
                            "infill of frame {} failed ({e}); using interpolation",
                            self.frames[pos]
                        );
                        (self.interpolated_pose(pos), true)
                    }
                }
            })
            .unzip()
    }

    /// Processes all remaining frames, runs the final backend and the infill.
    pub fn run(mut self) -> Result<PipelineOutput> {
        if self.frames.is_empty() {
            return Err(Error::InvalidInput("no frames to process".into()));
        }
        while self.processed < self.frames.len() {
            self.process_frame()?;
        }
        self.maybe_backend(true)?;
        let (poses, fallback) = self.infill_all();
        Ok(PipelineOutput {
            poses,
            fallback,
            keyframes: self.keyframes,
            intrinsics: self.graph.intrinsics,
            backend_runs: self.backend_runs,
            final_energy: self.last_energy,
            graph: self.graph,
        })
    }
}

/// Rescales depth priors after a focal change: metric priors predicted for focal
/// `f` carry inverse depth proportional to `1 / f`.
pub fn refresh_priors(graph: &mut BAGraph, f_old: f64, f_new: f64) {
    let s = f_old / f_new;
    for kf in &mut graph.keyframes {
        for d in kf.prior_inv_depth.as_mut_slice() {
            *d *= s;
        }
    }
}

/// Runs the whole pipeline over `frames` (source ids, in processing order).
pub fn run_video(
    config: &PipelineConfig,
    providers: Providers,
    intrinsics: Intrinsics,
    rig: Vec<Pose>,
    frames: Vec<usize>,
) -> Result<PipelineOutput> {
    VideoSession::new(config.clone(), providers, intrinsics, rig, frames)?.run()
}

/// Metric full-resolution depth for every frame of camera 0 that has video depth.
/// Frames without video depth get `None`.
pub fn align_depths(
    out: &PipelineOutput,
    providers: &Providers,
    frames: &[usize],
    cfg: &AlignConfig,
) -> Result<Vec<Option<FrameAlignment>>> {
    let Some(vd) = &providers.video_depth else {
        return Ok(vec![None; frames.len()]);
    };
    let points = consistent_points(&out.graph, cfg)?;
    let k = out.intrinsics;
    let extrinsic = out.graph.rig[0];
    let mut inputs = Vec::new();
    let mut slots = Vec::new();
    for (pos, &f) in frames.iter().enumerate() {
        let v = ViewId::mono(f);
        let Some(video_depth) = vd.video_depth(v)? else {
            continue;
        };
        inputs.push(FrameAlignInput {
            pose: out.poses[pos].compose(&extrinsic),
            video_depth,
            mask: providers.mask.mask_hd(v)?,
            prior: providers.prior.prior_hd(v, &k)?,
        });
        slots.push(pos);
    }
    let aligned = align_sequence(&points, &k, &inputs, cfg)?;
    let mut result = vec![None; frames.len()];
    for (pos, a) in slots.into_iter().zip(aligned) {
        result[pos] = Some(a);
    }
    Ok(result)
}

/// Pose engine over a simulated dataset, for the shuttle protocol.
pub struct SimEngine {
    pub dataset: Arc<SimDataset>,
    pub config: PipelineConfig,
    pub init: Intrinsics,
}

impl PoseEngine for SimEngine {
    fn estimate(&self, frames: &[usize]) -> Result<EngineOutput> {
        let out = run_video(
            &self.config,
            Providers::from_sim(self.dataset.clone()),
            self.init,
            self.dataset.rig.clone(),
            frames.to_vec(),
        )?;
        Ok(EngineOutput {
            poses: out.poses,
            intrinsics: out.intrinsics,
        })
    }
}

#[cfg(test)]
mod tests;
