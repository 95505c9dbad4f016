use nalgebra::{SMatrix, SVector, Vector2};
use rayon::prelude::*;

use super::{linearize_pixel, reproject, Track};
use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::graph::{BAGraph, Edge};
use crate::grid::{is_valid_depth, FlowField, InvDepthMap};
use crate::solver::{DepthVar, Layout, NormalEquations, SolveScope, SolveState};
use crate::LOW_RES_FACTOR;

/// Independent on/off switches for each energy term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermSwitches {
    pub dense: bool,
    pub sparse: bool,
    pub depth_reg: bool,
    pub mask: bool,
}

impl Default for TermSwitches {
    fn default() -> Self {
        Self {
            dense: true,
            sparse: true,
            depth_reg: true,
            mask: true,
        }
    }
}

impl TermSwitches {
    pub fn all_off() -> Self {
        Self {
            dense: false,
            sparse: false,
            depth_reg: false,
            mask: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyConfig {
    pub switches: TermSwitches,
    /// Weight of the depth regularizer.
    pub alpha_reg: f64,
    /// Huber threshold in low-resolution pixels; `None` for plain least squares.
    pub huber: Option<f64>,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            switches: TermSwitches::default(),
            alpha_reg: 0.05,
            huber: None,
        }
    }
}

/// Energy broken down by term. `depth_reg` is unscaled; `total` includes `alpha_reg`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EnergyTerms {
    pub dense: f64,
    pub sparse: f64,
    pub depth_reg: f64,
    pub total: f64,
}

/// Robust cost and IRLS weight of a residual with norm `n`.
#[inline]
fn robust(n2: f64, huber: Option<f64>) -> (f64, f64) {
    match huber {
        Some(delta) if n2 > delta * delta => {
            let n = n2.sqrt();
            (2.0 * delta * n - delta * delta, delta / n)
        }
        _ => (n2, 1.0),
    }
}

/// Flow fields of an edge that are switched on, tagged with whether they are sparse.
fn edge_terms<'a>(edge: &'a Edge, switches: &TermSwitches) -> Vec<(&'a FlowField, bool)> {
    let mut out = Vec::with_capacity(2);
    if switches.dense {
        out.push((&edge.flow, false));
    }
    if switches.sparse {
        if let Some(s) = &edge.sparse {
            out.push((s, true));
        }
    }
    out
}

fn mask_weight(graph: &BAGraph, kf: usize, idx: usize, switches: &TermSwitches) -> f64 {
    let mask = &graph.keyframes[kf].static_mask;
    if switches.mask && !mask.is_empty() && !mask.as_slice()[idx] {
        0.0
    } else {
        1.0
    }
}

/// Residual of one track in its original form: the source depth is sampled
/// bilinearly at the track's low-resolution location instead of splatting.
pub fn track_residual(
    pose_i: &Pose,
    pose_j: &Pose,
    depth: &InvDepthMap,
    k: &Intrinsics,
    track: &Track,
) -> Option<Vector2<f64>> {
    let s = LOW_RES_FACTOR as f64;
    let u = track.p_i / s;
    let d = bilerp_depth(depth, &u)?;
    let pred = reproject(pose_i, &pose_j.inverse(), &u, d, k)?;
    Some(pred - track.p_j / s)
}

fn bilerp_depth(depth: &InvDepthMap, u: &Vector2<f64>) -> Option<f64> {
    let (w, h) = (depth.width(), depth.height());
    if u.x < 0.0 || u.y < 0.0 || u.x > (w - 1) as f64 || u.y > (h - 1) as f64 {
        return None;
    }
    let x0 = (u.x.floor() as usize).min(w.saturating_sub(2));
    let y0 = (u.y.floor() as usize).min(h.saturating_sub(2));
    let (fx, fy) = (u.x - x0 as f64, u.y - y0 as f64);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let mut acc = 0.0;
    for (x, y, b) in [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ] {
        if b == 0.0 {
            continue;
        }
        let d = *depth.get(x, y);
        if !is_valid_depth(d) {
            return None;
        }
        acc += b * d;
    }
    Some(acc)
}

/// Dense and sparse energy of one edge.
fn edge_energy(
    graph: &BAGraph,
    state: &SolveState,
    k: &Intrinsics,
    edge: &Edge,
    cfg: &EnergyConfig,
) -> (f64, f64) {
    let pose_i = state.view_pose(graph, edge.src);
    let pose_j_inv = state.view_pose(graph, edge.dst).inverse();
    let depth = &state.depths[edge.src];
    let mut out = (0.0, 0.0);
    for (flow, sparse) in edge_terms(edge, &cfg.switches) {
        let mut e = 0.0;
        for idx in 0..depth.len() {
            let w = flow.weight.as_slice()[idx] * mask_weight(graph, edge.src, idx, &cfg.switches);
            let d = depth.as_slice()[idx];
            if !(w > 0.0) || !is_valid_depth(d) {
                continue;
            }
            let (x, y) = depth.coords(idx);
            let u = Vector2::new(x as f64, y as f64);
            let Some(pred) = reproject(&pose_i, &pose_j_inv, &u, d, k) else {
                continue;
            };
            let r = pred - u - flow.flow.as_slice()[idx];
            e += w * robust(r.norm_squared(), cfg.huber).0;
        }
        if sparse {
            out.1 += e;
        } else {
            out.0 += e;
        }
    }
    out
}

fn depth_reg_energy(graph: &BAGraph, state: &SolveState, kf: usize) -> f64 {
    let key = &graph.keyframes[kf];
    let depth = &state.depths[kf];
    if depth.is_empty() || !depth.same_shape(&key.prior_inv_depth) {
        return 0.0;
    }
    depth
        .iter()
        .zip(key.prior_inv_depth.iter())
        .zip(key.prior_uncertainty.iter())
        .filter(|((d, p), m)| is_valid_depth(**d) && is_valid_depth(**p) && **m > 0.0)
        .map(|((d, p), m)| m * (d - p) * (d - p))
        .sum()
}

/// Energy of the active edges and of the depth prior on every keyframe with free depth.
pub fn evaluate_energy(
    graph: &BAGraph,
    state: &SolveState,
    layout: &Layout,
    cfg: &EnergyConfig,
) -> Result<EnergyTerms> {
    let k = state.intrinsics.downsample(LOW_RES_FACTOR as u32)?;
    let parts: Vec<(f64, f64)> = layout
        .active_edges
        .par_iter()
        .map(|&e| edge_energy(graph, state, &k, &graph.edges[e], cfg))
        .collect();
    let mut terms = EnergyTerms::default();
    for (d, s) in parts {
        terms.dense += d;
        terms.sparse += s;
    }
    if cfg.switches.depth_reg {
        terms.depth_reg = (0..graph.len())
            .filter(|&i| layout.depth_free[i])
            .map(|i| depth_reg_energy(graph, state, i))
            .sum();
    }
    terms.total = terms.dense + terms.sparse + cfg.alpha_reg * terms.depth_reg;
    Ok(terms)
}

/// Local camera unknowns of an edge: source pose, destination pose, `(log f, alpha)`.
const LOCAL: usize = 14;
type LocalJac = SMatrix<f64, 2, LOCAL>;

struct PixelContribution {
    pixel: u32,
    h: f64,
    g: f64,
    coupling: SVector<f64, LOCAL>,
}

struct EdgeLinearization {
    dense: f64,
    sparse: f64,
    h: SMatrix<f64, LOCAL, LOCAL>,
    g: SVector<f64, LOCAL>,
    pixels: Vec<PixelContribution>,
}

fn linearize_edge(
    graph: &BAGraph,
    state: &SolveState,
    k: &Intrinsics,
    edge: &Edge,
    cfg: &EnergyConfig,
    depth_free: bool,
) -> EdgeLinearization {
    let pose_i = state.view_pose(graph, edge.src);
    let pose_j = state.view_pose(graph, edge.dst);
    let depth = &state.depths[edge.src];
    let mut out = EdgeLinearization {
        dense: 0.0,
        sparse: 0.0,
        h: SMatrix::zeros(),
        g: SVector::zeros(),
        pixels: Vec::new(),
    };
    let terms = edge_terms(edge, &cfg.switches);
    if terms.is_empty() {
        return out;
    }
    for idx in 0..depth.len() {
        let d = depth.as_slice()[idx];
        let m = mask_weight(graph, edge.src, idx, &cfg.switches);
        if !is_valid_depth(d) || m == 0.0 {
            continue;
        }
        let (x, y) = depth.coords(idx);
        let u = Vector2::new(x as f64, y as f64);
        let mut px = PixelContribution {
            pixel: idx as u32,
            h: 0.0,
            g: 0.0,
            coupling: SVector::zeros(),
        };
        let mut touched = false;
        for (flow, sparse) in &terms {
            let w = flow.weight.as_slice()[idx] * m;
            if !(w > 0.0) {
                continue;
            }
            let target = u + flow.flow.as_slice()[idx];
            let Some(lin) = linearize_pixel(&pose_i, &pose_j, &u, d, k, &target) else {
                continue;
            };
            let (cost, rw) = robust(lin.value.norm_squared(), cfg.huber);
            if *sparse {
                out.sparse += w * cost;
            } else {
                out.dense += w * cost;
            }
            let w = w * rw;
            let mut j = LocalJac::zeros();
            j.fixed_view_mut::<2, 6>(0, 0).copy_from(&lin.jac_pose_src);
            j.fixed_view_mut::<2, 6>(0, 6)
                .copy_from(&(-lin.jac_pose_src));
            // Chain rule for the log-focal parameterization.
            j.fixed_view_mut::<2, 1>(0, 12)
                .copy_from(&(lin.jac_intrinsics.column(0) * k.f));
            j.fixed_view_mut::<2, 1>(0, 13)
                .copy_from(&lin.jac_intrinsics.column(1));
            let jt = j.transpose();
            out.h += jt * j * w;
            out.g += jt * lin.value * w;
            if depth_free {
                px.h += w * lin.jac_depth.norm_squared();
                px.g += w * lin.jac_depth.dot(&lin.value);
                px.coupling += jt * lin.jac_depth * w;
                touched = true;
            }
        }
        if touched {
            out.pixels.push(px);
        }
    }
    out
}

/// Global camera index for local index `l` of an edge, if that unknown is free.
fn global_index(layout: &Layout, edge: &Edge, l: usize) -> Option<usize> {
    match l {
        0..6 => layout.pose_offset[edge.src].map(|o| o + l),
        6..12 => layout.pose_offset[edge.dst].map(|o| o + l - 6),
        _ => {
            let i = l - 12;
            (i < layout.n_intrinsics).then(|| layout.intrinsics_offset.unwrap() + i)
        }
    }
}

/// Energy and Gauss-Newton normal equations of the scoped problem.
///
/// Edges are linearized in parallel and accumulated in a fixed order, so the
/// result does not depend on thread scheduling.
pub fn linearize(
    graph: &BAGraph,
    state: &SolveState,
    layout: &Layout,
    cfg: &EnergyConfig,
) -> Result<(EnergyTerms, NormalEquations)> {
    let k = state.intrinsics.downsample(LOW_RES_FACTOR as u32)?;
    let parts: Vec<EdgeLinearization> = layout
        .active_edges
        .par_iter()
        .map(|&e| {
            let edge = &graph.edges[e];
            linearize_edge(graph, state, &k, edge, cfg, layout.depth_free[edge.src])
        })
        .collect();

    let mut ne = NormalEquations::zeros(layout.n_cam());
    ne.depth.reserve(layout.n_depth);
    for (kf, start) in layout.depth_start.iter().enumerate() {
        if start.is_some() {
            ne.depth
                .extend((0..state.depths[kf].len()).map(|p| DepthVar {
                    keyframe: kf as u32,
                    pixel: p as u32,
                    h: 0.0,
                    g: 0.0,
                    coupling: Vec::new(),
                }));
        }
    }

    let mut terms = EnergyTerms::default();
    for (&e, part) in layout.active_edges.iter().zip(&parts) {
        let edge = &graph.edges[e];
        terms.dense += part.dense;
        terms.sparse += part.sparse;
        let map: Vec<Option<usize>> = (0..LOCAL).map(|l| global_index(layout, edge, l)).collect();
        for a in 0..LOCAL {
            let Some(ga) = map[a] else { continue };
            ne.g_c[ga] += part.g[a];
            for b in 0..LOCAL {
                if let Some(gb) = map[b] {
                    ne.h_cc[(ga, gb)] += part.h[(a, b)];
                }
            }
        }
        if let Some(start) = layout.depth_start[edge.src] {
            for px in &part.pixels {
                let var = &mut ne.depth[start + px.pixel as usize];
                var.h += px.h;
                var.g += px.g;
                for (l, gl) in map.iter().enumerate() {
                    if let Some(gl) = gl {
                        if px.coupling[l] != 0.0 {
                            var.coupling.push((*gl as u32, px.coupling[l]));
                        }
                    }
                }
            }
        }
    }

    if cfg.switches.depth_reg {
        for kf in 0..graph.len() {
            if !layout.depth_free[kf] {
                continue;
            }
            terms.depth_reg += depth_reg_energy(graph, state, kf);
            let key = &graph.keyframes[kf];
            let start = layout.depth_start[kf].expect("free depth has a start");
            if !key.prior_inv_depth.same_shape(&state.depths[kf]) {
                continue;
            }
            for (p, d) in state.depths[kf].iter().enumerate() {
                let prior = key.prior_inv_depth.as_slice()[p];
                let m = key.prior_uncertainty.as_slice()[p];
                if is_valid_depth(*d) && is_valid_depth(prior) && m > 0.0 {
                    let var = &mut ne.depth[start + p];
                    var.h += cfg.alpha_reg * m;
                    var.g += cfg.alpha_reg * m * (d - prior);
                }
            }
        }
    }
    for var in &mut ne.depth {
        merge_coupling(&mut var.coupling);
    }
    terms.total = terms.dense + terms.sparse + cfg.alpha_reg * terms.depth_reg;
    Ok((terms, ne))
}

fn merge_coupling(c: &mut Vec<(u32, f64)>) {
    if c.len() < 2 {
        return;
    }
    c.sort_by_key(|e| e.0);
    let mut out: Vec<(u32, f64)> = Vec::with_capacity(c.len());
    for &(i, v) in c.iter() {
        match out.last_mut() {
            Some(last) if last.0 == i => last.1 += v,
            _ => out.push((i, v)),
        }
    }
    *c = out;
}

/// Energy and normal equations of the whole graph with every keyframe but the
/// first free and intrinsics held fixed.
pub fn assemble_energy(
    graph: &BAGraph,
    cfg: &EnergyConfig,
) -> Result<(EnergyTerms, NormalEquations)> {
    if graph.len() < 2 || graph.edges.is_empty() {
        return Err(Error::EmptyGraph);
    }
    let scope = SolveScope::full(graph, false);
    let layout = Layout::new(graph, &scope);
    linearize(graph, &SolveState::from_graph(graph), &layout, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{EdgeDirection, Keyframe};
    use crate::grid::Grid;
    use crate::residuals::{dense_flow_residual, splat_tracks, TrackSet};
    use nalgebra::{DVector, Vector6};

    const W: usize = 12;
    const H: usize = 9;

    fn intrinsics() -> Intrinsics {
        Intrinsics::pinhole(80.0, (W * 8) as u32, (H * 8) as u32)
    }

    fn depth(seed: f64) -> InvDepthMap {
        Grid::from_fn(W, H, |x, y| {
            0.25 + 0.01 * x as f64 + 0.02 * (y as f64 + seed).sin()
        })
    }

    fn flow(seed: f64) -> FlowField {
        FlowField {
            flow: Grid::from_fn(W, H, |x, y| {
                Vector2::new(0.3 * (x as f64 * seed).cos() - 1.0, 0.2 * (y as f64).sin())
            }),
            weight: Grid::from_fn(W, H, |x, y| 0.2 + 0.8 * ((x * 3 + y) % 5) as f64 / 4.0),
        }
    }

    fn two_keyframes(mask: Option<Grid<bool>>, sparse: bool) -> BAGraph {
        let mut g = BAGraph::new(intrinsics());
        let m = Grid::from_fn(W, H, |x, _| 0.5 + 0.05 * x as f64);
        let mask0 = mask.unwrap_or_else(|| Grid::new(W, H, true));
        let mut k0 = Keyframe::new(0, 0, Pose::identity(), depth(0.0), m.clone(), mask0);
        k0.inv_depth = k0.inv_depth.map(|d| d * 1.1);
        let pose1 = Pose::exp(&Vector6::new(0.1, 0.02, 0.03, 0.01, -0.02, 0.005));
        let k1 = Keyframe::new(5, 0, pose1, depth(1.0), m, Grid::new(W, H, true));
        g.push_keyframe(k0);
        g.push_keyframe(k1);
        for (s, d) in [(0, 1), (1, 0)] {
            g.add_edge(Edge {
                src: s,
                dst: d,
                flow: flow(1.0 + s as f64),
                sparse: sparse.then(|| flow(3.0 + d as f64)),
                direction: EdgeDirection::Bidirectional,
                covisibility: 1.0,
            })
            .unwrap();
        }
        g
    }

    /// Direct per-pixel summation of every term.
    fn naive_energy(g: &BAGraph, cfg: &EnergyConfig) -> f64 {
        let k = g.low_res_intrinsics().unwrap();
        let mut e = 0.0;
        for edge in &g.edges {
            let pi = g.view_pose(edge.src);
            let pj = g.view_pose(edge.dst);
            let src = &g.keyframes[edge.src];
            let mut fields = Vec::new();
            if cfg.switches.dense {
                fields.push(&edge.flow);
            }
            if cfg.switches.sparse {
                fields.extend(edge.sparse.as_ref());
            }
            for f in fields {
                for y in 0..H {
                    for x in 0..W {
                        if cfg.switches.mask && !*src.static_mask.get(x, y) {
                            continue;
                        }
                        let d = *src.inv_depth.get(x, y);
                        let p = pi.transform_point(
                            &(Vector3::new(
                                (x as f64 - k.principal_point().x) / k.f,
                                (y as f64 - k.principal_point().y) / k.f,
                                1.0,
                            ) / d),
                        );
                        let c = pj.inverse().transform_point(&p);
                        let proj = Vector2::new(
                            k.f * c.x / c.z + k.principal_point().x,
                            k.f * c.y / c.z + k.principal_point().y,
                        );
                        if c.z <= 0.0 {
                            continue;
                        }
                        let r = proj - Vector2::new(x as f64, y as f64) - f.flow.get(x, y);
                        e += f.weight.get(x, y) * r.norm_squared();
                    }
                }
            }
        }
        if cfg.switches.depth_reg {
            for kf in &g.keyframes {
                for i in 0..kf.inv_depth.len() {
                    let r = kf.inv_depth.as_slice()[i] - kf.prior_inv_depth.as_slice()[i];
                    e += cfg.alpha_reg * kf.prior_uncertainty.as_slice()[i] * r * r;
                }
            }
        }
        e
    }

    use nalgebra::Vector3;

    #[test]
    fn all_switches_off_is_zero() {
        let g = two_keyframes(None, true);
        let cfg = EnergyConfig {
            switches: TermSwitches::all_off(),
            ..Default::default()
        };
        let (terms, ne) = assemble_energy(&g, &cfg).unwrap();
        assert_eq!(terms.total, 0.0);
        assert!(ne.g_c.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_term_matches_residual_block() {
        let g = two_keyframes(None, false);
        let cfg = EnergyConfig {
            switches: TermSwitches {
                dense: true,
                ..TermSwitches::all_off()
            },
            ..Default::default()
        };
        let (terms, _) = assemble_energy(&g, &cfg).unwrap();
        let k = g.low_res_intrinsics().unwrap();
        let expect: f64 = g
            .edges
            .iter()
            .map(|e| {
                dense_flow_residual(
                    &g.view_pose(e.src),
                    &g.view_pose(e.dst),
                    &g.keyframes[e.src].inv_depth,
                    &k,
                    &e.flow,
                )
                .weighted_sum_of_squares()
            })
            .sum();
        assert!((terms.total - expect).abs() < 1e-9 * expect);
    }

    #[test]
    fn matches_naive_evaluator() {
        let mask = Grid::from_fn(W, H, |x, y| (x + y) % 4 != 0);
        let g = two_keyframes(Some(mask), true);
        for switches in [
            TermSwitches::default(),
            TermSwitches {
                mask: false,
                ..Default::default()
            },
            TermSwitches {
                dense: false,
                ..Default::default()
            },
        ] {
            let cfg = EnergyConfig {
                switches,
                ..Default::default()
            };
            let (terms, _) = assemble_energy(&g, &cfg).unwrap();
            let naive = naive_energy(&g, &cfg);
            assert!((terms.total - naive).abs() < 1e-9 * naive, "{switches:?}");
            let layout = Layout::new(&g, &SolveScope::full(&g, false));
            let e = evaluate_energy(&g, &SolveState::from_graph(&g), &layout, &cfg).unwrap();
            assert!((e.total - naive).abs() < 1e-9 * naive);
        }
    }

    #[test]
    fn empty_graph_is_rejected() {
        let mut g = BAGraph::new(intrinsics());
        assert!(matches!(
            assemble_energy(&g, &EnergyConfig::default()),
            Err(Error::EmptyGraph)
        ));
        g.push_keyframe(Keyframe::new(
            0,
            0,
            Pose::identity(),
            depth(0.0),
            Grid::new(W, H, 1.0),
            Grid::new(W, H, true),
        ));
        assert!(matches!(
            assemble_energy(&g, &EnergyConfig::default()),
            Err(Error::EmptyGraph)
        ));
    }

    #[test]
    fn masking_equals_deleting_pixels() {
        let mask = Grid::from_fn(W, H, |x, _| x >= W / 2);
        let masked = two_keyframes(Some(mask.clone()), true);
        let mut deleted = two_keyframes(None, true);
        for e in &mut deleted.edges {
            if e.src == 0 {
                for f in std::iter::once(&mut e.flow).chain(e.sparse.as_mut()) {
                    for (w, m) in f.weight.as_mut_slice().iter_mut().zip(mask.iter()) {
                        if !m {
                            *w = 0.0;
                        }
                    }
                }
            }
        }
        let cfg = EnergyConfig::default();
        let (a, na) = assemble_energy(&masked, &cfg).unwrap();
        let (b, nb) = assemble_energy(&deleted, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(na, nb);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = two_keyframes(None, true);
        let mut scope = SolveScope::full(&g, true);
        scope.pose_free = vec![true, true];
        let layout = Layout::new(&g, &scope);
        let cfg = EnergyConfig::default();
        let state = SolveState::from_graph(&g);
        let (_, ne) = linearize(&g, &state, &layout, &cfg).unwrap();
        let energy = |dx: &DVector<f64>, dy: &[f64]| {
            evaluate_energy(&g, &state.apply(&layout, dx, dy), &layout, &cfg)
                .unwrap()
                .total
        };
        let n = layout.n_cam();
        let zeros = vec![0.0; layout.n_depth];
        let h = 1e-6;
        // The energy is a sum of squares, so its gradient is twice `g`.
        for i in 0..n {
            let mut e = DVector::zeros(n);
            e[i] = h;
            let num = (energy(&e, &zeros) - energy(&-&e, &zeros)) / (2.0 * h);
            assert!(
                (num - 2.0 * ne.g_c[i]).abs() < 1e-4 * (1.0 + num.abs()),
                "cam {i}: {num} vs {}",
                2.0 * ne.g_c[i]
            );
        }
        for p in [0, 17, 50, W * H + 3] {
            let mut dy = zeros.clone();
            dy[p] = h;
            let plus = energy(&DVector::zeros(n), &dy);
            dy[p] = -h;
            let minus = energy(&DVector::zeros(n), &dy);
            let num = (plus - minus) / (2.0 * h);
            assert!((num - 2.0 * ne.depth[p].g).abs() < 1e-4 * (1.0 + num.abs()));
        }
    }

    #[test]
    fn splatted_tracks_match_bilinear_form_at_pixel_centres() {
        let g = two_keyframes(None, false);
        let k = g.low_res_intrinsics().unwrap();
        let pi = g.view_pose(0);
        let pj = g.view_pose(1);
        let depth = &g.keyframes[0].inv_depth;
        let tracks: Vec<Track> = (0..20)
            .map(|n| {
                let (x, y) = (n % W, (n * 7) % H);
                let p_i = Vector2::new(8.0 * x as f64, 8.0 * y as f64);
                Track {
                    frame_i: 0,
                    p_i,
                    frame_j: 5,
                    p_j: p_i + Vector2::new(-3.0 + 0.1 * n as f64, 1.5),
                    confidence: 1.0,
                }
            })
            .collect();
        let set = TrackSet::new(tracks.clone());
        let field = splat_tracks(&set.tracks, None, W, H);
        let block = dense_flow_residual(&pi, &pj, depth, &k, &field);
        for t in &tracks {
            let direct = track_residual(&pi, &pj, depth, &k, t).unwrap();
            let idx = (t.p_i.y / 8.0) as usize * W + (t.p_i.x / 8.0) as usize;
            assert!(block.weights[idx] > 0.0);
            assert!((block.values[idx] - direct).norm() < 1e-12);
        }
    }
}
