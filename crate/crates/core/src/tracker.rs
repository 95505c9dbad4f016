//! Shi-Tomasi corners and pyramidal Lucas-Kanade tracking on grayscale frames.

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{sample_clamped, FlowField, Grid, Image};
use crate::residuals::{Track, TrackSet};

/// Side of the structure-tensor window.
const TENSOR_WINDOW: usize = 7;
const GRADIENT_SIGMA: f64 = 1.0;
/// Gaussian weighting inside the tensor window.
const WINDOW_SIGMA: f64 = 1.0;
/// Coarsest pyramid level keeps at least this many pixels along its short side.
const MIN_LEVEL_SIZE: usize = 32;
/// Normalized minimum eigenvalue below which an LK window is untrackable.
const MIN_EIGEN: f64 = 1e-5;
const FB_THRESHOLD: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Corner {
    pub position: Vector2<f64>,
    /// Minimum eigenvalue of the structure tensor.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePyramid {
    pub levels: Vec<Image>,
}

impl ImagePyramid {
    /// Halves the image `floor(log2(min(H, W) / 32))` times.
    pub fn new(image: &Image) -> Self {
        let short = image.width().min(image.height());
        let extra = if short >= 2 * MIN_LEVEL_SIZE {
            (short / MIN_LEVEL_SIZE).ilog2() as usize
        } else {
            0
        };
        Self::with_levels(image, extra + 1)
    }

    pub fn with_levels(image: &Image, count: usize) -> Self {
        let mut levels = vec![image.clone()];
        while levels.len() < count.max(1) {
            let prev = levels.last().unwrap();
            if prev.width() < 2 || prev.height() < 2 {
                break;
            }
            levels.push(half(prev));
        }
        Self { levels }
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Binomial blur followed by 2x decimation.
fn half(img: &Image) -> Image {
    let blurred = separable(
        img,
        &[1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0],
    );
    let (w, h) = (img.width() / 2, img.height() / 2);
    Grid::from_fn(w, h, |x, y| *blurred.get(2 * x, 2 * y))
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable convolution with clamped borders.
fn separable(img: &Image, kernel: &[f64]) -> Image {
    let r = (kernel.len() / 2) as i64;
    let (w, h) = (img.width() as i64, img.height() as i64);
    let horiz = Grid::from_fn(img.width(), img.height(), |x, y| {
        let mut acc = 0.0;
        for (k, c) in kernel.iter().enumerate() {
            let xx = (x as i64 + k as i64 - r).clamp(0, w - 1) as usize;
            acc += c * *img.get(xx, y) as f64;
        }
        acc as f32
    });
    Grid::from_fn(img.width(), img.height(), |x, y| {
        let mut acc = 0.0;
        for (k, c) in kernel.iter().enumerate() {
            let yy = (y as i64 + k as i64 - r).clamp(0, h - 1) as usize;
            acc += c * *horiz.get(x, yy) as f64;
        }
        acc as f32
    })
}

/// Minimum-eigenvalue response of the structure tensor at every pixel (0 near borders).
pub fn corner_response(image: &Image) -> Grid<f64> {
    let (w, h) = (image.width(), image.height());
    let smooth = separable(image, &gaussian_kernel(GRADIENT_SIGMA));
    let grad = |x: usize, y: usize| -> (f64, f64) {
        let gx =
            (*smooth.get((x + 1).min(w - 1), y) - *smooth.get(x.saturating_sub(1), y)) as f64 * 0.5;
        let gy =
            (*smooth.get(x, (y + 1).min(h - 1)) - *smooth.get(x, y.saturating_sub(1))) as f64 * 0.5;
        (gx, gy)
    };
    let products: Vec<[f64; 3]> = (0..w * h)
        .map(|i| {
            let (gx, gy) = grad(i % w, i / w);
            [gx * gx, gx * gy, gy * gy]
        })
        .collect();
    let r = TENSOR_WINDOW / 2;
    let margin = r + 1;
    let weights = gaussian_kernel(WINDOW_SIGMA);
    let off = weights.len() / 2 - r;
    Grid::from_fn(w, h, |x, y| {
        if x < margin || y < margin || x + margin >= w || y + margin >= h {
            return 0.0;
        }
        let mut s = [0.0; 3];
        for (ky, yy) in (y - r..=y + r).enumerate() {
            for (kx, xx) in (x - r..=x + r).enumerate() {
                let p = products[yy * w + xx];
                let wt = weights[off + ky] * weights[off + kx];
                s[0] += wt * p[0];
                s[1] += wt * p[1];
                s[2] += wt * p[2];
            }
        }
        let tr = 0.5 * (s[0] + s[2]);
        let det = s[0] * s[2] - s[1] * s[1];
        (tr - (tr * tr - det).max(0.0).sqrt()).max(0.0)
    })
}

/// Shi-Tomasi detection: 3x3 local maxima above `quality * best`, strongest first,
/// greedily thinned to `min_dist`, refined to sub-pixel by parabola fits.
pub fn detect_corners(
    image: &Image,
    max_corners: usize,
    quality: f64,
    min_dist: f64,
) -> Vec<Corner> {
    detect_corners_avoiding(image, max_corners, quality, min_dist, &[])
}

/// As [`detect_corners`], additionally keeping `min_dist` away from `existing` points.
pub fn detect_corners_avoiding(
    image: &Image,
    max_corners: usize,
    quality: f64,
    min_dist: f64,
    existing: &[Vector2<f64>],
) -> Vec<Corner> {
    if image.is_empty() || max_corners == 0 {
        return Vec::new();
    }
    let resp = corner_response(image);
    let best = resp.iter().copied().fold(0.0, f64::max);
    if !(best > 1e-12) {
        return Vec::new();
    }
    let threshold = quality * best;
    let (w, h) = (resp.width(), resp.height());
    let mut candidates = Vec::new();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let v = *resp.get(x, y);
            if v < threshold || v <= 0.0 {
                continue;
            }
            let mut is_max = true;
            'n: for dy in 0..3 {
                for dx in 0..3 {
                    let n = *resp.get(x + dx - 1, y + dy - 1);
                    // Ties resolve towards the lower index so plateaus yield one point.
                    let earlier = (dy, dx) < (1, 1);
                    if n > v || (earlier && n == v) {
                        is_max = false;
                        break 'n;
                    }
                }
            }
            if is_max {
                candidates.push((v, x, y));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1))));
    let min_d2 = min_dist * min_dist;
    let mut out: Vec<Corner> = Vec::new();
    for (v, x, y) in candidates {
        if out.len() >= max_corners {
            break;
        }
        let p = Vector2::new(x as f64, y as f64);
        let near = |q: &Vector2<f64>| (q - p).norm_squared() < min_d2;
        if out.iter().any(|c| near(&c.position)) || existing.iter().any(near) {
            continue;
        }
        out.push(Corner {
            position: p + subpixel_offset(&resp, x, y),
            score: v,
        });
    }
    out
}

fn subpixel_offset(resp: &Grid<f64>, x: usize, y: usize) -> Vector2<f64> {
    let fit = |a: f64, b: f64, c: f64| {
        let denom = a - 2.0 * b + c;
        if denom < 0.0 {
            (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        }
    };
    let c = *resp.get(x, y);
    Vector2::new(
        fit(*resp.get(x - 1, y), c, *resp.get(x + 1, y)),
        fit(*resp.get(x, y - 1), c, *resp.get(x, y + 1)),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackStatus {
    Ok,
    Lost,
}

/// Tracks one point through one pyramid pair starting from `guess` (full-res displacement).
fn lk_point(
    prev: &ImagePyramid,
    next: &ImagePyramid,
    p: &Vector2<f64>,
    window: usize,
    iters: usize,
) -> Option<Vector2<f64>> {
    let r = (window / 2) as i64;
    let n = ((2 * r + 1) * (2 * r + 1)) as f64;
    let levels = prev.len().min(next.len());
    let mut g = Vector2::zeros();
    for level in (0..levels).rev() {
        let scale = (1u64 << level) as f64;
        let a = &prev.levels[level];
        let b = &next.levels[level];
        let c = p / scale;
        let mut template = Vec::with_capacity(n as usize);
        let mut gm = Matrix2::zeros();
        for dy in -r..=r {
            for dx in -r..=r {
                let (x, y) = (c.x + dx as f64, c.y + dy as f64);
                let ix =
                    0.5 * (sample_clamped(a, x + 1.0, y) - sample_clamped(a, x - 1.0, y)) as f64;
                let iy =
                    0.5 * (sample_clamped(a, x, y + 1.0) - sample_clamped(a, x, y - 1.0)) as f64;
                template.push((x, y, sample_clamped(a, x, y) as f64, ix, iy));
                gm += Matrix2::new(ix * ix, ix * iy, ix * iy, iy * iy);
            }
        }
        let tr = 0.5 * gm.trace();
        let min_eig = tr - (tr * tr - gm.determinant()).max(0.0).sqrt();
        if min_eig / n < MIN_EIGEN {
            return None;
        }
        let inv = gm.try_inverse()?;
        let mut v = Vector2::zeros();
        for _ in 0..iters {
            let mut rhs = Vector2::zeros();
            for &(x, y, ival, ix, iy) in &template {
                let diff = ival - sample_clamped(b, x + g.x + v.x, y + g.y + v.y) as f64;
                rhs += Vector2::new(ix, iy) * diff;
            }
            let dv = inv * rhs;
            v += dv;
            if !v.x.is_finite() || v.norm() > 2.0 * window as f64 {
                return None;
            }
            if dv.norm() < 1e-3 {
                break;
            }
        }
        g += v;
        if level > 0 {
            g *= 2.0;
        }
    }
    let q = p + g;
    let (w, h) = (
        prev.levels[0].width() as f64,
        prev.levels[0].height() as f64,
    );
    (q.x >= 0.0 && q.y >= 0.0 && q.x <= w - 1.0 && q.y <= h - 1.0).then_some(q)
}

/// Pyramidal Lucas-Kanade with a forward-backward consistency check.
/// `window` is the side length of the square integration window.
pub fn track_lk(
    prev: &ImagePyramid,
    next: &ImagePyramid,
    points: &[Vector2<f64>],
    window: usize,
    iters: usize,
) -> Vec<(Vector2<f64>, TrackStatus)> {
    points
        .par_iter()
        .map(|p| {
            let fwd = lk_point(prev, next, p, window, iters);
            let Some(q) = fwd else {
                return (*p, TrackStatus::Lost);
            };
            match lk_point(next, prev, &q, window, iters) {
                Some(back) if (back - p).norm() <= FB_THRESHOLD => (q, TrackStatus::Ok),
                _ => (q, TrackStatus::Lost),
            }
        })
        .collect()
}

/// Weighted mean flow magnitude averaged with the mean track displacement
/// (both in low-resolution pixels). Either source alone is used when the other is empty.
pub fn motion_magnitude(flow: Option<&FlowField>, tracks: &TrackSet) -> Result<f64> {
    let dense = flow.and_then(|f| {
        let total = f.total_weight();
        (total > 0.0).then(|| {
            f.flow
                .iter()
                .zip(f.weight.iter())
                .map(|(v, w)| w * v.norm())
                .sum::<f64>()
                / total
        })
    });
    let sparse = tracks.mean_displacement_low_res();
    match (dense, sparse) {
        (Some(d), Some(s)) => Ok(0.5 * (d + s)),
        (Some(d), None) => Ok(d),
        (None, Some(s)) => Ok(s),
        (None, None) => Err(Error::NoMotionData),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerConfig {
    pub max_corners: usize,
    pub quality: f64,
    pub min_dist: f64,
    pub window: usize,
    pub iters: usize,
    /// Re-detect when live tracks fall below this fraction of `max_corners`.
    pub redetect_ratio: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            max_corners: 400,
            quality: 0.01,
            min_dist: 8.0,
            window: 15,
            iters: 20,
            redetect_ratio: 0.7,
        }
    }
}

/// Positions of one feature over consecutive frames.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTrack {
    pub first_frame: usize,
    pub positions: Vec<Vector2<f64>>,
}

impl FeatureTrack {
    pub fn at(&self, frame: usize) -> Option<Vector2<f64>> {
        frame
            .checked_sub(self.first_frame)
            .and_then(|k| self.positions.get(k).copied())
    }
}

/// Runs detection and frame-to-frame tracking over a sequence.
pub fn track_sequence(frames: &[Image], cfg: &TrackerConfig) -> Vec<FeatureTrack> {
    let mut done = Vec::new();
    let mut live: Vec<FeatureTrack> = Vec::new();
    let mut prev_pyr: Option<ImagePyramid> = None;
    for (f, img) in frames.iter().enumerate() {
        let pyr = ImagePyramid::new(img);
        if let Some(prev) = &prev_pyr {
            let pts: Vec<Vector2<f64>> =
                live.iter().map(|t| *t.positions.last().unwrap()).collect();
            let res = track_lk(prev, &pyr, &pts, cfg.window, cfg.iters);
            let mut still = Vec::with_capacity(live.len());
            for (mut t, (q, status)) in live.into_iter().zip(res) {
                if status == TrackStatus::Ok {
                    t.positions.push(q);
                    still.push(t);
                } else {
                    done.push(t);
                }
            }
            live = still;
        }
        if (live.len() as f64) < cfg.redetect_ratio * cfg.max_corners as f64 {
            let existing: Vec<Vector2<f64>> =
                live.iter().map(|t| *t.positions.last().unwrap()).collect();
            let fresh = detect_corners_avoiding(
                img,
                cfg.max_corners - live.len(),
                cfg.quality,
                cfg.min_dist,
                &existing,
            );
            live.extend(fresh.into_iter().map(|c| FeatureTrack {
                first_frame: f,
                positions: vec![c.position],
            }));
        }
        prev_pyr = Some(pyr);
    }
    done.extend(live);
    done.retain(|t| t.positions.len() > 1);
    done
}

/// Matches between two frames for every feature observed in both.
pub fn pair_tracks(features: &[FeatureTrack], i: usize, j: usize) -> Vec<Track> {
    features
        .iter()
        .filter_map(|t| {
            Some(Track {
                frame_i: i,
                p_i: t.at(i)?,
                frame_j: j,
                p_j: t.at(j)?,
                confidence: 1.0,
            })
        })
        .collect()
}

/// Matches for each consecutive frame pair.
pub fn consecutive_tracks(features: &[FeatureTrack], n_frames: usize) -> TrackSet {
    TrackSet::new(
        (1..n_frames)
            .flat_map(|j| pair_tracks(features, j - 1, j))
            .collect(),
    )
}
