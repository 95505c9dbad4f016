use nalgebra::Vector2;

use crate::grid::{FlowField, Grid, Mask};
use crate::LOW_RES_FACTOR;

/// Accumulated bilinear weight below which a splatted pixel is discarded.
const MIN_SPLAT_WEIGHT: f64 = 1e-3;

/// A keypoint match between two frames in full-resolution pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Track {
    pub frame_i: usize,
    pub p_i: Vector2<f64>,
    pub frame_j: usize,
    pub p_j: Vector2<f64>,
    pub confidence: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrackSet {
    pub tracks: Vec<Track>,
}

impl TrackSet {
    pub fn new(tracks: Vec<Track>) -> Self {
        Self { tracks }
    }

    pub fn is_empty(&self) -> bool {
        self.tracks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.tracks.len()
    }

    /// Tracks from `i` to `j`; matches stored as `j -> i` are returned flipped.
    pub fn for_pair(&self, i: usize, j: usize) -> Vec<Track> {
        self.tracks
            .iter()
            .filter_map(|t| {
                if t.frame_i == i && t.frame_j == j {
                    Some(*t)
                } else if t.frame_i == j && t.frame_j == i {
                    Some(Track {
                        frame_i: i,
                        p_i: t.p_j,
                        frame_j: j,
                        p_j: t.p_i,
                        confidence: t.confidence,
                    })
                } else {
                    None
                }
            })
            .collect()
    }

    /// Mean displacement magnitude in low-resolution pixels.
    pub fn mean_displacement_low_res(&self) -> Option<f64> {
        if self.tracks.is_empty() {
            return None;
        }
        let sum: f64 = self.tracks.iter().map(|t| (t.p_j - t.p_i).norm()).sum();
        Some(sum / self.tracks.len() as f64 / LOW_RES_FACTOR as f64)
    }
}

/// Scatters track displacements onto the low-resolution grid with bilinear weights.
///
/// Each pixel receives the bilinear-weighted mean displacement of the tracks around
/// it (in low-resolution pixels) and a weight of `min(1, sum of bilinear weights)`
/// times the weighted mean confidence. Tracks whose source point falls outside the
/// static mask are dropped.
pub fn splat_tracks(
    tracks: &[Track],
    mask: Option<&Mask>,
    width: usize,
    height: usize,
) -> FlowField {
    let scale = 1.0 / LOW_RES_FACTOR as f64;
    let mut num = Grid::new(width, height, Vector2::<f64>::zeros());
    let mut den = Grid::new(width, height, 0.0f64);
    let mut conf = Grid::new(width, height, 0.0f64);
    for t in tracks {
        let q = t.p_i * scale;
        let disp = (t.p_j - t.p_i) * scale;
        if let Some(m) = mask {
            let nx = q.x.round();
            let ny = q.y.round();
            if nx < 0.0 || ny < 0.0 || nx as usize >= width || ny as usize >= height {
                continue;
            }
            if !*m.get(nx as usize, ny as usize) {
                continue;
            }
        }
        let x0 = q.x.floor();
        let y0 = q.y.floor();
        let ax = q.x - x0;
        let ay = q.y - y0;
        for (dx, dy, b) in [
            (0, 0, (1.0 - ax) * (1.0 - ay)),
            (1, 0, ax * (1.0 - ay)),
            (0, 1, (1.0 - ax) * ay),
            (1, 1, ax * ay),
        ] {
            if b <= 0.0 {
                continue;
            }
            let x = x0 as i64 + dx;
            let y = y0 as i64 + dy;
            if x < 0 || y < 0 || x as usize >= width || y as usize >= height {
                continue;
            }
            let (x, y) = (x as usize, y as usize);
            *num.get_mut(x, y) += disp * b;
            *den.get_mut(x, y) += b;
            *conf.get_mut(x, y) += b * t.confidence;
        }
    }
    let mut out = FlowField::zeros(width, height);
    for idx in 0..out.flow.len() {
        let b = den.as_slice()[idx];
        if b < MIN_SPLAT_WEIGHT {
            continue;
        }
        out.flow.as_mut_slice()[idx] = num.as_slice()[idx] / b;
        out.weight.as_mut_slice()[idx] = b.min(1.0) * (conf.as_slice()[idx] / b);
    }
    out
}
