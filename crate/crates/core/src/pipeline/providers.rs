//! Sources of flow, depth priors, masks, tracks and video depth.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::graph::ViewId;
use crate::grid::{FlowField, Grid, InvDepthMap, Mask};
use crate::io::{self, KeyValues};
use crate::residuals::Track;
use crate::sim::SimDataset;

pub trait FlowProvider: Send + Sync {
    /// Low-resolution flow from view `i` to view `j`; `None` when unavailable.
    fn flow(&self, i: ViewId, j: ViewId) -> Result<Option<FlowField>>;
}

pub trait DepthPriorProvider: Send + Sync {
    /// Low-resolution prior inverse depth and confidence for a camera with intrinsics `k`.
    fn prior(&self, v: ViewId, k: &Intrinsics) -> Result<(InvDepthMap, Grid<f64>)>;
    /// Full-resolution prior inverse depth, if any.
    fn prior_hd(&self, v: ViewId, k: &Intrinsics) -> Result<Option<InvDepthMap>>;
}

pub trait MaskProvider: Send + Sync {
    /// Low-resolution static mask; `None` means fully static.
    fn mask(&self, v: ViewId) -> Result<Option<Mask>>;
    fn mask_hd(&self, v: ViewId) -> Result<Option<Mask>>;
}

pub trait TrackProvider: Send + Sync {
    /// Full-resolution point matches from `i` to `j`.
    fn tracks(&self, i: ViewId, j: ViewId) -> Result<Vec<Track>>;
}

pub trait VideoDepthProvider: Send + Sync {
    /// Full-resolution affine-invariant depth.
    fn video_depth(&self, v: ViewId) -> Result<Option<Grid<f64>>>;
}

/// The provider handles of one session.
#[derive(Clone)]
pub struct Providers {
    pub flow: Arc<dyn FlowProvider>,
    pub prior: Arc<dyn DepthPriorProvider>,
    pub mask: Arc<dyn MaskProvider>,
    pub tracks: Option<Arc<dyn TrackProvider>>,
    pub video_depth: Option<Arc<dyn VideoDepthProvider>>,
}

impl Providers {
    /// Every role served by the simulator.
    pub fn from_sim(ds: Arc<SimDataset>) -> Self {
        let p = Arc::new(SimProvider(ds));
        Self {
            flow: p.clone(),
            prior: p.clone(),
            mask: p.clone(),
            tracks: Some(p.clone()),
            video_depth: Some(p),
        }
    }

    pub fn from_dir(dir: FileDataset) -> Self {
        let p = Arc::new(dir);
        Self {
            flow: p.clone(),
            prior: p.clone(),
            mask: p.clone(),
            tracks: Some(p.clone()),
            video_depth: Some(p),
        }
    }
}

/// Oracle providers backed by a simulated dataset.
pub struct SimProvider(pub Arc<SimDataset>);

impl FlowProvider for SimProvider {
    fn flow(&self, i: ViewId, j: ViewId) -> Result<Option<FlowField>> {
        self.0.flow(i, j).map(Some)
    }
}

impl DepthPriorProvider for SimProvider {
    fn prior(&self, v: ViewId, k: &Intrinsics) -> Result<(InvDepthMap, Grid<f64>)> {
        self.0.prior(v, k)
    }

    fn prior_hd(&self, v: ViewId, k: &Intrinsics) -> Result<Option<InvDepthMap>> {
        self.0.prior_hd(v, k).map(Some)
    }
}

impl MaskProvider for SimProvider {
    fn mask(&self, v: ViewId) -> Result<Option<Mask>> {
        self.0.mask(v).map(Some)
    }

    fn mask_hd(&self, v: ViewId) -> Result<Option<Mask>> {
        self.0.mask_hd(v).map(Some)
    }
}

impl TrackProvider for SimProvider {
    fn tracks(&self, i: ViewId, j: ViewId) -> Result<Vec<Track>> {
        self.0.tracks(i, j)
    }
}

impl VideoDepthProvider for SimProvider {
    fn video_depth(&self, v: ViewId) -> Result<Option<Grid<f64>>> {
        self.0.video_depth(v).map(Some)
    }
}

/// Directory layout shared by the simulator export and the file-backed providers.
pub mod layout {
    use super::*;

    pub const MANIFEST: &str = "dataset.txt";
    pub const GROUND_TRUTH: &str = "groundtruth.txt";
    pub const INTRINSICS: &str = "intrinsics.txt";
    pub const TRACKS: &str = "tracks.txt";
    pub const MATCHES: &str = "matches.txt";
    pub const RIG: &str = "rig.txt";

    fn view(v: ViewId) -> String {
        format!("{:05}_{}", v.frame, v.camera)
    }

    pub fn flow(dir: &Path, i: ViewId, j: ViewId) -> PathBuf {
        dir.join("flows")
            .join(format!("{}__{}.vpe", view(i), view(j)))
    }

    pub fn prior(dir: &Path, v: ViewId) -> PathBuf {
        dir.join("priors").join(format!("{}.vpe", view(v)))
    }

    pub fn prior_hd(dir: &Path, v: ViewId) -> PathBuf {
        dir.join("priors_hd").join(format!("{}.vpe", view(v)))
    }

    pub fn mask(dir: &Path, v: ViewId) -> PathBuf {
        dir.join("masks").join(format!("{}.pgm", view(v)))
    }

    pub fn mask_hd(dir: &Path, v: ViewId) -> PathBuf {
        dir.join("masks_hd").join(format!("{}.pgm", view(v)))
    }

    pub fn video_depth(dir: &Path, v: ViewId) -> PathBuf {
        dir.join("video_depth").join(format!("{}.vpe", view(v)))
    }
}

pub const MANIFEST_KEYS: [&str; 5] = [
    "dataset.frames",
    "dataset.cameras",
    "dataset.width",
    "dataset.height",
    "prior.f",
];

/// Providers reading a dataset directory.
///
/// Priors on disk were predicted for focal `prior.f`; they are rescaled to the
/// focal requested by the caller.
pub struct FileDataset {
    pub dir: PathBuf,
    pub n_frames: usize,
    pub n_cameras: usize,
    pub width: u32,
    pub height: u32,
    pub prior_f: f64,
    pub rig: Vec<Pose>,
    tracks: HashMap<(usize, usize), Vec<Track>>,
}

impl FileDataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = dir.join(layout::MANIFEST);
        if !manifest.exists() {
            return Err(Error::MissingFiles(vec![manifest]));
        }
        let kv = KeyValues::load(&manifest)?;
        kv.check_known(&MANIFEST_KEYS)?;
        let need = |k: &str| Error::Config(format!("{}: {k} missing", manifest.display()));
        let n_frames: usize = kv
            .get("dataset.frames")?
            .ok_or_else(|| need("dataset.frames"))?;
        let n_cameras: usize = kv.get("dataset.cameras")?.unwrap_or(1);
        let width: u32 = kv
            .get("dataset.width")?
            .ok_or_else(|| need("dataset.width"))?;
        let height: u32 = kv
            .get("dataset.height")?
            .ok_or_else(|| need("dataset.height"))?;
        let prior_f: f64 = kv.get("prior.f")?.ok_or_else(|| need("prior.f"))?;
        if n_frames == 0 || n_cameras == 0 || !(prior_f > 0.0) {
            return Err(Error::Config(format!(
                "{}: invalid manifest values",
                manifest.display()
            )));
        }
        let rig_path = dir.join(layout::RIG);
        let rig = if rig_path.exists() {
            io::read_tum(&rig_path)?.poses
        } else {
            vec![Pose::identity()]
        };
        if rig.len() != n_cameras {
            return Err(Error::Config(format!(
                "rig has {} cameras, manifest says {n_cameras}",
                rig.len()
            )));
        }

        let mut missing = Vec::new();
        for f in 0..n_frames {
            for c in 0..n_cameras {
                let p = layout::prior(
                    dir,
                    ViewId {
                        frame: f,
                        camera: c,
                    },
                );
                if !p.exists() {
                    missing.push(p);
                }
            }
        }
        if !dir.join("flows").is_dir() {
            missing.push(dir.join("flows"));
        }
        if !missing.is_empty() {
            return Err(Error::MissingFiles(missing));
        }

        let mut tracks: HashMap<(usize, usize), Vec<Track>> = HashMap::new();
        let tp = dir.join(layout::TRACKS);
        if tp.exists() {
            for t in io::read_tracks(&tp)? {
                tracks.entry((t.frame_i, t.frame_j)).or_default().push(t);
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            n_frames,
            n_cameras,
            width,
            height,
            prior_f,
            rig,
            tracks,
        })
    }

    fn optional_tensor(&self, path: &Path) -> Result<Option<io::Tensor>> {
        if path.exists() {
            io::read_tensor(path).map(Some)
        } else {
            Ok(None)
        }
    }

    fn check(&self, v: ViewId) -> Result<()> {
        if v.frame >= self.n_frames || v.camera >= self.n_cameras {
            return Err(Error::ProviderFailure {
                frame: v.frame,
                message: format!("view {}/{} is not in the dataset", v.frame, v.camera),
            });
        }
        Ok(())
    }

    fn rescale(&self, mut inv: InvDepthMap, k: &Intrinsics) -> InvDepthMap {
        let s = self.prior_f / k.f;
        for d in inv.as_mut_slice() {
            *d *= s;
        }
        inv
    }
}

impl FlowProvider for FileDataset {
    fn flow(&self, i: ViewId, j: ViewId) -> Result<Option<FlowField>> {
        self.check(i)?;
        self.check(j)?;
        match self.optional_tensor(&layout::flow(&self.dir, i, j))? {
            Some(t) => t.to_flow().map(Some),
            None => Ok(None),
        }
    }
}

impl DepthPriorProvider for FileDataset {
    fn prior(&self, v: ViewId, k: &Intrinsics) -> Result<(InvDepthMap, Grid<f64>)> {
        self.check(v)?;
        let inv = io::read_tensor(&layout::prior(&self.dir, v))?.to_grid()?;
        let m = inv.map(|d| if d.is_finite() && *d > 0.0 { 1.0 } else { 0.0 });
        Ok((self.rescale(inv, k), m))
    }

    fn prior_hd(&self, v: ViewId, k: &Intrinsics) -> Result<Option<InvDepthMap>> {
        self.check(v)?;
        match self.optional_tensor(&layout::prior_hd(&self.dir, v))? {
            Some(t) => Ok(Some(self.rescale(t.to_grid()?, k))),
            None => Ok(None),
        }
    }
}

impl MaskProvider for FileDataset {
    fn mask(&self, v: ViewId) -> Result<Option<Mask>> {
        self.check(v)?;
        let p = layout::mask(&self.dir, v);
        if p.exists() {
            io::read_mask(&p).map(Some)
        } else {
            Ok(None)
        }
    }

    fn mask_hd(&self, v: ViewId) -> Result<Option<Mask>> {
        self.check(v)?;
        let p = layout::mask_hd(&self.dir, v);
        if p.exists() {
            io::read_mask(&p).map(Some)
        } else {
            Ok(None)
        }
    }
}

impl TrackProvider for FileDataset {
    /// The track file carries camera-0 matches only.
    fn tracks(&self, i: ViewId, j: ViewId) -> Result<Vec<Track>> {
        if i.camera != 0 || j.camera != 0 {
            return Ok(Vec::new());
        }
        if let Some(t) = self.tracks.get(&(i.frame, j.frame)) {
            return Ok(t.clone());
        }
        Ok(self
            .tracks
            .get(&(j.frame, i.frame))
            .map(|ts| {
                ts.iter()
                    .map(|t| Track {
                        frame_i: t.frame_j,
                        p_i: t.p_j,
                        frame_j: t.frame_i,
                        p_j: t.p_i,
                        confidence: t.confidence,
                    })
                    .collect()
            })
            .unwrap_or_default())
    }
}

impl VideoDepthProvider for FileDataset {
    fn video_depth(&self, v: ViewId) -> Result<Option<Grid<f64>>> {
        self.check(v)?;
        match self.optional_tensor(&layout::video_depth(&self.dir, v))? {
            Some(t) => t.to_grid().map(Some),
            None => Ok(None),
        }
    }
}
