use std::path::Path;

use rayon::prelude::*;

use super::providers::layout;
use crate::error::Result;
use crate::graph::ViewId;
use crate::io::{self, Tensor};
use crate::sim::SimDataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExportOptions {
    /// Flows and tracks are written for frame pairs at most this far apart.
    pub max_gap: usize,
    /// Also write rendered grayscale frames.
    pub images: bool,
}

impl Default for ExportOptions {
    fn default() -> Self {
        Self {
            max_gap: 12,
            images: false,
        }
    }
}

/// Writes a simulated dataset in the layout read by [`super::FileDataset`].
pub fn export_dataset(ds: &SimDataset, dir: &Path, opts: &ExportOptions) -> Result<()> {
    let n = ds.n_frames();
    let cams = ds.rig.len();
    let k = ds.intrinsics;
    io::write_bytes(
        &dir.join(layout::MANIFEST),
        format!(
            "dataset.frames = {n}\ndataset.cameras = {cams}\ndataset.width = {}\ndataset.height = {}\nprior.f = {}\n",
            k.width, k.height, k.f
        )
        .as_bytes(),
    )?;
    io::write_bytes(
        &dir.join(layout::INTRINSICS),
        io::format_intrinsics(&k).as_bytes(),
    )?;
    let mut gt = ds.gt_trajectory();
    gt.timestamps = (0..n).map(|f| f as f64).collect();
    io::write_tum(&dir.join(layout::GROUND_TRUTH), &gt)?;
    if cams > 1 {
        let rig = crate::metrics::Trajectory::from_poses(ds.rig.clone());
        io::write_tum(&dir.join(layout::RIG), &rig)?;
    }

    let views: Vec<ViewId> = (0..n)
        .flat_map(|frame| (0..cams).map(move |camera| ViewId { frame, camera }))
        .collect();
    views.par_iter().try_for_each(|&v| -> Result<()> {
        let (prior, _) = ds.prior(v, &k)?;
        io::write_tensor(&layout::prior(dir, v), &Tensor::from_grid(&prior))?;
        let prior_hd = ds.prior_hd(v, &k)?;
        io::write_tensor(&layout::prior_hd(dir, v), &Tensor::from_grid(&prior_hd))?;
        io::write_mask(&layout::mask(dir, v), &ds.mask(v)?)?;
        io::write_mask(&layout::mask_hd(dir, v), &ds.mask_hd(v)?)?;
        io::write_tensor(
            &layout::video_depth(dir, v),
            &Tensor::from_grid(&ds.video_depth(v)?),
        )?;
        if opts.images {
            let img = ds.image(v)?;
            let t = Tensor {
                height: img.height(),
                width: img.width(),
                channels: 1,
                data: img.into_vec(),
            };
            io::write_tensor(
                &dir.join("frames")
                    .join(format!("{:05}_{}.vpe", v.frame, v.camera)),
                &t,
            )?;
        }
        Ok(())
    })?;

    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i.saturating_sub(opts.max_gap)..(i + opts.max_gap + 1).min(n) {
            for ci in 0..cams {
                for cj in 0..cams {
                    let same_view = i == j && ci == cj;
                    let cross_far = ci != cj && i.abs_diff(j) > 1;
                    if !same_view && !cross_far {
                        pairs.push((
                            ViewId {
                                frame: i,
                                camera: ci,
                            },
                            ViewId {
                                frame: j,
                                camera: cj,
                            },
                        ));
                    }
                }
            }
        }
    }
    pairs.par_iter().try_for_each(|&(a, b)| -> Result<()> {
        io::write_tensor(
            &layout::flow(dir, a, b),
            &Tensor::from_flow(&ds.flow(a, b)?),
        )
    })?;

    let track_lists: Vec<_> = pairs
        .par_iter()
        .filter(|(a, b)| a.camera == 0 && b.camera == 0 && a.frame != b.frame)
        .map(|&(a, b)| ds.tracks(a, b))
        .collect::<Result<_>>()?;
    let tracks: Vec<_> = track_lists.into_iter().flatten().collect();
    io::write_tracks(&dir.join(layout::TRACKS), &tracks)?;
    io::write_bytes(
        &dir.join(layout::MATCHES),
        io::format_matches(&ds.correspondences()).as_bytes(),
    )?;
    Ok(())
}
