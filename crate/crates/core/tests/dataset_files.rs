//! Round trips between the simulator and the on-disk dataset layout.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use vidpose_core::io;
use vidpose_core::metrics::{ate_aligned, Trajectory};
use vidpose_core::pipeline::{export_dataset, run_video, ExportOptions, FileDataset};
use vidpose_core::{Error, Intrinsics, PipelineConfig, Providers, SimConfig, SimDataset, ViewId};

fn sim(n_frames: usize) -> Arc<SimDataset> {
    Arc::new(
        SimDataset::new(SimConfig {
            n_frames,
            ..Default::default()
        })
        .unwrap(),
    )
}

fn export(ds: &SimDataset, dir: &Path) {
    export_dataset(ds, dir, &ExportOptions::default()).unwrap();
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn export_is_byte_identical_for_a_fixed_seed() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    export(&sim(6), a.path());
    export(&sim(6), b.path());
    let (sa, sb) = (snapshot(a.path()), snapshot(b.path()));
    assert!(sa.len() > 10);
    assert_eq!(sa, sb);
}

#[test]
fn ground_truth_file_is_valid_tum() {
    let ds = sim(8);
    let dir = tempfile::tempdir().unwrap();
    export(&ds, dir.path());
    let gt = io::read_tum(&dir.path().join("groundtruth.txt")).unwrap();
    assert_eq!(gt.len(), 8);
    assert_eq!(gt.timestamps, (0..8).map(|i| i as f64).collect::<Vec<_>>());
    let mem = ds.gt_trajectory();
    // Nine decimals per component.
    for (a, b) in gt.poses.iter().zip(&mem.poses) {
        assert!((a.translation - b.translation).norm() < 1e-8);
        assert!(a.rotation.angle_to(&b.rotation) < 1e-8);
    }
    assert_eq!(
        io::read_intrinsics(&dir.path().join("intrinsics.txt")).unwrap(),
        ds.intrinsics
    );
}

#[test]
fn file_providers_reproduce_the_oracle() {
    let ds = sim(10);
    let dir = tempfile::tempdir().unwrap();
    export(&ds, dir.path());
    let files = Providers::from_dir(FileDataset::open(dir.path()).unwrap());
    let k = Intrinsics {
        f: ds.intrinsics.f * 1.2,
        ..ds.intrinsics
    };
    for (i, j) in [(0, 3), (7, 2), (4, 4 + 5)] {
        let (a, b) = (ViewId::mono(i), ViewId::mono(j));
        let read = files.flow.flow(a, b).unwrap().unwrap();
        let truth = ds.flow(a, b).unwrap();
        for (x, y) in read.flow.iter().zip(truth.flow.iter()) {
            // Float32 storage: relative quantization of about 6e-8.
            assert!((x - y).norm() <= 1e-7 * (1.0 + y.norm()), "{x} vs {y}");
        }
        assert_eq!(read.weight, truth.weight);

        let read = files.tracks.as_ref().unwrap().tracks(a, b).unwrap();
        let truth = ds.tracks(a, b).unwrap();
        assert_eq!(read.len(), truth.len());
        for (x, y) in read.iter().zip(&truth) {
            assert_eq!((x.frame_i, x.frame_j), (y.frame_i, y.frame_j));
            assert!((x.p_i - y.p_i).norm() < 1e-6 && (x.p_j - y.p_j).norm() < 1e-6);
        }

        let (p, m) = files.prior.prior(a, &k).unwrap();
        let (q, n) = ds.prior(a, &k).unwrap();
        assert_eq!(m, n);
        for (x, y) in p.iter().zip(q.iter()) {
            assert!((x - y).abs() <= 1e-7 * y.abs(), "{x} vs {y}");
        }
        assert_eq!(files.mask.mask(a).unwrap().unwrap(), ds.mask(a).unwrap());
    }
}

#[test]
fn missing_provider_files_are_listed_up_front() {
    let ds = sim(4);
    let dir = tempfile::tempdir().unwrap();
    export(&ds, dir.path());
    let gone = [1usize, 3].map(|f| dir.path().join("priors").join(format!("{f:05}_0.vpe")));
    for p in &gone {
        std::fs::remove_file(p).unwrap();
    }
    match FileDataset::open(dir.path()) {
        Err(Error::MissingFiles(list)) => assert_eq!(list, gone.to_vec()),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("opened an incomplete dataset"),
    }
}

#[test]
fn solving_from_files_matches_solving_in_memory() {
    let ds = sim(24);
    let dir = tempfile::tempdir().unwrap();
    export(&ds, dir.path());
    let k = Intrinsics {
        f: ds.intrinsics.f * 1.2,
        ..ds.intrinsics
    };
    let frames: Vec<usize> = (0..24).collect();
    let cfg = PipelineConfig::default();
    let mem = run_video(
        &cfg,
        Providers::from_sim(ds.clone()),
        k,
        ds.rig.clone(),
        frames.clone(),
    )
    .unwrap();
    let disk = run_video(
        &cfg,
        Providers::from_dir(FileDataset::open(dir.path()).unwrap()),
        k,
        ds.rig.clone(),
        frames,
    )
    .unwrap();
    assert_eq!(mem.keyframes, disk.keyframes);
    let gt = ds.gt_trajectory();
    let len = gt.path_length();
    for out in [&mem, &disk] {
        let est = Trajectory::from_poses(out.poses.clone());
        assert!(ate_aligned(&est, &gt, false).unwrap() < 1e-5 * len);
    }
    assert!((mem.intrinsics.f - disk.intrinsics.f).abs() < 1e-4);
}
