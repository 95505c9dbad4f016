//! Command line front end: dataset simulation, solving, evaluation and tracking.

pub mod config;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::info;

use vidpose_core::geometry::CubeRig;
use vidpose_core::grid::Image;
use vidpose_core::io::{self, Tensor};
use vidpose_core::metrics::{
    ate_aligned, focal_error, rre, rte, sampson_error, shuttle_eval, EngineOutput, PoseEngine,
    Trajectory,
};
use vidpose_core::pipeline::{
    align_depths, export_dataset, init_intrinsics, run_video, CameraInit, FileDataset,
    PipelineOutput, SimEngine,
};
use vidpose_core::tracker::{pair_tracks, track_sequence, TrackerConfig};
use vidpose_core::{Error, Intrinsics, Pose, Providers, Result, SimDataset};

pub use config::{RunConfig, SimRig};

#[derive(Debug, Parser)]
#[command(
    name = "vidpose",
    version,
    about = "Keyframe bundle adjustment for video camera poses"
)]
pub struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset directory.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate poses, intrinsics and depth for a dataset directory.
    Solve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory; overrides `dataset.dir`.
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        switches: SwitchFlags,
    },
    /// Trajectory errors of an estimate against ground truth.
    Eval {
        est: PathBuf,
        gt: PathBuf,
        /// Align with a similarity instead of a rigid transform.
        #[arg(long)]
        sim3: bool,
        /// Frame gap for RTE and RRE.
        #[arg(long, default_value_t = 1)]
        delta: usize,
        #[arg(long, requires = "gt_intrinsics")]
        est_intrinsics: Option<PathBuf>,
        #[arg(long, requires = "est_intrinsics")]
        gt_intrinsics: Option<PathBuf>,
    },
    /// Forward and reversed runs compared after length normalization.
    Shuttle {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset directory; without one the configured simulation is used.
        dataset: Option<PathBuf>,
        #[command(flatten)]
        switches: SwitchFlags,
    },
    /// Mean Sampson error of a trajectory on pixel matches or tracks.
    Sampson {
        trajectory: PathBuf,
        intrinsics: PathBuf,
        matches: PathBuf,
    },
    /// Detect and track corners through a directory of single-channel frames.
    Track {
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write matches for frame pairs at most this far apart.
        #[arg(long, default_value_t = 12)]
        max_gap: usize,
        #[arg(long, default_value_t = 400)]
        max_corners: usize,
    },
}

/// Ablation switches layered over the config.
#[derive(Debug, Clone, Copy, Default, Args)]
pub struct SwitchFlags {
    #[arg(long)]
    pub no_dense: bool,
    #[arg(long)]
    pub no_sparse: bool,
    #[arg(long)]
    pub no_depth_reg: bool,
    #[arg(long)]
    pub no_mask: bool,
}

impl SwitchFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        let mut s = cfg.pipeline.frontend.energy.switches;
        s.dense &= !self.no_dense;
        s.sparse &= !self.no_sparse;
        s.depth_reg &= !self.no_depth_reg;
        s.mask &= !self.no_mask;
        cfg.pipeline.set_switches(s);
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Builds the simulated dataset described by the config.
pub fn build_sim(cfg: &RunConfig) -> Result<SimDataset> {
    let sim = cfg.sim.clone();
    match cfg.sim_rig {
        SimRig::Mono => SimDataset::new(sim),
        SimRig::Stereo(b) => {
            let k = SimDataset::new(sim.clone())?.intrinsics;
            let rig = vec![
                Pose::identity(),
                Pose::from_translation([b, 0.0, 0.0].into()),
            ];
            SimDataset::with_rig(sim, k, rig)
        }
        SimRig::Cube => {
            let cube = CubeRig::new(sim.width);
            let sim = vidpose_core::SimConfig {
                height: sim.width,
                ..sim
            };
            SimDataset::with_rig(sim, cube.face_intrinsics, cube.extrinsics())
        }
    }
}

/// Starting intrinsics: configured, else the default field of view at `resolution`.
fn starting_intrinsics(cfg: &RunConfig, resolution: (u32, u32)) -> Result<Intrinsics> {
    let init = CameraInit {
        resolution: cfg.camera.resolution.or(Some(resolution)),
        ..cfg.camera
    };
    let mut k = init_intrinsics(&init)?;
    k.f *= cfg.init_scale;
    k.validate()?;
    Ok(k)
}

/// Runs one command, writing its `metric=value` lines to `out`.
pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    if cli.threads > 0 {
        // Fails only if a pool already exists, in which case that one is used.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match cli.command {
        Command::Simulate { config, out: dir } => {
            cmd_simulate(&load_config(config.as_deref())?, &dir, out)
        }
        Command::Solve {
            config,
            dataset,
            out: dir,
            switches,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            switches.apply(&mut cfg);
            let data = dataset
                .or_else(|| cfg.dataset_dir.clone())
                .ok_or_else(|| Error::Config("no dataset directory given".into()))?;
            cmd_solve(&cfg, &data, &dir, out)
        }
        Command::Eval {
            est,
            gt,
            sim3,
            delta,
            est_intrinsics,
            gt_intrinsics,
        } => {
            let ks = match (est_intrinsics, gt_intrinsics) {
                (Some(a), Some(b)) => Some((io::read_intrinsics(&a)?, io::read_intrinsics(&b)?)),
                _ => None,
            };
            cmd_eval(
                &io::read_tum(&est)?,
                &io::read_tum(&gt)?,
                sim3,
                delta,
                ks,
                out,
            )
        }
        Command::Shuttle {
            config,
            dataset,
            switches,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            switches.apply(&mut cfg);
            cmd_shuttle(
                &cfg,
                dataset.or_else(|| cfg.dataset_dir.clone()).as_deref(),
                out,
            )
        }
        Command::Sampson {
            trajectory,
            intrinsics,
            matches,
        } => {
            let traj = io::read_tum(&trajectory)?;
            let k = io::read_intrinsics(&intrinsics)?;
            let m = io::read_correspondences(&matches)?;
            let r = sampson_error(&traj, &k, &m)?;
            writeln!(out, "sampson={}", r.error).map_err(stdout_err)?;
            writeln!(out, "pairs={}", r.pairs_used).map_err(stdout_err)?;
            writeln!(out, "skipped={}", r.skipped).map_err(stdout_err)?;
            Ok(())
        }
        Command::Track {
            frames,
            out: path,
            max_gap,
            max_corners,
        } => cmd_track(&frames, &path, max_gap, max_corners, out),
    }
}

fn stdout_err(e: std::io::Error) -> Error {
    Error::io(Path::new("<stdout>"), e)
}

macro_rules! emit {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(stdout_err)?
    };
}

pub fn cmd_simulate(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let ds = build_sim(cfg)?;
    export_dataset(&ds, dir, &cfg.export)?;
    emit!(out, "frames={}", ds.n_frames());
    emit!(out, "cameras={}", ds.rig.len());
    emit!(out, "path_length={}", ds.gt_trajectory().path_length());
    Ok(())
}

fn metric_depth(inv: &vidpose_core::InvDepthMap) -> Tensor {
    Tensor::from_grid(&inv.map(|d| {
        if *d > 0.0 && d.is_finite() {
            1.0 / d
        } else {
            f64::NAN
        }
    }))
}

/// Writes trajectory, depths, point cloud, intrinsics and report for a finished run.
fn write_solution(
    cfg: &RunConfig,
    run: &PipelineOutput,
    providers: &Providers,
    n: usize,
    dir: &Path,
) -> Result<usize> {
    let frames: Vec<usize> = (0..n).collect();
    io::write_tum(
        &dir.join("trajectory.txt"),
        &Trajectory::from_poses(run.poses.clone()),
    )?;
    io::write_bytes(
        &dir.join("intrinsics.txt"),
        io::format_intrinsics(&run.intrinsics).as_bytes(),
    )?;
    for kf in &run.graph.keyframes {
        let name = format!("{:05}_{}.vpe", frames[kf.frame_index], kf.camera);
        io::write_tensor(
            &dir.join("keyframes").join(name),
            &metric_depth(&kf.inv_depth),
        )?;
    }
    let aligned = align_depths(run, providers, &frames, &cfg.align)?;
    let mut written = 0;
    for (f, a) in aligned.iter().enumerate() {
        if let Some(a) = a {
            io::write_tensor(
                &dir.join("depth").join(format!("{f:05}.vpe")),
                &Tensor::from_grid(&a.depth),
            )?;
            written += 1;
        }
    }
    let points = vidpose_core::depth_align::consistent_points(&run.graph, &cfg.align)?;
    io::write_ply(&dir.join("points.ply"), &points)?;
    Ok(written)
}

pub fn cmd_solve(cfg: &RunConfig, dataset: &Path, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let start = Instant::now();
    let ds = FileDataset::open(dataset)?;
    let n = ds.n_frames;
    let k0 = starting_intrinsics(cfg, (ds.width, ds.height))?;
    let rig = ds.rig.clone();
    let providers = Providers::from_dir(ds);
    info!("solving {n} frames from {}", dataset.display());
    let run = run_video(&cfg.pipeline, providers.clone(), k0, rig, (0..n).collect())?;
    let depths = write_solution(cfg, &run, &providers, n, dir)?;
    let runtime = start.elapsed().as_secs_f64();
    let fallback = run.fallback.iter().filter(|&&f| f).count();
    let runs: Vec<String> = run.backend_runs.iter().map(|r| r.to_string()).collect();
    let report = format!(
        "frames={n}\nkeyframes={}\nbackend_runs={}\nfinal_energy={:e}\nfocal={}\nfallback_frames={fallback}\ndepth_maps={depths}\nruntime_s={runtime:.3}\n",
        run.keyframes.len(),
        runs.join(","),
        run.final_energy,
        run.intrinsics.f,
    );
    io::write_bytes(&dir.join("report.txt"), report.as_bytes())?;
    out.write_all(report.as_bytes()).map_err(stdout_err)?;
    Ok(())
}

/// Poses of `est` at the timestamps shared with `gt`, paired up.
fn associate(est: &Trajectory, gt: &Trajectory) -> Result<(Trajectory, Trajectory)> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    let mut j = 0;
    for (i, &t) in est.timestamps.iter().enumerate() {
        while j < gt.len() && gt.timestamps[j] < t - 1e-6 {
            j += 1;
        }
        if j < gt.len() && (gt.timestamps[j] - t).abs() <= 1e-6 {
            a.push((t, est.poses[i]));
            b.push((t, gt.poses[j]));
        }
    }
    if a.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "only {} timestamps shared by the trajectories",
            a.len()
        )));
    }
    let split = |v: Vec<(f64, Pose)>| -> Result<Trajectory> {
        let (ts, ps) = v.into_iter().unzip();
        Trajectory::new(ts, ps)
    };
    Ok((split(a)?, split(b)?))
}

pub fn cmd_eval(
    est: &Trajectory,
    gt: &Trajectory,
    sim3: bool,
    delta: usize,
    intrinsics: Option<(Intrinsics, Intrinsics)>,
    out: &mut dyn Write,
) -> Result<()> {
    let (e, g) = associate(est, gt)?;
    let ate = ate_aligned(&e, &g, sim3)?;
    let len = g.path_length();
    emit!(out, "pairs={}", e.len());
    emit!(out, "ate={ate}");
    emit!(
        out,
        "ate_rel={}",
        if len > 0.0 { ate / len } else { f64::NAN }
    );
    emit!(out, "rte={}", rte(&e, &g, delta)?);
    emit!(out, "rre={}", rre(&e, &g, delta)?);
    if let Some((ke, kg)) = intrinsics {
        emit!(out, "focal={}", focal_error(&ke, &kg));
    }
    Ok(())
}

/// Engine over a dataset directory, reopened for every run.
struct DirEngine {
    dir: PathBuf,
    cfg: RunConfig,
}

impl PoseEngine for DirEngine {
    fn estimate(&self, frames: &[usize]) -> Result<EngineOutput> {
        let ds = FileDataset::open(&self.dir)?;
        let k0 = starting_intrinsics(&self.cfg, (ds.width, ds.height))?;
        let rig = ds.rig.clone();
        let run = run_video(
            &self.cfg.pipeline,
            Providers::from_dir(ds),
            k0,
            rig,
            frames.to_vec(),
        )?;
        Ok(EngineOutput {
            poses: run.poses,
            intrinsics: run.intrinsics,
        })
    }
}

pub fn cmd_shuttle(cfg: &RunConfig, dataset: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let report = match dataset {
        Some(dir) => {
            let n = FileDataset::open(dir)?.n_frames;
            let engine = DirEngine {
                dir: dir.to_path_buf(),
                cfg: cfg.clone(),
            };
            shuttle_eval(&engine, n)?
        }
        None => {
            let ds = Arc::new(build_sim(cfg)?);
            let k = ds.intrinsics;
            let init = match cfg.camera.intrinsics {
                Some(k) => k,
                None => Intrinsics {
                    f: k.f * cfg.init_scale,
                    ..k
                },
            };
            let n = ds.n_frames();
            let engine = SimEngine {
                dataset: ds,
                config: cfg.pipeline.clone(),
                init,
            };
            shuttle_eval(&engine, n)?
        }
    };
    emit!(out, "s_ate={}", report.s_ate);
    emit!(out, "s_rte={}", report.s_rte);
    emit!(out, "s_rre={}", report.s_rre);
    emit!(out, "s_focal={}", report.s_focal);
    Ok(())
}

fn read_frames(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "vpe"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::MissingFiles(vec![dir.join("*.vpe")]));
    }
    paths
        .iter()
        .map(|p| {
            let t = io::read_tensor(p)?;
            if t.channels != 1 {
                return Err(Error::InvalidInput(format!(
                    "{}: expected one channel",
                    p.display()
                )));
            }
            Ok(Image::from_vec(t.width, t.height, t.data))
        })
        .collect()
}

pub fn cmd_track(
    frames: &Path,
    path: &Path,
    max_gap: usize,
    max_corners: usize,
    out: &mut dyn Write,
) -> Result<()> {
    let images = read_frames(frames)?;
    let cfg = TrackerConfig {
        max_corners,
        ..TrackerConfig::default()
    };
    let features = track_sequence(&images, &cfg);
    let n = images.len();
    let tracks: Vec<_> = (0..n)
        .flat_map(|i| (i + 1..(i + max_gap + 1).min(n)).map(move |j| (i, j)))
        .flat_map(|(i, j)| pair_tracks(&features, i, j))
        .collect();
    io::write_tracks(path, &tracks)?;
    emit!(out, "frames={n}");
    emit!(out, "features={}", features.len());
    emit!(out, "tracks={}", tracks.len());
    Ok(())
}
