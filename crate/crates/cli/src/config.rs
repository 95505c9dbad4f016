use std::path::Path;

use vidpose_core::depth_align::AlignConfig;
use vidpose_core::io::{intrinsics_from_kv, KeyValues};
use vidpose_core::pipeline::{CameraInit, ExportOptions};
use vidpose_core::sim::{TrackSampling, TrajectoryKind};
use vidpose_core::{CameraModel, Error, PipelineConfig, Result, SimConfig};

/// Every key a run config may contain.
pub const KEYS: &[&str] = &[
    "camera.model",
    "camera.f",
    "camera.alpha",
    "camera.width",
    "camera.height",
    "camera.fov",
    "camera.init_scale",
    "keyframe.threshold",
    "window.size",
    "window.covisibility",
    "window.radius",
    "rig.covisibility",
    "terms.dense",
    "terms.sparse",
    "terms.depth_reg",
    "terms.mask",
    "energy.alpha_reg",
    "energy.huber",
    "solver.frontend_iters",
    "solver.backend_iters",
    "solver.lambda",
    "solver.step_tolerance",
    "backend.schedule",
    "backend.refresh_rounds",
    "tracks.enabled",
    "align.tau_px",
    "align.tau_rel",
    "align.tau_lo",
    "align.tau_hi",
    "align.momentum",
    "dataset.dir",
    "sim.frames",
    "sim.width",
    "sim.height",
    "sim.fov",
    "sim.model",
    "sim.alpha",
    "sim.seed",
    "sim.trajectory",
    "sim.dynamic",
    "sim.flow_noise",
    "sim.track_noise",
    "sim.prior_noise",
    "sim.tracks_per_pair",
    "sim.track_sampling",
    "sim.rig",
    "sim.baseline",
    "export.max_gap",
    "export.images",
];

/// Simulated camera arrangement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimRig {
    Mono,
    /// Two forward cameras separated along x.
    Stereo(f64),
    Cube,
}

/// Parsed and validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub camera: CameraInit,
    /// Multiplies the starting focal; lets a run start from a wrong guess.
    pub init_scale: f64,
    pub pipeline: PipelineConfig,
    pub align: AlignConfig,
    pub dataset_dir: Option<std::path::PathBuf>,
    pub sim: SimConfig,
    pub sim_rig: SimRig,
    pub export: ExportOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            camera: CameraInit::default(),
            init_scale: 1.0,
            pipeline: PipelineConfig::default(),
            align: AlignConfig::default(),
            dataset_dir: None,
            sim: SimConfig::default(),
            sim_rig: SimRig::Mono,
            export: ExportOptions::default(),
        }
    }
}

fn set<T: std::str::FromStr>(kv: &KeyValues, key: &str, slot: &mut T) -> Result<()> {
    if let Some(v) = kv.get(key)? {
        *slot = v;
    }
    Ok(())
}

fn set_bool(kv: &KeyValues, key: &str, slot: &mut bool) -> Result<()> {
    if let Some(v) = kv.get_bool(key)? {
        *slot = v;
    }
    Ok(())
}

fn enum_value<T>(
    kv: &KeyValues,
    key: &str,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Option<T>> {
    match kv.raw(key) {
        None => Ok(None),
        Some(s) => parse(s)
            .map(Some)
            .ok_or_else(|| Error::Config(format!("invalid value {s:?} for {key}"))),
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Self::from_kv(&KeyValues::load(path)?)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_kv(&KeyValues::parse(text, Path::new("<config>"))?)
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        kv.check_known(KEYS)?;
        let mut c = Self::default();

        let (k, res) = intrinsics_from_kv(kv)?;
        c.camera.intrinsics = k;
        c.camera.resolution = res;
        set(kv, "camera.fov", &mut c.camera.fov_deg)?;
        set(kv, "camera.init_scale", &mut c.init_scale)?;

        let p = &mut c.pipeline;
        set(kv, "keyframe.threshold", &mut p.keyframe_threshold)?;
        set(kv, "window.size", &mut p.window.window_size)?;
        set(kv, "window.covisibility", &mut p.window.covis_threshold)?;
        set(kv, "window.radius", &mut p.window.temporal_radius)?;
        set(kv, "rig.covisibility", &mut p.rig_covisibility)?;
        let mut sw = p.frontend.energy.switches;
        set_bool(kv, "terms.dense", &mut sw.dense)?;
        set_bool(kv, "terms.sparse", &mut sw.sparse)?;
        set_bool(kv, "terms.depth_reg", &mut sw.depth_reg)?;
        set_bool(kv, "terms.mask", &mut sw.mask)?;
        p.set_switches(sw);
        for s in [&mut p.frontend, &mut p.backend] {
            set(kv, "energy.alpha_reg", &mut s.energy.alpha_reg)?;
            if let Some(h) = kv.get::<f64>("energy.huber")? {
                s.energy.huber = (h > 0.0).then_some(h);
            }
            set(kv, "solver.lambda", &mut s.lambda)?;
            set(kv, "solver.step_tolerance", &mut s.step_tolerance)?;
        }
        set(kv, "solver.frontend_iters", &mut p.frontend.max_iters)?;
        set(kv, "solver.backend_iters", &mut p.backend.max_iters)?;
        if let Some(s) = kv.raw("backend.schedule") {
            p.backend_schedule = s
                .split(',')
                .map(|x| x.trim())
                .filter(|x| !x.is_empty())
                .map(|x| x.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("invalid backend.schedule {s:?}")))?;
        }
        set(kv, "backend.refresh_rounds", &mut p.refresh_rounds)?;
        set_bool(kv, "tracks.enabled", &mut p.use_tracks)?;

        let a = &mut c.align;
        set(kv, "align.tau_px", &mut a.tau_px)?;
        set(kv, "align.tau_rel", &mut a.tau_rel)?;
        set(kv, "align.tau_lo", &mut a.tau_lo)?;
        set(kv, "align.tau_hi", &mut a.tau_hi)?;
        set(kv, "align.momentum", &mut a.momentum)?;

        c.dataset_dir = kv.raw("dataset.dir").map(Into::into);

        let s = &mut c.sim;
        set(kv, "sim.frames", &mut s.n_frames)?;
        set(kv, "sim.width", &mut s.width)?;
        set(kv, "sim.height", &mut s.height)?;
        set(kv, "sim.fov", &mut s.fov_deg)?;
        if let Some(m) = enum_value(kv, "sim.model", CameraModel::parse)? {
            s.model = m;
        }
        set(kv, "sim.alpha", &mut s.alpha)?;
        set(kv, "sim.seed", &mut s.seed)?;
        if let Some(t) = enum_value(kv, "sim.trajectory", TrajectoryKind::parse)? {
            s.trajectory = t;
        }
        set_bool(kv, "sim.dynamic", &mut s.dynamic)?;
        set(kv, "sim.flow_noise", &mut s.flow_noise)?;
        set(kv, "sim.track_noise", &mut s.track_noise)?;
        set(kv, "sim.prior_noise", &mut s.prior_noise)?;
        set(kv, "sim.tracks_per_pair", &mut s.tracks_per_pair)?;
        if let Some(t) = enum_value(kv, "sim.track_sampling", |v| match v {
            "grid" => Some(TrackSampling::GridAligned),
            "uniform" => Some(TrackSampling::Uniform),
            _ => None,
        })? {
            s.track_sampling = t;
        }
        let baseline = kv.get::<f64>("sim.baseline")?.unwrap_or(0.1);
        if let Some(r) = enum_value(kv, "sim.rig", |v| match v {
            "mono" => Some(SimRig::Mono),
            "stereo" => Some(SimRig::Stereo(baseline)),
            "cube" => Some(SimRig::Cube),
            _ => None,
        })? {
            c.sim_rig = r;
        }
        set(kv, "export.max_gap", &mut c.export.max_gap)?;
        set_bool(kv, "export.images", &mut c.export.images)?;

        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.align.validate()?;
        if !(self.init_scale > 0.0) || !self.init_scale.is_finite() {
            return Err(Error::Config("camera.init_scale must be positive".into()));
        }
        if !(self.camera.fov_deg > 0.0 && self.camera.fov_deg < 180.0) {
            return Err(Error::Config("camera.fov must lie in (0, 180)".into()));
        }
        let s = &self.sim;
        if s.n_frames == 0 || s.width == 0 || s.height == 0 {
            return Err(Error::Config(
                "simulated video needs frames and a resolution".into(),
            ));
        }
        if [s.flow_noise, s.track_noise, s.prior_noise]
            .iter()
            .any(|&x| !(x >= 0.0))
        {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        if let SimRig::Stereo(b) = self.sim_rig {
            if !b.is_finite() {
                return Err(Error::Config("sim.baseline must be finite".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_all_defaults() {
        let c = RunConfig::parse("# nothing\n").unwrap();
        assert_eq!(c.pipeline, PipelineConfig::default());
        assert_eq!(c.sim, SimConfig::default());
        assert!(c.camera.intrinsics.is_none());
    }

    #[test]
    fn unknown_key_is_rejected_with_line() {
        let err = RunConfig::parse("sim.frames = 10\nsolver.typo = 3\n").unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 2);
                assert!(message.contains("solver.typo"));
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn values_reach_their_fields() {
        let c = RunConfig::parse(
            "camera.f = 500\ncamera.width = 640\ncamera.height = 480\nterms.sparse = false\n\
             backend.schedule = 4, 9\nsim.trajectory = palindromic\nsim.rig = stereo\nsim.baseline = 0.2\n",
        )
        .unwrap();
        assert_eq!(c.camera.intrinsics.unwrap().f, 500.0);
        assert!(!c.pipeline.frontend.energy.switches.sparse);
        assert!(!c.pipeline.backend.energy.switches.sparse);
        assert_eq!(c.pipeline.backend_schedule, vec![4, 9]);
        assert_eq!(c.sim.trajectory, TrajectoryKind::Palindromic);
        assert_eq!(c.sim_rig, SimRig::Stereo(0.2));
    }

    #[test]
    fn invalid_values_fail_validation() {
        assert!(RunConfig::parse("window.covisibility = 1.5\n").is_err());
        assert!(RunConfig::parse("sim.model = fisheye\n").is_err());
        assert!(RunConfig::parse("sim.flow_noise = -1\n").is_err());
        assert!(RunConfig::parse("terms.dense = maybe\n").is_err());
        assert!(RunConfig::parse("camera.f = 300\n").is_err());
    }
}
