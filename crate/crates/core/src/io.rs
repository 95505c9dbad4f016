//! On-disk formats: binary tensors, PGM masks, TUM trajectories, track and match
//! lists, and `key = value` configuration files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Quaternion, UnitQuaternion, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{CameraModel, Intrinsics, Pose};
use crate::grid::{FlowField, Grid, Mask};
use crate::metrics::{CorrespondenceSet, FramePairMatches, Trajectory};
use crate::residuals::Track;

const TENSOR_MAGIC: &[u8; 4] = b"VPE1";

/// A row-major, channel-interleaved float32 tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn at(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Single-channel tensor from a grid; non-finite values become NaN.
    pub fn from_grid(g: &Grid<f64>) -> Self {
        Self {
            height: g.height(),
            width: g.width(),
            channels: 1,
            data: g
                .iter()
                .map(|v| if v.is_finite() { *v as f32 } else { f32::NAN })
                .collect(),
        }
    }

    pub fn to_grid(&self) -> Result<Grid<f64>> {
        self.expect_channels(1)?;
        Ok(Grid::from_vec(
            self.width,
            self.height,
            self.data.iter().map(|v| *v as f64).collect(),
        ))
    }

    /// Flow as three channels `(u, v, weight)`.
    pub fn from_flow(f: &FlowField) -> Self {
        let mut data = Vec::with_capacity(f.flow.len() * 3);
        for (v, w) in f.flow.iter().zip(f.weight.iter()) {
            data.extend([v.x as f32, v.y as f32, *w as f32]);
        }
        Self {
            height: f.height(),
            width: f.width(),
            channels: 3,
            data,
        }
    }

    pub fn to_flow(&self) -> Result<FlowField> {
        self.expect_channels(3)?;
        let px = |i: usize| &self.data[3 * i..3 * i + 3];
        let n = self.width * self.height;
        Ok(FlowField {
            flow: Grid::from_vec(
                self.width,
                self.height,
                (0..n)
                    .map(|i| Vector2::new(px(i)[0] as f64, px(i)[1] as f64))
                    .collect(),
            ),
            weight: Grid::from_vec(
                self.width,
                self.height,
                (0..n).map(|i| px(i)[2] as f64).collect(),
            ),
        })
    }

    fn expect_channels(&self, c: usize) -> Result<()> {
        if self.channels != c {
            return Err(Error::InvalidInput(format!(
                "expected a {c}-channel tensor, got {}",
                self.channels
            )));
        }
        Ok(())
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * t.data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    for d in [t.height, t.width, t.channels] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in &t.data {
        // Canonical quiet NaN keeps files byte-stable.
        let v = if v.is_nan() { f32::NAN } else { *v };
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let bad = |message: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: message.to_string(),
    };
    if bytes.len() < 16 || &bytes[..4] != TENSOR_MAGIC {
        return Err(bad("missing VPE1 header"));
    }
    let dim =
        |k: usize| u32::from_le_bytes(bytes[4 + 4 * k..8 + 4 * k].try_into().unwrap()) as usize;
    let (height, width, channels) = (dim(0), dim(1), dim(2));
    let n = height
        .checked_mul(width)
        .and_then(|v| v.checked_mul(channels))
        .ok_or_else(|| bad("tensor dimensions overflow"))?;
    if bytes.len() != 16 + 4 * n {
        return Err(bad(&format!(
            "payload has {} bytes, expected {}",
            bytes.len() - 16,
            4 * n
        )));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor {
        height,
        width,
        channels,
        data,
    })
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    write_bytes(path, &encode_tensor(t))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    decode_tensor(&read_bytes(path)?, path)
}

/// Binary PGM, 255 for static pixels and 0 for dynamic ones.
pub fn write_mask(path: &Path, m: &Mask) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", m.width(), m.height()).into_bytes();
    out.extend(m.iter().map(|s| if *s { 255u8 } else { 0 }));
    write_bytes(path, &out)
}

/// Reads a P5 PGM; any nonzero value counts as static.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let bytes = read_bytes(path)?;
    let bad = |message: &str| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: message.to_string(),
    };
    // Header: magic, width, height, maxval, separated by whitespace and comments.
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad PGM header number"));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit PGM is supported"));
    }
    if bytes.len() < pos + w * h {
        return Err(bad("truncated PGM payload"));
    }
    Ok(Grid::from_vec(
        w,
        h,
        bytes[pos..pos + w * h].iter().map(|v| *v != 0).collect(),
    ))
}

fn parse_fields<const N: usize>(path: &Path, line_no: usize, line: &str) -> Result<[f64; N]> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != N {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message: format!("expected {N} fields, found {}", parts.len()),
        });
    }
    let mut out = [0.0; N];
    for (o, p) in out.iter_mut().zip(parts) {
        *o = p
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("not a finite number: {p:?}"),
            })?;
    }
    Ok(out)
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

fn as_index(path: &Path, line: usize, v: f64) -> Result<usize> {
    if v < 0.0 || v.fract() != 0.0 {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line,
            message: format!("frame index {v} is not a non-negative integer"),
        });
    }
    Ok(v as usize)
}

/// TUM lines `timestamp tx ty tz qx qy qz qw`.
pub fn format_tum(t: &Trajectory) -> String {
    let mut s = String::new();
    for (ts, p) in t.timestamps.iter().zip(&t.poses) {
        let q = p.rotation.quaternion();
        let c = p.translation;
        writeln!(
            s,
            "{ts:.6} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9} {:.9}",
            c.x, c.y, c.z, q.i, q.j, q.k, q.w
        )
        .unwrap();
    }
    s
}

pub fn parse_tum(text: &str, path: &Path) -> Result<Trajectory> {
    let mut ts = Vec::new();
    let mut poses = Vec::new();
    for (line, l) in data_lines(text) {
        let [t, x, y, z, qx, qy, qz, qw] = parse_fields::<8>(path, line, l)?;
        let q = Quaternion::new(qw, qx, qy, qz);
        if q.norm() < 1e-9 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line,
                message: "zero quaternion".into(),
            });
        }
        ts.push(t);
        poses.push(Pose::new(
            UnitQuaternion::from_quaternion(q),
            Vector3::new(x, y, z),
        ));
    }
    Trajectory::new(ts, poses)
}

pub fn write_tum(path: &Path, t: &Trajectory) -> Result<()> {
    write_bytes(path, format_tum(t).as_bytes())
}

pub fn read_tum(path: &Path) -> Result<Trajectory> {
    parse_tum(&read_text(path)?, path)
}

/// Track lines `frame_i u_i v_i frame_j u_j v_j conf`.
pub fn format_tracks(tracks: &[Track]) -> String {
    let mut s = String::new();
    for t in tracks {
        writeln!(
            s,
            "{} {:.6} {:.6} {} {:.6} {:.6} {:.6}",
            t.frame_i, t.p_i.x, t.p_i.y, t.frame_j, t.p_j.x, t.p_j.y, t.confidence
        )
        .unwrap();
    }
    s
}

pub fn parse_tracks(text: &str, path: &Path) -> Result<Vec<Track>> {
    data_lines(text)
        .map(|(line, l)| {
            let [fi, ui, vi, fj, uj, vj, c] = parse_fields::<7>(path, line, l)?;
            Ok(Track {
                frame_i: as_index(path, line, fi)?,
                p_i: Vector2::new(ui, vi),
                frame_j: as_index(path, line, fj)?,
                p_j: Vector2::new(uj, vj),
                confidence: c,
            })
        })
        .collect()
}

pub fn write_tracks(path: &Path, tracks: &[Track]) -> Result<()> {
    write_bytes(path, format_tracks(tracks).as_bytes())
}

pub fn read_tracks(path: &Path) -> Result<Vec<Track>> {
    parse_tracks(&read_text(path)?, path)
}

/// Match lines `frame_i frame_j u_i v_i u_j v_j`, grouped by frame pair in order of appearance.
pub fn format_matches(set: &CorrespondenceSet) -> String {
    let mut s = String::new();
    for m in &set.pairs {
        for (a, b) in &m.points {
            writeln!(
                s,
                "{} {} {:.9} {:.9} {:.9} {:.9}",
                m.i, m.j, a.x, a.y, b.x, b.y
            )
            .unwrap();
        }
    }
    s
}

pub fn parse_matches(text: &str, path: &Path) -> Result<CorrespondenceSet> {
    let mut pairs: Vec<FramePairMatches> = Vec::new();
    for (line, l) in data_lines(text) {
        let [fi, fj, ui, vi, uj, vj] = parse_fields::<6>(path, line, l)?;
        let (i, j) = (as_index(path, line, fi)?, as_index(path, line, fj)?);
        let pt = (Vector2::new(ui, vi), Vector2::new(uj, vj));
        match pairs.iter_mut().find(|m| m.i == i && m.j == j) {
            Some(m) => m.points.push(pt),
            None => pairs.push(FramePairMatches {
                i,
                j,
                points: vec![pt],
            }),
        }
    }
    Ok(CorrespondenceSet { pairs })
}

pub fn read_matches(path: &Path) -> Result<CorrespondenceSet> {
    parse_matches(&read_text(path)?, path)
}

/// Groups tracks into per-pair matches, keeping file order.
pub fn tracks_to_matches(tracks: &[Track]) -> CorrespondenceSet {
    let mut pairs: Vec<FramePairMatches> = Vec::new();
    for t in tracks {
        let pt = (t.p_i, t.p_j);
        match pairs
            .iter_mut()
            .find(|m| m.i == t.frame_i && m.j == t.frame_j)
        {
            Some(m) => m.points.push(pt),
            None => pairs.push(FramePairMatches {
                i: t.frame_i,
                j: t.frame_j,
                points: vec![pt],
            }),
        }
    }
    CorrespondenceSet { pairs }
}

/// Reads either a matches file (6 fields per line) or a tracks file (7 fields).
pub fn read_correspondences(path: &Path) -> Result<CorrespondenceSet> {
    let text = read_text(path)?;
    let fields = data_lines(&text)
        .next()
        .map(|(_, l)| l.split_whitespace().count());
    if fields == Some(7) {
        Ok(tracks_to_matches(&parse_tracks(&text, path)?))
    } else {
        parse_matches(&text, path)
    }
}

/// ASCII PLY point cloud.
pub fn write_ply(path: &Path, points: &[Vector3<f64>]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (|| -> std::io::Result<()> {
        write!(
            w,
            "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
            points.len()
        )?;
        for p in points {
            writeln!(w, "{} {} {}", p.x as f32, p.y as f32, p.z as f32)?;
        }
        w.flush()
    })();
    res.map_err(|e| Error::io(path, e))
}

/// Parsed `key = value` file. Keys keep their line numbers for error reporting.
#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    path: PathBuf,
    entries: BTreeMap<String, (String, usize)>,
}

impl KeyValues {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (line, raw) in text.lines().enumerate() {
            let line = line + 1;
            let l = raw.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            let Some((k, v)) = l.split_once('=') else {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: "expected `key = value`".into(),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty()
                || entries
                    .insert(k.to_string(), (v.to_string(), line))
                    .is_some()
            {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("empty or duplicate key {k:?}"),
                });
            }
        }
        Ok(Self {
            path: path.to_path_buf(),
            entries,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_text(path)?, path)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|(v, _)| v.as_str())
    }

    /// Rejects any key not in `allowed`.
    pub fn check_known(&self, allowed: &[&str]) -> Result<()> {
        for (k, (_, line)) in &self.entries {
            if !allowed.contains(&k.as_str()) {
                return Err(Error::Parse {
                    path: self.path.clone(),
                    line: *line,
                    message: format!("unknown key {k:?}"),
                });
            }
        }
        Ok(())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        let Some((v, line)) = self.entries.get(key) else {
            return Ok(None);
        };
        v.parse::<T>().map(Some).map_err(|_| Error::Parse {
            path: self.path.clone(),
            line: *line,
            message: format!("invalid value {v:?} for {key}"),
        })
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        let Some((v, line)) = self.entries.get(key) else {
            return Ok(None);
        };
        match v.as_str() {
            "true" | "1" | "yes" | "on" => Ok(Some(true)),
            "false" | "0" | "no" | "off" => Ok(Some(false)),
            _ => Err(Error::Parse {
                path: self.path.clone(),
                line: *line,
                message: format!("invalid boolean {v:?} for {key}"),
            }),
        }
    }
}

pub const CAMERA_KEYS: [&str; 5] = [
    "camera.model",
    "camera.f",
    "camera.alpha",
    "camera.width",
    "camera.height",
];

pub fn format_intrinsics(k: &Intrinsics) -> String {
    format!(
        "camera.model = {}\ncamera.f = {}\ncamera.alpha = {}\ncamera.width = {}\ncamera.height = {}\n",
        k.model.name(),
        k.f,
        k.alpha,
        k.width,
        k.height
    )
}

/// Camera section of a config. `None` when no focal is given; resolution is then
/// returned separately for the field-of-view fallback.
pub fn intrinsics_from_kv(kv: &KeyValues) -> Result<(Option<Intrinsics>, Option<(u32, u32)>)> {
    let model = match kv.raw("camera.model") {
        None => CameraModel::Pinhole,
        Some(s) => CameraModel::parse(s)
            .ok_or_else(|| Error::Config(format!("unknown camera model {s:?}")))?,
    };
    let res = match (
        kv.get::<u32>("camera.width")?,
        kv.get::<u32>("camera.height")?,
    ) {
        (Some(w), Some(h)) => Some((w, h)),
        (None, None) => None,
        _ => {
            return Err(Error::Config(
                "camera.width and camera.height go together".into(),
            ))
        }
    };
    let Some(f) = kv.get::<f64>("camera.f")? else {
        return Ok((None, res));
    };
    let (w, h) = res.ok_or(Error::MissingResolution)?;
    let k = match model {
        CameraModel::Pinhole => Intrinsics::pinhole(f, w, h),
        CameraModel::Unified => {
            Intrinsics::unified(f, kv.get::<f64>("camera.alpha")?.unwrap_or(0.0), w, h)
        }
    };
    k.validate()?;
    Ok((Some(k), res))
}

pub fn read_intrinsics(path: &Path) -> Result<Intrinsics> {
    let kv = KeyValues::load(path)?;
    kv.check_known(&CAMERA_KEYS)?;
    intrinsics_from_kv(&kv)?
        .0
        .ok_or_else(|| Error::Config(format!("{}: camera.f missing", path.display())))
}
