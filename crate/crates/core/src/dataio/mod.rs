//! Dataset ingestion, trajectory files and depth PNG decoding.

mod replica;
mod synth;
mod tum;

use std::fmt::Write as _;
use std::path::Path;

use image::{ImageBuffer, Luma};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Pose, Quaternion};
use crate::image::{DepthImage, Image};

pub use replica::{load_replica_sequence, write_replica_trajectory, REPLICA_DEPTH_FACTOR};
pub use synth::{look_at, synth_scene, write_synth_dataset, SynthOutput, SynthSpec, TrajectoryShape};
pub use tum::{load_tum_sequence, TUM_DEPTH_FACTOR};

/// Name of the optional intrinsics file read from dataset directories.
pub const INTRINSICS_FILE: &str = "intrinsics.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub depth: DepthImage,
    /// World-to-camera.
    pub gt: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub frames: Vec<Frame>,
    /// Read from the dataset directory when present.
    pub intrinsics: Option<CameraIntrinsics>,
    /// Depth entries dropped for lack of a ground-truth match.
    pub dropped: usize,
}

impl Sequence {
    pub fn gt_poses(&self) -> Option<Vec<Pose>> {
        self.frames.iter().map(|f| f.gt).collect()
    }

    pub fn trajectory(&self) -> Option<Vec<TrajectoryEntry>> {
        self.frames
            .iter()
            .map(|f| {
                f.gt.map(|pose| TrajectoryEntry {
                    timestamp: f.timestamp,
                    pose,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub tum_depth_factor: f64,
    pub replica_depth_factor: f64,
    pub assoc_max_dt: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            tum_depth_factor: TUM_DEPTH_FACTOR,
            replica_depth_factor: REPLICA_DEPTH_FACTOR,
            assoc_max_dt: 0.02,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.tum_depth_factor, self.replica_depth_factor]
            .iter()
            .all(|f| *f > 0.0 && f.is_finite())
            && self.assoc_max_dt >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid dataset config {self:?}")))
        }
    }
}

/// Decodes a 16-bit grayscale PNG; counts of 0 are invalid.
pub fn read_depth_png(path: &Path, factor: f64) -> Result<DepthImage> {
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Format {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    })?;
    let img = match img {
        image::DynamicImage::ImageLuma16(b) => b,
        other => {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("expected 16-bit grayscale, got {:?}", other.color()),
            })
        }
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().into_iter().map(|c| c as f64 / factor).collect();
    let depth = Image::from_vec(w, h, data)?;
    Ok(DepthImage::from_depth(depth))
}

/// Encodes depth as 16-bit counts; invalid pixels are written as 0.
pub fn write_depth_png(path: &Path, depth: &DepthImage, factor: f64) -> Result<()> {
    let (w, h) = (depth.width(), depth.height());
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, h as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        if !depth.valid.get(x, y) {
            return Luma([0]);
        }
        let c = (depth.depth.get(x, y) * factor).round();
        Luma([c.clamp(0.0, 65535.0) as u16])
    });
    buf.save(path).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let k: CameraIntrinsics = serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    k.validate()?;
    Ok(k)
}

pub fn write_intrinsics(path: &Path, k: &CameraIntrinsics) -> Result<()> {
    let json = serde_json::to_string_pretty(k).expect("intrinsics serialize");
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

/// `dir/intrinsics.json` if present.
pub fn optional_intrinsics(dir: &Path) -> Result<Option<CameraIntrinsics>> {
    let p = dir.join(INTRINSICS_FILE);
    if p.exists() {
        read_intrinsics(&p).map(Some)
    } else {
        Ok(None)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryEntry {
    pub timestamp: f64,
    /// World-to-camera.
    pub pose: Pose,
}

/// Non-empty, non-comment lines with their 1-based line numbers.
pub(crate) fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub(crate) fn parse_floats(path: &Path, line: usize, text: &str, n: usize) -> Result<Vec<f64>> {
    let vals = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::parse(path, line, format!("not a number: {t:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if vals.len() != n {
        return Err(Error::parse(path, line, format!("expected {n} fields, found {}", vals.len())));
    }
    if let Some(v) = vals.iter().find(|v| !v.is_finite()) {
        return Err(Error::parse(path, line, format!("non-finite value {v}")));
    }
    Ok(vals)
}

/// Parses `timestamp tx ty tz qx qy qz qw` (camera-to-world) into a
/// world-to-camera entry.
pub(crate) fn parse_tum_pose(path: &Path, line: usize, text: &str) -> Result<TrajectoryEntry> {
    let v = parse_floats(path, line, text, 8)?;
    let q = Quaternion::new(v[7], v[4], v[5], v[6])
        .normalize()
        .map_err(|e| Error::parse(path, line, e.to_string()))?;
    let cam_to_world = Pose::new(q, Vector3::new(v[1], v[2], v[3]));
    let pose = cam_to_world
        .inverse()
        .map_err(|e| Error::parse(path, line, e.to_string()))?;
    Ok(TrajectoryEntry { timestamp: v[0], pose })
}

fn check_increasing(path: &Path, entries: &[(usize, f64)]) -> Result<()> {
    for w in entries.windows(2) {
        if w[1].1 <= w[0].1 {
            return Err(Error::parse(path, w[1].0, "timestamps must be strictly increasing"));
        }
    }
    Ok(())
}

pub fn read_trajectory_tum(path: &Path) -> Result<Vec<TrajectoryEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    let mut stamps = Vec::new();
    for (line, l) in data_lines(&text) {
        let e = parse_tum_pose(path, line, l)?;
        stamps.push((line, e.timestamp));
        out.push(e);
    }
    check_increasing(path, &stamps)?;
    Ok(out)
}

pub fn format_trajectory_tum(entries: &[TrajectoryEntry]) -> Result<String> {
    let mut s = String::new();
    for e in entries {
        let c2w = e.pose.inverse()?;
        let mut q = c2w.rotation;
        if q.w < 0.0 {
            q = q.neg();
        }
        // no "-0.000000" in the output
        let clean = |v: f64| if v == 0.0 { 0.0 } else { v };
        let t = c2w.translation.map(clean);
        let q = Quaternion::new(clean(q.w), clean(q.x), clean(q.y), clean(q.z));
        writeln!(
            s,
            "{:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            e.timestamp, t.x, t.y, t.z, q.x, q.y, q.z, q.w
        )
        .expect("write to string");
    }
    Ok(s)
}

pub fn write_trajectory_tum(path: &Path, entries: &[TrajectoryEntry]) -> Result<()> {
    std::fs::write(path, format_trajectory_tum(entries)?).map_err(|e| Error::io(path, e))
}

/// One-to-one timestamp association within `max_dt`, closest pairs first.
/// Returns index pairs sorted by the first index. The result does not depend
/// on argument order when both lists are strictly increasing.
pub fn associate(a: &[f64], b: &[f64], max_dt: f64) -> Vec<(usize, usize)> {
    let mut cands = Vec::new();
    for (i, ta) in a.iter().enumerate() {
        let lo = b.partition_point(|tb| *tb < ta - max_dt);
        for (j, tb) in b.iter().enumerate().skip(lo) {
            let dt = (ta - tb).abs();
            if *tb > ta + max_dt {
                break;
            }
            if dt <= max_dt {
                cands.push((dt, ta + tb, i, j));
            }
        }
    }
    cands.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, _, i, j) in cands {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}
