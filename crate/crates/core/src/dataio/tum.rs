use std::path::Path;

use log::info;
use rayon::prelude::*;

use super::{associate, data_lines, optional_intrinsics, parse_tum_pose, read_depth_png, Frame, Sequence};
use crate::error::{Error, Result};

/// Counts per meter in TUM depth PNGs.
pub const TUM_DEPTH_FACTOR: f64 = 5000.0;

/// Loads `depth.txt` + `groundtruth.txt` from a TUM RGB-D sequence
/// directory. Depth frames without a ground-truth stamp within `max_dt` are
/// dropped and counted.
pub fn load_tum_sequence(dir: &Path, depth_factor: f64, max_dt: f64) -> Result<Sequence> {
    let depth_list = dir.join("depth.txt");
    let gt_file = dir.join("groundtruth.txt");
    let depth_text = std::fs::read_to_string(&depth_list).map_err(|e| Error::io(&depth_list, e))?;
    let gt_text = std::fs::read_to_string(&gt_file).map_err(|e| Error::io(&gt_file, e))?;

    let mut depth_entries = Vec::new();
    for (line, l) in data_lines(&depth_text) {
        let mut it = l.split_whitespace();
        let (Some(ts), Some(name), None) = (it.next(), it.next(), it.next()) else {
            return Err(Error::parse(&depth_list, line, "expected `timestamp filename`"));
        };
        let ts: f64 = ts
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite())
            .ok_or_else(|| Error::parse(&depth_list, line, format!("bad timestamp {ts:?}")))?;
        if depth_entries.last().is_some_and(|(_, prev, _)| *prev >= ts) {
            return Err(Error::parse(&depth_list, line, "timestamps must be strictly increasing"));
        }
        depth_entries.push((line, ts, name.to_string()));
    }
    let mut gt = Vec::new();
    for (line, l) in data_lines(&gt_text) {
        let e = parse_tum_pose(&gt_file, line, l)?;
        if gt.last().is_some_and(|p: &super::TrajectoryEntry| p.timestamp >= e.timestamp) {
            return Err(Error::parse(&gt_file, line, "timestamps must be strictly increasing"));
        }
        gt.push(e);
    }

    let stamps: Vec<f64> = depth_entries.iter().map(|d| d.1).collect();
    let gt_stamps: Vec<f64> = gt.iter().map(|g| g.timestamp).collect();
    let pairs = associate(&stamps, &gt_stamps, max_dt);
    let dropped = depth_entries.len() - pairs.len();
    if dropped > 0 {
        info!("{}: {dropped} depth frames without ground truth dropped", dir.display());
    }
    let frames = pairs
        .par_iter()
        .map(|&(i, j)| {
            let depth = read_depth_png(&dir.join(&depth_entries[i].2), depth_factor)?;
            Ok(Frame {
                timestamp: depth_entries[i].1,
                depth,
                gt: Some(gt[j].pose),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sequence {
        frames,
        intrinsics: optional_intrinsics(dir)?,
        dropped,
    })
}
