use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::Matrix4;
use rayon::prelude::*;

use super::{data_lines, optional_intrinsics, parse_floats, read_depth_png, Frame, Sequence};
use crate::error::{Error, Result};
use crate::geom::Pose;

/// Counts per meter in the common Replica depth distribution.
pub const REPLICA_DEPTH_FACTOR: f64 = 6553.5;

const ORTHONORMAL_TOL: f64 = 1e-3;

fn depth_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let results = dir.join("results");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&results)
        .map_err(|e| Error::io(&results, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.starts_with("depth") && name.ends_with(".png")
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Reads `traj.txt` (one row-major camera-to-world 4×4 per line) and the
/// `results/depth*.png` frames. Timestamps are frame indices.
pub fn load_replica_sequence(dir: &Path, depth_factor: f64) -> Result<Sequence> {
    let traj = dir.join("traj.txt");
    let text = std::fs::read_to_string(&traj).map_err(|e| Error::io(&traj, e))?;
    let mut poses = Vec::new();
    for (line, l) in data_lines(&text) {
        let v = parse_floats(&traj, line, l, 16)?;
        let m = Matrix4::from_row_slice(&v);
        let c2w = Pose::from_matrix(&m, ORTHONORMAL_TOL).map_err(|e| Error::parse(&traj, line, e.to_string()))?;
        poses.push(c2w.inverse()?);
    }
    let files = depth_files(dir)?;
    if files.len() != poses.len() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            message: format!("{} depth frames but {} trajectory rows", files.len(), poses.len()),
        });
    }
    let frames = files
        .par_iter()
        .zip(poses.par_iter())
        .enumerate()
        .map(|(i, (f, pose))| {
            Ok(Frame {
                timestamp: i as f64,
                depth: read_depth_png(f, depth_factor)?,
                gt: Some(*pose),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Sequence {
        frames,
        intrinsics: optional_intrinsics(dir)?,
        dropped: 0,
    })
}

/// Writes world-to-camera poses as camera-to-world matrix rows.
pub fn write_replica_trajectory(path: &Path, poses: &[Pose]) -> Result<()> {
    let mut s = String::new();
    for p in poses {
        let m = p.inverse()?.to_matrix()?;
        let row: Vec<String> = (0..4)
            .flat_map(|r| (0..4).map(move |c| (r, c)))
            .map(|(r, c)| format!("{:e}", m[(r, c)]))
            .collect();
        writeln!(s, "{}", row.join(" ")).expect("write to string");
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::write_depth_png;
    use crate::geom::Quaternion;
    use crate::image::{DepthImage, Image};
    use nalgebra::Vector3;

    fn layout(dir: &Path, traj: &str, n: usize) {
        std::fs::create_dir_all(dir.join("results")).unwrap();
        std::fs::write(dir.join("traj.txt"), traj).unwrap();
        let d = DepthImage::from_depth(Image::filled(3, 2, 2.0));
        for i in 0..n {
            write_depth_png(&dir.join(format!("results/depth{i:06}.png")), &d, REPLICA_DEPTH_FACTOR).unwrap();
        }
    }

    #[test]
    fn identity_line() {
        let dir = tempfile::tempdir().unwrap();
        layout(dir.path(), "1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1\n", 1);
        let s = load_replica_sequence(dir.path(), REPLICA_DEPTH_FACTOR).unwrap();
        assert_eq!(s.frames[0].gt, Some(Pose::identity()));
        assert!((s.frames[0].depth.depth.get(0, 0) - 2.0).abs() < 1e-4);
    }

    #[test]
    fn write_read_round_trip() {
        let poses: Vec<Pose> = (0..5)
            .map(|i| {
                Pose::new(
                    Quaternion::from_axis_angle(&Vector3::new(1.0, i as f64, 0.5), 0.3 * i as f64).unwrap(),
                    Vector3::new(i as f64, -0.5, 2.0),
                )
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        layout(dir.path(), "", 5);
        write_replica_trajectory(&dir.path().join("traj.txt"), &poses).unwrap();
        let s = load_replica_sequence(dir.path(), REPLICA_DEPTH_FACTOR).unwrap();
        for (a, f) in poses.iter().zip(&s.frames) {
            let (ang, tr) = a.distance(&f.gt.unwrap()).unwrap();
            assert!(ang < 1e-9 && tr < 1e-9);
        }
    }

    #[test]
    fn non_orthonormal_block_rejected() {
        let dir = tempfile::tempdir().unwrap();
        layout(
            dir.path(),
            "1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1\n1.01 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1\n",
            2,
        );
        assert!(matches!(
            load_replica_sequence(dir.path(), REPLICA_DEPTH_FACTOR),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn frame_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        layout(dir.path(), "1 0 0 0 0 1 0 0 0 0 1 0 0 0 0 1\n", 2);
        assert!(matches!(
            load_replica_sequence(dir.path(), REPLICA_DEPTH_FACTOR),
            Err(Error::Format { .. })
        ));
    }
}
