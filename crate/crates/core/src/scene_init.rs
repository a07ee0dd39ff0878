//! Scene construction from posed reference depth images.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Pose, Quaternion};
use crate::image::DepthImage;
use crate::knn::KdTree;
use crate::renderer::{Gaussian, GaussianScene};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self> {
        if let Some(i) = points.iter().position(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidArgument(format!("point {i} is not finite")));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let s: Vector3<f64> = self.points.iter().sum();
        Some(s / self.points.len() as f64)
    }

    fn as_arrays(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| [p.x, p.y, p.z]).collect()
    }

    fn tree(&self) -> Result<KdTree> {
        KdTree::build(&self.as_arrays())
    }
}

/// Lifts every valid pixel with depth in `(near, far)` to world coordinates.
pub fn backproject(depth: &DepthImage, k: &CameraIntrinsics, pose: &Pose) -> Result<PointCloud> {
    pose.validate()?;
    if depth.width() != k.width || depth.height() != k.height {
        return Err(Error::InvalidArgument(format!(
            "depth is {}x{}, intrinsics expect {}x{}",
            depth.width(),
            depth.height(),
            k.width,
            k.height
        )));
    }
    let inv = pose.inverse()?;
    let r = inv.rotation_matrix()?;
    let mut points = Vec::new();
    for v in 0..depth.height() {
        for u in 0..depth.width() {
            if !depth.valid.get(u, v) {
                continue;
            }
            let z = depth.depth.get(u, v);
            if z <= k.near || z >= k.far {
                continue;
            }
            let c = Vector3::new((u as f64 - k.cx) * z / k.fx, (v as f64 - k.cy) * z / k.fy, z);
            points.push(r * c + inv.translation);
        }
    }
    Ok(PointCloud { points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FilterReport {
    pub removed: usize,
    /// The cloud was too small to filter and was returned unchanged.
    pub passed_through: bool,
    pub threshold: f64,
}

/// Statistical outlier removal on the mean distance to the `k` nearest
/// neighbors.
pub fn filter_outliers(cloud: &PointCloud, k: usize, std_ratio: f64) -> Result<(PointCloud, FilterReport)> {
    if k == 0 || !(std_ratio >= 0.0) {
        return Err(Error::InvalidArgument("outlier filter needs k >= 1 and std_ratio >= 0".into()));
    }
    if cloud.len() <= k {
        warn!("outlier filter skipped: {} points, k = {k}", cloud.len());
        let report = FilterReport {
            removed: 0,
            passed_through: true,
            threshold: f64::INFINITY,
        };
        return Ok((cloud.clone(), report));
    }
    let tree = cloud.tree()?;
    let stat: Vec<f64> = cloud
        .points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let nn = tree.nearest(&[p.x, p.y, p.z], k, Some(i));
            nn.iter().map(|n| n.dist_sq.sqrt()).sum::<f64>() / nn.len() as f64
        })
        .collect();
    let n = stat.len() as f64;
    let mean = stat.iter().sum::<f64>() / n;
    let var = stat.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let threshold = mean + std_ratio * var.sqrt();
    let points: Vec<_> = cloud
        .points
        .iter()
        .zip(&stat)
        .filter(|(_, s)| **s <= threshold)
        .map(|(p, _)| *p)
        .collect();
    let report = FilterReport {
        removed: cloud.len() - points.len(),
        passed_through: false,
        threshold,
    };
    Ok((PointCloud { points }, report))
}

/// Per-point isotropic scale: RMS distance to the `k - 1` nearest other
/// points. Returns the scales and how many were clamped to `min_scale`.
pub fn knn_scales(cloud: &PointCloud, k: usize, min_scale: f64) -> Result<(Vec<f64>, usize)> {
    if k < 2 {
        return Err(Error::InvalidArgument("knn scale needs k >= 2".into()));
    }
    if !(min_scale > 0.0) {
        return Err(Error::InvalidArgument("min_scale must be positive".into()));
    }
    if cloud.len() <= k {
        return Err(Error::DegenerateCloud(format!(
            "{} points is too few for k = {k}",
            cloud.len()
        )));
    }
    let tree = cloud.tree()?;
    let raw: Vec<f64> = cloud
        .points
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let nn = tree.nearest(&[p.x, p.y, p.z], k - 1, Some(i));
            (nn.iter().map(|n| n.dist_sq).sum::<f64>() / nn.len() as f64).sqrt()
        })
        .collect();
    let clamped = raw.iter().filter(|s| **s < min_scale).count();
    if clamped > 0 {
        warn!("{clamped} scales clamped to {min_scale}");
    }
    Ok((raw.into_iter().map(|s| s.max(min_scale)).collect(), clamped))
}

/// Centers the cloud and rotates it onto its principal axes. The returned
/// pose maps original coordinates to normalized ones.
pub fn pca_normalize(cloud: &PointCloud) -> Result<(PointCloud, Pose)> {
    if cloud.len() < 3 {
        return Err(Error::DegenerateCloud(format!("{} points", cloud.len())));
    }
    let mean = cloud.mean().expect("non-empty");
    let mut cov = Matrix3::zeros();
    for p in &cloud.points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= cloud.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (lmax, lmin) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[2]]);
    if !(lmax > 0.0) || lmin / lmax < 1e-12 {
        return Err(Error::DegenerateCloud(format!(
            "covariance eigenvalues {lmax:e} .. {lmin:e}"
        )));
    }
    let mut r = Matrix3::zeros();
    for (row, &c) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(c).into_owned();
        let big = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
        if big < 0.0 {
            v = -v;
        }
        r.set_row(row, &v.transpose());
    }
    if r.determinant() < 0.0 {
        let last = -r.row(2);
        r.set_row(2, &last);
    }
    let points = cloud.points.iter().map(|p| r * (p - mean)).collect();
    let transform = Pose::new(Quaternion::from_rotation_matrix(&r), -(r * mean));
    Ok((PointCloud { points }, transform))
}

/// Replaces the points in each occupied voxel by their centroid. Output is
/// ordered by voxel coordinate.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel > 0.0) || !voxel.is_finite() {
        return Err(Error::InvalidArgument(format!("voxel size {voxel}")));
    }
    let mut cells: BTreeMap<[i64; 3], (Vector3<f64>, usize)> = BTreeMap::new();
    for p in &cloud.points {
        let key = [
            (p.x / voxel).floor() as i64,
            (p.y / voxel).floor() as i64,
            (p.z / voxel).floor() as i64,
        ];
        let e = cells.entry(key).or_insert((Vector3::zeros(), 0));
        e.0 += p;
        e.1 += 1;
    }
    Ok(PointCloud {
        points: cells.into_values().map(|(s, n)| s / n as f64).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneBuildConfig {
    pub filter_outliers: bool,
    pub outlier_k: usize,
    pub outlier_std_ratio: f64,
    /// Query size for scale estimation, counting the point itself.
    pub knn_k: usize,
    pub min_scale: f64,
    pub downsample: bool,
    pub voxel_size: f64,
    pub pca: bool,
    /// Use every `frame_stride`-th reference frame.
    pub frame_stride: usize,
}

impl Default for SceneBuildConfig {
    fn default() -> Self {
        Self {
            filter_outliers: true,
            outlier_k: 20,
            outlier_std_ratio: 2.0,
            knn_k: 4,
            min_scale: 1e-4,
            downsample: false,
            voxel_size: 0.01,
            pca: true,
            frame_stride: 1,
        }
    }
}

impl SceneBuildConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.outlier_k >= 1
            && self.outlier_std_ratio > 0.0
            && self.knn_k >= 2
            && self.min_scale > 0.0
            && self.voxel_size > 0.0
            && self.frame_stride >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid scene build config {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SceneBuildReport {
    pub frames_used: usize,
    pub raw_points: usize,
    pub filter: Option<FilterReport>,
    pub after_downsample: usize,
    pub gaussians: usize,
    pub clamped_scales: usize,
}

pub fn build_scene(
    frames: &[(DepthImage, Pose)],
    k: &CameraIntrinsics,
    cfg: &SceneBuildConfig,
) -> Result<(GaussianScene, SceneBuildReport)> {
    if frames.is_empty() {
        return Err(Error::InvalidArgument("no reference frames".into()));
    }
    cfg.validate()?;
    k.validate()?;
    let used: Vec<_> = frames.iter().step_by(cfg.frame_stride).collect();
    let clouds = used
        .par_iter()
        .map(|(d, p)| backproject(d, k, p))
        .collect::<Result<Vec<_>>>()?;
    let cloud = PointCloud {
        points: clouds.into_iter().flat_map(|c| c.points).collect(),
    };
    let raw_points = cloud.len();

    let (cloud, filter) = if cfg.filter_outliers {
        let (c, r) = filter_outliers(&cloud, cfg.outlier_k, cfg.outlier_std_ratio)?;
        (c, Some(r))
    } else {
        (cloud, None)
    };
    let cloud = if cfg.downsample {
        voxel_downsample(&cloud, cfg.voxel_size)?
    } else {
        cloud
    };
    let after_downsample = cloud.len();
    if cloud.is_empty() {
        return Err(Error::DegenerateCloud("no points survived".into()));
    }
    let (cloud, transform) = if cfg.pca {
        pca_normalize(&cloud)?
    } else {
        (cloud, Pose::identity())
    };
    let (scales, clamped_scales) = knn_scales(&cloud, cfg.knn_k, cfg.min_scale)?;
    let gaussians = cloud
        .points
        .iter()
        .zip(&scales)
        .map(|(p, s)| Gaussian::isotropic(*p, *s, 1.0))
        .collect::<Vec<_>>();
    let report = SceneBuildReport {
        frames_used: used.len(),
        raw_points,
        filter,
        after_downsample,
        gaussians: gaussians.len(),
        clamped_scales,
    };
    Ok((GaussianScene::new(gaussians, transform)?, report))
}

const MAGIC: &[u8; 8] = b"SPLATSCN";
const VERSION: u32 = 1;

pub fn save_scene(path: &Path, scene: &GaussianScene) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    let mut buf = Vec::with_capacity(20 + scene.len() * 88 + 56);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(scene.len() as u64).to_le_bytes());
    for g in scene.gaussians() {
        let q = g.rotation.to_array();
        let rec = [
            g.mean.x, g.mean.y, g.mean.z, g.scale.x, g.scale.y, g.scale.z, q[0], q[1], q[2], q[3],
            g.opacity,
        ];
        for v in rec {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in scene.world_transform().to_params() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf).map_err(io)?;
    w.flush().map_err(io)
}

pub fn load_scene(path: &Path) -> Result<GaussianScene> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let bad = |m: String| Error::Format {
        path: path.to_path_buf(),
        message: m,
    };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a scene file".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let expected = (count as u128) * 88 + 20 + 56;
    if bytes.len() as u128 != expected {
        return Err(bad(format!(
            "{} bytes, expected {expected} for {count} gaussians",
            bytes.len()
        )));
    }
    let f = |i: usize| f64::from_le_bytes(bytes[20 + 8 * i..28 + 8 * i].try_into().expect("8 bytes"));
    let count = count as usize;
    let gaussians = (0..count)
        .map(|g| {
            let b = g * 11;
            Gaussian {
                mean: Vector3::new(f(b), f(b + 1), f(b + 2)),
                scale: Vector3::new(f(b + 3), f(b + 4), f(b + 5)),
                rotation: Quaternion::new(f(b + 6), f(b + 7), f(b + 8), f(b + 9)),
                opacity: f(b + 10),
            }
        })
        .collect();
    let tail = count * 11;
    let transform = Pose::from_params(&std::array::from_fn(|i| f(tail + i)));
    GaussianScene::new(gaussians, transform).map_err(|e| bad(e.to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneSummary {
    pub version: u32,
    pub gaussians: usize,
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
    pub sigma_min: f64,
    pub sigma_median: f64,
    pub sigma_mean: f64,
    pub sigma_max: f64,
    /// `[qw, qx, qy, qz, tx, ty, tz]`, original world to scene frame.
    pub world_transform: [f64; 7],
}

pub fn summarize_scene(scene: &GaussianScene) -> SceneSummary {
    let (lo, hi) = scene.bounds();
    let mut s: Vec<f64> = scene.gaussians().iter().map(|g| g.scale.max()).collect();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let median = match n {
        0 => 0.0,
        _ if n % 2 == 1 => s[n / 2],
        _ => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    };
    SceneSummary {
        version: VERSION,
        gaussians: n,
        bounds_min: [lo.x, lo.y, lo.z],
        bounds_max: [hi.x, hi.y, hi.z],
        sigma_min: s.first().copied().unwrap_or(0.0),
        sigma_median: median,
        sigma_mean: if n > 0 { s.iter().sum::<f64>() / n as f64 } else { 0.0 },
        sigma_max: s.last().copied().unwrap_or(0.0),
        world_transform: scene.world_transform().to_params(),
    }
}

pub fn write_scene_summary(path: &Path, scene: &GaussianScene) -> Result<()> {
    let json = serde_json::to_string_pretty(&summarize_scene(scene)).expect("summary serializes");
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::project_point;
    use crate::image::Image;
    use proptest::prelude::*;

    fn lattice(n: usize, a: f64) -> PointCloud {
        let mut pts = Vec::new();
        for x in 0..n {
            for y in 0..n {
                for z in 0..n {
                    pts.push(Vector3::new(x as f64, y as f64, z as f64) * a);
                }
            }
        }
        PointCloud { points: pts }
    }

    fn cam() -> CameraIntrinsics {
        CameraIntrinsics::new(50.0, 50.0, 15.5, 11.5, 32, 24)
    }

    #[test]
    fn center_pixel_identity_pose() {
        let k = CameraIntrinsics::new(50.0, 50.0, 2.0, 2.0, 5, 5);
        let mut d = Image::zeros(5, 5);
        d.set(2, 2, 2.0);
        let c = backproject(&DepthImage::from_depth(d), &k, &Pose::identity()).unwrap();
        assert_eq!(c.points, vec![Vector3::new(0.0, 0.0, 2.0)]);
    }

    #[test]
    fn all_invalid_gives_empty_cloud() {
        let d = DepthImage::from_depth(Image::zeros(32, 24));
        assert!(backproject(&d, &cam(), &Pose::identity()).unwrap().is_empty());
    }

    #[test]
    fn backprojection_round_trips() {
        let k = cam();
        let pose = Pose::new(
            Quaternion::from_axis_angle(&Vector3::new(0.3, -1.0, 0.2), 0.7).unwrap(),
            Vector3::new(0.4, -0.2, 1.1),
        );
        let d = DepthImage::from_depth(Image::from_fn(32, 24, |x, y| 1.0 + 0.05 * x as f64 + 0.02 * y as f64));
        let c = backproject(&d, &k, &pose).unwrap();
        assert_eq!(c.len(), 32 * 24);
        for (i, p) in c.points.iter().enumerate() {
            let (u, v) = (i % 32, i / 32);
            let pr = project_point(p, &pose, &k).unwrap();
            assert!((pr.u - u as f64).abs() < 1e-6 && (pr.v - v as f64).abs() < 1e-6);
            assert!((pr.z - d.depth.get(u, v)).abs() < 1e-6);
        }
    }

    #[test]
    fn gross_outlier_removed() {
        let mut c = lattice(6, 0.1);
        c.points.push(Vector3::new(100.0, 0.0, 0.0));
        let (f, r) = filter_outliers(&c, 20, 2.0).unwrap();
        assert!(!f.points.contains(&Vector3::new(100.0, 0.0, 0.0)));
        assert!(r.removed >= 1 && !r.passed_through);
    }

    #[test]
    fn uniform_grid_mostly_retained() {
        // 20³ keeps 7776 of 8000 by an independent scipy computation
        let c = lattice(20, 0.05);
        let (f, _) = filter_outliers(&c, 20, 2.0).unwrap();
        assert_eq!(f.len(), 7776);
        assert!(f.len() as f64 >= 0.97 * c.len() as f64, "{} of {}", f.len(), c.len());
    }

    #[test]
    fn small_cloud_passes_through() {
        let c = lattice(2, 1.0);
        let (f, r) = filter_outliers(&c, 20, 2.0).unwrap();
        assert_eq!(f, c);
        assert!(r.passed_through);
    }

    #[test]
    fn lattice_scales_equal_spacing() {
        let a = 0.07;
        let c = lattice(5, a);
        let (s, clamped) = knn_scales(&c, 4, 1e-4).unwrap();
        assert_eq!(clamped, 0);
        for (p, si) in c.points.iter().zip(&s) {
            let interior = p.iter().all(|v| *v > 0.5 * a && *v < 3.5 * a);
            if interior {
                assert!((si - a).abs() < 1e-12, "{si}");
            }
        }
    }

    #[test]
    fn coincident_points_clamped() {
        let mut c = lattice(3, 1.0);
        c.points.push(c.points[13]);
        c.points.push(c.points[13]);
        c.points.push(c.points[13]);
        let (s, clamped) = knn_scales(&c, 4, 1e-4).unwrap();
        assert_eq!(clamped, 4);
        assert_eq!(s[13], 1e-4);
        assert!(s.iter().all(|v| *v >= 1e-4));
    }

    #[test]
    fn knn_scales_too_small_cloud() {
        assert!(knn_scales(&lattice(1, 1.0), 4, 1e-4).is_err());
    }

    fn blob(seed: u64) -> PointCloud {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let points = (0..400)
            .map(|_| {
                Vector3::new(
                    3.0 * rng.random_range(-1.0..1.0),
                    1.5 * rng.random_range(-1.0..1.0) + 2.0,
                    0.5 * rng.random_range(-1.0..1.0) - 1.0,
                )
            })
            .collect();
        PointCloud { points }
    }

    #[test]
    fn pca_output_centered_and_decorrelated() {
        let (n, t) = pca_normalize(&blob(1)).unwrap();
        let m = n.mean().unwrap();
        assert!(m.norm() < 1e-9);
        let mut cov = Matrix3::zeros();
        for p in &n.points {
            cov += p * p.transpose();
        }
        cov /= n.len() as f64;
        assert!(cov.m12.abs() < 1e-9 && cov.m13.abs() < 1e-9 && cov.m23.abs() < 1e-9);
        assert!(cov.m11 >= cov.m22 && cov.m22 >= cov.m33);
        assert!((t.rotation_matrix().unwrap().determinant() - 1.0).abs() < 1e-12);
        let round = t.compose(&t.inverse().unwrap()).unwrap();
        assert!(round.distance(&Pose::identity()).unwrap().0 < 1e-9);
        assert!(round.translation.norm() < 1e-9);
    }

    #[test]
    fn pca_of_axis_aligned_centered_cloud() {
        let mut c = blob(2);
        let m = c.mean().unwrap();
        for p in &mut c.points {
            *p -= m;
        }
        let (_, t) = pca_normalize(&c).unwrap();
        assert!(t.translation.norm() < 1e-9);
        // spreads are 3 > 1.5 > 0.5 along x, y, z: no permutation expected
        let r = t.rotation_matrix().unwrap();
        assert!((r - Matrix3::identity()).abs().max() < 0.1, "{r}");
    }

    #[test]
    fn pca_is_rotation_invariant() {
        let c = blob(3);
        let q = Quaternion::from_axis_angle(&Vector3::new(1.0, 2.0, -0.5), 1.1).unwrap();
        let r = q.to_rotation_matrix().unwrap();
        let rotated = PointCloud {
            points: c.points.iter().map(|p| r * p + Vector3::new(5.0, -1.0, 2.0)).collect(),
        };
        let (a, _) = pca_normalize(&c).unwrap();
        let (b, _) = pca_normalize(&rotated).unwrap();
        // each axis agrees up to its sign
        for axis in 0..3 {
            let same = a.points.iter().zip(&b.points).all(|(p, q)| (p[axis] - q[axis]).abs() < 1e-8);
            let flip = a.points.iter().zip(&b.points).all(|(p, q)| (p[axis] + q[axis]).abs() < 1e-8);
            assert!(same || flip, "axis {axis}");
        }
    }

    #[test]
    fn pca_rejects_planar_cloud() {
        let c = PointCloud {
            points: (0..50).map(|i| Vector3::new(i as f64, (i * i % 7) as f64, 0.0)).collect(),
        };
        assert!(matches!(pca_normalize(&c), Err(Error::DegenerateCloud(_))));
    }

    #[test]
    fn voxel_downsample_merges() {
        let c = PointCloud {
            points: vec![
                Vector3::new(0.001, 0.001, 0.001),
                Vector3::new(0.003, 0.003, 0.003),
                Vector3::new(0.5, 0.5, 0.5),
            ],
        };
        let d = voxel_downsample(&c, 0.01).unwrap();
        assert_eq!(d.len(), 2);
        assert!((d.points[0] - Vector3::new(0.002, 0.002, 0.002)).norm() < 1e-15);
    }

    fn wall_frame() -> (DepthImage, Pose) {
        let d = Image::from_fn(32, 24, |x, _| 2.0 + 0.01 * x as f64);
        (DepthImage::from_depth(d), Pose::identity())
    }

    #[test]
    fn built_scene_construction_invariants() {
        let (scene, report) = build_scene(&[wall_frame()], &cam(), &SceneBuildConfig::default()).unwrap();
        assert_eq!(report.raw_points, 32 * 24);
        for g in scene.gaussians() {
            assert_eq!(g.opacity, 1.0);
            assert_eq!(g.rotation, Quaternion::IDENTITY);
            assert_eq!(g.scale.x, g.scale.y);
            assert_eq!(g.scale.y, g.scale.z);
        }
    }

    #[test]
    fn disabling_pca_keeps_world_frame() {
        let cfg = SceneBuildConfig {
            pca: false,
            ..Default::default()
        };
        let (scene, _) = build_scene(&[wall_frame()], &cam(), &cfg).unwrap();
        assert_eq!(*scene.world_transform(), Pose::identity());
    }

    #[test]
    fn save_load_round_trip() {
        let (scene, _) = build_scene(&[wall_frame()], &cam(), &SceneBuildConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        save_scene(&p, &scene).unwrap();
        let back = load_scene(&p).unwrap();
        assert_eq!(back.gaussians(), scene.gaussians());
        assert_eq!(back.world_transform(), scene.world_transform());
        write_scene_summary(&dir.path().join("s.json"), &scene).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes.pop();
        std::fs::write(&p, bytes).unwrap();
        assert!(matches!(load_scene(&p), Err(Error::Format { .. })));
    }

    proptest! {
        #[test]
        fn scales_are_homogeneous(lambda in 0.1f64..10.0) {
            let c = blob(4);
            let scaled = PointCloud { points: c.points.iter().map(|p| p * lambda).collect() };
            let (a, _) = knn_scales(&c, 4, 1e-12).unwrap();
            let (b, _) = knn_scales(&scaled, 4, 1e-12).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x * lambda - y).abs() <= 1e-9 * y.max(1.0));
            }
        }
    }
}
