use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3};

use super::{GaussianScene, RenderConfig};
use crate::error::Result;
use crate::geom::{CameraIntrinsics, Pose};

/// Screen-space footprint of one scene Gaussian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectedGaussian {
    /// Index of the source Gaussian in the scene.
    pub source: usize,
    pub mean: Vector2<f64>,
    /// Screen covariance including dilation, px².
    pub cov: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    /// Camera-frame z of the mean.
    pub depth: f64,
    /// Half-width of the square bounding the `sigma_cutoff` ellipse, px.
    pub radius: f64,
    pub opacity: f64,
    pub cam_mean: Vector3<f64>,
    pub visible: bool,
}

impl ProjectedGaussian {
    fn hidden(source: usize, cam_mean: Vector3<f64>, opacity: f64) -> Self {
        Self {
            source,
            mean: Vector2::repeat(f64::NAN),
            cov: Matrix2::zeros(),
            conic: Matrix2::zeros(),
            depth: cam_mean.z,
            radius: 0.0,
            opacity,
            cam_mean,
            visible: false,
        }
    }
}

/// Jacobian of the pinhole projection at camera-frame point `m`.
pub(crate) fn projection_jacobian(m: &Vector3<f64>, k: &CameraIntrinsics) -> Matrix2x3<f64> {
    let iz = 1.0 / m.z;
    let iz2 = iz * iz;
    Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * m.x * iz2,
        0.0,
        k.fy * iz,
        -k.fy * m.y * iz2,
    )
}

pub(crate) fn screen_covariance(
    cov3: &Matrix3<f64>,
    rot: &Matrix3<f64>,
    j: &Matrix2x3<f64>,
    dilation: f64,
) -> Matrix2<f64> {
    let cam_cov = rot * cov3 * rot.transpose();
    let mut c = j * cam_cov * j.transpose();
    // exact symmetry keeps the conic symmetric bit-for-bit
    let off = 0.5 * (c[(0, 1)] + c[(1, 0)]);
    c[(0, 1)] = off;
    c[(1, 0)] = off;
    c + Matrix2::identity() * dilation
}

pub fn project_gaussians(
    scene: &GaussianScene,
    k: &CameraIntrinsics,
    pose: &Pose,
    cfg: &RenderConfig,
) -> Result<Vec<ProjectedGaussian>> {
    k.validate()?;
    cfg.validate()?;
    let rot = pose.rotation_matrix()?;
    let t = pose.translation;
    let (w, h) = (k.width as f64, k.height as f64);
    let g = cfg.frustum_guard;
    let (x_lo, x_hi) = (g * (-0.5 - k.cx) / k.fx, g * (w - 0.5 - k.cx) / k.fx);
    let (y_lo, y_hi) = (g * (-0.5 - k.cy) / k.fy, g * (h - 0.5 - k.cy) / k.fy);

    let out = scene
        .gaussians()
        .iter()
        .zip(scene.covariances())
        .enumerate()
        .map(|(i, (g, cov3))| {
            let m = rot * g.mean + t;
            if !(m.z > k.near && m.z < k.far) {
                return ProjectedGaussian::hidden(i, m, g.opacity);
            }
            let (tx, ty) = (m.x / m.z, m.y / m.z);
            if tx < x_lo || tx > x_hi || ty < y_lo || ty > y_hi {
                return ProjectedGaussian::hidden(i, m, g.opacity);
            }
            let j = projection_jacobian(&m, k);
            let cov = screen_covariance(cov3, &rot, &j, cfg.dilation);
            let det = cov.determinant();
            if !(det > 1e-12) {
                return ProjectedGaussian::hidden(i, m, g.opacity);
            }
            let conic = Matrix2::new(cov[(1, 1)], -cov[(0, 1)], -cov[(1, 0)], cov[(0, 0)]) / det;
            let mid = 0.5 * (cov[(0, 0)] + cov[(1, 1)]);
            let half = 0.5 * (cov[(0, 0)] - cov[(1, 1)]);
            let lambda_max = mid + (half * half + cov[(0, 1)] * cov[(0, 1)]).sqrt();
            // σ <= cutoff  <=>  Mahalanobis distance <= sqrt(2 cutoff); 3 std at 4.5
            let radius = (2.0 * cfg.sigma_cutoff * lambda_max).sqrt().ceil();
            let mean = Vector2::new(k.fx * m.x / m.z + k.cx, k.fy * m.y / m.z + k.cy);
            let on_screen = mean.x + radius >= 0.0
                && mean.x - radius <= w - 1.0
                && mean.y + radius >= 0.0
                && mean.y - radius <= h - 1.0;
            if !on_screen || !radius.is_finite() || !mean.iter().all(|v| v.is_finite()) {
                return ProjectedGaussian::hidden(i, m, g.opacity);
            }
            ProjectedGaussian {
                source: i,
                mean,
                cov,
                conic,
                depth: m.z,
                radius,
                opacity: g.opacity,
                cam_mean: m,
                visible: true,
            }
        })
        .collect();
    Ok(out)
}
