//! Differentiable depth splatting.
//!
//! Gaussians are projected to screen-space ellipses (EWA), sorted by
//! camera-frame depth and alpha-composited front to back per pixel. Pixel
//! `(x, y)` has its center at image coordinate `(x, y)`.

mod export;
mod project;
mod raster;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Pose, Quaternion};

pub use export::{write_csv, write_png16};
pub use project::{project_gaussians, ProjectedGaussian};
pub use raster::{
    rasterize_depth, BackwardContext, ContributorInfo, RenderOutput,
};
pub(crate) use project::projection_jacobian;
pub(crate) use raster::{backward_pixels, projection_checksum, PixelCotangent};

pub(crate) fn fnv_mix(hash: u64, word: u64) -> u64 {
    let mut h = hash;
    for b in word.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub(crate) const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;

/// Arithmetic used by the compositing kernels. Projection and the
/// per-Gaussian gradient chain always run in `f64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderConfig {
    /// Added to the diagonal of every screen-space covariance, px².
    pub dilation: f64,
    pub alpha_clamp_max: f64,
    pub transmittance_epsilon: f64,
    /// Largest Mahalanobis half-square `σ` at which a splat still contributes.
    pub sigma_cutoff: f64,
    /// Pixels with accumulated alpha at or below this are masked out.
    pub alpha_floor: f64,
    pub tile_size: usize,
    pub precision: Precision,
    /// Keep per-pixel contributor lists for the backward pass instead of
    /// replaying the forward compositing.
    pub save_contributors: bool,
    /// Fixed-order gradient reduction. Turning this off allows a faster,
    /// schedule-dependent reduction.
    pub deterministic: bool,
    /// Gaussians whose camera-frame direction lies beyond this multiple of
    /// the image half-extent (in `x/z`, `y/z`) are not drawn. The projection
    /// is linearized at the mean, which breaks down far outside the view.
    /// `inf` disables the guard.
    pub frustum_guard: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            dilation: 0.3,
            alpha_clamp_max: 0.999,
            transmittance_epsilon: 1e-4,
            sigma_cutoff: 4.5,
            alpha_floor: 1e-3,
            tile_size: 16,
            precision: Precision::F64,
            save_contributors: true,
            deterministic: true,
            frustum_guard: 1.3,
        }
    }
}

impl RenderConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.dilation >= 0.0
            && self.alpha_clamp_max > 0.0
            && self.alpha_clamp_max < 1.0
            && self.transmittance_epsilon >= 0.0
            && self.transmittance_epsilon < 1.0
            && self.sigma_cutoff > 0.0
            && self.alpha_floor >= 0.0
            && self.alpha_floor < 1.0
            && self.tile_size >= 1
            && self.frustum_guard >= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid render config {self:?}")))
        }
    }

    pub(crate) fn digest(&self) -> u64 {
        let mut h = FNV_OFFSET;
        for v in [
            self.dilation,
            self.alpha_clamp_max,
            self.transmittance_epsilon,
            self.sigma_cutoff,
            self.alpha_floor,
            self.frustum_guard,
        ] {
            h = fnv_mix(h, v.to_bits());
        }
        h = fnv_mix(h, self.tile_size as u64);
        fnv_mix(h, self.precision as u64)
    }
}

/// One anisotropic Gaussian. `scale` holds per-axis standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean: Vector3<f64>,
    pub scale: Vector3<f64>,
    pub rotation: Quaternion,
    pub opacity: f64,
}

impl Gaussian {
    pub fn isotropic(mean: Vector3<f64>, sigma: f64, opacity: f64) -> Self {
        Self {
            mean,
            scale: Vector3::repeat(sigma),
            rotation: Quaternion::IDENTITY,
            opacity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.rotation.ensure_unit()?;
        if !self.mean.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite Gaussian mean".into()));
        }
        if !self.scale.iter().all(|&s| s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Gaussian scales must be positive, got {:?}",
                self.scale.as_slice()
            )));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(Error::InvalidArgument(format!(
                "opacity {} outside [0, 1]",
                self.opacity
            )));
        }
        Ok(())
    }

    /// `R(q) S Sᵀ R(q)ᵀ` with `S = diag(scale)`.
    pub fn covariance(&self) -> Result<Matrix3<f64>> {
        let r = self.rotation.to_rotation_matrix()?;
        let s = Matrix3::from_diagonal(&self.scale.component_mul(&self.scale));
        Ok(r * s * r.transpose())
    }
}

/// Immutable Gaussian map plus the rigid transform from the original world
/// frame into the frame the Gaussians are stored in.
#[derive(Debug, Clone)]
pub struct GaussianScene {
    gaussians: Vec<Gaussian>,
    covariances: Vec<Matrix3<f64>>,
    world_transform: Pose,
    fingerprint: u64,
}

impl GaussianScene {
    pub fn new(gaussians: Vec<Gaussian>, world_transform: Pose) -> Result<Self> {
        if gaussians.is_empty() {
            return Err(Error::InvalidArgument("scene has no Gaussians".into()));
        }
        world_transform.validate()?;
        let mut covariances = Vec::with_capacity(gaussians.len());
        let mut h = FNV_OFFSET;
        for g in &gaussians {
            g.validate()?;
            covariances.push(g.covariance()?);
            for v in g
                .mean
                .iter()
                .chain(g.scale.iter())
                .chain(g.rotation.to_array().iter())
                .chain(std::iter::once(&g.opacity))
            {
                h = fnv_mix(h, v.to_bits());
            }
        }
        for v in world_transform.to_params() {
            h = fnv_mix(h, v.to_bits());
        }
        Ok(Self {
            gaussians,
            covariances,
            world_transform,
            fingerprint: h,
        })
    }

    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub(crate) fn covariances(&self) -> &[Matrix3<f64>] {
        &self.covariances
    }

    pub fn world_transform(&self) -> &Pose {
        &self.world_transform
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// World-to-camera pose in the original world frame → pose in the
    /// scene's storage frame.
    pub fn to_scene_frame(&self, world_pose: &Pose) -> Result<Pose> {
        world_pose.compose(&self.world_transform.inverse()?)
    }

    pub fn to_world_frame(&self, scene_pose: &Pose) -> Result<Pose> {
        scene_pose.compose(&self.world_transform)
    }

    /// Axis-aligned bounds of the Gaussian means.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for g in &self.gaussians {
            lo = lo.inf(&g.mean);
            hi = hi.sup(&g.mean);
        }
        (lo, hi)
    }
}

/// Projects and rasterizes `scene` from `pose` (given in the scene frame).
pub fn render(
    scene: &GaussianScene,
    k: &CameraIntrinsics,
    pose: &Pose,
    cfg: &RenderConfig,
) -> Result<RenderOutput> {
    let projected = project_gaussians(scene, k, pose, cfg)?;
    rasterize_depth(projected, k, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_is_spd() {
        let g = Gaussian {
            mean: Vector3::zeros(),
            scale: Vector3::new(0.1, 0.2, 0.3),
            rotation: Quaternion::new(0.9, 0.1, -0.3, 0.2).normalize().unwrap(),
            opacity: 0.5,
        };
        let c = g.covariance().unwrap();
        assert!((c - c.transpose()).amax() < 1e-15);
        let eig = c.symmetric_eigen();
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        for (e, s) in ev.iter().zip([0.01, 0.04, 0.09]) {
            assert!((e - s).abs() < 1e-12);
        }
    }

    #[test]
    fn scene_rejects_bad_gaussians() {
        assert!(GaussianScene::new(vec![], Pose::identity()).is_err());
        let mut g = Gaussian::isotropic(Vector3::zeros(), 0.1, 1.0);
        g.opacity = 1.5;
        assert!(GaussianScene::new(vec![g], Pose::identity()).is_err());
        let mut g = Gaussian::isotropic(Vector3::zeros(), 0.1, 1.0);
        g.scale.x = 0.0;
        assert!(GaussianScene::new(vec![g], Pose::identity()).is_err());
    }

    #[test]
    fn frame_conversion_round_trips() {
        let wt = Pose::new(
            Quaternion::new(0.8, 0.2, 0.1, -0.3).normalize().unwrap(),
            Vector3::new(0.3, -1.0, 2.0),
        );
        let scene =
            GaussianScene::new(vec![Gaussian::isotropic(Vector3::zeros(), 0.1, 1.0)], wt).unwrap();
        let p = Pose::new(
            Quaternion::new(0.1, 0.9, 0.3, 0.2).normalize().unwrap(),
            Vector3::new(1.0, 2.0, 3.0),
        );
        let back = scene.to_world_frame(&scene.to_scene_frame(&p).unwrap()).unwrap();
        let (ang, dist) = p.distance(&back).unwrap();
        assert!(ang < 1e-9 && dist < 1e-9);
    }
}
