//! Analytic pose gradients through the depth renderer.
//!
//! The chain, from the loss back to the pose:
//!
//! 1. `Norm_D = D / α` (quotient rule) gives cotangents on `D` and `α`.
//! 2. Reverse compositing per pixel yields cotangents on every
//!    contributor's `α_n` and `d_n`, using suffix sums over `d_m α_m T_m`
//!    and `α_m T_m` for the transmittance terms.
//! 3. `α_n = o·exp(-σ_n)` and `σ_n = ½ Δᵀ C Δ` map those onto the splat's
//!    screen mean and conic `C`, and `dΣ = -Σ⁻¹ dC Σ⁻¹` onto the screen
//!    covariance.
//! 4. `Σ_I = J W Σ Wᵀ Jᵀ` with `J` the projection Jacobian at the
//!    camera-frame mean `m = W μ + t` (including `J`'s own dependence on
//!    `m`), plus the pinhole mean and the depth `d = m_z`, give cotangents
//!    on `W` and `t`.
//! 5. `W = R(q)` is differentiated through the quaternion polynomial and
//!    projected onto the tangent of the unit sphere, i.e. the result is the
//!    gradient of `q ↦ L(R(q / |q|))`. The finite-difference oracle uses
//!    the same convention by renormalizing perturbed quaternions.
//!
//! Culling, tile binning, the `σ` cutoff, alpha clamping and early
//! termination are treated as constants of the forward pass.

pub mod check;

use nalgebra::{Matrix2, Matrix3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Pose, Quaternion};
use crate::image::Image;
use crate::renderer::{
    backward_pixels, project_gaussians, render, GaussianScene, PixelCotangent, RenderConfig,
    RenderOutput,
};

pub use check::{run_gradcheck, GradCheckConfig, GradCheckReport, TrialResult};

/// Gradient of a scalar loss w.r.t. the 7 ambient pose parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseGradient {
    /// w.r.t. `(w, x, y, z)` of the raw quaternion.
    pub d_q: [f64; 4],
    pub d_t: Vector3<f64>,
}

impl PoseGradient {
    pub fn zero() -> Self {
        Self {
            d_q: [0.0; 4],
            d_t: Vector3::zeros(),
        }
    }

    pub fn to_params(&self) -> [f64; 7] {
        [
            self.d_q[0], self.d_q[1], self.d_q[2], self.d_q[3], self.d_t.x, self.d_t.y, self.d_t.z,
        ]
    }

    pub fn from_params(p: &[f64; 7]) -> Self {
        Self {
            d_q: [p[0], p[1], p[2], p[3]],
            d_t: Vector3::new(p[4], p[5], p[6]),
        }
    }

    pub fn norm(&self) -> f64 {
        self.to_params().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.to_params().iter().all(|v| v.is_finite())
    }
}

/// Upstream cotangents of the loss w.r.t. the render outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Cotangents {
    pub norm_depth: Image,
    pub alpha: Image,
    /// w.r.t. the unnormalized composite, used when the loss reads raw depth.
    pub depth: Option<Image>,
}

impl Cotangents {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            norm_depth: Image::zeros(width, height),
            alpha: Image::zeros(width, height),
            depth: None,
        }
    }
}

/// `∂R(q)/∂q_i` for the polynomial rotation formula, `i` over `(w, x, y, z)`.
pub(crate) fn rotation_partials(q: &Quaternion) -> [Matrix3<f64>; 4] {
    let Quaternion { w, x, y, z } = *q;
    let two = 2.0;
    [
        Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * two,
        Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * two,
        Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * two,
        Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * two,
    ]
}

/// Per-Gaussian contribution `(∂L/∂W, ∂L/∂t)` given the screen-space
/// gradient `g = [mean.x, mean.y, C00, C01, C11, depth]`.
fn gaussian_chain(
    g: &[f64; 6],
    mean_world: &Vector3<f64>,
    cov3: &Matrix3<f64>,
    m: &Vector3<f64>,
    conic: &Matrix2<f64>,
    rot: &Matrix3<f64>,
    k: &CameraIntrinsics,
) -> (Matrix3<f64>, Vector3<f64>) {
    let (x, y, z) = (m.x, m.y, m.z);
    let iz = 1.0 / z;
    let iz2 = iz * iz;
    let iz3 = iz2 * iz;
    let (fx, fy) = (k.fx, k.fy);

    // conic → screen covariance: dΣ = -C dC C
    let g_conic = Matrix2::new(g[2], g[3], g[3], g[4]);
    let g_cov2 = -(conic * g_conic * conic);

    let j = crate::renderer::projection_jacobian(m, k);
    let cam_cov = rot * cov3 * rot.transpose();
    // Σ_I = J V Jᵀ with symmetric V and symmetric g_cov2
    let g_j = 2.0 * g_cov2 * j * cam_cov;
    let g_v = j.transpose() * g_cov2 * j;
    // V = W Σ Wᵀ
    let mut g_w = 2.0 * g_v * rot * cov3;

    let mut g_m = Vector3::zeros();
    // pinhole mean
    g_m.x += g[0] * fx * iz;
    g_m.y += g[1] * fy * iz;
    g_m.z += -g[0] * fx * x * iz2 - g[1] * fy * y * iz2;
    // depth = m_z
    g_m.z += g[5];
    // J(m)
    g_m.x += g_j[(0, 2)] * (-fx * iz2);
    g_m.y += g_j[(1, 2)] * (-fy * iz2);
    g_m.z += g_j[(0, 0)] * (-fx * iz2)
        + g_j[(0, 2)] * (2.0 * fx * x * iz3)
        + g_j[(1, 1)] * (-fy * iz2)
        + g_j[(1, 2)] * (2.0 * fy * y * iz3);

    // m = W μ + t
    g_w += g_m * mean_world.transpose();
    (g_w, g_m)
}

/// Gradient of the loss w.r.t. the pose given upstream cotangents on the
/// outputs of `out`, which must have been rendered from exactly
/// `(scene, k, pose)`.
pub fn backward_pose(
    out: &RenderOutput,
    scene: &GaussianScene,
    k: &CameraIntrinsics,
    pose: &Pose,
    upstream: &Cotangents,
) -> Result<PoseGradient> {
    let ctx = &out.ctx;
    let (w, h) = (k.width, k.height);
    if !upstream.norm_depth.same_shape(&out.depth) || !upstream.alpha.same_shape(&out.depth) {
        return Err(Error::InvalidArgument(
            "cotangent maps do not match the render size".into(),
        ));
    }
    let cfg: RenderConfig = *ctx.config();
    let projected = project_gaussians(scene, k, pose, &cfg)?;
    if crate::renderer::projection_checksum(&projected, k, &cfg) != ctx.checksum()
        || projected.len() != ctx.projected().len()
    {
        return Err(Error::StaleContext);
    }

    let mut cot = vec![PixelCotangent::default(); w * h];
    let mut any = false;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut c = PixelCotangent {
                depth: upstream.depth.as_ref().map_or(0.0, |d| d.get(x, y)),
                alpha: upstream.alpha.get(x, y),
            };
            let g_norm = upstream.norm_depth.get(x, y);
            if out.mask.get(x, y) && g_norm != 0.0 {
                let a = out.alpha.get(x, y);
                c.depth += g_norm / a;
                c.alpha -= g_norm * out.depth.get(x, y) / (a * a);
            }
            if !(c.depth.is_finite() && c.alpha.is_finite()) {
                return Err(Error::numeric("upstream cotangent", Some((x, y))));
            }
            any |= c.depth != 0.0 || c.alpha != 0.0;
            cot[i] = c;
        }
    }
    if !any {
        return Ok(PoseGradient::zero());
    }

    let splat_grads = backward_pixels(ctx, &cot)?;
    let rot = pose.rotation_matrix()?;
    let gaussians = scene.gaussians();
    let covs = scene.covariances();
    let per_gaussian = |(i, g): (usize, &[f64; 6])| -> Option<(Matrix3<f64>, Vector3<f64>)> {
        let p = &projected[i];
        if !p.visible || g.iter().all(|v| *v == 0.0) {
            return None;
        }
        Some(gaussian_chain(
            g,
            &gaussians[p.source].mean,
            &covs[p.source],
            &p.cam_mean,
            &p.conic,
            &rot,
            k,
        ))
    };

    let zero = (Matrix3::zeros(), Vector3::zeros());
    let (g_w, g_t) = if cfg.deterministic {
        let parts: Vec<Option<(Matrix3<f64>, Vector3<f64>)>> =
            splat_grads.par_iter().enumerate().map(per_gaussian).collect();
        parts
            .into_iter()
            .flatten()
            .fold(zero, |(aw, at), (bw, bt)| (aw + bw, at + bt))
    } else {
        splat_grads
            .par_iter()
            .enumerate()
            .filter_map(per_gaussian)
            .reduce(|| zero, |(aw, at), (bw, bt)| (aw + bw, at + bt))
    };

    let q = pose.rotation;
    let partials = rotation_partials(&q);
    let mut g_q = [0.0; 4];
    for (gi, p) in g_q.iter_mut().zip(&partials) {
        *gi = g_w.component_mul(p).sum();
    }
    // tangent projection: gradient of q ↦ L(R(q/|q|))
    let n = q.norm();
    let qh = [q.w / n, q.x / n, q.y / n, q.z / n];
    let radial: f64 = g_q.iter().zip(&qh).map(|(a, b)| a * b).sum();
    for (gi, u) in g_q.iter_mut().zip(&qh) {
        *gi = (*gi - radial * u) / n;
    }

    let grad = PoseGradient { d_q: g_q, d_t: g_t };
    if !grad.is_finite() {
        return Err(Error::numeric("pose gradient", None));
    }
    Ok(grad)
}

/// Pose `p` with parameter `i` of the 7-vector moved by `delta`; the
/// quaternion is renormalized afterwards, matching the optimizer.
pub fn perturb_pose(p: &Pose, i: usize, delta: f64) -> Result<Pose> {
    let mut v = p.to_params();
    v[i] += delta;
    Pose::from_params(&v).normalized()
}

/// Central differences of `loss` over the 7 ambient pose parameters.
pub fn finite_diff_pose_grad(
    scene: &GaussianScene,
    k: &CameraIntrinsics,
    pose: &Pose,
    cfg: &RenderConfig,
    loss: &dyn Fn(&RenderOutput) -> f64,
    eps: f64,
) -> Result<PoseGradient> {
    Ok(finite_diff_with_topology(scene, k, pose, cfg, loss, eps)?.0)
}

/// Like [`finite_diff_pose_grad`], also reporting whether every stencil
/// render kept the base render's hard compositing decisions.
pub fn finite_diff_with_topology(
    scene: &GaussianScene,
    k: &CameraIntrinsics,
    pose: &Pose,
    cfg: &RenderConfig,
    loss: &dyn Fn(&RenderOutput) -> f64,
    eps: f64,
) -> Result<(PoseGradient, bool)> {
    if !(1e-8..=1e-3).contains(&eps) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {eps} outside [1e-8, 1e-3]"
        )));
    }
    let base = render(scene, k, pose, cfg)?.topology_digest();
    let mut stable = true;
    let mut g = [0.0; 7];
    for (i, gi) in g.iter_mut().enumerate() {
        let plus = render(scene, k, &perturb_pose(pose, i, eps)?, cfg)?;
        let minus = render(scene, k, &perturb_pose(pose, i, -eps)?, cfg)?;
        stable &= plus.topology_digest() == base && minus.topology_digest() == base;
        *gi = (loss(&plus) - loss(&minus)) / (2.0 * eps);
    }
    Ok((PoseGradient::from_params(&g), stable))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::renderer::Gaussian;

    fn on_axis_scene() -> (GaussianScene, CameraIntrinsics) {
        let scene = GaussianScene::new(
            vec![Gaussian::isotropic(Vector3::new(0.0, 0.0, 2.0), 0.1, 0.8)],
            Pose::identity(),
        )
        .unwrap();
        (scene, CameraIntrinsics::new(100.0, 100.0, 10.0, 10.0, 21, 21))
    }

    #[test]
    fn zero_cotangent_gives_zero_gradient() {
        let (scene, k) = on_axis_scene();
        let pose = Pose::identity();
        let out = render(&scene, &k, &pose, &RenderConfig::default()).unwrap();
        let g = backward_pose(&out, &scene, &k, &pose, &Cotangents::zeros(21, 21)).unwrap();
        assert_eq!(g, PoseGradient::zero());
    }

    #[test]
    fn single_splat_center_depth_moves_with_tz() {
        let (scene, k) = on_axis_scene();
        let pose = Pose::identity();
        let out = render(&scene, &k, &pose, &RenderConfig::default()).unwrap();
        let mut up = Cotangents::zeros(21, 21);
        up.norm_depth.set(10, 10, 1.0);
        let g = backward_pose(&out, &scene, &k, &pose, &up).unwrap();
        assert!((g.d_t - Vector3::new(0.0, 0.0, 1.0)).amax() < 1e-12, "{g:?}");
        assert!(g.d_q.iter().all(|v| v.abs() < 1e-12));

        let fd = finite_diff_pose_grad(
            &scene,
            &k,
            &pose,
            &RenderConfig::default(),
            &|o| o.norm_depth.get(10, 10),
            1e-5,
        )
        .unwrap();
        assert!((fd.d_t - g.d_t).amax() < 1e-8);
    }

    #[test]
    fn stale_context_is_detected() {
        let (scene, k) = on_axis_scene();
        let out = render(&scene, &k, &Pose::identity(), &RenderConfig::default()).unwrap();
        let moved = Pose::new(Quaternion::IDENTITY, Vector3::new(0.01, 0.0, 0.0));
        let err = backward_pose(&out, &scene, &k, &moved, &Cotangents::zeros(21, 21)).unwrap_err();
        assert!(matches!(err, Error::StaleContext));
    }

    #[test]
    fn non_finite_cotangent_is_an_error() {
        let (scene, k) = on_axis_scene();
        let pose = Pose::identity();
        let out = render(&scene, &k, &pose, &RenderConfig::default()).unwrap();
        let mut up = Cotangents::zeros(21, 21);
        up.alpha.set(3, 4, f64::NAN);
        match backward_pose(&out, &scene, &k, &pose, &up).unwrap_err() {
            Error::Numeric { pixel, .. } => assert_eq!(pixel, Some((3, 4))),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn constant_loss_has_zero_fd_gradient() {
        let (scene, k) = on_axis_scene();
        let g = finite_diff_pose_grad(
            &scene,
            &k,
            &Pose::identity(),
            &RenderConfig::default(),
            &|_| 3.0,
            1e-5,
        )
        .unwrap();
        assert!(g.norm() < 1e-10);
    }

    #[test]
    fn quadratic_in_tz_matches_analytic_derivative() {
        let (scene, k) = on_axis_scene();
        let pose = Pose::new(Quaternion::IDENTITY, Vector3::new(0.0, 0.0, 0.3));
        // L = 2.5 (d_center - 1)^2 with d_center = 2 + t_z
        let loss = |o: &RenderOutput| 2.5 * (o.norm_depth.get(10, 10) - 1.0).powi(2);
        let g = finite_diff_pose_grad(&scene, &k, &pose, &RenderConfig::default(), &loss, 1e-5)
            .unwrap();
        let expected = 2.0 * 2.5 * (2.3 - 1.0);
        assert!((g.d_t.z - expected).abs() < 1e-6, "{} vs {expected}", g.d_t.z);
    }

    #[test]
    fn fd_step_is_range_checked() {
        let (scene, k) = on_axis_scene();
        let cfg = RenderConfig::default();
        assert!(finite_diff_pose_grad(&scene, &k, &Pose::identity(), &cfg, &|_| 0.0, 1e-2).is_err());
    }

    #[test]
    fn rotation_partials_match_finite_differences() {
        let q = Quaternion::new(0.3, -0.5, 0.7, 0.2);
        let p = rotation_partials(&q);
        for i in 0..4 {
            let mut a = q.to_array();
            let mut b = q.to_array();
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (Quaternion::from_array(a).rotation_matrix_unchecked()
                - Quaternion::from_array(b).rotation_matrix_unchecked())
                / 2e-6;
            assert!((fd - p[i]).amax() < 1e-8);
        }
    }
}
