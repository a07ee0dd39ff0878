//! Randomized comparison of [`backward_pose`] against central differences.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{backward_pose, finite_diff_with_topology, Cotangents, PoseGradient};
use crate::error::Result;
use crate::geom::{CameraIntrinsics, Pose, Quaternion};
use crate::image::Image;
use crate::renderer::{render, Gaussian, GaussianScene, Precision, RenderConfig, RenderOutput};

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckConfig {
    pub trials: usize,
    pub seed: u64,
    pub eps: f64,
    pub width: usize,
    pub height: usize,
    pub min_gaussians: usize,
    pub max_gaussians: usize,
    pub precision: Precision,
    /// Resampling budget per trial for configurations whose stencil
    /// crosses a compositing discontinuity.
    pub max_resamples: usize,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            trials: 50,
            seed: 0,
            eps: 1e-5,
            width: 32,
            height: 32,
            min_gaussians: 2,
            max_gaussians: 40,
            precision: Precision::F64,
            max_resamples: 20,
        }
    }
}

impl GradCheckConfig {
    /// `(relative, absolute)` per-component agreement thresholds.
    pub fn tolerances(&self) -> (f64, f64) {
        match self.precision {
            Precision::F64 => (1e-4, 1e-8),
            Precision::F32 => (1e-2, 1e-4),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialResult {
    pub trial: usize,
    pub gaussians: usize,
    pub resamples: usize,
    pub analytic: [f64; 7],
    pub numeric: [f64; 7],
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub config: GradCheckConfig,
    pub trials: Vec<TrialResult>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        !self.trials.is_empty() && self.trials.iter().all(|t| t.pass)
    }
}

/// A random gradient-check problem: scene, camera, pose and a linear loss
/// `L = Σ c_N · Norm_D + Σ c_α · α`.
pub struct GradProblem {
    pub scene: GaussianScene,
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    pub cot_norm_depth: Image,
    pub cot_alpha: Image,
}

impl GradProblem {
    pub fn random(rng: &mut impl Rng, n: usize, width: usize, height: usize) -> Result<Self> {
        let f = width.max(height) as f64;
        let k = CameraIntrinsics::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        );
        let pose = Pose::new(
            random_unit_quaternion(rng),
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ),
        );
        let cam_to_world = pose.inverse()?;
        let mut gaussians = Vec::with_capacity(n);
        for _ in 0..n {
            let z: f64 = rng.random_range(1.5..4.0);
            let cam = Vector3::new(
                z * rng.random_range(-0.45..0.45),
                z * rng.random_range(-0.45..0.45),
                z,
            );
            gaussians.push(Gaussian {
                mean: cam_to_world.transform_point(&cam)?,
                scale: Vector3::new(
                    rng.random_range(0.05..0.3),
                    rng.random_range(0.05..0.3),
                    rng.random_range(0.05..0.3),
                ),
                rotation: random_unit_quaternion(rng),
                opacity: rng.random_range(0.2..0.9),
            });
        }
        let scene = GaussianScene::new(gaussians, Pose::identity())?;
        let cot_norm_depth = Image::from_fn(width, height, |_, _| rng.random_range(-1.0..1.0));
        let cot_alpha = Image::from_fn(width, height, |_, _| rng.random_range(-1.0..1.0));
        Ok(Self {
            scene,
            intrinsics: k,
            pose,
            cot_norm_depth,
            cot_alpha,
        })
    }

    pub fn loss(&self, out: &RenderOutput) -> f64 {
        let a: f64 = out
            .norm_depth
            .as_slice()
            .iter()
            .zip(self.cot_norm_depth.as_slice())
            .map(|(v, c)| v * c)
            .sum();
        let b: f64 = out
            .alpha
            .as_slice()
            .iter()
            .zip(self.cot_alpha.as_slice())
            .map(|(v, c)| v * c)
            .sum();
        a + b
    }

    pub fn analytic(&self, cfg: &RenderConfig) -> Result<PoseGradient> {
        let out = render(&self.scene, &self.intrinsics, &self.pose, cfg)?;
        let up = Cotangents {
            norm_depth: self.cot_norm_depth.clone(),
            alpha: self.cot_alpha.clone(),
            depth: None,
        };
        backward_pose(&out, &self.scene, &self.intrinsics, &self.pose, &up)
    }
}

pub fn random_unit_quaternion(rng: &mut impl Rng) -> Quaternion {
    loop {
        let q = Quaternion::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = q.norm();
        if n > 0.1 && n <= 1.0 {
            return q.normalize().expect("norm checked");
        }
    }
}

/// Per-component agreement: `(max relative error, max absolute error, pass)`.
pub fn compare(analytic: &[f64; 7], numeric: &[f64; 7], rel_tol: f64, abs_tol: f64) -> (f64, f64, bool) {
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut pass = true;
    for (a, n) in analytic.iter().zip(numeric) {
        let abs = (a - n).abs();
        let scale = a.abs().max(n.abs());
        let rel = if scale > 0.0 { abs / scale } else { 0.0 };
        max_rel = max_rel.max(rel);
        max_abs = max_abs.max(abs);
        pass &= rel <= rel_tol || abs <= abs_tol;
    }
    (max_rel, max_abs, pass)
}

pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (rel_tol, abs_tol) = cfg.tolerances();
    let fd_cfg = RenderConfig::default();
    let an_cfg = RenderConfig {
        precision: cfg.precision,
        ..Default::default()
    };
    let mut trials = Vec::with_capacity(cfg.trials);
    for trial in 0..cfg.trials {
        let mut resamples = 0;
        loop {
            let n = rng.random_range(cfg.min_gaussians..=cfg.max_gaussians);
            let problem = GradProblem::random(&mut rng, n, cfg.width, cfg.height)?;
            let (numeric, stable) = finite_diff_with_topology(
                &problem.scene,
                &problem.intrinsics,
                &problem.pose,
                &fd_cfg,
                &|o| problem.loss(o),
                cfg.eps,
            )?;
            if !stable && resamples < cfg.max_resamples {
                resamples += 1;
                continue;
            }
            let analytic = problem.analytic(&an_cfg)?;
            let (a, nv) = (analytic.to_params(), numeric.to_params());
            let (max_rel_err, max_abs_err, pass) = compare(&a, &nv, rel_tol, abs_tol);
            trials.push(TrialResult {
                trial,
                gaussians: n,
                resamples,
                analytic: a,
                numeric: nv,
                max_rel_err,
                max_abs_err,
                pass: pass && stable,
            });
            break;
        }
    }
    Ok(GradCheckReport {
        config: cfg.clone(),
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes_in_both_precisions() {
        for precision in [Precision::F64, Precision::F32] {
            let report = run_gradcheck(&GradCheckConfig {
                trials: 8,
                seed: 3,
                max_gaussians: 12,
                precision,
                ..Default::default()
            })
            .unwrap();
            for t in &report.trials {
                assert!(t.pass, "{precision:?} {t:?}");
            }
        }
    }
}
