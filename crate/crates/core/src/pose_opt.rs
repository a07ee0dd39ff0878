//! Pose recovery by Adam over `(q, t)`.

use log::{debug, warn};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Pose, Quaternion};
use crate::grad::{backward_pose, PoseGradient};
use crate::image::DepthImage;
use crate::loss::{regularization_gradient, total_loss, LossTerms, LossWeights};
use crate::renderer::{render, GaussianScene, RenderConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub lr_q: f64,
    pub lr_t: f64,
    /// Added as `weight_decay * param` to the gradient of both groups.
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Early stopping is not considered before this many iterations.
    pub min_iters: usize,
    pub patience: usize,
    pub max_iters: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr_q: 5e-4,
            lr_t: 1e-3,
            weight_decay: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            min_iters: 100,
            patience: 20,
            max_iters: 500,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.lr_q, self.lr_t, self.adam_eps]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        let betas = (0.0..1.0).contains(&self.adam_beta1) && (0.0..1.0).contains(&self.adam_beta2);
        if pos
            && betas
            && self.weight_decay >= 0.0
            && self.patience >= 1
            && self.max_iters >= 1
            && self.min_iters <= self.max_iters
        {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer config {self:?}")))
        }
    }
}

/// First and second moments over the 7 ambient parameters
/// `(qw, qx, qy, qz, tx, ty, tz)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: [f64; 7],
    pub v: [f64; 7],
    pub step: u32,
}

/// One Adam update with L2-style weight decay, then quaternion
/// renormalization. Moments stay in the ambient space across the
/// renormalization.
pub fn adam_step(
    params: &mut [f64; 7],
    grad: &PoseGradient,
    state: &mut AdamState,
    cfg: &OptimConfig,
) -> Result<()> {
    let g = grad.to_params();
    if !g.iter().all(|v| v.is_finite()) {
        return Err(Error::numeric("pose gradient", None));
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.adam_beta1.powi(t);
    let bc2 = 1.0 - cfg.adam_beta2.powi(t);
    for i in 0..7 {
        let gi = g[i] + cfg.weight_decay * params[i];
        state.m[i] = cfg.adam_beta1 * state.m[i] + (1.0 - cfg.adam_beta1) * gi;
        state.v[i] = cfg.adam_beta2 * state.v[i] + (1.0 - cfg.adam_beta2) * gi * gi;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        let lr = if i < 4 { cfg.lr_q } else { cfg.lr_t };
        params[i] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
    let q = Pose::from_params(params).rotation.normalize()?;
    params[..4].copy_from_slice(&q.to_array());
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PoseEstimate {
    /// Minimum-loss pose, world-to-camera in the original world frame.
    pub pose: Pose,
    pub final_loss: LossTerms,
    pub iterations_run: usize,
    /// Iteration at which `pose` was evaluated.
    pub best_iteration: usize,
    pub loss_history: Vec<f64>,
    pub term_history: Vec<LossTerms>,
    /// True when the patience criterion stopped the run.
    pub converged: bool,
}

/// Minimizes the alignment loss of `observed` starting from `init`
/// (world-to-camera, original world frame).
pub fn localize(
    scene: &GaussianScene,
    k: &CameraIntrinsics,
    observed: &DepthImage,
    init: &Pose,
    cfg: &OptimConfig,
    w: &LossWeights,
    rcfg: &RenderConfig,
) -> Result<PoseEstimate> {
    cfg.validate()?;
    w.validate()?;
    init.validate()?;
    if observed.valid_count() == 0 {
        return Err(Error::InvalidArgument("observed depth has no valid pixels".into()));
    }
    if observed.width() != k.width || observed.height() != k.height {
        return Err(Error::InvalidArgument(format!(
            "observed depth is {}x{}, intrinsics expect {}x{}",
            observed.width(),
            observed.height(),
            k.width,
            k.height
        )));
    }

    let start = scene.to_scene_frame(init)?;
    let mut params = start.to_params();
    let mut state = AdamState::default();
    let mut best: Option<(f64, [f64; 7], LossTerms, usize)> = None;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut terms = Vec::new();
    let mut converged = false;

    let at = |iteration: usize, e: Error| Error::AtIteration {
        iteration,
        source: Box::new(e),
    };

    for iter in 0..cfg.max_iters {
        let pose = Pose::from_params(&params);
        let out = render(scene, k, &pose, rcfg).map_err(|e| at(iter, e))?;
        let breakdown = match total_loss(&out, observed, &pose, w) {
            Ok(b) => b,
            Err(Error::EmptyOverlap) if iter == 0 => return Err(Error::InitOutOfMap),
            Err(Error::EmptyOverlap) => {
                warn!("lost overlap with the map at iteration {iter}; keeping best pose");
                break;
            }
            Err(e) => return Err(at(iter, e)),
        };
        let total = breakdown.total;
        if !total.is_finite() {
            return Err(at(iter, Error::numeric("loss", None)));
        }
        history.push(total);
        terms.push(breakdown.terms());
        match best {
            Some((b, ..)) if total >= b => since_best += 1,
            _ => {
                best = Some((total, params, breakdown.terms(), iter));
                since_best = 0;
            }
        }
        if iter + 1 >= cfg.min_iters && since_best >= cfg.patience {
            converged = true;
            break;
        }
        if iter + 1 == cfg.max_iters {
            break;
        }

        let mut grad =
            backward_pose(&out, scene, k, &pose, &breakdown.upstream).map_err(|e| at(iter, e))?;
        let reg = regularization_gradient(&pose, w);
        if reg.iter().any(|v| *v != 0.0) {
            let mut g = grad.to_params();
            for (a, b) in g.iter_mut().zip(reg) {
                *a += b;
            }
            grad = PoseGradient::from_params(&g);
        }
        adam_step(&mut params, &grad, &mut state, cfg).map_err(|e| at(iter, e))?;
    }

    let (_, best_params, final_loss, best_iteration) = best.ok_or(Error::InitOutOfMap)?;
    debug!(
        "localize: {} iterations, best {:.6e} at {best_iteration}",
        history.len(),
        final_loss.total
    );
    Ok(PoseEstimate {
        pose: scene.to_world_frame(&Pose::from_params(&best_params).normalized()?)?,
        final_loss,
        iterations_run: history.len(),
        best_iteration,
        loss_history: history,
        term_history: terms,
        converged,
    })
}

/// Rotates the camera about a random axis by an angle uniform in
/// `[0, max_rot]` (rad) and moves its center in a random direction by a
/// distance uniform in `[0, max_trans]` (m).
pub fn perturb_pose(pose: &Pose, rng: &mut impl Rng, max_rot: f64, max_trans: f64) -> Result<Pose> {
    let axis = loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break v / n;
        }
    };
    let dir = loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break v / n;
        }
    };
    let angle = rng.random_range(0.0..=max_rot);
    let dist = rng.random_range(0.0..=max_trans);
    let dq = Quaternion::from_axis_angle(&axis, angle)?;
    let rotation = dq.mul(&pose.rotation).normalize()?;
    let center: Vector3<f64> = pose.camera_center()? + dir * dist;
    let r: nalgebra::Matrix3<f64> = rotation.to_rotation_matrix()?;
    Ok(Pose::new(rotation, -(r * center)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitMode {
    /// Frame `i` starts from the ground-truth pose of frame `i - 1`
    /// (frame 0 from its own ground truth).
    Gt,
    /// Frame `i` starts from its own ground truth, normally combined with a
    /// random perturbation.
    Current,
    /// Frame `i` starts from the estimate of frame `i - 1`.
    Prev,
}

/// Random offset applied to initial poses. Zero bounds disable it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbConfig {
    pub max_rot_deg: f64,
    pub max_trans_m: f64,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            max_rot_deg: 0.0,
            max_trans_m: 0.0,
        }
    }
}

impl PerturbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_rot_deg >= 0.0 && self.max_rot_deg <= 180.0 && self.max_trans_m >= 0.0 && self.max_trans_m.is_finite()) {
            return Err(Error::Config(format!("invalid perturbation bounds {self:?}")));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.max_rot_deg == 0.0 && self.max_trans_m == 0.0
    }

    /// Perturbs `pose` with a generator keyed by `(seed, frame)` only, so
    /// the result does not depend on scheduling.
    pub fn apply(&self, pose: &Pose, seed: u64, frame: usize) -> Result<Pose> {
        if self.is_zero() {
            return Ok(*pose);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(frame as u64);
        perturb_pose(pose, &mut rng, self.max_rot_deg.to_radians(), self.max_trans_m)
    }
}

/// Where each frame's optimization starts.
#[derive(Debug, Clone, Copy)]
pub struct SequenceInit<'a> {
    pub mode: InitMode,
    pub gt: Option<&'a [Pose]>,
    /// First-frame pose for [`InitMode::Prev`] without ground truth.
    pub first: Option<Pose>,
    pub perturb: PerturbConfig,
    pub seed: u64,
}

impl<'a> SequenceInit<'a> {
    pub fn new(mode: InitMode, gt: Option<&'a [Pose]>) -> Self {
        Self {
            mode,
            gt,
            first: None,
            perturb: PerturbConfig::default(),
            seed: 0,
        }
    }

    fn gt_at(&self, i: usize) -> Result<Pose> {
        self.gt
            .and_then(|g| g.get(i).copied())
            .ok_or_else(|| Error::InvalidArgument(format!("{:?} initialization needs ground truth", self.mode)))
    }
}

/// Localizes every frame; per-frame failures are returned in place and do
/// not stop the sequence. The initial pose of every frame (the first one
/// for [`InitMode::Prev`]) is perturbed as configured.
pub fn localize_sequence(
    scene: &GaussianScene,
    k: &CameraIntrinsics,
    frames: &[DepthImage],
    init: &SequenceInit<'_>,
    cfg: &OptimConfig,
    w: &LossWeights,
    rcfg: &RenderConfig,
) -> Result<Vec<Result<PoseEstimate>>> {
    init.perturb.validate()?;
    if let Some(gt) = init.gt {
        if gt.len() != frames.len() {
            return Err(Error::InvalidArgument(format!(
                "{} frames but {} ground-truth poses",
                frames.len(),
                gt.len()
            )));
        }
    }
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    match init.mode {
        InitMode::Gt | InitMode::Current => {
            let starts = (0..frames.len())
                .map(|i| {
                    let base = if init.mode == InitMode::Gt {
                        init.gt_at(i.saturating_sub(1))?
                    } else {
                        init.gt_at(i)?
                    };
                    init.perturb.apply(&base, init.seed, i)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(frames
                .par_iter()
                .zip(starts.par_iter())
                .map(|(f, start)| localize(scene, k, f, start, cfg, w, rcfg))
                .collect())
        }
        InitMode::Prev => {
            let first = match init.first {
                Some(p) => p,
                None => init.gt_at(0)?,
            };
            let mut start = init.perturb.apply(&first, init.seed, 0)?;
            let mut out = Vec::with_capacity(frames.len());
            for f in frames {
                let r = localize(scene, k, f, &start, cfg, w, rcfg);
                if let Ok(est) = &r {
                    start = est.pose;
                }
                out.push(r);
            }
            Ok(out)
        }
    }
}
