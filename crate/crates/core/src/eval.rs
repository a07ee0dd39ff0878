//! Trajectory error metrics and per-sequence reports.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{associate, TrajectoryEntry};
use crate::error::{Error, Result};
use crate::geom::{Pose, Quaternion};

/// Published average errors used as a reference column in reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub label: &'static str,
    pub ate_rmse_cm: f64,
    pub aae_rmse_deg: f64,
}

pub const REPLICA_REFERENCE: Reference = Reference {
    label: "replica avg",
    ate_rmse_cm: 0.016,
    aae_rmse_deg: 0.009,
};

pub const TUM_REFERENCE: Reference = Reference {
    label: "tum avg",
    ate_rmse_cm: 0.810,
    aae_rmse_deg: 0.979,
};

pub const REPLICA_ROOM0_REFERENCE: Reference = Reference {
    label: "replica room0",
    ate_rmse_cm: 0.015,
    aae_rmse_deg: 0.007,
};

/// How the estimate is registered to the ground truth before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alignment {
    /// Score poses as given. Estimates initialized from ground truth already
    /// live in its frame.
    #[default]
    None,
    /// Least-squares rigid fit of estimated onto true camera centers.
    Rigid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub timestamp: f64,
    pub trans_err_cm: f64,
    pub rot_err_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub name: String,
    pub ate_rmse_cm: f64,
    pub aae_rmse_deg: f64,
    pub n_frames: usize,
    pub alignment: Alignment,
    pub per_frame: Vec<FrameError>,
}

impl MetricReport {
    /// Recomputes both RMSE values from `per_frame`.
    pub fn recompute(&self) -> (f64, f64) {
        let t: Vec<f64> = self.per_frame.iter().map(|f| f.trans_err_cm).collect();
        let r: Vec<f64> = self.per_frame.iter().map(|f| f.rot_err_deg).collect();
        (rmse(&t), rmse(&r))
    }
}

/// Root mean square; 0 for an empty list.
pub fn rmse(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

fn check_lengths(est: &[Pose], gt: &[Pose]) -> Result<()> {
    if est.len() != gt.len() {
        return Err(Error::InvalidArgument(format!(
            "trajectory lengths differ: {} estimated vs {} ground truth",
            est.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Camera-center distance per frame, cm.
pub fn translation_errors_cm(est: &[Pose], gt: &[Pose]) -> Result<Vec<f64>> {
    check_lengths(est, gt)?;
    est.par_iter()
        .zip(gt.par_iter())
        .map(|(e, g)| Ok((e.camera_center()? - g.camera_center()?).norm() * 100.0))
        .collect()
}

/// Angle of `q_e⁻¹ q_g`, degrees. Sign of either quaternion is irrelevant.
pub fn rotation_error_deg(e: &Quaternion, g: &Quaternion) -> Result<f64> {
    let rel = e.normalize()?.conjugate().mul(&g.normalize()?);
    let v = (rel.x * rel.x + rel.y * rel.y + rel.z * rel.z).sqrt();
    Ok((2.0 * v.atan2(rel.w.abs())).to_degrees())
}

pub fn rotation_errors_deg(est: &[Pose], gt: &[Pose]) -> Result<Vec<f64>> {
    check_lengths(est, gt)?;
    est.par_iter()
        .zip(gt.par_iter())
        .map(|(e, g)| rotation_error_deg(&e.rotation, &g.rotation))
        .collect()
}

/// Position RMSE in cm, frames matched by index, no alignment.
pub fn ate_rmse(est: &[Pose], gt: &[Pose]) -> Result<f64> {
    Ok(rmse(&translation_errors_cm(est, gt)?))
}

/// Orientation RMSE in degrees, frames matched by index.
pub fn aae_rmse(est: &[Pose], gt: &[Pose]) -> Result<f64> {
    Ok(rmse(&rotation_errors_deg(est, gt)?))
}

/// Rigid transform `A` (world to world) minimizing `Σ ‖A c_est − c_gt‖²`
/// over camera centers. Returns the estimate re-expressed through it.
pub fn align_rigid(est: &[Pose], gt: &[Pose]) -> Result<Vec<Pose>> {
    check_lengths(est, gt)?;
    if est.is_empty() {
        return Ok(Vec::new());
    }
    let ce: Vec<Vector3<f64>> = est.iter().map(|p| p.camera_center()).collect::<Result<_>>()?;
    let cg: Vec<Vector3<f64>> = gt.iter().map(|p| p.camera_center()).collect::<Result<_>>()?;
    let n = ce.len() as f64;
    let me = ce.iter().sum::<Vector3<f64>>() / n;
    let mg = cg.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for (e, g) in ce.iter().zip(&cg) {
        cov += (g - mg) * (e - me).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut s = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * vt;
    let a = Pose::new(Quaternion::from_rotation_matrix(&r), mg - r * me);
    let a_inv = a.inverse()?;
    // x_c = P x_w and x_w' = A x_w give P' = P A⁻¹
    est.iter().map(|p| p.compose(&a_inv)).collect()
}

/// Scores an estimated trajectory against ground truth matched 1:1 by
/// index. Timestamps are taken from the ground truth.
pub fn evaluate(
    name: &str,
    est: &[TrajectoryEntry],
    gt: &[TrajectoryEntry],
    alignment: Alignment,
) -> Result<MetricReport> {
    let gt_poses: Vec<Pose> = gt.iter().map(|e| e.pose).collect();
    let mut est_poses: Vec<Pose> = est.iter().map(|e| e.pose).collect();
    check_lengths(&est_poses, &gt_poses)?;
    if alignment == Alignment::Rigid {
        est_poses = align_rigid(&est_poses, &gt_poses)?;
    }
    let t = translation_errors_cm(&est_poses, &gt_poses)?;
    let r = rotation_errors_deg(&est_poses, &gt_poses)?;
    let per_frame: Vec<FrameError> = gt
        .iter()
        .zip(t.iter().zip(&r))
        .map(|(g, (&t, &r))| FrameError {
            timestamp: g.timestamp,
            trans_err_cm: t,
            rot_err_deg: r,
        })
        .collect();
    Ok(MetricReport {
        name: name.to_string(),
        ate_rmse_cm: rmse(&t),
        aae_rmse_deg: rmse(&r),
        n_frames: per_frame.len(),
        alignment,
        per_frame,
    })
}

/// Pairs estimate and ground-truth entries whose timestamps lie within
/// `max_dt`, in estimate order.
pub fn match_by_timestamp(
    est: &[TrajectoryEntry],
    gt: &[TrajectoryEntry],
    max_dt: f64,
) -> (Vec<TrajectoryEntry>, Vec<TrajectoryEntry>) {
    let a: Vec<f64> = est.iter().map(|e| e.timestamp).collect();
    let b: Vec<f64> = gt.iter().map(|e| e.timestamp).collect();
    associate(&a, &b, max_dt)
        .into_iter()
        .map(|(i, j)| (est[i], gt[j]))
        .unzip()
}

pub fn format_csv(report: &MetricReport) -> String {
    let mut s = String::from("timestamp,trans_err_cm,rot_err_deg\n");
    for f in &report.per_frame {
        writeln!(s, "{:.6},{:.9},{:.9}", f.timestamp, f.trans_err_cm, f.rot_err_deg).expect("write to string");
    }
    s
}

/// Computes metrics and writes `<out>.csv` (per frame) and `<out>.json`
/// (summary plus per frame).
pub fn report_sequence(
    name: &str,
    est: &[TrajectoryEntry],
    gt: &[TrajectoryEntry],
    alignment: Alignment,
    out: &Path,
) -> Result<MetricReport> {
    let report = evaluate(name, est, gt, alignment)?;
    let csv = out.with_extension("csv");
    std::fs::write(&csv, format_csv(&report)).map_err(|e| Error::io(&csv, e))?;
    let json = out.with_extension("json");
    let text = serde_json::to_string_pretty(&report).map_err(|e| Error::Format {
        path: json.clone(),
        message: e.to_string(),
    })?;
    std::fs::write(&json, text).map_err(|e| Error::io(&json, e))?;
    Ok(report)
}

/// Unweighted mean of per-sequence RMSE values `(ate_cm, aae_deg)`.
pub fn average(reports: &[MetricReport]) -> Option<(f64, f64)> {
    if reports.is_empty() {
        return None;
    }
    let n = reports.len() as f64;
    Some((
        reports.iter().map(|r| r.ate_rmse_cm).sum::<f64>() / n,
        reports.iter().map(|r| r.aae_rmse_deg).sum::<f64>() / n,
    ))
}

/// One column per sequence plus an `Avg.` column, and an optional
/// reference row.
pub fn format_table(reports: &[MetricReport], reference: Option<&Reference>) -> String {
    let mut head = format!("{:<14}", "metric");
    let mut ate = format!("{:<14}", "ATE RMSE [cm]");
    let mut aae = format!("{:<14}", "AAE RMSE [deg]");
    for r in reports {
        let w = r.name.len().max(9);
        write!(head, " {:>w$}", r.name).expect("write to string");
        write!(ate, " {:>w$.3}", r.ate_rmse_cm).expect("write to string");
        write!(aae, " {:>w$.3}", r.aae_rmse_deg).expect("write to string");
    }
    if let Some((a, b)) = average(reports) {
        write!(head, " {:>9}", "Avg.").expect("write to string");
        write!(ate, " {a:>9.3}").expect("write to string");
        write!(aae, " {b:>9.3}").expect("write to string");
    }
    let mut s = format!("{head}\n{ate}\n{aae}\n");
    if let Some(r) = reference {
        writeln!(
            s,
            "reference ({}): ATE {:.3} cm, AAE {:.3} deg",
            r.label, r.ate_rmse_cm, r.aae_rmse_deg
        )
        .expect("write to string");
    }
    s
}
