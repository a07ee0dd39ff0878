//! Seeded box-room scenes with rendered depth frames.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{write_depth_png, write_intrinsics, write_trajectory_tum, Frame, Sequence, TrajectoryEntry, INTRINSICS_FILE};
use crate::error::{Error, Result};
use crate::geom::{CameraIntrinsics, Pose, Quaternion};
use crate::image::{DepthImage, Image};
use crate::renderer::{render, Gaussian, GaussianScene, RenderConfig};
use crate::scene_init::{save_scene, write_scene_summary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrajectoryShape {
    /// Arc of a circle around the room center, looking at the target.
    Orbit,
    /// Straight segment across the room, looking at the target.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    /// Room extent along x, y (floor) and z (height), meters.
    pub room: [f64; 3],
    /// Gaussian spacing on every surface, meters.
    pub spacing: f64,
    pub obstacles: usize,
    pub trajectory: TrajectoryShape,
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub focal: f64,
    /// Orbit radius, or distance of the linear path from the room center.
    pub path_radius: f64,
    pub camera_height: f64,
    /// Orbit arc or linear path length (degrees / meters).
    pub path_extent: f64,
    pub target_height: f64,
    pub frame_interval: f64,
    /// Additive Gaussian depth noise, meters.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            room: [3.0, 3.0, 2.5],
            spacing: 0.05,
            obstacles: 4,
            trajectory: TrajectoryShape::Orbit,
            frames: 20,
            width: 320,
            height: 240,
            focal: 250.0,
            path_radius: 1.1,
            camera_height: 1.3,
            path_extent: 40.0,
            target_height: 0.5,
            frame_interval: 1.0 / 30.0,
            noise_std: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.into()));
        if !self.room.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return bad("room extents must be positive");
        }
        if !(self.spacing > 0.0) || !self.spacing.is_finite() {
            return bad("spacing must be positive");
        }
        let area = 2.0 * (self.room[0] * self.room[1] + self.room[0] * self.room[2] + self.room[1] * self.room[2]);
        if area / (self.spacing * self.spacing) > 5e6 {
            return bad("spacing yields more than 5M gaussians");
        }
        if self.frames == 0 || self.width < 3 || self.height < 3 {
            return bad("need at least one frame of at least 3x3 pixels");
        }
        if !(self.focal > 0.0) || !(self.frame_interval > 0.0) || !(self.noise_std >= 0.0) {
            return bad("focal and frame interval must be positive, noise non-negative");
        }
        let half = 0.5 * self.room[0].min(self.room[1]);
        if !(self.path_radius.abs() < half) || !(self.camera_height > 0.0 && self.camera_height < self.room[2]) {
            return bad("camera path leaves the room");
        }
        if !self.path_extent.is_finite() || !self.target_height.is_finite() {
            return bad("non-finite path parameters");
        }
        Ok(())
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        CameraIntrinsics::new(
            self.focal,
            self.focal,
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
            self.width,
            self.height,
        )
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub scene: GaussianScene,
    pub sequence: Sequence,
}

/// World-to-camera pose at `eye` looking at `target`, world z up, camera
/// y down.
pub fn look_at(eye: &Vector3<f64>, target: &Vector3<f64>) -> Result<Pose> {
    let f = target - eye;
    let up = Vector3::z();
    let x = f.cross(&up);
    if f.norm() < 1e-9 || x.norm() < 1e-9 * f.norm() {
        return Err(Error::InvalidArgument("look_at direction is degenerate".into()));
    }
    let f = f.normalize();
    let x = x.normalize();
    let y = f.cross(&x);
    let r_cw = Matrix3::from_columns(&[x, y, f]);
    let r = r_cw.transpose();
    Ok(Pose::new(Quaternion::from_rotation_matrix(&r), -(r * eye)))
}

/// Flat discs on a rectangle `origin + a·u + b·v`, `a ∈ [0, la]`, `b ∈ [0, lb]`.
#[allow(clippy::too_many_arguments)]
fn face(
    out: &mut Vec<Gaussian>,
    rng: &mut ChaCha8Rng,
    origin: Vector3<f64>,
    u: Vector3<f64>,
    v: Vector3<f64>,
    la: f64,
    lb: f64,
    s: f64,
) {
    let n = u.cross(&v);
    let rotation = Quaternion::from_rotation_matrix(&Matrix3::from_columns(&[u, v, n]));
    let na = (la / s).round().max(1.0) as usize;
    let nb = (lb / s).round().max(1.0) as usize;
    let (da, db) = (la / na as f64, lb / nb as f64);
    for i in 0..na {
        for j in 0..nb {
            let a = (i as f64 + 0.5 + rng.random_range(-0.2..0.2)) * da;
            let b = (j as f64 + 0.5 + rng.random_range(-0.2..0.2)) * db;
            out.push(Gaussian {
                mean: origin + u * a + v * b,
                scale: Vector3::new(0.4 * da, 0.4 * db, 0.15 * s),
                rotation,
                opacity: 1.0,
            });
        }
    }
}

/// Five visible faces of an axis-aligned box resting on the floor.
fn box_faces(out: &mut Vec<Gaussian>, rng: &mut ChaCha8Rng, lo: Vector3<f64>, size: Vector3<f64>, s: f64) {
    let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
    let hi = lo + size;
    // normals point outward
    face(out, rng, Vector3::new(lo.x, lo.y, hi.z), x, y, size.x, size.y, s);
    face(out, rng, lo, z, y, size.z, size.y, s);
    face(out, rng, Vector3::new(hi.x, lo.y, lo.z), y, z, size.y, size.z, s);
    face(out, rng, lo, x, z, size.x, size.z, s);
    face(out, rng, Vector3::new(lo.x, hi.y, lo.z), z, x, size.z, size.x, s);
}

fn room_gaussians(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<Gaussian> {
    let [w, d, h] = spec.room;
    let s = spec.spacing;
    let (x, y, z) = (Vector3::x(), Vector3::y(), Vector3::z());
    let lo = Vector3::new(-w / 2.0, -d / 2.0, 0.0);
    let mut g = Vec::new();
    // normals point into the room
    face(&mut g, rng, lo, x, y, w, d, s);
    face(&mut g, rng, Vector3::new(lo.x, lo.y, h), y, x, d, w, s);
    face(&mut g, rng, lo, y, z, d, h, s);
    face(&mut g, rng, Vector3::new(w / 2.0, lo.y, 0.0), z, y, h, d, s);
    face(&mut g, rng, lo, z, x, h, w, s);
    face(&mut g, rng, Vector3::new(lo.x, d / 2.0, 0.0), x, z, w, h, s);

    let reach = (0.5 * spec.path_radius.abs()).max(0.05);
    for _ in 0..spec.obstacles {
        let size = Vector3::new(
            rng.random_range(0.25..0.6),
            rng.random_range(0.25..0.6),
            rng.random_range(0.3..0.9f64).min(0.9 * h),
        );
        let c = Vector3::new(rng.random_range(-reach..reach), rng.random_range(-reach..reach), 0.0);
        let lo = c - Vector3::new(size.x / 2.0, size.y / 2.0, 0.0);
        box_faces(&mut g, rng, lo, size, s);
    }
    g
}

fn camera_path(spec: &SynthSpec) -> Result<Vec<Pose>> {
    let target = Vector3::new(0.0, 0.0, spec.target_height);
    let n = spec.frames;
    (0..n)
        .map(|i| {
            let f = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
            let eye = match spec.trajectory {
                TrajectoryShape::Orbit => {
                    let a = (-0.5 + f) * spec.path_extent.to_radians() - std::f64::consts::FRAC_PI_2;
                    Vector3::new(spec.path_radius * a.cos(), spec.path_radius * a.sin(), spec.camera_height)
                }
                TrajectoryShape::Linear => Vector3::new(
                    (-0.5 + f) * spec.path_extent,
                    -spec.path_radius,
                    spec.camera_height,
                ),
            };
            look_at(&eye, &target)
        })
        .collect()
}

/// Builds the room scene and renders one depth frame per trajectory pose.
/// Observed depth is the rendered normalized depth on its mask, plus
/// optional noise.
pub fn synth_scene(spec: &SynthSpec) -> Result<SynthOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scene = GaussianScene::new(room_gaussians(spec, &mut rng), Pose::identity())?;
    let k = spec.intrinsics();
    let poses = camera_path(spec)?;
    let cfg = RenderConfig::default();
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut frames = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let out = render(&scene, &k, pose, &cfg)?;
        if out.mask.count() == 0 {
            return Err(Error::InvalidSpec(format!("frame {i} sees no geometry")));
        }
        let mut depth = Image::zeros(k.width, k.height);
        for (j, (&on, &v)) in out.mask.as_slice().iter().zip(out.norm_depth.as_slice()).enumerate() {
            if on {
                let n = if spec.noise_std > 0.0 { noise.sample(&mut noise_rng) } else { 0.0 };
                depth.as_mut_slice()[j] = v + n;
            }
        }
        frames.push(Frame {
            timestamp: i as f64 * spec.frame_interval,
            depth: DepthImage::new(depth, out.mask.clone())?,
            gt: Some(*pose),
        });
    }
    Ok(SynthOutput {
        scene,
        sequence: Sequence {
            frames,
            intrinsics: Some(k),
            dropped: 0,
        },
    })
}

/// Writes the frames in TUM layout plus the intrinsics and the generating
/// scene (`scene.bin`, `scene.json`).
pub fn write_synth_dataset(dir: &Path, out: &SynthOutput, depth_factor: f64) -> Result<()> {
    let depth_dir = dir.join("depth");
    std::fs::create_dir_all(&depth_dir).map_err(|e| Error::io(&depth_dir, e))?;
    let mut list = String::from("# timestamp filename\n");
    let mut traj = Vec::new();
    for f in &out.sequence.frames {
        let name = format!("depth/{:.6}.png", f.timestamp);
        write_depth_png(&dir.join(&name), &f.depth, depth_factor)?;
        list += &format!("{:.6} {name}\n", f.timestamp);
        if let Some(pose) = f.gt {
            traj.push(TrajectoryEntry {
                timestamp: f.timestamp,
                pose,
            });
        }
    }
    let p = dir.join("depth.txt");
    std::fs::write(&p, list).map_err(|e| Error::io(&p, e))?;
    write_trajectory_tum(&dir.join("groundtruth.txt"), &traj)?;
    if let Some(k) = &out.sequence.intrinsics {
        write_intrinsics(&dir.join(INTRINSICS_FILE), k)?;
    }
    save_scene(&dir.join("scene.bin"), &out.scene)?;
    write_scene_summary(&dir.join("scene.json"), &out.scene)
}
