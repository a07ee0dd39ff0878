//! Shared helpers: a per-pixel full-sort reference renderer and seeded
//! random scenes.
#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatloc::{CameraIntrinsics, Gaussian, GaussianScene, Image, Pose, Quaternion, RenderConfig};

pub struct NaiveContributor {
    pub index: usize,
    pub depth: f64,
    pub alpha: f64,
    pub transmittance: f64,
}

pub struct NaiveRender {
    pub depth: Image,
    pub alpha: Image,
    pub norm_depth: Image,
    pub contributors: Vec<Vec<NaiveContributor>>,
}

struct Splat {
    index: usize,
    z: f64,
    u: f64,
    v: f64,
    conic: Matrix2<f64>,
    opacity: f64,
}

fn rotation(q: &Quaternion) -> Matrix3<f64> {
    let n = (q.w * q.w + q.x * q.x + q.y * q.y + q.z * q.z).sqrt();
    let (w, x, y, z) = (q.w / n, q.x / n, q.y / n, q.z / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Projects every Gaussian independently of the library and composites
/// each pixel over all splats in `(depth, index)` order.
pub fn naive_render(scene: &GaussianScene, k: &CameraIntrinsics, pose: &Pose, cfg: &RenderConfig) -> NaiveRender {
    let r = rotation(&pose.rotation);
    let g = cfg.frustum_guard;
    let (w, h) = (k.width, k.height);
    let mut splats = Vec::new();
    for (i, gs) in scene.gaussians().iter().enumerate() {
        let m = r * gs.mean + pose.translation;
        if !(m.z > k.near && m.z < k.far) {
            continue;
        }
        let (tx, ty) = (m.x / m.z, m.y / m.z);
        if tx < g * (-0.5 - k.cx) / k.fx
            || tx > g * (w as f64 - 0.5 - k.cx) / k.fx
            || ty < g * (-0.5 - k.cy) / k.fy
            || ty > g * (h as f64 - 0.5 - k.cy) / k.fy
        {
            continue;
        }
        let rg = rotation(&gs.rotation);
        let s = Matrix3::from_diagonal(&gs.scale.component_mul(&gs.scale));
        let cov3 = rg * s * rg.transpose();
        let j = Matrix2x3::new(
            k.fx / m.z,
            0.0,
            -k.fx * m.x / (m.z * m.z),
            0.0,
            k.fy / m.z,
            -k.fy * m.y / (m.z * m.z),
        );
        let jw = j * r;
        let cov2 = jw * cov3 * jw.transpose() + Matrix2::identity() * cfg.dilation;
        let det = cov2[(0, 0)] * cov2[(1, 1)] - cov2[(0, 1)] * cov2[(1, 0)];
        if det.is_nan() || det <= 1e-12 {
            continue;
        }
        splats.push(Splat {
            index: i,
            z: m.z,
            u: k.fx * tx + k.cx,
            v: k.fy * ty + k.cy,
            conic: Matrix2::new(cov2[(1, 1)], -cov2[(0, 1)], -cov2[(1, 0)], cov2[(0, 0)]) / det,
            opacity: gs.opacity,
        });
    }
    splats.sort_by(|a, b| a.z.total_cmp(&b.z).then(a.index.cmp(&b.index)));

    let mut depth = Image::zeros(w, h);
    let mut alpha = Image::zeros(w, h);
    let mut norm_depth = Image::zeros(w, h);
    let mut contributors = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let mut t = 1.0;
            let (mut d, mut a) = (0.0, 0.0);
            let mut list = Vec::new();
            for s in &splats {
                if t < cfg.transmittance_epsilon {
                    break;
                }
                let (dx, dy) = (x as f64 - s.u, y as f64 - s.v);
                let sigma = 0.5 * (s.conic[(0, 0)] * dx * dx + s.conic[(1, 1)] * dy * dy)
                    + 0.5 * (s.conic[(0, 1)] + s.conic[(1, 0)]) * dx * dy;
                if !(0.0..=cfg.sigma_cutoff).contains(&sigma) {
                    continue;
                }
                let al = (s.opacity * (-sigma).exp()).min(cfg.alpha_clamp_max);
                d += s.z * al * t;
                a += al * t;
                list.push(NaiveContributor {
                    index: s.index,
                    depth: s.z,
                    alpha: al,
                    transmittance: t,
                });
                t *= 1.0 - al;
            }
            depth.set(x, y, d);
            alpha.set(x, y, a);
            if a > cfg.alpha_floor {
                norm_depth.set(x, y, d / a);
            }
            contributors.push(list);
        }
    }
    NaiveRender {
        depth,
        alpha,
        norm_depth,
        contributors,
    }
}

pub fn random_unit_quaternion(rng: &mut impl Rng) -> Quaternion {
    loop {
        let v: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 0.1 && n <= 1.0 {
            return Quaternion::new(v[0] / n, v[1] / n, v[2] / n, v[3] / n);
        }
    }
}

/// A random pose and up to `max_n` Gaussians placed in front of it.
pub fn random_scene(seed: u64, max_n: usize, width: usize, height: usize) -> (GaussianScene, CameraIntrinsics, Pose) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let f = rng.random_range(0.8..1.4) * width as f64;
    let k = CameraIntrinsics::new(
        f,
        f,
        (width as f64 - 1.0) / 2.0 + rng.random_range(-3.0..3.0),
        (height as f64 - 1.0) / 2.0 + rng.random_range(-3.0..3.0),
        width,
        height,
    );
    let pose = Pose::new(
        random_unit_quaternion(&mut rng),
        Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
    );
    let cam_to_world = pose.inverse().unwrap();
    let n = rng.random_range(1..=max_n);
    let gaussians = (0..n)
        .map(|_| {
            let z = rng.random_range(0.8..4.0);
            let c = Vector3::new(rng.random_range(-0.6..0.6) * z, rng.random_range(-0.6..0.6) * z, z);
            Gaussian {
                mean: cam_to_world.transform_point(&c).unwrap(),
                scale: Vector3::new(
                    rng.random_range(0.02..0.3),
                    rng.random_range(0.02..0.3),
                    rng.random_range(0.02..0.3),
                ),
                rotation: random_unit_quaternion(&mut rng),
                opacity: rng.random_range(0.05..1.0),
            }
        })
        .collect();
    (GaussianScene::new(gaussians, Pose::identity()).unwrap(), k, pose)
}

pub fn max_abs_diff(a: &Image, b: &Image) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
