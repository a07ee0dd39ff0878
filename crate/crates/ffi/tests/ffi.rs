use std::ffi::{CStr, CString};
use std::ptr;

use nalgebra::Vector3;
use splatloc::scene_init::save_scene;
use splatloc::{render, CameraIntrinsics, Gaussian, GaussianScene, Pose, Quaternion, RenderConfig};
use splatloc_ffi::*;

fn wall() -> GaussianScene {
    let mut g = Vec::new();
    for i in 0..24 {
        for j in 0..18 {
            let x = -0.6 + 0.05 * i as f64;
            let y = -0.45 + 0.05 * j as f64;
            let z = 2.0 + 0.3 * x + 0.1 * (3.0 * y).sin();
            g.push(Gaussian::isotropic(Vector3::new(x, y, z), 0.03, 0.9));
        }
    }
    GaussianScene::new(g, Pose::identity()).unwrap()
}

fn intrinsics() -> SplatlocIntrinsics {
    SplatlocIntrinsics {
        fx: 60.0,
        fy: 60.0,
        cx: 23.5,
        cy: 17.5,
        width: 48,
        height: 36,
        near: 0.01,
        far: 100.0,
    }
}

fn core_k() -> CameraIntrinsics {
    CameraIntrinsics::new(60.0, 60.0, 23.5, 17.5, 48, 36)
}

fn last_error() -> String {
    let p = splatloc_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

struct Loaded(*mut SplatlocScene);

impl Drop for Loaded {
    fn drop(&mut self) {
        unsafe { splatloc_scene_free(self.0) };
    }
}

fn load(scene: &GaussianScene) -> Loaded {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scene.bin");
    save_scene(&path, scene).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { splatloc_scene_load(c.as_ptr(), &mut h) }, SplatlocStatus::Ok);
    assert!(splatloc_last_error().is_null());
    Loaded(h)
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(splatloc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn missing_scene_is_input_error() {
    let c = CString::new("/nonexistent/scene.bin").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { splatloc_scene_load(c.as_ptr(), &mut h) }, SplatlocStatus::InputError);
    assert!(h.is_null());
    assert!(last_error().contains("/nonexistent/scene.bin"));
}

#[test]
fn null_arguments_are_reported() {
    let c = CString::new("x").unwrap();
    assert_eq!(unsafe { splatloc_scene_load(c.as_ptr(), ptr::null_mut()) }, SplatlocStatus::NullPointer);
    assert_eq!(unsafe { splatloc_scene_load(ptr::null(), &mut ptr::null_mut()) }, SplatlocStatus::NullPointer);
    assert_eq!(unsafe { splatloc_scene_len(ptr::null()) }, 0);
    unsafe { splatloc_scene_free(ptr::null_mut()) };
    let k = intrinsics();
    let pose = SplatlocPose { q: [1.0, 0.0, 0.0, 0.0], t: [0.0; 3] };
    let mut d = vec![0.0; 48 * 36];
    let st = unsafe { splatloc_render(ptr::null(), &k, &pose, ptr::null(), d.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, SplatlocStatus::NullPointer);
    assert!(last_error().contains("scene"));
}

#[test]
fn render_matches_library() {
    let scene = wall();
    let h = load(&scene);
    assert_eq!(unsafe { splatloc_scene_len(h.0) }, scene.len());
    let pose = Pose::new(
        Quaternion::from_axis_angle(&Vector3::new(0.1, 1.0, 0.0), 0.05).unwrap(),
        Vector3::new(0.02, -0.01, 0.05),
    );
    let c_pose = SplatlocPose {
        q: pose.rotation.to_array(),
        t: [pose.translation.x, pose.translation.y, pose.translation.z],
    };
    let (mut d, mut a) = (vec![0.0; 48 * 36], vec![0.0; 48 * 36]);
    let st = unsafe { splatloc_render(h.0, &intrinsics(), &c_pose, ptr::null(), d.as_mut_ptr(), a.as_mut_ptr()) };
    assert_eq!(st, SplatlocStatus::Ok);
    let expect = render(&scene, &core_k(), &pose, &RenderConfig::default()).unwrap();
    assert_eq!(d, expect.norm_depth.as_slice());
    assert_eq!(a, expect.alpha.as_slice());
}

#[test]
fn bad_inputs_are_input_errors() {
    let h = load(&wall());
    let pose = SplatlocPose { q: [1.0, 0.0, 0.0, 0.0], t: [0.0; 3] };
    let mut d = vec![0.0; 48 * 36];
    let mut k = intrinsics();
    k.fx = -1.0;
    let st = unsafe { splatloc_render(h.0, &k, &pose, ptr::null(), d.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, SplatlocStatus::InputError);
    let zero_q = SplatlocPose { q: [0.0; 4], t: [0.0; 3] };
    let st = unsafe { splatloc_render(h.0, &intrinsics(), &zero_q, ptr::null(), d.as_mut_ptr(), ptr::null_mut()) };
    assert_ne!(st, SplatlocStatus::Ok);
    let cfg = CString::new("[optim]\nlearning_rate = 1.0\n").unwrap();
    let st = unsafe { splatloc_render(h.0, &intrinsics(), &pose, cfg.as_ptr(), d.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, SplatlocStatus::InputError);
    assert!(last_error().contains("learning_rate"));
}

#[test]
fn localize_from_truth_stays_put() {
    let scene = wall();
    let h = load(&scene);
    let gt = SplatlocPose { q: [1.0, 0.0, 0.0, 0.0], t: [0.0; 3] };
    let mut depth = vec![0.0; 48 * 36];
    let st = unsafe { splatloc_render(h.0, &intrinsics(), &gt, ptr::null(), depth.as_mut_ptr(), ptr::null_mut()) };
    assert_eq!(st, SplatlocStatus::Ok);
    let cfg = CString::new("[optim]\nmin_iters = 5\npatience = 3\nmax_iters = 20\n").unwrap();
    let mut out = SplatlocPose { q: [0.0; 4], t: [0.0; 3] };
    let mut info = SplatlocLocalizeInfo {
        final_loss: -1.0,
        iterations: 0,
        best_iteration: 0,
        converged: false,
    };
    let st = unsafe {
        splatloc_localize(h.0, &intrinsics(), depth.as_ptr(), &gt, cfg.as_ptr(), &mut out, &mut info)
    };
    assert_eq!(st, SplatlocStatus::Ok, "{}", last_error());
    assert!(info.iterations >= 5 && info.iterations <= 20);
    assert!(info.final_loss.abs() < 1e-9);
    let est = Pose::new(Quaternion::from_array(out.q), Vector3::from(out.t));
    let (ang, tr) = est.distance(&Pose::identity()).unwrap();
    assert!(tr * 100.0 < 1e-4 && ang.to_degrees() < 1e-4);
}

#[test]
fn header_is_valid_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/splatloc.h");
    let text = std::fs::read_to_string(header).unwrap();
    for f in ["splatloc_scene_load", "splatloc_render", "splatloc_localize", "splatloc_last_error"] {
        assert!(text.contains(f), "{f} missing from header");
    }
    // compile check where a C compiler is available
    let Ok(st) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c", header])
        .status()
    else {
        return;
    };
    assert!(st.success());
}
