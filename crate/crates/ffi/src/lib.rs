//! C ABI over the `splatloc` engine.
//!
//! Every function returns a [`SplatlocStatus`]. On failure the message is
//! kept per thread and read with [`splatloc_last_error`]. Scenes are opaque
//! handles created by [`splatloc_scene_load`] and released with
//! [`splatloc_scene_free`]. Images are row-major `width * height` doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nalgebra::Vector3;
use splatloc::config::RunConfig;
use splatloc::image::Mask;
use splatloc::pose_opt::localize;
use splatloc::scene_init::load_scene;
use splatloc::{render, CameraIntrinsics, DepthImage, Error, GaussianScene, Image, Pose, Quaternion};

/// Result codes. Values match the command-line exit codes where they
/// overlap.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplatlocStatus {
    Ok = 0,
    NullPointer = 1,
    InputError = 2,
    NumericError = 4,
    Panic = 5,
}

/// Opaque Gaussian scene.
pub struct SplatlocScene {
    scene: GaussianScene,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatlocIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub near: f64,
    pub far: f64,
}

/// World-to-camera pose: `x_cam = R(q) x_world + t`, `q = (w, x, y, z)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatlocPose {
    pub q: [f64; 4],
    pub t: [f64; 3],
}

/// Summary of one localization run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplatlocLocalizeInfo {
    pub final_loss: f64,
    pub iterations: u32,
    pub best_iteration: u32,
    pub converged: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: SplatlocStatus, msg: impl Into<String>) -> SplatlocStatus {
    set_error(msg.into());
    status
}

fn from_error(e: Error) -> SplatlocStatus {
    let status = if e.is_input_error() {
        SplatlocStatus::InputError
    } else {
        SplatlocStatus::NumericError
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), SplatlocStatus>) -> SplatlocStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SplatlocStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            fail(SplatlocStatus::Panic, format!("panic: {msg}"))
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), SplatlocStatus> {
    if p.is_null() {
        Err(fail(SplatlocStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, SplatlocStatus> {
    non_null(p, what)?;
    // SAFETY: non-null and documented as a nul-terminated string
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| fail(SplatlocStatus::InputError, format!("{what} is not UTF-8")))
}

fn config(toml: *const c_char) -> Result<RunConfig, SplatlocStatus> {
    if toml.is_null() {
        return Ok(RunConfig::default());
    }
    RunConfig::from_toml(read_str(toml, "config")?).map_err(from_error)
}

impl SplatlocIntrinsics {
    fn to_core(self) -> Result<CameraIntrinsics, SplatlocStatus> {
        let k = CameraIntrinsics::new(self.fx, self.fy, self.cx, self.cy, self.width as usize, self.height as usize)
            .with_clip(self.near, self.far);
        k.validate().map_err(from_error)?;
        Ok(k)
    }
}

impl SplatlocPose {
    fn to_core(self) -> Result<Pose, SplatlocStatus> {
        let [w, x, y, z] = self.q;
        let q = Quaternion::new(w, x, y, z).normalize().map_err(from_error)?;
        let p = Pose::new(q, Vector3::from(self.t));
        p.validate().map_err(from_error)?;
        Ok(p)
    }

    fn from_core(p: &Pose) -> Self {
        Self {
            q: p.rotation.to_array(),
            t: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

/// Last error message on this thread, or null. Valid until the next call
/// into this library from the same thread.
#[no_mangle]
pub extern "C" fn splatloc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn splatloc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a scene file written by `splatloc build-scene` or `synth`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn splatloc_scene_load(path: *const c_char, out: *mut *mut SplatlocScene) -> SplatlocStatus {
    guard(|| {
        non_null(out, "out")?;
        let path = read_str(path, "path")?;
        let scene = load_scene(Path::new(path)).map_err(from_error)?;
        // SAFETY: checked non-null above
        unsafe { *out = Box::into_raw(Box::new(SplatlocScene { scene })) };
        Ok(())
    })
}

/// Releases a scene. Null is ignored.
///
/// # Safety
/// `scene` must come from [`splatloc_scene_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn splatloc_scene_free(scene: *mut SplatlocScene) {
    if !scene.is_null() {
        // SAFETY: ownership handed back by the caller
        drop(unsafe { Box::from_raw(scene) });
    }
}

/// Number of Gaussians in the scene, 0 for null.
///
/// # Safety
/// `scene` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn splatloc_scene_len(scene: *const SplatlocScene) -> usize {
    // SAFETY: caller contract
    unsafe { scene.as_ref() }.map_or(0, |s| s.scene.len())
}

/// Renders normalized depth (0 where uncovered) and optionally accumulated
/// alpha. `config_toml` may be null for defaults.
///
/// # Safety
/// Pointers must be valid; `out_depth` and non-null `out_alpha` must hold
/// `width * height` doubles.
#[no_mangle]
pub unsafe extern "C" fn splatloc_render(
    scene: *const SplatlocScene,
    intrinsics: *const SplatlocIntrinsics,
    pose: *const SplatlocPose,
    config_toml: *const c_char,
    out_depth: *mut f64,
    out_alpha: *mut f64,
) -> SplatlocStatus {
    guard(|| {
        non_null(scene, "scene")?;
        non_null(intrinsics, "intrinsics")?;
        non_null(pose, "pose")?;
        non_null(out_depth, "out_depth")?;
        // SAFETY: checked non-null; caller contract for validity
        let (scene, k, pose) = unsafe { (&(*scene).scene, (*intrinsics).to_core()?, (*pose).to_core()?) };
        let cfg = config(config_toml)?;
        let out = render(scene, &k, &pose, &cfg.render).map_err(from_error)?;
        let n = k.pixel_count();
        // SAFETY: caller provides n doubles
        unsafe { std::slice::from_raw_parts_mut(out_depth, n) }.copy_from_slice(out.norm_depth.as_slice());
        if !out_alpha.is_null() {
            // SAFETY: as above
            unsafe { std::slice::from_raw_parts_mut(out_alpha, n) }.copy_from_slice(out.alpha.as_slice());
        }
        Ok(())
    })
}

/// Estimates the pose of one depth image (meters, values `<= 0` or
/// non-finite are invalid) starting from `init`.
///
/// # Safety
/// Pointers must be valid; `depth` holds `width * height` doubles;
/// `info` may be null.
#[no_mangle]
pub unsafe extern "C" fn splatloc_localize(
    scene: *const SplatlocScene,
    intrinsics: *const SplatlocIntrinsics,
    depth: *const f64,
    init: *const SplatlocPose,
    config_toml: *const c_char,
    out_pose: *mut SplatlocPose,
    info: *mut SplatlocLocalizeInfo,
) -> SplatlocStatus {
    guard(|| {
        non_null(scene, "scene")?;
        non_null(intrinsics, "intrinsics")?;
        non_null(depth, "depth")?;
        non_null(init, "init")?;
        non_null(out_pose, "out_pose")?;
        // SAFETY: checked non-null; caller contract for validity
        let (scene, k, init) = unsafe { (&(*scene).scene, (*intrinsics).to_core()?, (*init).to_core()?) };
        let cfg = config(config_toml)?;
        // SAFETY: caller provides width * height doubles
        let raw = unsafe { std::slice::from_raw_parts(depth, k.pixel_count()) };
        let valid: Vec<bool> = raw.iter().map(|d| d.is_finite() && *d > 0.0).collect();
        let img = Image::from_vec(k.width, k.height, raw.iter().map(|d| if d.is_finite() { *d } else { 0.0 }).collect())
            .map_err(from_error)?;
        let mask = Mask::from_vec(k.width, k.height, valid).map_err(from_error)?;
        let obs = DepthImage::new(img, mask).map_err(from_error)?;
        let est = localize(scene, &k, &obs, &init, &cfg.optim, &cfg.loss, &cfg.render).map_err(from_error)?;
        // SAFETY: checked non-null
        unsafe { *out_pose = SplatlocPose::from_core(&est.pose) };
        if !info.is_null() {
            // SAFETY: non-null, caller contract
            unsafe {
                *info = SplatlocLocalizeInfo {
                    final_loss: est.final_loss.total,
                    iterations: est.iterations_run as u32,
                    best_iteration: est.best_iteration as u32,
                    converged: est.converged,
                }
            };
        }
        Ok(())
    })
}
