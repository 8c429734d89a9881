//! C ABI over `sacc_core`.
//!
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Every entry point returns a [`SaccStatus`];
//! on failure [`sacc_last_error`] describes the most recent error on the
//! calling thread. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sacc_core::compositor::{compose_image, ObjectAsset};
use sacc_core::data::{load_sample, make_training_example, save_rgb_png, SceneSample};
use sacc_core::geometry::Transform2D;
use sacc_core::model::ModelState;
use sacc_core::trainer::{infer_transform, Latent};
use sacc_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaccStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    /// No intact object in the source scene.
    NoObject = 5,
    Runtime = 6,
    Panic = 7,
}

/// Placement `(s, tx, ty)` in the frame's normalized coordinates.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SaccTransform {
    pub s: f64,
    pub tx: f64,
    pub ty: f64,
}

pub struct SaccModel(ModelState);
pub struct SaccScene(SceneSample);
pub struct SaccAsset(ObjectAsset);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SaccStatus {
    match e {
        Error::Io { .. } => SaccStatus::Io,
        Error::Format { .. } | Error::Checkpoint(_) => SaccStatus::Format,
        Error::InvalidTransform(_) | Error::InvalidInput(_) | Error::Shape(_) | Error::ClassTable(_) => {
            SaccStatus::InvalidArgument
        }
        _ => SaccStatus::Runtime,
    }
}

struct Failure(SaccStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SaccStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SaccStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SaccStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(SaccStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Failure(SaccStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn transform_of(t: &SaccTransform) -> Result<Transform2D, Failure> {
    Ok(Transform2D::new(t.s, t.tx, t.ty)?)
}

/// Message of the calling thread's last error, or null if none. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn sacc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static, nul-terminated library version.
#[no_mangle]
pub extern "C" fn sacc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `path` is a nul-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sacc_model_load(path: *const c_char, out: *mut *mut SaccModel) -> SaccStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let m = ModelState::load(&path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(SaccModel(m)));
        Ok(())
    })
}

/// # Safety
/// `model` is null or a handle from [`sacc_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sacc_model_free(model: *mut SaccModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Loads a scene directory (image, layout and instance map).
///
/// # Safety
/// `dir` is a nul-terminated string; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sacc_scene_load(dir: *const c_char, out: *mut *mut SaccScene) -> SaccStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let s = load_sample(&path_arg(dir, "dir")?)?;
        *out = Box::into_raw(Box::new(SaccScene(s)));
        Ok(())
    })
}

/// # Safety
/// `scene` is null or a live scene handle.
#[no_mangle]
pub unsafe extern "C" fn sacc_scene_free(scene: *mut SaccScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// # Safety
/// `scene` is a live handle; `width` and `height` are writable.
#[no_mangle]
pub unsafe extern "C" fn sacc_scene_size(scene: *const SaccScene, width: *mut usize, height: *mut usize) -> SaccStatus {
    guard(|| {
        let s = handle(scene, "scene")?;
        if width.is_null() || height.is_null() {
            return Err(null("width/height"));
        }
        *width = s.0.width();
        *height = s.0.height();
        Ok(())
    })
}

/// Cuts an intact object out of `scene` at the model's patch size.
///
/// # Safety
/// Handles are live; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sacc_asset_extract(
    model: *const SaccModel,
    scene: *const SaccScene,
    seed: u64,
    out: *mut *mut SaccAsset,
) -> SaccStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let s = handle(scene, "scene")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let ex = make_training_example(s.0.clone(), seed, m.0.config().patch_side)?
            .ok_or_else(|| Failure(SaccStatus::NoObject, "no intact object in scene".into()))?;
        *out = Box::into_raw(Box::new(SaccAsset(ex.asset)));
        Ok(())
    })
}

/// # Safety
/// `asset` is null or a live asset handle.
#[no_mangle]
pub unsafe extern "C" fn sacc_asset_free(asset: *mut SaccAsset) {
    if !asset.is_null() {
        drop(Box::from_raw(asset));
    }
}

/// Predicts a placement for `asset` in `scene` with the latent drawn from `seed`.
///
/// # Safety
/// Handles are live; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn sacc_infer_transform(
    model: *const SaccModel,
    scene: *const SaccScene,
    asset: *const SaccAsset,
    seed: u64,
    out: *mut SaccTransform,
) -> SaccStatus {
    guard(|| {
        let (m, s, a) = (
            handle(model, "model")?,
            handle(scene, "scene")?,
            handle(asset, "asset")?,
        );
        if out.is_null() {
            return Err(null("out"));
        }
        let t = infer_transform(&m.0, &s.0, &a.0, &Latent::Seed(seed))?;
        *out = SaccTransform {
            s: t.s,
            tx: t.tx,
            ty: t.ty,
        };
        Ok(())
    })
}

/// Writes the composite as planar RGB `f32` (`3 x H x W`) into `buf` of `len` floats.
///
/// # Safety
/// Handles are live; `buf` holds `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn sacc_compose(
    scene: *const SaccScene,
    asset: *const SaccAsset,
    transform: *const SaccTransform,
    buf: *mut f32,
    len: usize,
) -> SaccStatus {
    guard(|| {
        let (s, a) = (handle(scene, "scene")?, handle(asset, "asset")?);
        let t = transform_of(handle(transform, "transform")?)?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let need = 3 * s.0.width() * s.0.height();
        if len != need {
            return Err(Failure(
                SaccStatus::InvalidArgument,
                format!("buffer holds {len} floats, need {need}"),
            ));
        }
        let img = compose_image(s.0.image.view(), &a.0, &t)?;
        std::slice::from_raw_parts_mut(buf, len)
            .iter_mut()
            .zip(img.iter())
            .for_each(|(d, &v)| *d = v);
        Ok(())
    })
}

/// Composes and writes the result as an RGB PNG.
///
/// # Safety
/// Handles are live; `path` is a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sacc_compose_png(
    scene: *const SaccScene,
    asset: *const SaccAsset,
    transform: *const SaccTransform,
    path: *const c_char,
) -> SaccStatus {
    guard(|| {
        let (s, a) = (handle(scene, "scene")?, handle(asset, "asset")?);
        let t = transform_of(handle(transform, "transform")?)?;
        let p = path_arg(path, "path")?;
        save_rgb_png(&p, &compose_image(s.0.image.view(), &a.0, &t)?)?;
        Ok(())
    })
}
