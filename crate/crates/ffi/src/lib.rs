//! C interface to the keypoint cascade.
//!
//! Every function returns a `KeplerStatus`; on failure the message is
//! available from `kepler_last_error` on the same thread. Shapes cross the
//! boundary as 42 doubles `x0, y0, .., x20, y20` in image pixels.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use kepler::cascade::{run_cascade, CascadeModel, NetworkBackend};
use kepler::eval::nme;
use kepler::image::Raster;
use kepler::learning::bounded_correction;
use kepler::model::{FaceBox, Point, Shape, VisibilityVector, NUM_LANDMARKS};
use kepler::KeplerError;

/// Landmarks per face.
pub const KEPLER_NUM_LANDMARKS: usize = 21;
/// Doubles per shape: `x, y` for each landmark.
pub const KEPLER_SHAPE_LEN: usize = 42;

const _: () = assert!(KEPLER_NUM_LANDMARKS == NUM_LANDMARKS && KEPLER_SHAPE_LEN == 2 * NUM_LANDMARKS);

/// Result code of every call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KeplerStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    MissingStage = 5,
    Internal = 6,
}

/// A loaded cascade. Create with `kepler_model_load`, release with
/// `kepler_model_free`.
pub struct KeplerModel {
    model: CascadeModel,
}

/// Output of `kepler_model_run`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct KeplerPrediction {
    pub points: [f64; KEPLER_SHAPE_LEN],
    /// Clamped to [0, 1].
    pub visibility: [f64; KEPLER_NUM_LANDMARKS],
    /// Yaw, pitch, roll in degrees.
    pub pose: [f64; 3],
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &KeplerError) -> KeplerStatus {
    match e {
        KeplerError::Io { .. } | KeplerError::Image { .. } => KeplerStatus::Io,
        KeplerError::Format(_) | KeplerError::Parse { .. } => KeplerStatus::Format,
        KeplerError::MissingStage(_) => KeplerStatus::MissingStage,
        _ => KeplerStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic for `kepler_last_error`.
fn guard(f: impl FnOnce() -> Result<(), (KeplerStatus, String)>) -> KeplerStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            KeplerStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal error");
            KeplerStatus::Internal
        }
    }
}

fn lib_err(e: KeplerError) -> (KeplerStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (KeplerStatus, String) {
    (KeplerStatus::NullArgument, format!("{name} is null"))
}

/// # Safety
/// `p` must be null or point to `n` readable doubles.
unsafe fn doubles<'a>(p: *const f64, n: usize, name: &str) -> Result<&'a [f64], (KeplerStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn shape_of(v: &[f64]) -> Result<Shape, (KeplerStatus, String)> {
    Shape::new(v.chunks(2).map(|c| Point::new(c[0], c[1])).collect()).map_err(lib_err)
}

fn visibility_of(v: &[f64]) -> Result<VisibilityVector, (KeplerStatus, String)> {
    VisibilityVector::new(v.to_vec()).map_err(lib_err)
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn kepler_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn kepler_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn kepler_num_landmarks() -> usize {
    NUM_LANDMARKS
}

/// Load the model bundle in directory `dir`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn kepler_model_load(dir: *const c_char, out: *mut *mut KeplerModel) -> KeplerStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        if dir.is_null() {
            return Err(null("dir"));
        }
        let dir = CStr::from_ptr(dir)
            .to_str()
            .map_err(|_| (KeplerStatus::InvalidArgument, "dir is not UTF-8".to_string()))?;
        let model = CascadeModel::load(Path::new(dir)).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(KeplerModel { model }));
        Ok(())
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must come from `kepler_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn kepler_model_free(model: *mut KeplerModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Non-zero when the bundle contains the local correction stage.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn kepler_model_has_stage5(model: *const KeplerModel) -> c_int {
    model.as_ref().is_some_and(|m| m.model.has_stage5()) as c_int
}

/// Run the cascade on an interleaved 8-bit RGB image.
///
/// `stride` is the byte distance between rows (at least `3 * width`),
/// `face_box` is `x, y, w, h` in pixels. `stage5` non-zero enables the
/// local correction stage when the bundle has one.
///
/// # Safety
/// `rgb` must hold `stride * height` bytes, `face_box` four doubles, and
/// `model` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn kepler_model_run(
    model: *const KeplerModel,
    rgb: *const u8,
    width: usize,
    height: usize,
    stride: usize,
    face_box: *const f64,
    stage5: c_int,
    out: *mut KeplerPrediction,
) -> KeplerStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.model;
        if rgb.is_null() {
            return Err(null("rgb"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if width == 0 || height == 0 || stride < 3 * width {
            return Err((
                KeplerStatus::InvalidArgument,
                "image must be non-empty with stride of at least 3 * width".into(),
            ));
        }
        let b = doubles(face_box, 4, "face_box")?;
        let face_box = FaceBox::new(b[0], b[1], b[2], b[3]).map_err(lib_err)?;
        let bytes = std::slice::from_raw_parts(rgb, stride * height);
        let mut image = Raster::new(width, height);
        for y in 0..height {
            for x in 0..width {
                for c in 0..3 {
                    image.set(c, x, y, bytes[y * stride + 3 * x + c] as f32 / 255.0);
                }
            }
        }
        let backend = NetworkBackend { model };
        let use5 = stage5 != 0 && model.has_stage5();
        let r = run_cascade(&backend, &image, &face_box, &model.mean_shape, use5).map_err(lib_err)?;
        let mut pred = KeplerPrediction {
            points: [0.0; KEPLER_SHAPE_LEN],
            visibility: [0.0; KEPLER_NUM_LANDMARKS],
            pose: r.pose.as_array(),
        };
        for (i, p) in r.shape.iter().enumerate() {
            pred.points[2 * i] = p.x;
            pred.points[2 * i + 1] = p.y;
        }
        pred.visibility.copy_from_slice(r.visibility.clamped().values());
        *out = pred;
        Ok(())
    })
}

/// Bounded correction from `current` towards `truth`: every visible error
/// vector is shortened to at most `bound` pixels. All shape arrays hold 42
/// doubles and `visibility` 21.
///
/// # Safety
/// All pointers must be valid for the sizes above.
#[no_mangle]
pub unsafe extern "C" fn kepler_bounded_correction(
    truth: *const f64,
    current: *const f64,
    visibility: *const f64,
    bound: f64,
    out: *mut f64,
) -> KeplerStatus {
    guard(|| {
        let n = 2 * NUM_LANDMARKS;
        let g = shape_of(doubles(truth, n, "truth")?)?;
        let y = shape_of(doubles(current, n, "current")?)?;
        let v = visibility_of(doubles(visibility, NUM_LANDMARKS, "visibility")?)?;
        if out.is_null() {
            return Err(null("out"));
        }
        let c = bounded_correction(&g, &y, bound, &v).map_err(lib_err)?;
        let out = std::slice::from_raw_parts_mut(out, n);
        for (i, d) in c.deltas().iter().enumerate() {
            out[2 * i] = d.x;
            out[2 * i + 1] = d.y;
        }
        Ok(())
    })
}

/// Normalised mean error of `pred` against `truth` over the landmarks
/// visible in `visibility`, divided by `face_size`.
///
/// # Safety
/// All pointers must be valid; shapes hold 42 doubles, `visibility` 21.
#[no_mangle]
pub unsafe extern "C" fn kepler_nme(
    pred: *const f64,
    truth: *const f64,
    visibility: *const f64,
    face_size: f64,
    out: *mut f64,
) -> KeplerStatus {
    guard(|| {
        let n = 2 * NUM_LANDMARKS;
        let p = shape_of(doubles(pred, n, "pred")?)?;
        let g = shape_of(doubles(truth, n, "truth")?)?;
        let v = visibility_of(doubles(visibility, NUM_LANDMARKS, "visibility")?)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = nme(&p, &g, &v, face_size).map_err(lib_err)?;
        Ok(())
    })
}
