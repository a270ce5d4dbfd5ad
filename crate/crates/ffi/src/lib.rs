//! C ABI over a trained encoder checkpoint.
//!
//! Every function returns an [`MfStatus`]. On failure the message is kept
//! per thread and read back with [`mf_last_error`]. Handles come from
//! [`mf_model_load`] and must be released with [`mf_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mindformer::model::{forward_index, param_count, ModelConfig, ModelParams};
use mindformer::train::Checkpoint;
use mindformer::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    Validation = 5,
    UnknownSubject = 6,
    Shape = 7,
    Panic = 8,
    Other = 9,
}

/// A loaded checkpoint. Opaque to C.
pub struct MfModel {
    config: ModelConfig,
    params: ModelParams<f32>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> MfStatus {
    match e {
        Error::Io { .. } => MfStatus::Io,
        Error::Format { .. } => MfStatus::Format,
        Error::Validation(_) | Error::Json(_) | Error::Config(_) => MfStatus::Validation,
        Error::UnknownSubject(_) => MfStatus::UnknownSubject,
        Error::Shape { .. } => MfStatus::Shape,
        _ => MfStatus::Other,
    }
}

struct Fail(MfStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            MfStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MfStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail(MfStatus::NullPointer, format!("{what} is null")));
    }
    Ok(())
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    non_null(p, what)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(MfStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a>(m: *const MfModel) -> Result<&'a MfModel, Fail> {
    non_null(m, "model")?;
    Ok(&*m)
}

impl MfModel {
    fn subject(&self, id: &str) -> Result<usize, Fail> {
        self.config
            .subjects
            .iter()
            .position(|s| s.id == id)
            .ok_or_else(|| Error::UnknownSubject(id.to_string()).into())
    }
}

/// Message for the last failed call on this thread, or "" after a success.
/// Valid until the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn mf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint (`<stem>.json` with its `<stem>.mft`).
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mf_model_load(path: *const c_char, out: *mut *mut MfModel) -> MfStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let path = text(path, "path")?;
        let ck = Checkpoint::load(Path::new(path))?;
        let m = MfModel {
            config: ck.header.model,
            params: ck.params,
        };
        *out = Box::into_raw(Box::new(m));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`mf_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn mf_model_free(model: *mut MfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Output shape: `n_tokens` rows of `token_dim` floats.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mf_model_dims(model: *const MfModel, n_tokens: *mut usize, token_dim: *mut usize) -> MfStatus {
    guard(|| {
        let m = handle(model)?;
        non_null(n_tokens, "n_tokens")?;
        non_null(token_dim, "token_dim")?;
        *n_tokens = m.config.n_tokens;
        *token_dim = m.config.token_dim;
        Ok(())
    })
}

/// Number of subjects the model was trained on.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mf_model_subject_count(model: *const MfModel, count: *mut usize) -> MfStatus {
    guard(|| {
        let m = handle(model)?;
        non_null(count, "count")?;
        *count = m.config.subjects.len();
        Ok(())
    })
}

/// Voxel count expected for `subject`.
///
/// # Safety
/// `subject` must be nul-terminated; all pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mf_model_subject_voxels(
    model: *const MfModel,
    subject: *const c_char,
    voxels: *mut usize,
) -> MfStatus {
    guard(|| {
        let m = handle(model)?;
        let id = text(subject, "subject")?;
        non_null(voxels, "voxels")?;
        *voxels = m.config.subjects[m.subject(id)?].voxel_count;
        Ok(())
    })
}

/// Total trainable parameter count.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mf_model_param_count(model: *const MfModel, count: *mut u64) -> MfStatus {
    guard(|| {
        let m = handle(model)?;
        non_null(count, "count")?;
        *count = param_count(&m.config)?.total;
        Ok(())
    })
}

/// Encodes one trial. Writes `n_tokens * token_dim` floats, row-major, to `out`.
///
/// # Safety
/// `voxels` must point to `n_voxels` floats and `out` to `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn mf_model_forward(
    model: *const MfModel,
    subject: *const c_char,
    voxels: *const f32,
    n_voxels: usize,
    out: *mut f32,
    out_len: usize,
) -> MfStatus {
    guard(|| {
        let m = handle(model)?;
        let id = text(subject, "subject")?;
        non_null(voxels, "voxels")?;
        non_null(out, "out")?;
        let s = m.subject(id)?;
        let want = m.config.subjects[s].voxel_count;
        if n_voxels != want {
            return Err(Fail(
                MfStatus::Shape,
                format!("subject `{id}` has {want} voxels, got {n_voxels}"),
            ));
        }
        let need = m.config.n_tokens * m.config.token_dim;
        if out_len < need {
            return Err(Fail(
                MfStatus::Shape,
                format!("output buffer holds {out_len} floats, need {need}"),
            ));
        }
        let v = std::slice::from_raw_parts(voxels, n_voxels);
        let z = forward_index(v, s, &m.params, &m.config)?;
        std::slice::from_raw_parts_mut(out, need).copy_from_slice(z.data());
        Ok(())
    })
}
