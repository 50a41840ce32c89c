//! C ABI over the sdehgnn toolkit.
//!
//! Every fallible function returns an [`SdehgnnStatus`]; on failure the
//! message is available from [`sdehgnn_last_error`] on the same thread until
//! the next call. Handles are opaque and must be released with their `_free`
//! function. Panics are caught at the boundary and reported as
//! `SDEHGNN_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use sdehgnn::checkpoint;
use sdehgnn::cohort::io::{load_cohort, load_features, save_cohort, FeatureSubject};
use sdehgnn::cohort::metrics::auc;
use sdehgnn::cohort::{generate, CohortSpec, SubjectRecord};
use sdehgnn::hypergraph::{Hypergraph, HypergraphConfig};
use sdehgnn::model::SpatioTemporalModel;
use sdehgnn::nn::Params;
use sdehgnn::objective::predict;
use sdehgnn::pipeline::{feature_size, prepare};
use sdehgnn::tensor::Tensor;
use sdehgnn::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdehgnnStatus {
    Ok = 0,
    /// A required pointer argument was null or a string was not UTF-8.
    InvalidArgument = 1,
    Config = 2,
    Io = 3,
    Numerical = 4,
    Mismatch = 5,
    /// Any other library error.
    Failed = 6,
    Internal = 7,
}

impl From<&Error> for SdehgnnStatus {
    fn from(e: &Error) -> Self {
        match e.exit_code() {
            2 => SdehgnnStatus::Config,
            3 => SdehgnnStatus::Io,
            4 => SdehgnnStatus::Numerical,
            5 => SdehgnnStatus::Mismatch,
            _ => SdehgnnStatus::Failed,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(SdehgnnStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(SdehgnnStatus::from(&e), e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(SdehgnnStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SdehgnnStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SdehgnnStatus::Ok,
        Ok(Err(Fail(code, msg))) => {
            set_error(msg);
            code
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {msg}"));
            SdehgnnStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| invalid(format!("{what} is null")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| invalid(format!("{what} handle is null")))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid(format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn sdehgnn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

pub struct SdehgnnCohort {
    subjects: Vec<SubjectRecord>,
}

pub struct SdehgnnFeatures {
    subjects: Vec<FeatureSubject>,
}

pub struct SdehgnnModel {
    model: SpatioTemporalModel,
    params: Params,
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Generates a synthetic cohort. `spec_json` is a cohort specification in
/// JSON (omitted keys default); null means all defaults.
///
/// # Safety
/// `spec_json` must be null or a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdehgnn_cohort_generate(spec_json: *const c_char, out: *mut *mut SdehgnnCohort) -> SdehgnnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let spec: CohortSpec = if spec_json.is_null() {
            CohortSpec::default()
        } else {
            serde_json::from_str(str_arg(spec_json, "spec_json")?).map_err(|e| Fail(SdehgnnStatus::Config, e.to_string()))?
        };
        let subjects = generate(&spec)?;
        *out = boxed(SdehgnnCohort { subjects });
        Ok(())
    })
}

/// # Safety
/// `dir` must be a nul-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdehgnn_cohort_load(dir: *const c_char, out: *mut *mut SdehgnnCohort) -> SdehgnnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let subjects = load_cohort(&PathBuf::from(str_arg(dir, "dir")?))?;
        *out = boxed(SdehgnnCohort { subjects });
        Ok(())
    })
}

/// # Safety
/// `cohort` must come from this library; `dir` must be a nul-terminated path.
#[no_mangle]
pub unsafe extern "C" fn sdehgnn_cohort_save(cohort: *const SdehgnnCohort, dir: *const c_char) -> SdehgnnStatus {
    guard(|| {
        let c = handle(cohort, "cohort")?;
        save_cohort(&c.subjects, &PathBuf::from(str_arg(dir, "dir")?))?;
        Ok(())
    })
}

/// Number of subjects, or 0 for a null handle.
///
/// # Safety
/// `cohort` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn sdehgnn_cohort_len(cohort: *const SdehgnnCohort) -> usize {
    cohort.as_ref().map_or(0, |c| c.subjects.len())
}

/// Label (0 stable, 1 progressive) and visit count of subject `index`.
///
/// # Safety
/// `cohort` must come from this library; `label` and `visits` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdehgnn_cohort_subject(
    cohort: *const SdehgnnCohort,
    index: usize,
    label: *mut u8,
    visits: *mut usize,
) -> SdehgnnStatus {
    guard(|| {
        let c = handle(cohort, "cohort")?;
        let s = c
            .subjects
            .get(index)
            .ok_or_else(|| invalid(format!("subject index {index} out of range for {} subjects", c.subjects.len())))?;
        *out_arg(label, "label")? = s.label;
        *out_arg(visits, "visits")? = s.visits.len();
        Ok(())
    })
}

/// # Safety
/// `cohort` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sdehgnn_cohort_free(cohort: *mut SdehgnnCohort) {
    if !cohort.is_null() {
        drop(Box::from_raw(cohort));
    }
}

/// Loads a feature directory written by `sdehgnn reconstruct`.
///
/// # Safety
/// `dir` must be a nul-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdehgnn_features_load(dir: *const c_char, out: *mut *mut SdehgnnFeatures) -> SdehgnnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let subjects = load_features(&PathBuf::from(str_arg(dir, "dir")?))?;
        *out = boxed(SdehgnnFeatures { subjects });
        Ok(())
    })
}

/// # Safety
/// `features` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn sdehgnn_features_len(features: *const SdehgnnFeatures) -> usize {
    features.as_ref().map_or(0, |f| f.subjects.len())
}

/// Labels of every subject, in manifest order, into `labels[0..len]`.
///
/// # Safety
/// `features` must come from this library; `labels` must hold `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sdehgnn_features_labels(features: *const SdehgnnFeatures, labels: *mut u8, len: usize) -> SdehgnnStatus {
    guard(|| {
        let f = handle(features, "features")?;
        if len != f.subjects.len() {
            return Err(Fail(SdehgnnStatus::Mismatch, format!("buffer holds {len} labels, features have {}", f.subjects.len())));
        }
        if len > 0 {
            let out = std::slice::from_raw_parts_mut(out_arg(labels, "labels")?, len);
            for (o, s) in out.iter_mut().zip(&f.subjects) {
                *o = s.label;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `features` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sdehgnn_features_free(features: *mut SdehgnnFeatures) {
    if !features.is_null() {
        drop(Box::from_raw(features));
    }
}

/// Loads a model checkpoint written by `sdehgnn crossval`.
///
/// # Safety
/// `path` must be a nul-terminated path; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdehgnn_model_load(path: *const c_char, out: *mut *mut SdehgnnModel) -> SdehgnnStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let (model, params) = checkpoint::load(&PathBuf::from(str_arg(path, "path")?))?;
        *out = boxed(SdehgnnModel { model, params });
        Ok(())
    })
}

/// Number of ROIs the model expects, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn sdehgnn_model_n_nodes(model: *const SdehgnnModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.n_nodes)
}

/// Progression logits for every subject of `features` (deterministic mean
/// path) into `logits[0..len]`; `len` must equal the subject count.
///
/// # Safety
/// Handles must come from this library; `logits` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn sdehgnn_model_predict(
    model: *const SdehgnnModel,
    features: *const SdehgnnFeatures,
    logits: *mut f64,
    len: usize,
) -> SdehgnnStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let f = handle(features, "features")?;
        if len != f.subjects.len() {
            return Err(Fail(SdehgnnStatus::Mismatch, format!("buffer holds {len} logits, features have {}", f.subjects.len())));
        }
        let n = feature_size(&f.subjects)?;
        if n != m.model.config.n_nodes || n != m.model.config.feature_dim {
            return Err(Fail(
                SdehgnnStatus::Mismatch,
                format!("features have {n} ROIs but the model expects {}", m.model.config.n_nodes),
            ));
        }
        let subjects = prepare(&f.subjects, &m.model.config.hypergraph, None)?;
        let values = predict(&m.model, &m.params, &subjects)?;
        std::slice::from_raw_parts_mut(out_arg(logits, "logits")?, len).copy_from_slice(&values);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sdehgnn_model_free(model: *mut SdehgnnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Rank-based ROC AUC with ties counted half. Labels are 0 or 1.
///
/// # Safety
/// `scores` and `labels` must hold `n` elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdehgnn_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> SdehgnnStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let l = slice(labels, n, "labels")?;
        if l.iter().any(|&v| v > 1) {
            return Err(invalid("labels must be 0 or 1"));
        }
        *out_arg(out, "out")? = auc(s, l)?;
        Ok(())
    })
}

/// Builds the k-nearest-neighbour hypergraph of the row-major `n_nodes ×
/// feature_dim` matrix `x` and writes its normalized `n_nodes × n_nodes`
/// propagation operator, row-major, into `out`.
///
/// # Safety
/// `x` must hold `n_nodes * feature_dim` doubles and `out` `n_nodes * n_nodes`.
#[no_mangle]
pub unsafe extern "C" fn sdehgnn_hypergraph_propagation(
    x: *const f64,
    n_nodes: usize,
    feature_dim: usize,
    k: usize,
    q: f64,
    out: *mut f64,
) -> SdehgnnStatus {
    guard(|| {
        let cells = n_nodes.checked_mul(feature_dim).ok_or_else(|| invalid("matrix size overflows"))?;
        let data = slice(x, cells, "x")?.to_vec();
        let x = Tensor::new(vec![n_nodes, feature_dim], data).map_err(Error::from)?;
        let cfg = HypergraphConfig { k, q, include_center: true };
        let g = Hypergraph::from_features(&x, &cfg)?;
        let s = g.propagation.data();
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        std::slice::from_raw_parts_mut(out, s.len()).copy_from_slice(s);
        Ok(())
    })
}
