//! C ABI over `markerconf`.
//!
//! Every fallible call returns an [`McStatus`]; on failure the message is
//! available from [`mc_last_error`] on the same thread. Strings handed out
//! by this library must be released with [`mc_string_free`], annotation
//! sets with [`mc_annotations_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use markerconf::annotate::{self, AnnotatedCorpus};
use markerconf::corpus::Split;
use markerconf::metrics::{self, MetricOptions};
use markerconf::mic;
use markerconf::segmenter::{RuleSegmenter, Segmenter};
use markerconf::stats;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum McStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    /// Input parsed but violates a precondition (empty, zero variance, ...).
    Data = 4,
    Parse = 5,
    Io = 6,
    Panic = 7,
}

/// Annotated corpus loaded from the annotation file format.
pub struct McAnnotationSet {
    inner: AnnotatedCorpus,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let msg = CString::new(message.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Fail(McStatus, String);

impl Fail {
    fn new(status: McStatus, message: impl ToString) -> Self {
        Fail(status, message.to_string())
    }
}

impl From<stats::StatsError> for Fail {
    fn from(e: stats::StatsError) -> Self {
        Fail::new(McStatus::Data, e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> McStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => McStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            McStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(data: *const T, len: usize) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(Fail::new(McStatus::NullPointer, "null array with non-zero length"));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn string<'a>(s: *const c_char) -> Result<&'a str, Fail> {
    if s.is_null() {
        return Err(Fail::new(McStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(s).to_str().map_err(|e| Fail::new(McStatus::InvalidUtf8, e))
}

unsafe fn put<T>(out: *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::new(McStatus::NullPointer, "null output pointer"));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    let c = CString::new(s).map_err(|e| Fail::new(McStatus::Data, e))?;
    put(out, c.into_raw())
}

/// Message of the last failed call on this thread, or NULL. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be NULL or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Sampling-consistency confidence from verdict counts: 1 − (na/2 + no)/K.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn mc_confidence(yes: usize, na: usize, no: usize, out: *mut f64) -> McStatus {
    guard(|| {
        let k = yes + na + no;
        if k == 0 {
            return Err(Fail::new(McStatus::InvalidArgument, "no verdicts"));
        }
        put(out, 1.0 - (0.5 * na as f64 + no as f64) / k as f64)
    })
}

/// # Safety
/// `values` must point to `len` doubles; `out` to a double.
#[no_mangle]
pub unsafe extern "C" fn mc_cv(values: *const f64, len: usize, out: *mut f64) -> McStatus {
    guard(|| put(out, stats::cv(slice(values, len)?)?))
}

/// # Safety
/// `correlations` must point to `len` doubles; `out` to a double.
#[no_mangle]
pub unsafe extern "C" fn mc_fisher_mean(correlations: *const f64, len: usize, out: *mut f64) -> McStatus {
    guard(|| put(out, stats::fisher_mean(slice(correlations, len)?)?))
}

/// # Safety
/// `x` and `y` must each point to `len` doubles; `out` to a double.
#[no_mangle]
pub unsafe extern "C" fn mc_pearson(x: *const f64, y: *const f64, len: usize, out: *mut f64) -> McStatus {
    guard(|| put(out, stats::pearson(slice(x, len)?, slice(y, len)?)?))
}

/// # Safety
/// `x` and `y` must each point to `len` doubles; `out` to a double.
#[no_mangle]
pub unsafe extern "C" fn mc_spearman(x: *const f64, y: *const f64, len: usize, out: *mut f64) -> McStatus {
    guard(|| put(out, stats::spearman(slice(x, len)?, slice(y, len)?)?))
}

/// Pooled std of groups given as parallel arrays of sizes and sample stds.
///
/// # Safety
/// `sizes` and `stds` must each point to `len` elements; `out` to a double.
#[no_mangle]
pub unsafe extern "C" fn mc_pooled_std(sizes: *const usize, stds: *const f64, len: usize, out: *mut f64) -> McStatus {
    guard(|| {
        let groups: Vec<stats::Group> = slice(sizes, len)?
            .iter()
            .zip(slice(stds, len)?)
            .map(|(&n, &std)| stats::Group { n, std })
            .collect();
        put(out, stats::pooled_std(&groups)?)
    })
}

/// Split `text` into sentences with the built-in rule segmenter. Writes a
/// JSON array of `{start, end, index}` byte spans.
///
/// # Safety
/// `text` must be a NUL-terminated UTF-8 string; `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mc_segment(text: *const c_char, out_json: *mut *mut c_char) -> McStatus {
    guard(|| {
        let spans = RuleSegmenter::default().segment(string(text)?);
        put_string(out_json, serde_json::to_string(&spans).expect("spans serialize"))
    })
}

/// Parse annotations from an in-memory annotation file.
///
/// # Safety
/// `text` must be a NUL-terminated UTF-8 string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mc_annotations_parse(text: *const c_char, out: *mut *mut McAnnotationSet) -> McStatus {
    guard(|| {
        let (_, inner) = annotate::read_annotations(string(text)?.as_bytes()).map_err(|e| Fail::new(McStatus::Parse, e))?;
        put(out, Box::into_raw(Box::new(McAnnotationSet { inner })))
    })
}

/// Load annotations from a file.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mc_annotations_load(path: *const c_char, out: *mut *mut McAnnotationSet) -> McStatus {
    guard(|| {
        let path = string(path)?;
        let bytes = std::fs::read(path).map_err(|e| Fail::new(McStatus::Io, format!("{path}: {e}")))?;
        let (_, inner) = annotate::read_annotations(bytes.as_slice()).map_err(|e| Fail::new(McStatus::Parse, e))?;
        put(out, Box::into_raw(Box::new(McAnnotationSet { inner })))
    })
}

/// # Safety
/// `set` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mc_annotations_free(set: *mut McAnnotationSet) {
    if !set.is_null() {
        drop(Box::from_raw(set));
    }
}

unsafe fn handle<'a>(set: *const McAnnotationSet) -> Result<&'a AnnotatedCorpus, Fail> {
    set.as_ref().map(|s| &s.inner).ok_or_else(|| Fail::new(McStatus::NullPointer, "null annotation set"))
}

/// Number of sentence annotations in the set.
///
/// # Safety
/// `set` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mc_annotations_sentence_count(set: *const McAnnotationSet, out: *mut usize) -> McStatus {
    guard(|| put(out, handle(set)?.sentences.len()))
}

/// Train-split MIC tables at support threshold `threshold`, as a JSON array.
///
/// # Safety
/// `set` must be a live handle; `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mc_mic_tables_json(
    set: *const McAnnotationSet,
    threshold: usize,
    out_json: *mut *mut c_char,
) -> McStatus {
    guard(|| {
        let tables = mic::build_tables(handle(set)?, Split::Train, threshold)
            .map_err(|e| Fail::new(McStatus::InvalidArgument, e))?;
        put_string(out_json, serde_json::to_string(&tables).expect("tables serialize"))
    })
}

/// Metric reports (one per model) as a JSON array. `options_json` is NULL
/// for defaults or a JSON object with any of `threshold`,
/// `exclude_no_hedge`, `aggregation`, `cmae_normalization`,
/// `response_confidence`, `relaxed_min_datasets`.
///
/// # Safety
/// `set` must be a live handle; `options_json` NULL or a NUL-terminated
/// UTF-8 string; `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mc_metrics_json(
    set: *const McAnnotationSet,
    options_json: *const c_char,
    out_json: *mut *mut c_char,
) -> McStatus {
    guard(|| {
        let options: MetricOptions = if options_json.is_null() {
            MetricOptions::default()
        } else {
            serde_json::from_str(string(options_json)?).map_err(|e| Fail::new(McStatus::Parse, e))?
        };
        if options.threshold == 0 {
            return Err(Fail::new(McStatus::InvalidArgument, "threshold must be at least 1"));
        }
        let reports =
            metrics::compute_reports(handle(set)?, &options).map_err(|e| Fail::new(McStatus::Data, e))?;
        put_string(out_json, serde_json::to_string(&reports).expect("reports serialize"))
    })
}
