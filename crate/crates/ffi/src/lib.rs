//! C ABI for the passage index, the evaluation metrics and the
//! preference-pair builder.
//!
//! Every fallible function returns a [`QrfStatus`]; on failure the message is
//! available from [`qrf_last_error`] on the same thread. Strings returned
//! through `out` pointers are owned by the caller and released with
//! [`qrf_string_free`]. Index handles are released with [`qrf_index_free`].

use std::cell::RefCell;
use std::collections::HashMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use qrf_core::conversation::TurnType;
use qrf_core::eval::{evaluate_run, read_qrels, Run};
use qrf_core::feedback::FeedbackRecord;
use qrf_core::index::{gold_rank, Bm25Params, Passage, PassageIndex, Rank, RetrieverProfile};
use qrf_core::preference::{build_rf_collection, RfConfig};
use qrf_core::Error;

/// Result codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QrfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Internal = 6,
}

/// Opaque BM25 index handle.
pub struct QrfIndex {
    inner: PassageIndex,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> QrfStatus {
    match err {
        Error::Io { .. } => QrfStatus::Io,
        Error::MalformedRecord { .. } | Error::Json(_) | Error::RunFormat { .. } | Error::IndexFormat(_) => {
            QrfStatus::Parse
        }
        _ => QrfStatus::InvalidArgument,
    }
}

struct Failure(QrfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure(QrfStatus::Parse, e.to_string())
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> QrfStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QrfStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            QrfStatus::Internal
        }
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(QrfStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(QrfStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn check_out<T>(out: *mut T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        Err(Failure(QrfStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn qrf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, statically allocated.
#[no_mangle]
pub extern "C" fn qrf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn qrf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds an index from a JSON array of `{passage_id, text, source_doc}`.
///
/// # Safety
/// `passages_json` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qrf_index_build(
    passages_json: *const c_char,
    k1: f64,
    b: f64,
    out: *mut *mut QrfIndex,
) -> QrfStatus {
    guard(|| {
        check_out(out, "out")?;
        let passages: Vec<Passage> = serde_json::from_str(str_arg(passages_json, "passages_json")?)?;
        let inner = PassageIndex::build(&passages, Bm25Params::new(k1, b)?)?;
        *out = Box::into_raw(Box::new(QrfIndex { inner }));
        Ok(())
    })
}

/// Builds an index from a passages JSONL file with a named profile
/// (`qrecc-bm25` or `topiocqa-bm25`).
///
/// # Safety
/// String arguments must be valid C strings and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qrf_index_build_from_file(
    passages_path: *const c_char,
    profile: *const c_char,
    out: *mut *mut QrfIndex,
) -> QrfStatus {
    guard(|| {
        check_out(out, "out")?;
        let path = str_arg(passages_path, "passages_path")?;
        let profile: RetrieverProfile = str_arg(profile, "profile")?.parse()?;
        let passages = qrf_core::index::read_passages(Path::new(path))?;
        let inner = PassageIndex::build(&passages, profile.params())?;
        *out = Box::into_raw(Box::new(QrfIndex { inner }));
        Ok(())
    })
}

/// Loads an index written by [`qrf_index_save`] or `qrf index`.
///
/// # Safety
/// `path` must be a valid C string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qrf_index_load(path: *const c_char, out: *mut *mut QrfIndex) -> QrfStatus {
    guard(|| {
        check_out(out, "out")?;
        let inner = PassageIndex::load(Path::new(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(QrfIndex { inner }));
        Ok(())
    })
}

/// # Safety
/// `index` must be a live handle and `path` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn qrf_index_save(index: *const QrfIndex, path: *const c_char) -> QrfStatus {
    guard(|| {
        let index = index
            .as_ref()
            .ok_or_else(|| Failure(QrfStatus::NullArgument, "index is null".into()))?;
        index.inner.save(Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `index` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn qrf_index_free(index: *mut QrfIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Number of passages, or 0 for a null handle.
///
/// # Safety
/// `index` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn qrf_index_doc_count(index: *const QrfIndex) -> usize {
    index.as_ref().map_or(0, |i| i.inner.doc_count())
}

/// Top-`k` results as a JSON object `{"entries": [{passage_id, score}, ...]}`.
///
/// # Safety
/// `index` must be a live handle, `query` a valid C string and `out_json`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qrf_index_retrieve(
    index: *const QrfIndex,
    query: *const c_char,
    k: usize,
    out_json: *mut *mut c_char,
) -> QrfStatus {
    guard(|| {
        check_out(out_json, "out_json")?;
        let index = index
            .as_ref()
            .ok_or_else(|| Failure(QrfStatus::NullArgument, "index is null".into()))?;
        let result = index.inner.retrieve_top_k(str_arg(query, "query")?, k);
        *out_json = into_c_string(serde_json::to_string(&result)?);
        Ok(())
    })
}

/// Rank of the first gold passage (a JSON array of ids) in the top `k`
/// for `query`; 0 when it is not retrieved.
///
/// # Safety
/// `index` must be a live handle, strings valid C strings and `out_rank`
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qrf_gold_rank(
    index: *const QrfIndex,
    query: *const c_char,
    k: usize,
    gold_ids_json: *const c_char,
    out_rank: *mut u32,
) -> QrfStatus {
    guard(|| {
        check_out(out_rank, "out_rank")?;
        let index = index
            .as_ref()
            .ok_or_else(|| Failure(QrfStatus::NullArgument, "index is null".into()))?;
        let gold: Vec<String> = serde_json::from_str(str_arg(gold_ids_json, "gold_ids_json")?)?;
        let result = index.inner.retrieve_top_k(str_arg(query, "query")?, k);
        *out_rank = match gold_rank(&result, &gold)? {
            Rank::Found(r) => r,
            Rank::NotFound => 0,
        };
        Ok(())
    })
}

/// Evaluates a TREC run against qrels and a JSON map of query id to turn
/// type (`"First"`, `"TopicConcentrated"`, `"TopicShifted"`). Writes the
/// report (metrics in [0, 1]) as JSON.
///
/// # Safety
/// Paths must be valid C strings and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qrf_evaluate(
    run_path: *const c_char,
    qrels_path: *const c_char,
    classes_path: *const c_char,
    out_json: *mut *mut c_char,
) -> QrfStatus {
    guard(|| {
        check_out(out_json, "out_json")?;
        let run = Run::read(Path::new(str_arg(run_path, "run_path")?))?;
        let qrels = read_qrels(Path::new(str_arg(qrels_path, "qrels_path")?))?;
        let classes: HashMap<String, TurnType> =
            qrf_core::jsonl::read_json(Path::new(str_arg(classes_path, "classes_path")?))?;
        let report = evaluate_run(&run, &qrels, &classes)?;
        *out_json = into_c_string(serde_json::to_string(&report)?);
        Ok(())
    })
}

/// Builds optimal-query sets and preference pairs from feedback records
/// given as JSONL text, sorted by turn. `config_json` may be null for the
/// defaults; otherwise it is a full `RfConfig` object. Writes
/// `{"optimal_sets": [...], "pairs": [...]}`.
///
/// # Safety
/// `feedback_jsonl` must be a valid C string, `config_json` null or a valid
/// C string, and `out_json` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn qrf_build_rf(
    feedback_jsonl: *const c_char,
    config_json: *const c_char,
    out_json: *mut *mut c_char,
) -> QrfStatus {
    guard(|| {
        check_out(out_json, "out_json")?;
        let text = str_arg(feedback_jsonl, "feedback_jsonl")?;
        let config: RfConfig = if config_json.is_null() {
            RfConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?)?
        };
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str::<FeedbackRecord>)
            .collect::<Result<Vec<_>, _>>()?;
        let collection = build_rf_collection(&records, &config)?;
        let json = serde_json::json!({
            "optimal_sets": collection.optimal_sets,
            "pairs": collection.pairs,
        });
        *out_json = into_c_string(json.to_string());
        Ok(())
    })
}
