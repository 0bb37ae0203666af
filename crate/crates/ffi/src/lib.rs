//! C ABI for loading checkpoints, parsing sentences (single model or
//! ensemble) and scoring tree files.
//!
//! Every fallible call returns a [`DfpStatus`]; on failure a message is kept
//! per thread and can be read with [`dfp_last_error_message`]. Strings handed
//! out by the library must be released with [`dfp_string_free`], models with
//! [`dfp_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use disfluency_parser::chart::decode;
use disfluency_parser::eval::evaluate;
use disfluency_parser::model::{load_checkpoint, Model};
use disfluency_parser::pipeline::{ensemble_decode, PipelineError};
use disfluency_parser::treebank::{normalize, parse_bracketed, serialize, ParseTree};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DfpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Checkpoint = 4,
    EmptySentence = 5,
    MalformedTree = 6,
    LabelSetMismatch = 7,
    Evaluation = 8,
    Internal = 9,
}

/// Opaque handle to a loaded model.
pub struct DfpModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: DfpStatus, msg: impl Into<String>) -> DfpStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning panics into `Internal`.
fn guarded(f: impl FnOnce() -> DfpStatus) -> DfpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(DfpStatus::Internal, "internal panic"),
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, DfpStatus> {
    if p.is_null() {
        return Err(fail(DfpStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(DfpStatus::InvalidUtf8, "argument is not valid UTF-8"))
}

unsafe fn hand_out(text: String, out: *mut *mut c_char) -> DfpStatus {
    match CString::new(text) {
        Ok(c) => {
            *out = c.into_raw();
            DfpStatus::Ok
        }
        Err(_) => fail(DfpStatus::Internal, "output contains a NUL byte"),
    }
}

fn tokens(sentence: &str) -> Result<Vec<String>, DfpStatus> {
    let words: Vec<String> = sentence.split_whitespace().map(str::to_string).collect();
    if words.is_empty() {
        Err(fail(DfpStatus::EmptySentence, "sentence has no tokens"))
    } else {
        Ok(words)
    }
}

/// The library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dfp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dfp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint file into a new handle stored in `*out`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dfp_model_load(path: *const c_char, out: *mut *mut DfpModel) -> DfpStatus {
    guarded(|| {
        if out.is_null() {
            return fail(DfpStatus::NullPointer, "null output pointer");
        }
        *out = ptr::null_mut();
        let path = match read_str(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        if !Path::new(path).exists() {
            return fail(DfpStatus::Io, format!("{path}: no such file"));
        }
        match load_checkpoint(Path::new(path)) {
            Ok((model, _)) => {
                *out = Box::into_raw(Box::new(DfpModel { model }));
                DfpStatus::Ok
            }
            Err(e) => fail(DfpStatus::Checkpoint, e.to_string()),
        }
    })
}

/// Releases a handle from [`dfp_model_load`]. NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dfp_model_free(model: *mut DfpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of span labels including the null label, or 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn dfp_model_num_labels(model: *const DfpModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.labels().len())
}

/// Parses a whitespace-tokenized sentence; `*out_tree` receives the
/// bracketed tree (release with [`dfp_string_free`]).
///
/// # Safety
/// `model` must be a live handle, `sentence` NUL-terminated, `out_tree` writable.
#[no_mangle]
pub unsafe extern "C" fn dfp_parse(model: *const DfpModel, sentence: *const c_char, out_tree: *mut *mut c_char) -> DfpStatus {
    guarded(|| {
        if out_tree.is_null() {
            return fail(DfpStatus::NullPointer, "null output pointer");
        }
        *out_tree = ptr::null_mut();
        let Some(m) = model.as_ref() else {
            return fail(DfpStatus::NullPointer, "null model");
        };
        let words = match read_str(sentence).and_then(tokens) {
            Ok(w) => w,
            Err(s) => return s,
        };
        let tree = m
            .model
            .score_spans(&words, None)
            .map_err(|e| e.to_string())
            .and_then(|c| decode(&c, m.model.labels(), &words).map_err(|e| e.to_string()));
        match tree {
            Ok(r) => hand_out(serialize(&r.tree), out_tree),
            Err(e) => fail(DfpStatus::Internal, e),
        }
    })
}

/// Parses with the mean span scores of `count` members.
///
/// # Safety
/// `members` must point to `count` live handles; other pointers as for [`dfp_parse`].
#[no_mangle]
pub unsafe extern "C" fn dfp_ensemble_parse(
    members: *const *const DfpModel,
    count: usize,
    sentence: *const c_char,
    out_tree: *mut *mut c_char,
) -> DfpStatus {
    guarded(|| {
        if out_tree.is_null() || members.is_null() {
            return fail(DfpStatus::NullPointer, "null pointer argument");
        }
        *out_tree = ptr::null_mut();
        if count == 0 {
            return fail(DfpStatus::NullPointer, "an ensemble needs at least one member");
        }
        let handles = std::slice::from_raw_parts(members, count);
        let mut models = Vec::with_capacity(count);
        for h in handles {
            match h.as_ref() {
                Some(m) => models.push(m.model.clone()),
                None => return fail(DfpStatus::NullPointer, "null ensemble member"),
            }
        }
        let words = match read_str(sentence).and_then(tokens) {
            Ok(w) => w,
            Err(s) => return s,
        };
        match ensemble_decode(&models, &words) {
            Ok(tree) => hand_out(serialize(&tree), out_tree),
            Err(e @ PipelineError::LabelSetMismatch { .. }) => fail(DfpStatus::LabelSetMismatch, e.to_string()),
            Err(e) => fail(DfpStatus::Internal, e.to_string()),
        }
    })
}

fn read_tree_lines(text: &str) -> Result<Vec<ParseTree>, DfpStatus> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(k, l)| {
            parse_bracketed(l)
                .and_then(|t| normalize(&t))
                .map_err(|e| fail(DfpStatus::MalformedTree, format!("tree {}: {e}", k + 1)))
        })
        .collect()
}

/// Scores newline-separated predicted trees against gold trees; `*out_json`
/// receives the full report as JSON.
///
/// # Safety
/// `gold` and `pred` must be NUL-terminated; `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn dfp_evaluate(gold: *const c_char, pred: *const c_char, out_json: *mut *mut c_char) -> DfpStatus {
    guarded(|| {
        if out_json.is_null() {
            return fail(DfpStatus::NullPointer, "null output pointer");
        }
        *out_json = ptr::null_mut();
        let trees = read_str(gold)
            .and_then(read_tree_lines)
            .and_then(|g| read_str(pred).and_then(read_tree_lines).map(|p| (g, p)));
        let (g, p) = match trees {
            Ok(x) => x,
            Err(s) => return s,
        };
        match evaluate(&g, &p, None) {
            Ok(r) => hand_out(serde_json::to_string(&r).expect("serializable"), out_json),
            Err(e) => fail(DfpStatus::Evaluation, e.to_string()),
        }
    })
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dfp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
