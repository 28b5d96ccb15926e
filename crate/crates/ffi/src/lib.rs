//! C ABI over the `proofseg` core.
//!
//! Every fallible function returns a [`PsStatus`]; on failure a message is
//! available from [`ps_last_error`] on the same thread. Objects are opaque
//! handles released by their matching `_free` function. Strings returned
//! through `char **` out-parameters are owned by the caller and must be
//! released with [`ps_string_free`].

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use proofseg::boundary::{extract_segments, select_boundaries};
use proofseg::dataset::serialize_example;
use proofseg::edit_distance::normalized_edit_distance;
use proofseg::parser::{count_open_goals, parse_proof_script};
use proofseg::simenv::{handle_env_line, SimSession, SimTree};
use proofseg::tokenizer::{Tokenizer, TokenizerSpec};
use proofseg::types::{BoundaryStrategy, StrategyKind, Trajectory, TrajectoryRecord};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PsStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidArgument = 4,
    IoError = 5,
    Panic = 6,
}

/// Tactic blocks of a parsed proof script.
pub struct PsScript {
    blocks: Vec<CString>,
}

/// A boundary strategy bound to a tokenizer.
pub struct PsSegmenter {
    strategy: BoundaryStrategy,
    tokenizer: Tokenizer,
}

/// One simulated environment session.
pub struct PsSimSession {
    session: SimSession,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

type Fallible<T> = Result<T, (PsStatus, String)>;

/// Runs `body`, translating errors and panics into status codes.
fn guard(body: impl FnOnce() -> Fallible<()>) -> PsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            PsStatus::Ok
        }
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PsStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Fallible<&'a str> {
    if p.is_null() {
        return Err((PsStatus::NullArgument, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (PsStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

fn check_out<T>(p: *mut T, name: &str) -> Fallible<()> {
    if p.is_null() {
        Err((PsStatus::NullArgument, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("interior nuls removed").into_raw()
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ps_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ps_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ps_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Number of open goals in a pretty-printed proof state.
#[no_mangle]
pub unsafe extern "C" fn ps_count_open_goals(pretty: *const c_char, out: *mut usize) -> PsStatus {
    guard(|| {
        let text = read_str(pretty, "pretty")?;
        check_out(out, "out")?;
        *out = count_open_goals(text);
        Ok(())
    })
}

/// Splits a proof script into tactic blocks.
#[no_mangle]
pub unsafe extern "C" fn ps_script_parse(script: *const c_char, out: *mut *mut PsScript) -> PsStatus {
    guard(|| {
        let text = read_str(script, "script")?;
        check_out(out, "out")?;
        let blocks = parse_proof_script(text).map_err(|e| (PsStatus::ParseError, e.to_string()))?;
        let blocks = blocks
            .into_iter()
            .map(|b| CString::new(b.as_str()).map_err(|_| (PsStatus::InvalidArgument, "tactic contains NUL".into())))
            .collect::<Fallible<Vec<_>>>()?;
        *out = Box::into_raw(Box::new(PsScript { blocks }));
        Ok(())
    })
}

/// Number of blocks in a parsed script; 0 for null.
#[no_mangle]
pub unsafe extern "C" fn ps_script_len(script: *const PsScript) -> usize {
    script.as_ref().map_or(0, |s| s.blocks.len())
}

/// Block `index`, borrowed from the script; null when out of range.
#[no_mangle]
pub unsafe extern "C" fn ps_script_block(script: *const PsScript, index: usize) -> *const c_char {
    script
        .as_ref()
        .and_then(|s| s.blocks.get(index))
        .map_or(ptr::null(), |b| b.as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn ps_script_free(script: *mut PsScript) {
    if !script.is_null() {
        drop(Box::from_raw(script));
    }
}

/// Normalized token-level edit distance between two texts, in [0, 1].
/// `tokenizer` is `whitespace`, `map:<path>`, or null for whitespace.
#[no_mangle]
pub unsafe extern "C" fn ps_edit_distance(
    a: *const c_char,
    b: *const c_char,
    tokenizer: *const c_char,
    out: *mut f64,
) -> PsStatus {
    guard(|| {
        let a = read_str(a, "a")?;
        let b = read_str(b, "b")?;
        check_out(out, "out")?;
        let tok = load_tokenizer(tokenizer)?;
        *out = normalized_edit_distance(&tok.tokenize(a), &tok.tokenize(b));
        Ok(())
    })
}

unsafe fn load_tokenizer(spec: *const c_char) -> Fallible<Tokenizer> {
    if spec.is_null() {
        return Ok(Tokenizer::whitespace());
    }
    let spec: TokenizerSpec = read_str(spec, "tokenizer")?
        .parse()
        .map_err(|e: proofseg::tokenizer::TokenizerError| (PsStatus::InvalidArgument, e.to_string()))?;
    Tokenizer::load(&spec).map_err(|e| (PsStatus::IoError, e.to_string()))
}

/// Creates a segmenter. `strategy` is one of `step`, `whole`,
/// `goal_change`, `token_threshold`, `tactic_distance`, `state_distance`;
/// `threshold` is read only by the last three.
#[no_mangle]
pub unsafe extern "C" fn ps_segmenter_new(
    strategy: *const c_char,
    threshold: f64,
    tokenizer: *const c_char,
    out: *mut *mut PsSegmenter,
) -> PsStatus {
    guard(|| {
        let kind: StrategyKind = read_str(strategy, "strategy")?
            .parse()
            .map_err(|e: proofseg::types::TypeError| (PsStatus::InvalidArgument, e.to_string()))?;
        check_out(out, "out")?;
        let strategy = BoundaryStrategy::from_parts(kind, kind.takes_threshold().then_some(threshold))
            .map_err(|e| (PsStatus::InvalidArgument, e.to_string()))?;
        let tokenizer = load_tokenizer(tokenizer)?;
        *out = Box::into_raw(Box::new(PsSegmenter { strategy, tokenizer }));
        Ok(())
    })
}

/// Segments one trajectory record (JSON) into instruction records, one
/// JSON object per line.
#[no_mangle]
pub unsafe extern "C" fn ps_segment(
    segmenter: *const PsSegmenter,
    trajectory_json: *const c_char,
    out: *mut *mut c_char,
) -> PsStatus {
    guard(|| {
        let seg = segmenter
            .as_ref()
            .ok_or((PsStatus::NullArgument, "`segmenter` is null".to_string()))?;
        let json = read_str(trajectory_json, "trajectory_json")?;
        check_out(out, "out")?;
        let record: TrajectoryRecord =
            serde_json::from_str(json).map_err(|e| (PsStatus::ParseError, e.to_string()))?;
        let trajectory = Trajectory::try_from(record).map_err(|e| (PsStatus::InvalidArgument, e.to_string()))?;
        let boundaries = select_boundaries(&trajectory, &seg.strategy, &seg.tokenizer);
        let mut text = String::new();
        for ex in extract_segments(&trajectory, &boundaries, seg.strategy.kind()) {
            text.push_str(&serde_json::to_string(&serialize_example(&ex)).expect("records serialize"));
            text.push('\n');
        }
        *out = into_c_string(text);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ps_segmenter_free(segmenter: *mut PsSegmenter) {
    if !segmenter.is_null() {
        drop(Box::from_raw(segmenter));
    }
}

/// Opens a simulated environment session over a tree spec file.
#[no_mangle]
pub unsafe extern "C" fn ps_sim_open(tree_path: *const c_char, out: *mut *mut PsSimSession) -> PsStatus {
    guard(|| {
        let path = read_str(tree_path, "tree_path")?;
        check_out(out, "out")?;
        let tree = SimTree::load(Path::new(path)).map_err(|e| (PsStatus::IoError, e.to_string()))?;
        *out = Box::into_raw(Box::new(PsSimSession {
            session: SimSession::new(Arc::new(tree)),
        }));
        Ok(())
    })
}

/// Answers one environment protocol request line. Protocol-level errors
/// are reported inside the response, not through the status code.
#[no_mangle]
pub unsafe extern "C" fn ps_sim_request(
    session: *mut PsSimSession,
    request: *const c_char,
    out: *mut *mut c_char,
) -> PsStatus {
    guard(|| {
        let sim = session
            .as_mut()
            .ok_or((PsStatus::NullArgument, "`session` is null".to_string()))?;
        let line = read_str(request, "request")?;
        check_out(out, "out")?;
        *out = into_c_string(handle_env_line(&mut sim.session, line));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ps_sim_free(session: *mut PsSimSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}
