//! C ABI over router checkpoints: load, route, free.
//!
//! Every fallible call returns an [`LaStatus`]; on failure the message is
//! available from [`la_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use lookahead::gateway::Checkpoint;
use lookahead::router::Router;
use lookahead::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Checkpoint = 4,
    InvalidInput = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

/// Opaque loaded router.
pub struct LaRouter {
    router: Router,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: LaStatus, msg: impl Into<String>) -> LaStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &Error) -> LaStatus {
    match e {
        Error::Io(_) => LaStatus::Io,
        Error::Checkpoint(_) => LaStatus::Checkpoint,
        Error::Input(_) | Error::Contract(_) => LaStatus::InvalidInput,
        _ => LaStatus::Internal,
    }
}

fn guarded(f: impl FnOnce() -> LaStatus) -> LaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(LaStatus::Internal, "panic inside the router"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, LaStatus> {
    if p.is_null() {
        return Err(fail(LaStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(LaStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn la_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a checkpoint file into `*out`.
///
/// # Safety
/// `path` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn la_router_load(path: *const c_char, out: *mut *mut LaRouter) -> LaStatus {
    guarded(|| {
        if out.is_null() {
            return fail(LaStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match Checkpoint::load(path) {
            Ok(c) => {
                *out = Box::into_raw(Box::new(LaRouter { router: c.router }));
                LaStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Number of candidate models.
///
/// # Safety
/// `router` must come from [`la_router_load`]; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn la_router_models(router: *const LaRouter, out: *mut usize) -> LaStatus {
    if router.is_null() || out.is_null() {
        return fail(LaStatus::NullPointer, "router or out is null");
    }
    *out = (*router).router.models();
    LaStatus::Ok
}

/// Routes `query`. Writes the 1-based selected model to `*selected` and,
/// when `scores` is non-null, the per-model scores to `scores[0..len]`.
///
/// # Safety
/// `router` must come from [`la_router_load`]; `query` must be
/// nul-terminated; `scores` must hold `len` doubles when non-null.
#[no_mangle]
pub unsafe extern "C" fn la_router_route(
    router: *const LaRouter,
    query: *const c_char,
    scores: *mut f64,
    len: usize,
    selected: *mut usize,
) -> LaStatus {
    guarded(|| {
        if router.is_null() || selected.is_null() {
            return fail(LaStatus::NullPointer, "router or selected is null");
        }
        let router = &(*router).router;
        let query = match str_arg(query, "query") {
            Ok(q) => q,
            Err(s) => return s,
        };
        if !scores.is_null() && len < router.models() {
            return fail(
                LaStatus::BufferTooSmall,
                format!("score buffer holds {len} values, router has {} models", router.models()),
            );
        }
        match router.route(query) {
            Ok(d) => {
                if !scores.is_null() {
                    std::slice::from_raw_parts_mut(scores, d.scores.len()).copy_from_slice(&d.scores);
                }
                *selected = d.selected;
                LaStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Releases a router; null is ignored.
///
/// # Safety
/// `router` must come from [`la_router_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn la_router_free(router: *mut LaRouter) {
    if !router.is_null() {
        drop(Box::from_raw(router));
    }
}
