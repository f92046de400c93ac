//! C ABI for simbridge.
//!
//! A bridge is an opaque `SbBridge*` created from scenario JSON and stepped
//! explicitly by the caller. Every call returns an `SbStatus`; on failure
//! `sb_last_error_message()` describes the last error on the calling thread.
//! Strings handed out by the library must be released with
//! `sb_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use simbridge::bridge::Bridge;
use simbridge::command::Command;
use simbridge::model::ParseMode;
use simbridge::scenario::Scenario;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidScenario = 3,
    Rejected = 4,
    Runtime = 5,
    Panic = 6,
}

/// Opaque simulation handle.
pub struct SbBridge {
    inner: Bridge,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl std::fmt::Display) {
    let text = msg.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).unwrap_or_default());
}

fn guard(f: impl FnOnce() -> Result<(), (SbStatus, String)>) -> SbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SbStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SbStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, (SbStatus, String)> {
    if p.is_null() {
        return Err((SbStatus::NullPointer, "null string argument".into()));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (SbStatus::InvalidUtf8, e.to_string()))
}

unsafe fn bridge<'a>(b: *mut SbBridge) -> Result<&'a mut SbBridge, (SbStatus, String)> {
    b.as_mut().ok_or((SbStatus::NullPointer, "null bridge".into()))
}

fn out_string(json: String, out: *mut *mut c_char) -> Result<(), (SbStatus, String)> {
    let s = CString::new(json).map_err(|e| (SbStatus::Runtime, e.to_string()))?;
    unsafe { *out = s.into_raw() };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after success.
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn sb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Builds a bridge from scenario JSON (strict parsing).
///
/// # Safety
/// `scenario_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sb_bridge_new(scenario_json: *const c_char, out: *mut *mut SbBridge) -> SbStatus {
    guard(|| {
        if out.is_null() {
            return Err((SbStatus::NullPointer, "null out pointer".into()));
        }
        *out = ptr::null_mut();
        let json = text(scenario_json)?;
        let built = Scenario::from_json(json, ParseMode::Strict)
            .and_then(|(s, _)| s.build())
            .map_err(|e| (SbStatus::InvalidScenario, e.to_string()))?;
        let inner = Bridge::new(built).map_err(|e| (SbStatus::Runtime, e.to_string()))?;
        *out = Box::into_raw(Box::new(SbBridge { inner }));
        Ok(())
    })
}

/// Releases a bridge. Null is ignored.
///
/// # Safety
/// `b` must come from `sb_bridge_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sb_bridge_free(b: *mut SbBridge) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Advances `substeps` physics steps, running controller ticks as due.
///
/// # Safety
/// `b` must be a live bridge.
#[no_mangle]
pub unsafe extern "C" fn sb_bridge_step(b: *mut SbBridge, substeps: u64) -> SbStatus {
    guard(|| {
        let b = bridge(b)?;
        b.inner.advance(substeps).map_err(|e| (SbStatus::Runtime, e.to_string()))
    })
}

/// Queues a command given as JSON, e.g. `{"op":"pause"}`. It takes effect
/// at the next step.
///
/// # Safety
/// `b` must be a live bridge and `cmd_json` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sb_bridge_enqueue_json(b: *mut SbBridge, cmd_json: *const c_char) -> SbStatus {
    guard(|| {
        let b = bridge(b)?;
        let cmd: Command = serde_json::from_str(text(cmd_json)?).map_err(|e| (SbStatus::Rejected, e.to_string()))?;
        b.inner
            .handle()
            .enqueue(cmd)
            .map_err(|e| (SbStatus::Rejected, e.to_string()))
    })
}

/// Current snapshot as JSON. Free the result with `sb_string_free`.
///
/// # Safety
/// `b` must be a live bridge and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sb_bridge_snapshot_json(b: *mut SbBridge, out: *mut *mut c_char) -> SbStatus {
    guard(|| {
        if out.is_null() {
            return Err((SbStatus::NullPointer, "null out pointer".into()));
        }
        let b = bridge(b)?;
        let json = serde_json::to_string(&b.inner.snapshot()).map_err(|e| (SbStatus::Runtime, e.to_string()))?;
        out_string(json, out)
    })
}

/// Run report so far as JSON. Free the result with `sb_string_free`.
///
/// # Safety
/// `b` must be a live bridge and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sb_bridge_report_json(b: *mut SbBridge, out: *mut *mut c_char) -> SbStatus {
    guard(|| {
        if out.is_null() {
            return Err((SbStatus::NullPointer, "null out pointer".into()));
        }
        let b = bridge(b)?;
        let json = serde_json::to_string(&b.inner.report()).map_err(|e| (SbStatus::Runtime, e.to_string()))?;
        out_string(json, out)
    })
}

/// Sim time in seconds.
///
/// # Safety
/// `b` must be a live bridge and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sb_bridge_time(b: *mut SbBridge, out: *mut f64) -> SbStatus {
    guard(|| {
        if out.is_null() {
            return Err((SbStatus::NullPointer, "null out pointer".into()));
        }
        let b = bridge(b)?;
        *out = b.inner.physics().t;
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
