//! C ABI over `tsh_core`.
//!
//! Handles are opaque. Every fallible call returns a [`TshStatus`]; on failure
//! the message is kept per thread and read with [`tsh_last_error_message`].
//! Strings handed out by the library are freed with [`tsh_string_free`],
//! frames with [`tsh_frame_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::ptr;

use tsh_core::config::ScenarioConfig;
use tsh_core::env::{Env, EnvError};
use tsh_core::protocol::Session;
use tsh_core::sensor::{Frame, Modality};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TshStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ConfigInvalid = 3,
    NotReset = 4,
    EpisodeDone = 5,
    UnknownEntity = 6,
    NotControllable = 7,
    InvalidAction = 8,
    UnknownCamera = 9,
    UnknownMountEntity = 10,
    SensorsDisabled = 11,
    Io = 12,
    InvalidEvent = 13,
    Panic = 14,
    Internal = 15,
}

impl TshStatus {
    fn from_code(code: &str) -> TshStatus {
        match code {
            "ConfigInvalid" => TshStatus::ConfigInvalid,
            "NotReset" => TshStatus::NotReset,
            "EpisodeDone" => TshStatus::EpisodeDone,
            "UnknownEntity" => TshStatus::UnknownEntity,
            "NotControllable" => TshStatus::NotControllable,
            "InvalidAction" => TshStatus::InvalidAction,
            "UnknownCamera" => TshStatus::UnknownCamera,
            "UnknownMountEntity" => TshStatus::UnknownMountEntity,
            "SensorsDisabled" => TshStatus::SensorsDisabled,
            "IoFailure" => TshStatus::Io,
            "InvalidEvent" => TshStatus::InvalidEvent,
            _ => TshStatus::Internal,
        }
    }
}

/// Opaque environment handle.
pub struct TshEnv {
    env: Env,
}

/// Opaque protocol session handle.
pub struct TshSession {
    session: Session,
}

/// A rendered frame. Buffers absent from the request are NULL with length 0.
/// `depth_len` counts floats, not bytes.
#[repr(C)]
pub struct TshFrame {
    pub tick: u64,
    pub width: u32,
    pub height: u32,
    pub pose_x: f64,
    pub pose_y: f64,
    pub pose_z: f64,
    pub pose_heading: f64,
    pub rgb: *mut u8,
    pub rgb_len: usize,
    pub semantic: *mut u8,
    pub semantic_len: usize,
    pub depth: *mut f32,
    pub depth_len: usize,
}

pub const TSH_MODALITY_RGB: u32 = 1;
pub const TSH_MODALITY_SEMANTIC: u32 = 2;
pub const TSH_MODALITY_DEPTH: u32 = 4;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: TshStatus, msg: impl Into<String>) -> TshStatus {
    set_error(msg);
    status
}

fn env_fail(e: &EnvError) -> TshStatus {
    fail(TshStatus::from_code(e.code()), e.to_string())
}

/// Run `f`, turning a panic into `Panic` instead of unwinding across the ABI.
fn guard(f: impl FnOnce() -> TshStatus) -> TshStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(TshStatus::Panic, msg)
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, TshStatus> {
    if p.is_null() {
        return Err(fail(TshStatus::NullPointer, format!("{what} is NULL")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(TshStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> TshStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            TshStatus::Ok
        }
        Err(_) => fail(TshStatus::Internal, "output contains NUL"),
    }
}

fn to_json(v: impl serde::Serialize) -> String {
    serde_json::to_string(&v).expect("serializable")
}

/// Library version string. Static; do not free.
#[no_mangle]
pub extern "C" fn tsh_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn tsh_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tsh_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Create an environment. It must be reset before stepping.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tsh_env_new(out: *mut *mut TshEnv) -> TshStatus {
    guard(|| {
        if out.is_null() {
            return fail(TshStatus::NullPointer, "out is NULL");
        }
        *out = Box::into_raw(Box::new(TshEnv { env: Env::new() }));
        TshStatus::Ok
    })
}

/// # Safety
/// `env` must come from [`tsh_env_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tsh_env_free(env: *mut TshEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Reset from a scenario file. The initial transition is written to
/// `out_json` as a JSON string.
///
/// # Safety
/// Pointers must be valid; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tsh_env_reset_path(env: *mut TshEnv, path: *const c_char, out_json: *mut *mut c_char) -> TshStatus {
    guard(|| {
        let (Some(env), false) = (env.as_mut(), out_json.is_null()) else {
            return fail(TshStatus::NullPointer, "env or out_json is NULL");
        };
        let path = match str_arg(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match env.env.reset_path(Path::new(path)) {
            Ok(t) => put_string(out_json, to_json(&t)),
            Err(e) => env_fail(&e),
        }
    })
}

/// Reset from a scenario given as JSON text. `base_dir` resolves relative
/// map paths; NULL means the working directory.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tsh_env_reset_json(
    env: *mut TshEnv,
    config_json: *const c_char,
    base_dir: *const c_char,
    out_json: *mut *mut c_char,
) -> TshStatus {
    guard(|| {
        let (Some(env), false) = (env.as_mut(), out_json.is_null()) else {
            return fail(TshStatus::NullPointer, "env or out_json is NULL");
        };
        let text = match str_arg(config_json, "config_json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let base = if base_dir.is_null() {
            PathBuf::from(".")
        } else {
            match str_arg(base_dir, "base_dir") {
                Ok(b) => PathBuf::from(b),
                Err(s) => return s,
            }
        };
        let cfg: ScenarioConfig = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => return fail(TshStatus::ConfigInvalid, format!("config syntax: {e}")),
        };
        match env.env.reset(cfg, &base) {
            Ok(t) => put_string(out_json, to_json(&t)),
            Err(e) => env_fail(&e),
        }
    })
}

/// Advance one tick. `actions_json` is an object keyed by entity id; NULL
/// means no actions.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tsh_env_step(env: *mut TshEnv, actions_json: *const c_char, out_json: *mut *mut c_char) -> TshStatus {
    guard(|| {
        let (Some(env), false) = (env.as_mut(), out_json.is_null()) else {
            return fail(TshStatus::NullPointer, "env or out_json is NULL");
        };
        let actions = if actions_json.is_null() {
            serde_json::Value::Null
        } else {
            let text = match str_arg(actions_json, "actions_json") {
                Ok(t) => t,
                Err(s) => return s,
            };
            match serde_json::from_str(text) {
                Ok(v) => v,
                Err(e) => return fail(TshStatus::InvalidAction, format!("actions are not JSON: {e}")),
            }
        };
        match env.env.step_json(&actions) {
            Ok(t) => put_string(out_json, to_json(&t)),
            Err(e) => env_fail(&e),
        }
    })
}

/// Running trace hash of the current episode.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tsh_env_trace_hash(env: *const TshEnv, out: *mut u64) -> TshStatus {
    guard(|| {
        let (Some(env), false) = (env.as_ref(), out.is_null()) else {
            return fail(TshStatus::NullPointer, "env or out is NULL");
        };
        match env.env.sim() {
            Some(sim) => {
                *out = sim.trace_hash();
                TshStatus::Ok
            }
            None => env_fail(&EnvError::NotReset),
        }
    })
}

/// Current tick.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tsh_env_tick(env: *const TshEnv, out: *mut u64) -> TshStatus {
    guard(|| {
        let (Some(env), false) = (env.as_ref(), out.is_null()) else {
            return fail(TshStatus::NullPointer, "env or out is NULL");
        };
        match env.env.sim() {
            Some(sim) => {
                *out = sim.tick();
                TshStatus::Ok
            }
            None => env_fail(&EnvError::NotReset),
        }
    })
}

/// Serialized snapshot of the full world.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tsh_env_snapshot(env: *const TshEnv, out_json: *mut *mut c_char) -> TshStatus {
    guard(|| {
        let (Some(env), false) = (env.as_ref(), out_json.is_null()) else {
            return fail(TshStatus::NullPointer, "env or out_json is NULL");
        };
        match env.env.snapshot() {
            Ok(s) => put_string(out_json, to_json(&s)),
            Err(e) => env_fail(&e),
        }
    })
}

fn boxed<T>(v: Option<Vec<T>>) -> (*mut T, usize) {
    match v {
        Some(v) => {
            let len = v.len();
            (Box::into_raw(v.into_boxed_slice()).cast(), len)
        }
        None => (ptr::null_mut(), 0),
    }
}

unsafe fn unboxed<T>(p: *mut T, len: usize) {
    if !p.is_null() {
        drop(Box::from_raw(ptr::slice_from_raw_parts_mut(p, len)));
    }
}

fn into_ffi(f: Frame) -> TshFrame {
    let (rgb, rgb_len) = boxed(f.rgb);
    let (semantic, semantic_len) = boxed(f.semantic);
    let (depth, depth_len) = boxed(f.depth);
    TshFrame {
        tick: f.tick,
        width: f.width,
        height: f.height,
        pose_x: f.camera_pose.x,
        pose_y: f.camera_pose.y,
        pose_z: f.camera_pose.z,
        pose_heading: f.camera_pose.heading,
        rgb,
        rgb_len,
        semantic,
        semantic_len,
        depth,
        depth_len,
    }
}

/// Render a camera at the current tick. `modality_mask` ORs the
/// `TSH_MODALITY_*` bits; 0 renders the camera's configured modalities.
///
/// # Safety
/// Pointers must be valid; `camera` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tsh_env_render(
    env: *const TshEnv,
    camera: *const c_char,
    modality_mask: u32,
    out: *mut *mut TshFrame,
) -> TshStatus {
    guard(|| {
        let (Some(env), false) = (env.as_ref(), out.is_null()) else {
            return fail(TshStatus::NullPointer, "env or out is NULL");
        };
        let camera = match str_arg(camera, "camera") {
            Ok(c) => c,
            Err(s) => return s,
        };
        let mods: Vec<Modality> = [
            (TSH_MODALITY_RGB, Modality::Rgb),
            (TSH_MODALITY_SEMANTIC, Modality::Semantic),
            (TSH_MODALITY_DEPTH, Modality::Depth),
        ]
        .into_iter()
        .filter(|(bit, _)| modality_mask & bit != 0)
        .map(|(_, m)| m)
        .collect();
        let sel = (modality_mask != 0).then_some(mods.as_slice());
        match env.env.render(camera, sel) {
            Ok(f) => {
                *out = Box::into_raw(Box::new(into_ffi(f)));
                TshStatus::Ok
            }
            Err(e) => env_fail(&e),
        }
    })
}

/// # Safety
/// `frame` must come from [`tsh_env_render`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tsh_frame_free(frame: *mut TshFrame) {
    if frame.is_null() {
        return;
    }
    let f = Box::from_raw(frame);
    unboxed(f.rgb, f.rgb_len);
    unboxed(f.semantic, f.semantic_len);
    unboxed(f.depth, f.depth_len);
}

/// Protocol session: feed request lines, get response lines. `base_dir`
/// resolves relative paths in reset requests; NULL means the working directory.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tsh_session_new(base_dir: *const c_char, out: *mut *mut TshSession) -> TshStatus {
    guard(|| {
        if out.is_null() {
            return fail(TshStatus::NullPointer, "out is NULL");
        }
        let base = if base_dir.is_null() {
            PathBuf::from(".")
        } else {
            match str_arg(base_dir, "base_dir") {
                Ok(b) => PathBuf::from(b),
                Err(s) => return s,
            }
        };
        *out = Box::into_raw(Box::new(TshSession {
            session: Session::new(base),
        }));
        TshStatus::Ok
    })
}

/// Handle one request line. Protocol-level failures are reported inside the
/// response line, so this returns Ok for any well-formed C call.
///
/// # Safety
/// Pointers must be valid; `line` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tsh_session_request(
    session: *mut TshSession,
    line: *const c_char,
    out_line: *mut *mut c_char,
) -> TshStatus {
    guard(|| {
        let (Some(s), false) = (session.as_mut(), out_line.is_null()) else {
            return fail(TshStatus::NullPointer, "session or out_line is NULL");
        };
        let line = match str_arg(line, "line") {
            Ok(l) => l,
            Err(st) => return st,
        };
        put_string(out_line, s.session.handle_line(line))
    })
}

/// # Safety
/// `session` must come from [`tsh_session_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tsh_session_free(session: *mut TshSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}
