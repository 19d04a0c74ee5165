//! C ABI over the safenav engine.
//!
//! Every function returns a [`SafenavStatus`]; on failure the message is
//! available from [`safenav_last_error`] on the same thread. Handles are
//! opaque and must be released with the matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use safenav::collision::p_collision_alpha;
use safenav::config::MissionConfig;
use safenav::kernel::critical_value;
use safenav::manager::{Mission, MissionStatus};
use safenav::mapping::CumulativeMap;
use safenav::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafenavStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    DimensionMismatch = 4,
    Io = 5,
    /// Numerical failure inside the engine (non-PSD covariance, broken invariant).
    Numeric = 6,
    /// The requested data does not exist yet, e.g. no map before the first cycle.
    NotAvailable = 7,
    Panic = 8,
}

/// Outcome of a mission, or its state so far.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafenavReport {
    /// True when the goal was reached without collisions.
    pub success: bool,
    /// 0 running, 1 goal reached, 2 returned home, 3 emergency stop, 4 timeout.
    pub state: i32,
    /// Simulated time the goal was reached, NaN if it was not.
    pub goal_time: f64,
    pub path_length: f64,
    pub iterations: usize,
    pub collisions: usize,
    pub contingency: bool,
}

/// Opaque mission handle.
pub struct SafenavMission(Mission);

/// Opaque snapshot of a fused occupancy map.
pub struct SafenavMap(CumulativeMap);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("interior NULs removed"));
}

fn status_of(e: &Error) -> SafenavStatus {
    match e {
        Error::InvalidArgument(_) | Error::UnknownSubmap(_) | Error::ControlOutOfBounds(_) => SafenavStatus::InvalidArgument,
        Error::Config(_) | Error::UnknownWorld(_) => SafenavStatus::Config,
        Error::DimensionMismatch { .. } | Error::FrameMismatch(_) => SafenavStatus::DimensionMismatch,
        Error::Io(_) => SafenavStatus::Io,
        Error::NotPsd(_) | Error::Invariant(_) => SafenavStatus::Numeric,
    }
}

/// Run `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), SafenavStatus>) -> SafenavStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SafenavStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            SafenavStatus::Panic
        }
    }
}

fn fail(e: Error) -> SafenavStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> SafenavStatus {
    set_error(format!("{what} is NULL"));
    SafenavStatus::NullPointer
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, SafenavStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        SafenavStatus::InvalidArgument
    })
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], SafenavStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn state_code(s: Option<MissionStatus>) -> i32 {
    match s {
        None => 0,
        Some(MissionStatus::GoalReached) => 1,
        Some(MissionStatus::Returned) => 2,
        Some(MissionStatus::EmergencyStop) => 3,
        Some(MissionStatus::Timeout) => 4,
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn safenav_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Radius in standard deviations of the ball holding mass `alpha` of a
/// `dim`-dimensional standard Gaussian.
///
/// # Safety
/// `out` must be a valid pointer to a double.
#[no_mangle]
pub unsafe extern "C" fn safenav_critical_value(alpha: f64, dim: usize, out: *mut f64) -> SafenavStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = critical_value(alpha, dim).map_err(fail)?;
        Ok(())
    })
}

/// Create a mission from TOML text plus `section.key=value` overrides.
///
/// # Safety
/// `config_toml` must be a NUL-terminated string (it may be empty),
/// `overrides` an array of `n_overrides` such strings (or NULL when
/// `n_overrides` is 0) and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn safenav_mission_new(
    config_toml: *const c_char,
    overrides: *const *const c_char,
    n_overrides: usize,
    out: *mut *mut SafenavMission,
) -> SafenavStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = str_arg(config_toml, "config_toml")?;
        let mut set = Vec::with_capacity(n_overrides);
        if n_overrides > 0 {
            if overrides.is_null() {
                return Err(null("overrides"));
            }
            for i in 0..n_overrides {
                set.push(str_arg(*overrides.add(i), "override")?.to_string());
            }
        }
        let cfg = MissionConfig::from_toml_with(text, &set).map_err(fail)?;
        let mission = Mission::new(cfg).map_err(fail)?;
        *out = Box::into_raw(Box::new(SafenavMission(mission)));
        Ok(())
    })
}

/// Release a mission. NULL is ignored.
///
/// # Safety
/// `mission` must come from [`safenav_mission_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn safenav_mission_free(mission: *mut SafenavMission) {
    if !mission.is_null() {
        drop(Box::from_raw(mission));
    }
}

/// Run one planning cycle. `finished` is set once the mission has ended.
///
/// # Safety
/// `mission` must be a live handle and `finished` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn safenav_mission_step(mission: *mut SafenavMission, finished: *mut bool) -> SafenavStatus {
    guard(|| {
        let m = mission.as_mut().ok_or_else(|| null("mission"))?;
        if finished.is_null() {
            return Err(null("finished"));
        }
        *finished = m.0.step().map_err(fail)?;
        Ok(())
    })
}

fn report_of(m: &Mission) -> SafenavReport {
    let r = m.report();
    SafenavReport {
        success: m.status().is_some() && r.success,
        state: state_code(m.status()),
        goal_time: r.goal_time.unwrap_or(f64::NAN),
        path_length: r.path_length,
        iterations: r.iterations,
        collisions: r.collision_count,
        contingency: r.contingency,
    }
}

/// Run the mission to its end and fill `report`.
///
/// # Safety
/// `mission` must be a live handle and `report` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn safenav_mission_run(mission: *mut SafenavMission, report: *mut SafenavReport) -> SafenavStatus {
    guard(|| {
        let m = mission.as_mut().ok_or_else(|| null("mission"))?;
        if report.is_null() {
            return Err(null("report"));
        }
        m.0.run().map_err(fail)?;
        *report = report_of(&m.0);
        Ok(())
    })
}

/// State of the mission so far.
///
/// # Safety
/// `mission` must be a live handle and `report` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn safenav_mission_report(mission: *const SafenavMission, report: *mut SafenavReport) -> SafenavStatus {
    guard(|| {
        let m = mission.as_ref().ok_or_else(|| null("mission"))?;
        if report.is_null() {
            return Err(null("report"));
        }
        *report = report_of(&m.0);
        Ok(())
    })
}

/// Believed position of the vehicle. Writes up to `cap` coordinates and
/// stores the workspace dimension in `len`.
///
/// # Safety
/// `mission` must be a live handle, `out` must hold `cap` doubles and
/// `len` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn safenav_mission_position(
    mission: *const SafenavMission,
    out: *mut f64,
    cap: usize,
    len: *mut usize,
) -> SafenavStatus {
    guard(|| {
        let m = mission.as_ref().ok_or_else(|| null("mission"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if len.is_null() {
            return Err(null("len"));
        }
        let p = m.0.exec.belief().position();
        *len = p.len();
        if cap < p.len() {
            set_error(format!("buffer holds {cap} values, position has {}", p.len()));
            return Err(SafenavStatus::InvalidArgument);
        }
        std::slice::from_raw_parts_mut(out, p.len()).copy_from_slice(p);
        Ok(())
    })
}

/// Snapshot of the most recent fused map. Fails with `NotAvailable`
/// before the first planning cycle.
///
/// # Safety
/// `mission` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn safenav_mission_map(mission: *const SafenavMission, out: *mut *mut SafenavMap) -> SafenavStatus {
    guard(|| {
        let m = mission.as_ref().ok_or_else(|| null("mission"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let Some(map) = &m.0.last_map else {
            set_error("no map has been built yet");
            return Err(SafenavStatus::NotAvailable);
        };
        *out = Box::into_raw(Box::new(SafenavMap(map.clone())));
        Ok(())
    })
}

/// Release a map. NULL is ignored.
///
/// # Safety
/// `map` must come from [`safenav_mission_map`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn safenav_map_free(map: *mut SafenavMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

fn frame_point(map: &CumulativeMap, p: &[f64]) -> Result<Vec<f64>, SafenavStatus> {
    if p.len() != map.dim() {
        return Err(fail(Error::DimensionMismatch { expected: map.dim(), found: p.len() }));
    }
    Ok(p.iter().zip(map.frame().position()).map(|(a, o)| a - o).collect())
}

/// Occupancy probability at a world point. `known` is false (and `prob`
/// 0.5) for never-observed cells.
///
/// # Safety
/// `map` must be a live handle, `point` must hold `dim` doubles and the
/// output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn safenav_map_probability(
    map: *const SafenavMap,
    point: *const f64,
    dim: usize,
    prob: *mut f64,
    known: *mut bool,
) -> SafenavStatus {
    guard(|| {
        let m = &map.as_ref().ok_or_else(|| null("map"))?.0;
        if prob.is_null() || known.is_null() {
            return Err(null("output"));
        }
        let q = frame_point(m, slice_arg(point, dim, "point")?)?;
        let v = m.value_at(&q);
        *known = v.is_some();
        *prob = v.unwrap_or(0.5);
        Ok(())
    })
}

/// Collision probability of a Gaussian position (axis standard deviations
/// `sigmas`) centred at a world point, evaluated with confidence `alpha`.
///
/// # Safety
/// `map` must be a live handle, `point` and `sigmas` must each hold `dim`
/// doubles and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn safenav_map_collision_probability(
    map: *const SafenavMap,
    point: *const f64,
    sigmas: *const f64,
    dim: usize,
    alpha: f64,
    out: *mut f64,
) -> SafenavStatus {
    guard(|| {
        let m = &map.as_ref().ok_or_else(|| null("map"))?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        let q = frame_point(m, slice_arg(point, dim, "point")?)?;
        let s = slice_arg(sigmas, dim, "sigmas")?;
        *out = p_collision_alpha(&q, s, m, alpha).map_err(fail)?;
        Ok(())
    })
}
