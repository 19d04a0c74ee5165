use std::ffi::{CStr, CString};
use std::ptr;

use safenav_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(safenav_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn critical_value_and_errors() {
    let mut v = 0.0;
    assert_eq!(unsafe { safenav_critical_value(0.99, 2, &mut v) }, SafenavStatus::Ok);
    assert!((v - 3.0349).abs() < 1e-3);
    assert!(last_error().is_empty());
    assert_eq!(unsafe { safenav_critical_value(1.5, 2, &mut v) }, SafenavStatus::InvalidArgument);
    assert!(last_error().contains("alpha"));
    assert_eq!(unsafe { safenav_critical_value(0.9, 2, ptr::null_mut()) }, SafenavStatus::NullPointer);
}

#[test]
fn bad_configuration_is_reported() {
    let text = CString::new("").unwrap();
    let bad = CString::new("mission.world='atlantis'").unwrap();
    let overrides = [bad.as_ptr()];
    let mut m = ptr::null_mut();
    let s = unsafe { safenav_mission_new(text.as_ptr(), overrides.as_ptr(), 1, &mut m) };
    assert_eq!(s, SafenavStatus::Config);
    assert!(m.is_null());
    assert!(last_error().contains("atlantis"));
    assert_eq!(unsafe { safenav_mission_new(ptr::null(), ptr::null(), 0, &mut m) }, SafenavStatus::NullPointer);
}

#[test]
fn mission_round_trip() {
    let text = CString::new("[mission]\nworld = 'open2d'\nseed = 1\n").unwrap();
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { safenav_mission_new(text.as_ptr(), ptr::null(), 0, &mut m) }, SafenavStatus::Ok);
    let mut map = ptr::null_mut();
    assert_eq!(unsafe { safenav_mission_map(m, &mut map) }, SafenavStatus::NotAvailable);

    let mut finished = false;
    assert_eq!(unsafe { safenav_mission_step(m, &mut finished) }, SafenavStatus::Ok);
    let mut r = SafenavReport { success: false, state: -1, goal_time: 0.0, path_length: 0.0, iterations: 0, collisions: 0, contingency: false };
    assert_eq!(unsafe { safenav_mission_report(m, &mut r) }, SafenavStatus::Ok);
    assert_eq!((r.state, r.iterations), (0, 1));
    assert!(r.goal_time.is_nan());

    assert_eq!(unsafe { safenav_mission_map(m, &mut map) }, SafenavStatus::Ok);
    let (mut p, mut known) = (0.0, false);
    let here = [0.0, 0.0];
    assert_eq!(unsafe { safenav_map_probability(map, here.as_ptr(), 2, &mut p, &mut known) }, SafenavStatus::Ok);
    assert!(known && p < 0.5, "{p}");
    let far = [1000.0, 1000.0];
    assert_eq!(unsafe { safenav_map_probability(map, far.as_ptr(), 2, &mut p, &mut known) }, SafenavStatus::Ok);
    assert!(!known);
    let sig = [0.2, 0.2];
    let mut pc = 1.0;
    assert_eq!(unsafe { safenav_map_collision_probability(map, here.as_ptr(), sig.as_ptr(), 2, 0.99, &mut pc) }, SafenavStatus::Ok);
    assert!(pc < 0.05, "{pc}");
    assert_eq!(
        unsafe { safenav_map_probability(map, here.as_ptr(), 3, &mut p, &mut known) },
        SafenavStatus::DimensionMismatch
    );
    unsafe { safenav_map_free(map) };

    assert_eq!(unsafe { safenav_mission_run(m, &mut r) }, SafenavStatus::Ok);
    assert!(r.success);
    assert_eq!(r.state, 1);
    assert_eq!(r.collisions, 0);
    let mut pos = [0.0; 3];
    let mut len = 0;
    assert_eq!(unsafe { safenav_mission_position(m, pos.as_mut_ptr(), 3, &mut len) }, SafenavStatus::Ok);
    assert_eq!(len, 2);
    assert!(pos[0] > 8.0, "{pos:?}");
    assert_eq!(unsafe { safenav_mission_position(m, pos.as_mut_ptr(), 1, &mut len) }, SafenavStatus::InvalidArgument);
    unsafe { safenav_mission_free(m) };
    unsafe { safenav_mission_free(ptr::null_mut()) };
}

#[test]
fn header_declares_the_api_and_compiles() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = std::fs::read_to_string(dir.join("safenav.h")).unwrap();
    for name in [
        "safenav_last_error",
        "safenav_critical_value",
        "safenav_mission_new",
        "safenav_mission_step",
        "safenav_mission_run",
        "safenav_mission_free",
        "safenav_map_probability",
        "SAFENAV_STATUS_OK",
        "typedef struct SafenavMission SafenavMission",
    ] {
        assert!(header.contains(name), "{name} missing");
    }
    // syntax-check with the system C compiler when there is one
    let src = std::env::temp_dir().join(format!("safenav_header_{}.c", std::process::id()));
    std::fs::write(&src, "#include \"safenav.h\"\nint main(void) { double v; return safenav_critical_value(0.9, 2, &v); }\n").unwrap();
    let out = std::process::Command::new("cc").arg("-fsyntax-only").arg("-I").arg(&dir).arg(&src).output();
    let _ = std::fs::remove_file(&src);
    if let Ok(out) = out {
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
}
