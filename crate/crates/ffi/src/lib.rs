//! C ABI surface for the czsim toolkit.
//!
//! Handles are opaque pointers created and destroyed by this library. Every
//! fallible call returns a status code; the message for the most recent
//! failure on the calling thread is available through
//! `czsim_last_error_message`. Strings returned through out-parameters are
//! heap-allocated and must be released with `czsim_string_free`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use libc::{c_char, c_double, c_int};

use czsim::calibration::{calibrate_cz, CalibrationOptions};
use czsim::device::DeviceParams;
use czsim::dynamics::PulseShape;
use czsim::spectrum::{chi12_spectral, min_gap};

/// Success.
pub const CZSIM_OK: c_int = 0;
/// A required pointer argument was null.
pub const CZSIM_ERR_NULL: c_int = 1;
/// Invalid input: malformed JSON, non-UTF8 text or parameters that fail
/// validation.
pub const CZSIM_ERR_INVALID: c_int = 2;
/// The computation itself failed (no convergence, degenerate labels, ...).
pub const CZSIM_ERR_COMPUTE: c_int = 3;
/// A panic was caught at the ABI boundary.
pub const CZSIM_ERR_PANIC: c_int = 4;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn code_of(err: &czsim::Error) -> c_int {
    match err {
        czsim::Error::Validation(_) | czsim::Error::InvalidDimension(_) => CZSIM_ERR_INVALID,
        _ => CZSIM_ERR_COMPUTE,
    }
}

fn guarded<F: FnOnce() -> c_int>(f: F) -> c_int {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => {
            set_error("internal panic");
            CZSIM_ERR_PANIC
        }
    }
}

/// Opaque device-parameter handle.
pub struct CzDevice {
    params: DeviceParams,
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn czsim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the most recent error message of this thread into `buf` (truncated to
/// `len - 1` bytes, always NUL-terminated). Returns the full message length in
/// bytes, excluding the terminator. `buf` may be null to query the length.
#[no_mangle]
pub extern "C" fn czsim_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
                *buf.add(n) = 0;
            }
        }
        bytes.len()
    })
}

/// New handle with the built-in default device parameters. Never fails.
#[no_mangle]
pub extern "C" fn czsim_device_default() -> *mut CzDevice {
    Box::into_raw(Box::new(CzDevice {
        params: DeviceParams::default(),
    }))
}

/// New handle from a JSON description; null on failure (see
/// `czsim_last_error_message`).
///
/// # Safety
/// `json` must be a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn czsim_device_from_json(json: *const c_char) -> *mut CzDevice {
    if json.is_null() {
        set_error("json pointer is null");
        return ptr::null_mut();
    }
    let text = match CStr::from_ptr(json).to_str() {
        Ok(t) => t,
        Err(_) => {
            set_error("json is not valid UTF-8");
            return ptr::null_mut();
        }
    };
    match DeviceParams::from_json(text) {
        Ok(params) => Box::into_raw(Box::new(CzDevice { params })),
        Err(e) => {
            set_error(&e.to_string());
            ptr::null_mut()
        }
    }
}

/// Release a handle. Accepts null.
///
/// # Safety
/// `dev` must be null or a pointer previously returned by a constructor, not
/// yet freed.
#[no_mangle]
pub unsafe extern "C" fn czsim_device_free(dev: *mut CzDevice) {
    if !dev.is_null() {
        drop(Box::from_raw(dev));
    }
}

/// chi12 (GHz) at the given coupler frequency, written to `out`.
///
/// # Safety
/// `dev` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn czsim_chi12(
    dev: *const CzDevice,
    coupler_ghz: c_double,
    out: *mut c_double,
) -> c_int {
    if dev.is_null() || out.is_null() {
        set_error("null argument");
        return CZSIM_ERR_NULL;
    }
    let params = &(*dev).params;
    guarded(|| match chi12_spectral(params, coupler_ghz) {
        Ok(chi) => {
            *out = chi;
            CZSIM_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            code_of(&e)
        }
    })
}

/// Minimum gap between the |101> branch and its neighbours along a half-sine
/// pulse of the given amplitude. Writes the gap (GHz) and the coupler
/// frequency where it occurs.
///
/// # Safety
/// `dev` must be a live handle; `out_gap_ghz` and `out_at_ghz` must be valid
/// pointers.
#[no_mangle]
pub unsafe extern "C" fn czsim_min_gap(
    dev: *const CzDevice,
    amplitude_phi0: c_double,
    out_gap_ghz: *mut c_double,
    out_at_ghz: *mut c_double,
) -> c_int {
    if dev.is_null() || out_gap_ghz.is_null() || out_at_ghz.is_null() {
        set_error("null argument");
        return CZSIM_ERR_NULL;
    }
    let params = &(*dev).params;
    guarded(|| {
        let pulse = match PulseShape::new(amplitude_phi0, 30.0) {
            Ok(p) => p,
            Err(e) => {
                set_error(&e.to_string());
                return code_of(&e);
            }
        };
        let traj = pulse.trajectory(&params.flux_map, 201);
        match min_gap(params, &traj) {
            Ok(g) => {
                *out_gap_ghz = g.min_gap_ghz;
                *out_at_ghz = g.at_frequency_ghz;
                CZSIM_OK
            }
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// Calibrate a CZ pulse of the given duration and return the full result as a
/// JSON string through `out_json`.
///
/// # Safety
/// `dev` must be a live handle and `out_json` a valid pointer; the returned
/// string must be released with `czsim_string_free`.
#[no_mangle]
pub unsafe extern "C" fn czsim_calibrate(
    dev: *const CzDevice,
    duration_ns: c_double,
    dt_ns: c_double,
    out_json: *mut *mut c_char,
) -> c_int {
    if dev.is_null() || out_json.is_null() {
        set_error("null argument");
        return CZSIM_ERR_NULL;
    }
    let params = &(*dev).params;
    guarded(|| {
        let opts = CalibrationOptions {
            dt_ns,
            ..Default::default()
        };
        match calibrate_cz(params, duration_ns, &opts) {
            Ok(result) => match serde_json::to_string(&result) {
                Ok(text) => {
                    let c = CString::new(text.replace('\0', " ")).unwrap_or_default();
                    *out_json = c.into_raw();
                    CZSIM_OK
                }
                Err(e) => {
                    set_error(&e.to_string());
                    CZSIM_ERR_COMPUTE
                }
            },
            Err(e) => {
                set_error(&e.to_string());
                code_of(&e)
            }
        }
    })
}

/// Release a string returned by this library. Accepts null.
///
/// # Safety
/// `s` must be null or a string returned through an out-parameter of this
/// library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn czsim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_device_chi12() {
        let dev = czsim_device_default();
        let mut chi = 0.0;
        let code = unsafe { czsim_chi12(dev, 6.74, &mut chi) };
        assert_eq!(code, CZSIM_OK);
        assert!(chi < -6e-5 && chi > -9e-5, "chi = {chi}");
        unsafe { czsim_device_free(dev) };
    }

    #[test]
    fn from_json_roundtrip_and_errors() {
        let dev = czsim_device_default();
        let json = serde_json::to_string(unsafe { &(*dev).params }).unwrap();
        let cjson = CString::new(json).unwrap();
        let dev2 = unsafe { czsim_device_from_json(cjson.as_ptr()) };
        assert!(!dev2.is_null());
        let (mut a, mut b) = (0.0, 0.0);
        unsafe {
            czsim_chi12(dev, 6.5, &mut a);
            czsim_chi12(dev2, 6.5, &mut b);
        }
        assert_eq!(a, b);
        unsafe {
            czsim_device_free(dev);
            czsim_device_free(dev2);
        }

        let bad = CString::new("{not json").unwrap();
        let dev3 = unsafe { czsim_device_from_json(bad.as_ptr()) };
        assert!(dev3.is_null());
        let n = czsim_last_error_message(ptr::null_mut(), 0);
        assert!(n > 0);
        let mut buf = vec![0 as c_char; n + 1];
        czsim_last_error_message(buf.as_mut_ptr(), buf.len());
        let msg = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap();
        assert!(!msg.is_empty());
    }

    #[test]
    fn null_arguments_are_rejected() {
        let mut chi = 0.0;
        assert_eq!(
            unsafe { czsim_chi12(ptr::null(), 6.74, &mut chi) },
            CZSIM_ERR_NULL
        );
        let dev = czsim_device_default();
        assert_eq!(
            unsafe { czsim_chi12(dev, 6.74, ptr::null_mut()) },
            CZSIM_ERR_NULL
        );
        unsafe { czsim_device_free(dev) };
        unsafe { czsim_device_free(ptr::null_mut()) };
        unsafe { czsim_string_free(ptr::null_mut()) };
    }

    #[test]
    fn min_gap_matches_direct_call() {
        let dev = czsim_device_default();
        let (mut gap, mut at) = (0.0, 0.0);
        let code = unsafe { czsim_min_gap(dev, 0.304, &mut gap, &mut at) };
        assert_eq!(code, CZSIM_OK);
        assert!(gap > 0.2 && gap < 0.3, "gap = {gap}");
        assert!(at > 5.0 && at < 5.6, "at = {at}");
        unsafe { czsim_device_free(dev) };
    }

    #[test]
    fn calibrate_returns_json() {
        let dev = czsim_device_default();
        let mut out: *mut c_char = ptr::null_mut();
        let code = unsafe { czsim_calibrate(dev, 30.0, 0.02, &mut out) };
        assert_eq!(code, CZSIM_OK);
        assert!(!out.is_null());
        let text = unsafe { CStr::from_ptr(out) }.to_str().unwrap().to_string();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let amp = v["pulse"]["amplitude_phi0"].as_f64().unwrap();
        assert!(amp > 0.28 && amp < 0.33, "amp = {amp}");
        unsafe {
            czsim_string_free(out);
            czsim_device_free(dev);
        }
    }

    #[test]
    fn version_is_nul_terminated() {
        let v = unsafe { CStr::from_ptr(czsim_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
