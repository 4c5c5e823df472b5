//! C ABI over salem-core.
//!
//! Every function returns a [`SalemStatus`]; results go through out-pointers. After a
//! non-OK status, `salem_last_error` gives the message for the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use salem_core::analytics;
use salem_core::mitigation::{cg_overhead, ext_lem_overhead, fg_inputs, fg_lambda_with_missing, SubsetAction};
use salem_core::p2lc::{Characterization, Conditioning, JointTable, P2lc};
use salem_core::pauli::{invert_channel, logical_channel, PauliOp, LOGICAL_LETTERS};
use salem_core::steane::SteaneCycle;
use salem_core::SalemError;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SalemStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SingularChannel = 3,
    EmptySubset = 4,
    Internal = 5,
    Panic = 6,
}

/// What happens to the rejected subset in `salem_steane_cg_lambda`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SalemAction {
    Reject = 0,
    Invert = 1,
}

/// Characterized Steane cycle. Opaque to C.
pub struct SalemSteane {
    cycle: SteaneCycle,
    table: JointTable,
    lut: Characterization,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &SalemError) -> SalemStatus {
    match e {
        SalemError::SingularChannel { .. } => SalemStatus::SingularChannel,
        SalemError::EmptyAcceptedSubset | SalemError::NoAcceptedShots { .. } => SalemStatus::EmptySubset,
        SalemError::InvalidInput(_) | SalemError::InvalidChannel(_) | SalemError::Config(_) => SalemStatus::InvalidArgument,
        _ => SalemStatus::Internal,
    }
}

fn guard<F: FnOnce() -> Result<(), (SalemStatus, String)>>(f: F) -> SalemStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SalemStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("panic inside salem".into());
            SalemStatus::Panic
        }
    }
}

fn core<T>(r: salem_core::Result<T>) -> Result<T, (SalemStatus, String)> {
    r.map_err(|e| (status_of(&e), e.to_string()))
}

fn null(what: &str) -> (SalemStatus, String) {
    (SalemStatus::NullPointer, format!("{what} is null"))
}

fn bad(msg: String) -> (SalemStatus, String) {
    (SalemStatus::InvalidArgument, msg)
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), (SalemStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(v);
    Ok(())
}

unsafe fn handle<'a>(h: *const SalemSteane) -> Result<&'a SalemSteane, (SalemStatus, String)> {
    h.as_ref().ok_or_else(|| null("handle"))
}

/// Copy the last error message of this thread into `buf` (NUL-terminated, truncated to
/// `len`). Returns the full message length without the terminator, 0 if there is none.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn salem_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Enumerate fault paths of one flagged Steane cycle at physical rate `eps` and build the
/// joint record/output table with input errors up to `max_weight - 1`.
///
/// # Safety
/// `out` must be a valid pointer. The handle is released with `salem_steane_free`.
#[no_mangle]
pub unsafe extern "C" fn salem_steane_new(eps: f64, max_weight: u32, out: *mut *mut SalemSteane) -> SalemStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("output pointer"));
        }
        if !(eps > 0.0 && eps < 0.5) {
            return Err(bad(format!("eps = {eps} outside (0, 1/2)")));
        }
        if !(1..=3).contains(&max_weight) {
            return Err(bad(format!("max_weight = {max_weight} outside 1..=3")));
        }
        let cycle = core(SteaneCycle::new(eps))?;
        let table = core(JointTable::build(&cycle, max_weight as usize))?;
        let lut = P2lc::new(&cycle, &table).characterize(Conditioning::default());
        *out = Box::into_raw(Box::new(SalemSteane { cycle, table, lut }));
        Ok(())
    })
}

/// # Safety
/// `h` must come from `salem_steane_new` and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn salem_steane_free(h: *mut SalemSteane) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Logical error rate per cycle under the lookup-table decoder.
///
/// # Safety
/// `h` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn salem_steane_eps_l(h: *const SalemSteane, out: *mut f64) -> SalemStatus {
    guard(|| {
        let s = handle(h)?;
        write(out, s.lut.eps_l)
    })
}

/// Probability mass of records outside the table.
///
/// # Safety
/// `h` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn salem_steane_missing(h: *const SalemSteane, out: *mut f64) -> SalemStatus {
    guard(|| {
        let s = handle(h)?;
        write(out, s.lut.missing)
    })
}

/// Fine-grained blowup rate; the missing mass is one extra record with flip rate
/// `eps_missing`.
///
/// # Safety
/// `h` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn salem_steane_fg_lambda(h: *const SalemSteane, eps_missing: f64, out: *mut f64) -> SalemStatus {
    guard(|| {
        let s = handle(h)?;
        if !(0.0..=1.0).contains(&eps_missing) {
            return Err(bad(format!("eps_missing = {eps_missing} outside [0, 1]")));
        }
        write(out, fg_lambda_with_missing(&fg_inputs(&s.lut), s.lut.eps_l, s.lut.missing, eps_missing))
    })
}

/// Blowup rate of inverting the syndrome-averaged channel.
///
/// # Safety
/// `h` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn salem_steane_ext_lambda(h: *const SalemSteane, out: *mut f64) -> SalemStatus {
    guard(|| {
        let s = handle(h)?;
        write(out, ext_lem_overhead(&s.lut.channel).lambda)
    })
}

/// Coarse-grained blowup rate with records of conditional error rate above `tau` rejected
/// or separately inverted. `p_accept` may be null.
///
/// # Safety
/// `h` and `out` must be valid pointers; `p_accept` must be valid or null.
#[no_mangle]
pub unsafe extern "C" fn salem_steane_cg_lambda(
    h: *const SalemSteane,
    tau: f64,
    action: SalemAction,
    out: *mut f64,
    p_accept: *mut f64,
) -> SalemStatus {
    guard(|| {
        let s = handle(h)?;
        if !(0.0..=1.0).contains(&tau) {
            return Err(bad(format!("tau = {tau} outside [0, 1]")));
        }
        let part = s.lut.partition(tau);
        let stats = s.lut.subset_stats(&part);
        let r = match action {
            SalemAction::Invert => core(cg_overhead(&stats, s.lut.eps_l, SubsetAction::Invert, None))?,
            SalemAction::Reject => {
                let acc = core(P2lc::new(&s.cycle, &s.table).accepted_channel(&part, Conditioning::default()))?;
                core(cg_overhead(&stats, s.lut.eps_l, SubsetAction::Reject, Some((&acc.channel, acc.p_accept))))?
            }
        };
        if !p_accept.is_null() {
            *p_accept = r.p_accept;
        }
        write(out, r.lambda)
    })
}

/// Leading-order ratio of mid-shot to post-shot rejection rates at `u >= 0`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn salem_midshot_ratio(u: f64, out: *mut f64) -> SalemStatus {
    guard(|| {
        if !(u >= 0.0 && u.is_finite()) {
            return Err(bad(format!("u = {u} must be finite and >= 0")));
        }
        write(out, analytics::midshot_ratio(u))
    })
}

/// Invert a single-qubit Pauli channel given as probabilities in I, X, Y, Z order.
/// Writes the quasi-probabilities of the inverse to `quasi[4]` and its norm to `norm`.
///
/// # Safety
/// `probs` must point to 4 readable doubles, `quasi` to 4 writable doubles, `norm` must
/// be valid.
#[no_mangle]
pub unsafe extern "C" fn salem_invert_logical(probs: *const f64, quasi: *mut f64, norm: *mut f64) -> SalemStatus {
    guard(|| {
        if probs.is_null() || quasi.is_null() {
            return Err(null("probs or quasi"));
        }
        let mut w = [0.0; 4];
        ptr::copy_nonoverlapping(probs, w.as_mut_ptr(), 4);
        if w.iter().any(|p| !(*p >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(bad(format!("{w:?} is not a probability vector")));
        }
        let qp = core(invert_channel(&logical_channel(w)))?;
        for (i, c) in LOGICAL_LETTERS.iter().enumerate() {
            *quasi.add(i) = qp.quasi_of(&PauliOp::single(1, 0, *c));
        }
        write(norm, qp.norm)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&SalemError::EmptyAcceptedSubset), SalemStatus::EmptySubset);
        assert_eq!(status_of(&SalemError::InvalidInput("x".into())), SalemStatus::InvalidArgument);
        assert_eq!(status_of(&SalemError::MissingFit("x".into())), SalemStatus::Internal);
    }

    #[test]
    fn panic_is_caught() {
        let s = guard(|| panic!("boom"));
        assert_eq!(s, SalemStatus::Panic);
        assert!(unsafe { salem_last_error(ptr::null_mut(), 0) } > 0);
    }
}
