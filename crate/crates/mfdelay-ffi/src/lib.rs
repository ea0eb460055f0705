//! C ABI for the `mfdelay` library.
//!
//! Problems and solutions are opaque handles created by `mfd_*` constructors
//! and released with the matching `*_free` function. Every fallible function
//! returns an [`MfdStatus`]; on failure a human-readable message is available
//! from [`mfd_last_error`] on the same thread. Matrices are exchanged as
//! row-major `double` buffers. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mfdelay::linalg::Mat;
use mfdelay::model::{builtin_example, load_problem, validate, ProblemSpec};
use mfdelay::predictor::{simulate, NoiseKind};
use mfdelay::riccati::{backward_pass, gains_to_json, optimal_cost, synthesize_gains, LinearPolicy, RiccatiSolution};
use mfdelay::verify::{exact_cost, mc_cost, run_suite, Suite, VerifyOptions};
use mfdelay::Error;

/// Result code of every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MfdStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument is not valid UTF-8.
    InvalidUtf8 = 2,
    /// The problem document is malformed or violates the weight requirements.
    InvalidProblem = 3,
    /// A stage coefficient matrix is singular; no unique optimal policy exists.
    Unsolvable = 4,
    /// An index argument is out of range.
    OutOfRange = 5,
    /// The output buffer is too small; the error message states the required length.
    BufferTooSmall = 6,
    /// At least one verification check failed.
    VerificationFailed = 7,
    /// Any other failure (including an internal panic).
    Internal = 8,
}

/// Opaque problem instance.
pub struct MfdProblem {
    spec: ProblemSpec,
}

/// Opaque solved problem: the instance, its Riccati solution and optimal policy.
pub struct MfdSolution {
    spec: ProblemSpec,
    sol: RiccatiSolution,
    policy: LinearPolicy,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: MfdStatus, msg: impl Into<String>) -> MfdStatus {
    set_error(msg);
    status
}

fn status_of(err: &Error) -> MfdStatus {
    match err {
        Error::Solvability { .. } => MfdStatus::Unsolvable,
        Error::IndexOutOfRange { .. } => MfdStatus::OutOfRange,
        Error::Schema { .. }
        | Error::Dimension { .. }
        | Error::Asymmetric { .. }
        | Error::Invalid(_)
        | Error::UnknownExample(_)
        | Error::Json(_) => MfdStatus::InvalidProblem,
        _ => MfdStatus::Internal,
    }
}

fn from_error(err: Error) -> MfdStatus {
    let s = status_of(&err);
    fail(s, err.to_string())
}

/// Run `f`, converting panics into `Internal`.
fn guard(f: impl FnOnce() -> MfdStatus) -> MfdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(MfdStatus::Internal, "internal panic"),
    }
}

unsafe fn read_str<'a>(p: *const c_char) -> Result<&'a str, MfdStatus> {
    if p.is_null() {
        return Err(fail(MfdStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(MfdStatus::InvalidUtf8, "string argument is not UTF-8"))
}

fn checked(spec: ProblemSpec) -> Result<ProblemSpec, MfdStatus> {
    let report = validate(&spec);
    if report.has_errors() {
        Err(fail(MfdStatus::InvalidProblem, report.summary()))
    } else {
        Ok(spec)
    }
}

unsafe fn store<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Copy of the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length excluding the NUL,
/// or 0 when there is no message.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mfd_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| match &*e.borrow() {
        None => 0,
        Some(msg) => {
            let bytes = msg.as_bytes();
            if !buf.is_null() && len > 0 {
                let k = bytes.len().min(len - 1);
                ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, k);
                *buf.add(k) = 0;
            }
            bytes.len()
        }
    })
}

/// Parse a JSON problem document and validate it.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mfd_problem_from_json(json: *const c_char, out: *mut *mut MfdProblem) -> MfdStatus {
    guard(|| {
        if out.is_null() {
            return fail(MfdStatus::NullPointer, "null output pointer");
        }
        let text = match read_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match load_problem(text).map_err(from_error).and_then(checked) {
            Ok(spec) => {
                store(out, MfdProblem { spec });
                MfdStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Load a built-in instance (`"sec5"` or `"sec5-long"`).
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mfd_problem_builtin(name: *const c_char, out: *mut *mut MfdProblem) -> MfdStatus {
    guard(|| {
        if out.is_null() {
            return fail(MfdStatus::NullPointer, "null output pointer");
        }
        let name = match read_str(name) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match builtin_example(name) {
            Ok(spec) => {
                store(out, MfdProblem { spec });
                MfdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// State dimension n, largest delay h and horizon Γ of a problem.
///
/// # Safety
/// `problem` must be a live handle; the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mfd_problem_dims(
    problem: *const MfdProblem,
    n: *mut usize,
    h: *mut usize,
    gamma: *mut usize,
) -> MfdStatus {
    if problem.is_null() || n.is_null() || h.is_null() || gamma.is_null() {
        return fail(MfdStatus::NullPointer, "null argument");
    }
    let s = &(*problem).spec;
    *n = s.n();
    *h = s.h();
    *gamma = s.gamma();
    MfdStatus::Ok
}

/// Control dimension m_i of controller `i`.
///
/// # Safety
/// `problem` must be a live handle; `m` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mfd_problem_control_dim(problem: *const MfdProblem, i: usize, m: *mut usize) -> MfdStatus {
    if problem.is_null() || m.is_null() {
        return fail(MfdStatus::NullPointer, "null argument");
    }
    let s = &(*problem).spec;
    match s.dims.m.get(i) {
        Some(v) => {
            *m = *v;
            MfdStatus::Ok
        }
        None => fail(
            MfdStatus::OutOfRange,
            format!("controller {i} out of range 0..={}", s.h()),
        ),
    }
}

/// Release a problem handle (null is ignored).
///
/// # Safety
/// `problem` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfd_problem_free(problem: *mut MfdProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Run the backward pass and synthesize the optimal policy.
///
/// # Safety
/// `problem` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mfd_solve(problem: *const MfdProblem, out: *mut *mut MfdSolution) -> MfdStatus {
    guard(|| {
        if problem.is_null() || out.is_null() {
            return fail(MfdStatus::NullPointer, "null argument");
        }
        let spec = (*problem).spec.clone();
        match backward_pass(&spec) {
            Ok(sol) => {
                let policy = synthesize_gains(&spec, &sol);
                store(out, MfdSolution { spec, sol, policy });
                MfdStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Release a solution handle (null is ignored).
///
/// # Safety
/// `solution` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfd_solution_free(solution: *mut MfdSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Optimal cost J* from the Riccati solution.
///
/// # Safety
/// `solution` must be a live handle; `cost` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mfd_solution_optimal_cost(solution: *const MfdSolution, cost: *mut f64) -> MfdStatus {
    if solution.is_null() || cost.is_null() {
        return fail(MfdStatus::NullPointer, "null argument");
    }
    let s = &*solution;
    *cost = optimal_cost(&s.spec, &s.sol);
    MfdStatus::Ok
}

/// Expected cost of the policy by exact second-moment propagation.
///
/// # Safety
/// `solution` must be a live handle; `cost` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mfd_solution_exact_cost(solution: *const MfdSolution, cost: *mut f64) -> MfdStatus {
    guard(|| {
        if solution.is_null() || cost.is_null() {
            return fail(MfdStatus::NullPointer, "null argument");
        }
        let s = &*solution;
        *cost = exact_cost(&s.spec, &s.policy);
        MfdStatus::Ok
    })
}

unsafe fn copy_mat(m: &Mat, buf: *mut f64, len: usize) -> MfdStatus {
    let need = m.nrows() * m.ncols();
    if len < need {
        return fail(
            MfdStatus::BufferTooSmall,
            format!("buffer holds {len} values, need {need}"),
        );
    }
    if buf.is_null() {
        return fail(MfdStatus::NullPointer, "null buffer");
    }
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            *buf.add(r * m.ncols() + c) = m[(r, c)];
        }
    }
    MfdStatus::Ok
}

/// Gain of controller `i` on the predictor x̂(τ | τ−j) (j = 0 is x(τ)) at
/// time `tau`, written row-major (m_i × n) into `buf`.
///
/// # Safety
/// `solution` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mfd_solution_gain(
    solution: *const MfdSolution,
    i: usize,
    j: usize,
    tau: usize,
    buf: *mut f64,
    len: usize,
) -> MfdStatus {
    if solution.is_null() {
        return fail(MfdStatus::NullPointer, "null solution");
    }
    let s = &*solution;
    let (h, g) = (s.spec.h(), s.spec.gamma());
    if i > h || j < i || j > h || tau < i || tau > g {
        return fail(
            MfdStatus::OutOfRange,
            format!("need i <= j <= {h} and i <= tau <= {g}, got i={i}, j={j}, tau={tau}"),
        );
    }
    copy_mat(&s.policy.kpred[i][j][tau], buf, len)
}

/// Gain of controller `i` on E x(τ) at time `tau`, row-major (m_i × n).
///
/// # Safety
/// `solution` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mfd_solution_mean_gain(
    solution: *const MfdSolution,
    i: usize,
    tau: usize,
    buf: *mut f64,
    len: usize,
) -> MfdStatus {
    if solution.is_null() {
        return fail(MfdStatus::NullPointer, "null solution");
    }
    let s = &*solution;
    let (h, g) = (s.spec.h(), s.spec.gamma());
    if i > h || tau < i || tau > g {
        return fail(
            MfdStatus::OutOfRange,
            format!("need i <= {h} and i <= tau <= {g}, got i={i}, tau={tau}"),
        );
    }
    copy_mat(&s.policy.kmean[i][tau], buf, len)
}

/// All gains as a JSON document (folded display form when `folded` is
/// nonzero). The string must be released with [`mfd_string_free`].
///
/// # Safety
/// `solution` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mfd_solution_gains_json(
    solution: *const MfdSolution,
    folded: i32,
    out: *mut *mut c_char,
) -> MfdStatus {
    guard(|| {
        if solution.is_null() || out.is_null() {
            return fail(MfdStatus::NullPointer, "null argument");
        }
        let text = gains_to_json(&(*solution).policy, folded != 0);
        match CString::new(text) {
            Ok(c) => {
                *out = c.into_raw();
                MfdStatus::Ok
            }
            Err(_) => fail(MfdStatus::Internal, "gains document contains NUL"),
        }
    })
}

/// Release a string returned by this library (null is ignored).
///
/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Monte Carlo cost over `runs` seeded Gaussian-noise trajectories. The
/// standard error is NaN for a single run.
///
/// # Safety
/// `solution` must be a live handle; `mean` and `std_error` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mfd_simulate_cost(
    solution: *const MfdSolution,
    seed: u64,
    runs: usize,
    mean: *mut f64,
    std_error: *mut f64,
) -> MfdStatus {
    guard(|| {
        if solution.is_null() || mean.is_null() || std_error.is_null() {
            return fail(MfdStatus::NullPointer, "null argument");
        }
        let s = &*solution;
        let batch = simulate(&s.spec, &s.policy, seed, runs, NoiseKind::Gaussian);
        match mc_cost(&batch) {
            Ok(mc) => {
                *mean = mc.estimate;
                *std_error = mc.std_error.unwrap_or(f64::NAN);
                MfdStatus::Ok
            }
            Err(Error::EmptyBatch) => fail(MfdStatus::OutOfRange, "runs must be at least 1"),
            Err(e) => from_error(e),
        }
    })
}

/// Run a verification suite (`equilibrium`, `costate`, `stationarity`,
/// `oracle`, `reductions` or `all`). Returns `Ok` when every check passes and
/// `VerificationFailed` otherwise. If `report_json` is non-null it receives
/// the JSON report, to be released with [`mfd_string_free`].
///
/// # Safety
/// `solution` must be a live handle; `suite` a NUL-terminated string;
/// `report_json` null or a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mfd_verify(
    solution: *const MfdSolution,
    suite: *const c_char,
    seed: u64,
    runs: usize,
    report_json: *mut *mut c_char,
) -> MfdStatus {
    guard(|| {
        if solution.is_null() {
            return fail(MfdStatus::NullPointer, "null solution");
        }
        let name = match read_str(suite) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let suite: Suite = match name.parse() {
            Ok(s) => s,
            Err(e) => return fail(MfdStatus::OutOfRange, e.to_string()),
        };
        let s = &*solution;
        let opts = VerifyOptions {
            seed,
            runs,
            noise: NoiseKind::Gaussian,
        };
        let report = match run_suite(&s.spec, &s.sol, &s.policy, suite, &opts) {
            Ok(r) => r,
            Err(e) => return from_error(e),
        };
        if !report_json.is_null() {
            *report_json = CString::new(report.to_json())
                .map(CString::into_raw)
                .unwrap_or(ptr::null_mut());
        }
        if report.passed {
            MfdStatus::Ok
        } else {
            let failed: Vec<&str> = report
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| c.name.as_str())
                .collect();
            fail(
                MfdStatus::VerificationFailed,
                format!("failed checks: {}", failed.join(", ")),
            )
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_mapping() {
        assert_eq!(status_of(&Error::Invalid("x".into())), MfdStatus::InvalidProblem);
        assert_eq!(
            status_of(&Error::Solvability {
                tau: 0,
                level: 0,
                which: mfdelay::error::Coefficient::UpsilonBar,
                rcond: 0.0
            }),
            MfdStatus::Unsolvable
        );
        assert_eq!(status_of(&Error::EmptyBatch), MfdStatus::Internal);
    }

    #[test]
    fn last_error_truncates_and_terminates() {
        set_error("abcdef");
        let mut buf = [1 as c_char; 4];
        let n = unsafe { mfd_last_error(buf.as_mut_ptr(), buf.len()) };
        assert_eq!(n, 6);
        assert_eq!(buf, [b'a' as c_char, b'b' as c_char, b'c' as c_char, 0]);
    }
}
