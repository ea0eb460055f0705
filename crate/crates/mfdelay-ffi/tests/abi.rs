//! The C ABI exercised from Rust, plus a compile check of the generated header.

use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use mfdelay_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as c_char; 512];
    unsafe { mfd_last_error(buf.as_mut_ptr(), buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn builtin(name: &str) -> *mut MfdProblem {
    let name = CString::new(name).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { mfd_problem_builtin(name.as_ptr(), &mut p) }, MfdStatus::Ok);
    p
}

fn solve(p: *const MfdProblem) -> *mut MfdSolution {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { mfd_solve(p, &mut s) }, MfdStatus::Ok, "{}", last_error());
    s
}

#[test]
fn sec5_round_trip_through_handles() {
    let p = builtin("sec5");
    let (mut n, mut h, mut g) = (0, 0, 0);
    assert_eq!(unsafe { mfd_problem_dims(p, &mut n, &mut h, &mut g) }, MfdStatus::Ok);
    assert_eq!((n, h, g), (2, 2, 5));
    let mut m = 0;
    assert_eq!(unsafe { mfd_problem_control_dim(p, 1, &mut m) }, MfdStatus::Ok);
    assert_eq!(m, 2);
    assert_eq!(unsafe { mfd_problem_control_dim(p, 3, &mut m) }, MfdStatus::OutOfRange);

    let s = solve(p);
    let mut j = 0.0;
    assert_eq!(unsafe { mfd_solution_optimal_cost(s, &mut j) }, MfdStatus::Ok);
    assert!((j - 15.421158229539).abs() < 1e-9);
    let mut e = 0.0;
    assert_eq!(unsafe { mfd_solution_exact_cost(s, &mut e) }, MfdStatus::Ok);
    assert!((j - e).abs() < 1e-9 * j);

    let mut buf = [0.0; 4];
    assert_eq!(
        unsafe { mfd_solution_gain(s, 0, 0, 0, buf.as_mut_ptr(), 4) },
        MfdStatus::Ok
    );
    assert!(buf.iter().any(|x| *x != 0.0));
    assert_eq!(
        unsafe { mfd_solution_mean_gain(s, 2, 4, buf.as_mut_ptr(), 4) },
        MfdStatus::Ok
    );
    assert_eq!(
        unsafe { mfd_solution_gain(s, 0, 0, 0, buf.as_mut_ptr(), 3) },
        MfdStatus::BufferTooSmall
    );
    assert!(last_error().contains("need 4"));
    assert_eq!(
        unsafe { mfd_solution_gain(s, 2, 1, 3, buf.as_mut_ptr(), 4) },
        MfdStatus::OutOfRange
    );
    assert_eq!(
        unsafe { mfd_solution_mean_gain(s, 2, 1, buf.as_mut_ptr(), 4) },
        MfdStatus::OutOfRange
    );

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { mfd_solution_gains_json(s, 1, &mut json) }, MfdStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { mfd_string_free(json) };
    assert!(serde_json::from_str::<serde_json::Value>(&text).is_ok());

    let (mut mean, mut se) = (0.0, 0.0);
    assert_eq!(
        unsafe { mfd_simulate_cost(s, 3, 2000, &mut mean, &mut se) },
        MfdStatus::Ok
    );
    assert!((mean - j).abs() < 5.0 * se, "{mean} ± {se} vs {j}");
    assert_eq!(
        unsafe { mfd_simulate_cost(s, 3, 0, &mut mean, &mut se) },
        MfdStatus::OutOfRange
    );

    unsafe {
        mfd_solution_free(s);
        mfd_problem_free(p);
    }
}

#[test]
fn verify_reports_pass_and_json() {
    let p = builtin("sec5");
    let s = solve(p);
    let suite = CString::new("equilibrium").unwrap();
    let mut report = ptr::null_mut();
    assert_eq!(
        unsafe { mfd_verify(s, suite.as_ptr(), 0, 3, &mut report) },
        MfdStatus::Ok
    );
    let text = unsafe { CStr::from_ptr(report) }.to_str().unwrap().to_owned();
    unsafe { mfd_string_free(report) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["passed"], true);

    let bogus = CString::new("bogus").unwrap();
    assert_eq!(
        unsafe { mfd_verify(s, bogus.as_ptr(), 0, 3, ptr::null_mut()) },
        MfdStatus::OutOfRange
    );
    unsafe {
        mfd_solution_free(s);
        mfd_problem_free(p);
    }
}

#[test]
fn invalid_documents_and_nulls_are_reported() {
    let mut p = ptr::null_mut();
    let bad = CString::new(r#"{"n": 1}"#).unwrap();
    assert_eq!(
        unsafe { mfd_problem_from_json(bad.as_ptr(), &mut p) },
        MfdStatus::InvalidProblem
    );
    assert!(p.is_null());
    assert!(!last_error().is_empty());

    let mut doc: serde_json::Value = serde_json::from_str(mfdelay::model::builtin_document()).unwrap();
    doc["R"][0] = serde_json::json!([[0.0, 0.0], [0.0, 0.0]]);
    let text = CString::new(doc.to_string()).unwrap();
    assert_eq!(
        unsafe { mfd_problem_from_json(text.as_ptr(), &mut p) },
        MfdStatus::InvalidProblem
    );
    assert!(last_error().contains("R[0] positive definite"), "{}", last_error());

    let good = CString::new(mfdelay::model::builtin_document()).unwrap();
    assert_eq!(unsafe { mfd_problem_from_json(good.as_ptr(), &mut p) }, MfdStatus::Ok);
    unsafe { mfd_problem_free(p) };

    assert_eq!(
        unsafe { mfd_problem_from_json(ptr::null(), &mut p) },
        MfdStatus::NullPointer
    );
    assert_eq!(
        unsafe { mfd_solve(ptr::null(), &mut ptr::null_mut()) },
        MfdStatus::NullPointer
    );
    let unknown = CString::new("nope").unwrap();
    assert_eq!(
        unsafe { mfd_problem_builtin(unknown.as_ptr(), &mut p) },
        MfdStatus::InvalidProblem
    );
    unsafe {
        mfd_problem_free(ptr::null_mut());
        mfd_solution_free(ptr::null_mut());
        mfd_string_free(ptr::null_mut());
    }
}

#[test]
fn ill_conditioned_problem_is_unsolvable() {
    let mut doc: serde_json::Value = serde_json::from_str(mfdelay::model::builtin_document()).unwrap();
    doc["R"][0] = serde_json::json!([[1e4, 0.0], [0.0, 1e-10]]);
    doc["Rbar"][0] = serde_json::json!([[0.0, 0.0], [0.0, 0.0]]);
    for key in ["B", "D", "Bbar", "Dbar"] {
        doc[key][0] = serde_json::json!([[0.0, 0.0], [0.0, 0.0]]);
    }
    let text = CString::new(doc.to_string()).unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(
        unsafe { mfd_problem_from_json(text.as_ptr(), &mut p) },
        MfdStatus::Ok,
        "{}",
        last_error()
    );
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { mfd_solve(p, &mut s) }, MfdStatus::Unsolvable);
    assert!(s.is_null());
    assert!(last_error().contains("unsolvable at tau="));
    unsafe { mfd_problem_free(p) };
}

#[test]
fn generated_header_compiles_as_c_and_cpp() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = dir.join("include").join("mfdelay.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "mfd_problem_from_json",
        "mfd_solve",
        "mfd_verify",
        "MFD_STATUS_UNSOLVABLE",
        "typedef struct MfdSolution",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"mfdelay.h\"\nint main(void) { MfdProblem *p = 0; size_t n, h, g; MfdStatus s = mfd_problem_dims(p, &n, &h, &g); mfd_problem_free(p); return s == MFD_STATUS_NULL_POINTER ? 0 : 1; }\n",
    )
    .unwrap();
    for (compiler, extra) in [("cc", vec!["-x", "c", "-std=c99"]), ("c++", vec!["-x", "c++"])] {
        let status = match Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
            .arg(dir.join("include"))
            .args(&extra)
            .arg(&src)
            .status()
        {
            Ok(s) => s,
            Err(_) => {
                eprintln!("{compiler} not available; header compile check skipped");
                continue;
            }
        };
        assert!(status.success(), "{compiler} rejected the header");
    }
}
