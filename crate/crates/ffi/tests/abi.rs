use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use dpre_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(dpre_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn model_and_second_moment() {
    let m = dpre_model_gaussian();
    let mut v = 0.0;
    unsafe {
        assert_eq!(dpre_model_cumulant(m, 2.0, &mut v), DpreStatus::Ok);
        assert_eq!(v, 2.0);
        assert_eq!(dpre_second_moment_exact(m, 1.0, 1, 2, &mut v), DpreStatus::Ok);
        let want = 1.0 + (std::f64::consts::E - 1.0) / 4.0;
        assert!((v - want).abs() < 1e-14);
        assert_eq!(last_error(), "");
        dpre_model_free(m);
    }
}

#[test]
fn errors_are_reported() {
    unsafe {
        let mut v = 0.0;
        assert_eq!(dpre_model_cumulant(ptr::null(), 1.0, &mut v), DpreStatus::NullPointer);
        assert!(last_error().contains("model"));
        let bad = CString::new(r#"{"family":"cauchy"}"#).unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(dpre_model_from_json(bad.as_ptr(), &mut m), DpreStatus::InvalidArgument);
        assert!(m.is_null());
        assert!(last_error().contains("cauchy"));
        let r = dpre_model_rademacher();
        assert_eq!(dpre_second_moment_exact(r, 0.1, 100, 2, &mut v), DpreStatus::Ok);
        assert_eq!(
            dpre_second_moment_exact(r, 0.1, 1 << 20, 2, &mut v),
            DpreStatus::ResourceCap
        );
        assert_eq!(dpre_beta_of_n(2.0, 1, 64, &mut v), DpreStatus::Precondition);
        dpre_model_free(r);
        dpre_model_free(ptr::null_mut());
    }
}

#[test]
fn field_partition_matches_core() {
    unsafe {
        let js = CString::new(r#"{"family":"gaussian-unit"}"#).unwrap();
        let mut m = ptr::null_mut();
        assert_eq!(dpre_model_from_json(js.as_ptr(), &mut m), DpreStatus::Ok);
        let mut f = ptr::null_mut();
        assert_eq!(dpre_field_new(m, 9, 2, 16, 16, &mut f), DpreStatus::Ok);
        let mut v = 0.0;
        assert_eq!(dpre_log_partition(f, 0.5, 16, &mut v), DpreStatus::Ok);
        let field = dpre::EnvironmentField::centered(dpre::EnvironmentModel::GaussianUnit, 9, 2, 16, 16).unwrap();
        let want = dpre::partition::log_partition_value(
            &field,
            &dpre::EnvironmentModel::GaussianUnit,
            0.5,
            16,
            &dpre::LatticePoint::origin(2),
        )
        .unwrap();
        assert_eq!(v, want);
        // horizon beyond the window
        assert_eq!(dpre_log_partition(f, 0.5, 17, &mut v), DpreStatus::Precondition);
        dpre_field_free(f);
        dpre_model_free(m);
    }
}

#[test]
fn monte_carlo_entry_points() {
    unsafe {
        let m = dpre_model_gaussian();
        let sched = [4usize, 8];
        let (mut p, mut se) = (1.0, 1.0);
        assert_eq!(
            dpre_free_energy_lower(m, 0.0, 2, sched.as_ptr(), 2, 100, 1, &mut p, &mut se),
            DpreStatus::Ok
        );
        assert_eq!((p, se), (0.0, 0.0));
        let mut xs = vec![1.0; 50];
        assert_eq!(dpre_chaos_samples(m, 2, 0.0, 16, 2, 50, 3, xs.as_mut_ptr()), DpreStatus::Ok);
        assert!(xs.iter().all(|x| *x == 0.0));
        let mut v = 1.0;
        assert_eq!(dpre_chaos_second_moment_exact(m, 2, 0.0, 16, 2, &mut v), DpreStatus::Ok);
        assert_eq!(v, 0.0);
        dpre_model_free(m);
    }
    let v = unsafe { CStr::from_ptr(dpre_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/dpre.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in ["dpre_last_error", "dpre_model_free", "dpre_log_partition", "DPRE_STATUS_RESOURCE_CAP"] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(
        &src,
        format!(
            "#include \"{header}\"\nint main(void) {{ double v; DpreModel *m = dpre_model_gaussian();\n\
             DpreStatus s = dpre_model_cumulant(m, 1.0, &v); dpre_model_free(m); return (int)s; }}\n"
        ),
    )
    .unwrap();
    match Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).status() {
        Ok(st) => assert!(st.success(), "header failed to compile"),
        Err(e) => eprintln!("skipping C compile: {e}"),
    }
}
