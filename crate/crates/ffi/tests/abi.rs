use std::ffi::CStr;
use std::ptr;

use bitscale_ffi::*;

unsafe fn read(m: *const BsMatrix) -> Vec<f64> {
    let n = bs_matrix_rows(m) * bs_matrix_cols(m);
    let mut v = vec![0.0; n];
    assert_eq!(bs_matrix_copy_data(m, v.as_mut_ptr(), n), BsStatus::Ok);
    v
}

#[test]
fn worked_quantize_example_through_c_abi() {
    unsafe {
        let data = [-1.0, 0.0, 3.0];
        let mut x = ptr::null_mut();
        assert_eq!(bs_matrix_new(data.as_ptr(), 1, 3, &mut x), BsStatus::Ok);
        let mut q = ptr::null_mut();
        assert_eq!(bs_fake_quantize(x, 2, BS_PER_TENSOR, 0, 1.0, 1.0, &mut q), BsStatus::Ok);
        let got = read(q);
        let s = 4.0 / 3.0;
        for (g, want) in got.iter().zip([-s, 0.0, 2.0 * s]) {
            assert!((g - want).abs() < 1e-12, "{got:?}");
        }
        bs_matrix_free(q);
        bs_matrix_free(x);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut x = ptr::null_mut();
        assert_eq!(bs_matrix_new(ptr::null(), 1, 1, &mut x), BsStatus::NullPointer);
        assert!(x.is_null());
        let data = [1.0, 2.0];
        assert_eq!(bs_matrix_new(data.as_ptr(), 1, 2, &mut x), BsStatus::Ok);
        let mut q = ptr::null_mut();
        assert_eq!(bs_fake_quantize(x, 0, BS_PER_ROW, 0, 1.0, 1.0, &mut q), BsStatus::InvalidArgument);
        let msg = CStr::from_ptr(bs_last_error_message()).to_str().unwrap();
        assert!(!msg.is_empty());
        assert_eq!(bs_fp_quantize(x, 4, 3, 1.0, &mut q), BsStatus::Ok);
        assert!(bs_last_error_message().is_null());
        let mut small = [0.0; 1];
        assert_eq!(bs_matrix_copy_data(q, small.as_mut_ptr(), 1), BsStatus::Shape);
        bs_matrix_free(q);
        bs_matrix_free(x);
        bs_matrix_free(ptr::null_mut());
    }
}

#[test]
fn gptq_beats_or_matches_identity_hessian_rtn_loss() {
    unsafe {
        let w: Vec<f64> = (0..32).map(|i| ((i * 37 % 17) as f64 - 8.0) / 5.0).collect();
        let x: Vec<f64> = (0..64 * 8).map(|i| ((i * 29 % 23) as f64 - 11.0) / 7.0).collect();
        let (mut wm, mut xm, mut h, mut out) = (ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut());
        assert_eq!(bs_matrix_new(w.as_ptr(), 4, 8, &mut wm), BsStatus::Ok);
        assert_eq!(bs_matrix_new(x.as_ptr(), 64, 8, &mut xm), BsStatus::Ok);
        assert_eq!(bs_hessian_new(xm, 0.01, &mut h), BsStatus::Ok);
        let mut loss = f64::NAN;
        assert_eq!(bs_gptq(wm, h, 3, 4, false, &mut out, &mut loss), BsStatus::Ok);
        assert!(loss.is_finite() && loss >= 0.0);
        assert_eq!((bs_matrix_rows(out), bs_matrix_cols(out)), (4, 8));
        bs_matrix_free(out);
        bs_hessian_free(h);
        bs_matrix_free(xm);
        bs_matrix_free(wm);
    }
}

#[test]
fn topkld_and_power_law() {
    unsafe {
        let p = [0.5, 0.3, 0.2];
        let mut v = f64::NAN;
        assert_eq!(bs_topkld(p.as_ptr(), p.as_ptr(), 3, 2, &mut v), BsStatus::Ok);
        assert!(v.abs() < 1e-15);
        assert_eq!(bs_topkld(p.as_ptr(), p.as_ptr(), 3, 4, &mut v), BsStatus::InvalidArgument);

        let xs: Vec<f64> = (1..=8).map(|i| (i * 10) as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x.powf(-0.5) + 0.2).collect();
        let mut fit = BsPowerLaw::default();
        assert_eq!(bs_fit_power_law(xs.as_ptr(), ys.as_ptr(), xs.len(), &mut fit), BsStatus::Ok);
        assert!((fit.b - 0.5).abs() < 1e-3, "{fit:?}");
        assert_eq!(bs_fit_power_law(xs.as_ptr(), ys.as_ptr(), 2, &mut fit), BsStatus::NoValidFit);
    }
}

#[test]
fn header_declares_entry_points() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/bitscale.h")).unwrap();
    assert!(h.contains("BITSCALE_H"));
    for f in ["bs_matrix_new", "bs_gptq", "bs_topkld", "bs_fit_power_law", "bs_last_error_message", "BS_STATUS_OK"] {
        assert!(h.contains(f), "{f} missing from header");
    }
}
