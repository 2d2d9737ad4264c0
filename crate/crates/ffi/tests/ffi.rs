use bcmap_ffi::*;
use std::ffi::{CStr, CString};
use std::ptr;

fn last_error() -> String {
    let mut buf = vec![0i8; 256];
    unsafe { bcm_last_error(buf.as_mut_ptr() as *mut _, buf.len()) };
    unsafe { CStr::from_ptr(buf.as_ptr() as *const _) }.to_string_lossy().into_owned()
}

fn grid(i: usize) -> *mut BcmGrid {
    let mut g = ptr::null_mut();
    assert_eq!(unsafe { bcm_grid_new(i, 0.6, 1.0, &mut g) }, BcmStatus::Ok);
    g
}

fn nd(g: *const BcmGrid, i: usize) -> *mut BcmNd {
    let fi = 2 * i;
    let speed = vec![1.0; (fi + 1) * (fi + 1)];
    let mut nd = ptr::null_mut();
    let s = unsafe { bcm_nd_assemble(g, speed.as_ptr(), speed.len(), 2, &mut nd) };
    assert_eq!(s, BcmStatus::Ok, "{}", last_error());
    nd
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(bcm_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn grid_dims_and_errors() {
    let g = grid(4);
    let (mut i, mut l, mut lh, mut dt) = (0, 0, 0, 0.0);
    assert_eq!(unsafe { bcm_grid_dims(g, &mut i, &mut l, &mut lh, &mut dt) }, BcmStatus::Ok);
    assert_eq!(i, 4);
    assert!(l > 0 && lh <= l + 1 && dt > 0.0);
    unsafe { bcm_grid_free(g) };

    let mut bad = ptr::null_mut();
    assert_eq!(unsafe { bcm_grid_new(0, 1.0, 1.0, &mut bad) }, BcmStatus::InvalidGrid);
    assert!(bad.is_null());
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { bcm_grid_new(4, 1.0, 1.0, ptr::null_mut()) }, BcmStatus::NullPointer);
    assert_eq!(unsafe { bcm_grid_dims(ptr::null(), &mut i, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) }, BcmStatus::NullPointer);
    unsafe { bcm_grid_free(ptr::null_mut()) };
}

#[test]
fn assemble_noise_mask_roundtrip() {
    let g = grid(3);
    let m = nd(g, 3);
    let (mut r, mut c) = (0, 0);
    unsafe { bcm_nd_dims(m, &mut r, &mut c) };
    assert_eq!(r, c);
    let mut v = 0.0;
    assert_eq!(unsafe { bcm_nd_entry(m, 12, 0, &mut v) }, BcmStatus::Ok);
    assert!(v.is_finite() && v != 0.0);
    assert_eq!(unsafe { bcm_nd_entry(m, r, 0, &mut v) }, BcmStatus::Shape);

    let mut noisy = ptr::null_mut();
    assert_eq!(unsafe { bcm_nd_with_constant_noise(m, 0.5, &mut noisy) }, BcmStatus::Ok);
    let mut w = 0.0;
    unsafe { bcm_nd_entry(m, 1, 2, &mut v) };
    unsafe { bcm_nd_entry(noisy, 1, 2, &mut w) };
    assert!((w - v - 0.5).abs() < 1e-12);

    let mut all = ptr::null_mut();
    assert_eq!(unsafe { bcm_nd_with_mask(m, 0x0f, BcmMaskMode::SourcesAndReceivers, &mut all) }, BcmStatus::Ok);
    unsafe { bcm_nd_entry(all, 1, 2, &mut w) };
    assert_eq!(w, 0.0);
    let mut junk = ptr::null_mut();
    assert_eq!(unsafe { bcm_nd_with_mask(m, 0x10, BcmMaskMode::Receivers, &mut junk) }, BcmStatus::InvalidArgument);

    let dir = std::env::temp_dir().join(format!("bcmap-ffi-{}", std::process::id()));
    let p = CString::new(dir.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { bcm_nd_save(m, p.as_ptr()) }, BcmStatus::Ok, "{}", last_error());
    let mut back = ptr::null_mut();
    assert_eq!(unsafe { bcm_nd_load(p.as_ptr(), &mut back) }, BcmStatus::Ok, "{}", last_error());
    for (a, b) in [(0, 0), (3, 7), (r - 1, 2)] {
        unsafe { bcm_nd_entry(m, a, b, &mut v) };
        unsafe { bcm_nd_entry(back, a, b, &mut w) };
        assert_eq!(v.to_bits(), w.to_bits());
    }
    let _ = std::fs::remove_dir_all(&dir);
    let missing = CString::new("/nonexistent/bcmap").unwrap();
    assert_eq!(unsafe { bcm_nd_load(missing.as_ptr(), &mut junk) }, BcmStatus::Io);

    for h in [m, noisy, all, back] {
        unsafe { bcm_nd_free(h) };
    }
    unsafe { bcm_grid_free(g) };
}

#[test]
fn reconstruct_constant_speed() {
    let g = grid(4);
    let m = nd(g, 4);
    let truth = vec![1.0; 25];
    let mut r = ptr::null_mut();
    let s = unsafe { bcm_reconstruct(m, 1e-6, truth.as_ptr(), truth.len(), &mut r) };
    assert_eq!(s, BcmStatus::Ok, "{}", last_error());
    let mut need = 0;
    assert_eq!(unsafe { bcm_recon_speed(r, ptr::null_mut(), 0, &mut need) }, BcmStatus::Shape);
    assert_eq!(need, 25);
    let mut c = vec![0.0; need];
    assert_eq!(unsafe { bcm_recon_speed(r, c.as_mut_ptr(), c.len(), &mut need) }, BcmStatus::Ok);
    assert!(c.iter().all(|v| v.is_finite() && *v > 0.0));
    let (mut et, mut ep) = (0.0, 0.0);
    unsafe { bcm_recon_errors(r, &mut et, &mut ep) };
    assert!(et.is_finite() && ep.is_finite());
    unsafe { bcm_recon_free(r) };
    unsafe { bcm_nd_free(m) };
    unsafe { bcm_grid_free(g) };
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/bcmap.h")).unwrap();
    for name in [
        "bcm_version", "bcm_last_error", "bcm_grid_new", "bcm_grid_dims", "bcm_grid_free", "bcm_nd_assemble",
        "bcm_nd_load", "bcm_nd_save", "bcm_nd_dims", "bcm_nd_entry", "bcm_nd_with_gaussian_noise",
        "bcm_nd_with_constant_noise", "bcm_nd_with_mask", "bcm_nd_free", "bcm_reconstruct", "bcm_recon_speed",
        "bcm_recon_errors", "bcm_recon_free",
    ] {
        assert!(h.contains(&format!("{name}(")), "{name} missing from header");
    }
}
