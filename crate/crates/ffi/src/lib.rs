//! C interface to `bcmap`.
//!
//! Every fallible function returns a [`BcmStatus`]. On failure the message is
//! kept per thread and can be copied out with [`bcm_last_error`]. Handles are
//! opaque and must be released with the matching `*_free` function.

use bcmap::nd::{apply_mask, apply_noise, assemble_kernel, MaskMode, MaskSpec, NdKernel, NdMatrix, NoiseSpec};
use bcmap::recon::{reconstruct, ReconConfig, ReconResult};
use bcmap::wave::Closure;
use bcmap::{Error, Grid, Side, SpeedField};
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidGrid = 3,
    Cfl = 4,
    Unstable = 5,
    Shape = 6,
    Linalg = 7,
    Io = 8,
    Format = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BcmMaskMode {
    SourcesAndReceivers = 0,
    Receivers = 1,
    Sources = 2,
}

pub struct BcmGrid(Grid);
pub struct BcmNd(NdMatrix);
pub struct BcmRecon(ReconResult);

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.extend(msg.bytes().filter(|b| *b != 0));
    });
}

fn status_of(err: &Error) -> BcmStatus {
    match err {
        Error::InvalidGrid(_) => BcmStatus::InvalidGrid,
        Error::Cfl { .. } => BcmStatus::Cfl,
        Error::Unstable { .. } => BcmStatus::Unstable,
        Error::Shape(_) => BcmStatus::Shape,
        Error::InvalidArgument(_) | Error::Config(_) => BcmStatus::InvalidArgument,
        Error::Linalg(_) => BcmStatus::Linalg,
        Error::Io(_) => BcmStatus::Io,
        Error::Format(_) | Error::Json(_) => BcmStatus::Format,
    }
}

struct Fail(BcmStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Fail {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(BcmStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> BcmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            BcmStatus::Ok
        }
        Ok(Err(Fail(s, msg))) => {
            set_error(&msg);
            s
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            BcmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Fail(BcmStatus::InvalidArgument, "path is not UTF-8".into()))
}

unsafe fn slice_arg<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bcm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length without the NUL.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn bcm_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = e.len().min(len - 1);
            ptr::copy_nonoverlapping(e.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        e.len()
    })
}

/// Space-time grid with I intervals per side on [-1,1]² and final time `t`;
/// the step is chosen from `c_max` to satisfy the CFL limit.
///
/// # Safety
/// `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn bcm_grid_new(i: usize, t: f64, c_max: f64, out: *mut *mut BcmGrid) -> BcmStatus {
    guard(|| put(out, BcmGrid(Grid::new(i, t, c_max)?)))
}

/// # Safety
/// Output pointers may be null; `grid` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bcm_grid_dims(
    grid: *const BcmGrid,
    i: *mut usize,
    l: *mut usize,
    lh: *mut usize,
    dt: *mut f64,
) -> BcmStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.0;
        if !i.is_null() {
            *i = g.i;
        }
        if !l.is_null() {
            *l = g.l;
        }
        if !lh.is_null() {
            *lh = g.lh;
        }
        if !dt.is_null() {
            *dt = g.dt;
        }
        Ok(())
    })
}

/// # Safety
/// `grid` must be null or a handle from `bcm_grid_new`, freed once.
#[no_mangle]
pub unsafe extern "C" fn bcm_grid_free(grid: *mut BcmGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Assembles the ND map on `grid` from forward solves on the grid refined by
/// `factor`. `speed` holds c at the (factor*I+1)² fine nodes, index i*(n)+j
/// with x_i along the first index.
///
/// # Safety
/// `speed` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn bcm_nd_assemble(
    grid: *const BcmGrid,
    speed: *const f64,
    n: usize,
    factor: usize,
    out: *mut *mut BcmNd,
) -> BcmStatus {
    guard(|| {
        let g = &deref(grid, "grid")?.0;
        let values = slice_arg(speed, n, "speed")?.to_vec();
        let fi = g.i.checked_mul(factor).ok_or_else(|| Fail(BcmStatus::InvalidArgument, "factor overflow".into()))?;
        let field = SpeedField::from_values(fi, values)?;
        let kernel = assemble_kernel(&field, g, factor, Closure::Ghost)?;
        put(out, BcmNd(NdMatrix::from_kernel(kernel, "ffi")))
    })
}

/// Loads a clean ND kernel directory written by `bcm_nd_save` or the CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bcm_nd_load(path: *const c_char, out: *mut *mut BcmNd) -> BcmStatus {
    guard(|| {
        let kernel = NdKernel::load(path_arg(path)?)?;
        put(out, BcmNd(NdMatrix::from_kernel(kernel, "loaded")))
    })
}

/// Writes the clean kernel; noise and masks are not stored.
///
/// # Safety
/// `path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn bcm_nd_save(nd: *const BcmNd, path: *const c_char) -> BcmStatus {
    guard(|| {
        let nd = &deref(nd, "nd")?.0;
        nd.kernel().save(path_arg(path)?, nd.describe())?;
        Ok(())
    })
}

/// Matrix size; rows and columns are both 4I(L+1).
///
/// # Safety
/// Output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn bcm_nd_dims(nd: *const BcmNd, rows: *mut usize, cols: *mut usize) -> BcmStatus {
    guard(|| {
        let g = deref(nd, "nd")?.0.grid();
        let n = g.n_full();
        if !rows.is_null() {
            *rows = n;
        }
        if !cols.is_null() {
            *cols = n;
        }
        Ok(())
    })
}

/// # Safety
/// `value` must be writable.
#[no_mangle]
pub unsafe extern "C" fn bcm_nd_entry(nd: *const BcmNd, row: usize, col: usize, value: *mut f64) -> BcmStatus {
    guard(|| {
        let nd = &deref(nd, "nd")?.0;
        let n = nd.grid().n_full();
        if row >= n || col >= n {
            return Err(Fail(BcmStatus::Shape, format!("entry ({row},{col}) outside {n}x{n}")));
        }
        if value.is_null() {
            return Err(null("value"));
        }
        *value = nd.entry(row, col);
        Ok(())
    })
}

/// New handle with Gaussian noise of relative `level` (times the clean RMS).
///
/// # Safety
/// `nd` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bcm_nd_with_gaussian_noise(
    nd: *const BcmNd,
    level: f64,
    seed: u64,
    out: *mut *mut BcmNd,
) -> BcmStatus {
    guard(|| {
        let nd = &deref(nd, "nd")?.0;
        put(out, BcmNd(apply_noise(nd, NoiseSpec::gaussian(level, seed))?))
    })
}

/// New handle with `level` added to every entry.
///
/// # Safety
/// `nd` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bcm_nd_with_constant_noise(nd: *const BcmNd, level: f64, out: *mut *mut BcmNd) -> BcmStatus {
    guard(|| {
        let nd = &deref(nd, "nd")?.0;
        put(out, BcmNd(apply_noise(nd, NoiseSpec::constant(level))?))
    })
}

/// New handle with sides removed. `sides` is a bit set: 1 x-, 2 x+, 4 y-, 8 y+.
///
/// # Safety
/// `nd` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn bcm_nd_with_mask(
    nd: *const BcmNd,
    sides: u8,
    mode: BcmMaskMode,
    out: *mut *mut BcmNd,
) -> BcmStatus {
    guard(|| {
        let nd = &deref(nd, "nd")?.0;
        if sides & !0x0f != 0 {
            return Err(Fail(BcmStatus::InvalidArgument, format!("unknown side bits {sides:#x}")));
        }
        let removed: Vec<Side> = Side::ALL.into_iter().filter(|s| sides & s.bit() != 0).collect();
        let mode = match mode {
            BcmMaskMode::SourcesAndReceivers => MaskMode::SourcesAndReceivers,
            BcmMaskMode::Receivers => MaskMode::Receivers,
            BcmMaskMode::Sources => MaskMode::Sources,
        };
        put(out, BcmNd(apply_mask(nd, &MaskSpec::new(&removed, mode))))
    })
}

/// # Safety
/// `nd` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn bcm_nd_free(nd: *mut BcmNd) {
    if !nd.is_null() {
        drop(Box::from_raw(nd));
    }
}

/// Runs the reconstruction with default settings and the given relative
/// Tikhonov weight. `truth` (c at the (I+1)² coarse nodes) may be null.
///
/// # Safety
/// `truth` must be null or point to `n_truth` doubles.
#[no_mangle]
pub unsafe extern "C" fn bcm_reconstruct(
    nd: *const BcmNd,
    alpha_rel: f64,
    truth: *const f64,
    n_truth: usize,
    out: *mut *mut BcmRecon,
) -> BcmStatus {
    guard(|| {
        let nd = &deref(nd, "nd")?.0;
        let truth = if truth.is_null() {
            None
        } else {
            Some(SpeedField::from_values(nd.grid().i, slice_arg(truth, n_truth, "truth")?.to_vec())?)
        };
        let cfg = ReconConfig { alpha_rel, ..Default::default() };
        put(out, BcmRecon(reconstruct(nd, &cfg, truth.as_ref())?))
    })
}

/// Copies the recovered speed ((I+1)² values) into `buf`. `written` receives
/// the required length even when `len` is too small.
///
/// # Safety
/// `buf` must point to `len` writable doubles; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn bcm_recon_speed(
    recon: *const BcmRecon,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> BcmStatus {
    guard(|| {
        let r = &deref(recon, "recon")?.0;
        let n = r.c_rec.len();
        if !written.is_null() {
            *written = n;
        }
        if len < n {
            return Err(Fail(BcmStatus::Shape, format!("buffer holds {len}, need {n}")));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(r.c_rec.as_ptr(), buf, n);
        Ok(())
    })
}

/// Relative L2 errors in percent; NaN where no truth was given.
///
/// # Safety
/// Output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn bcm_recon_errors(
    recon: *const BcmRecon,
    vs_truth: *mut f64,
    vs_projection: *mut f64,
) -> BcmStatus {
    guard(|| {
        let r = &deref(recon, "recon")?.0;
        if !vs_truth.is_null() {
            *vs_truth = r.rel_l2_error_vs_truth.unwrap_or(f64::NAN);
        }
        if !vs_projection.is_null() {
            *vs_projection = r.rel_l2_error_vs_projection.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// # Safety
/// `recon` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn bcm_recon_free(recon: *mut BcmRecon) {
    if !recon.is_null() {
        drop(Box::from_raw(recon));
    }
}
