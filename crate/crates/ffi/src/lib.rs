//! C ABI over the geounc core: load datasets and uncertainty grids, query
//! the grid, and compute AUSE and chamfer distance on caller-owned arrays.
//!
//! Every function returns a [`GeouncStatus`]. On failure a description is
//! kept per thread and can be read with [`geounc_last_error`]. Handles are
//! opaque and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use geounc::eval::{ause_of, chamfer, evaluate, EvalConfig, EvalInput};
use geounc::scene::SceneDataset;
use geounc::uncertainty::UncertaintyGrid;
use geounc::Vec3;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeouncStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Compute = 4,
    Panic = 5,
}

/// A loaded dataset directory.
pub struct GeouncDataset {
    inner: SceneDataset,
}

/// A loaded uncertainty grid.
pub struct GeouncGrid {
    inner: UncertaintyGrid,
}

/// Sparsification metrics of [`geounc_evaluate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct GeouncReport {
    pub ause_mse: f64,
    pub ause_mae: f64,
    pub ause_3d: f64,
    pub cd: f64,
    pub n_pixels: usize,
    pub n_points: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: GeouncStatus, msg: impl std::fmt::Display) -> GeouncStatus {
    set_error(&msg.to_string());
    status
}

/// Runs `f`, turning panics into [`GeouncStatus::Panic`].
fn guard(f: impl FnOnce() -> GeouncStatus) -> GeouncStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => {
            if s == GeouncStatus::Ok {
                set_error("");
            }
            s
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_else(|| "panic".into());
            fail(GeouncStatus::Panic, msg)
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, GeouncStatus> {
    if p.is_null() {
        return Err(fail(GeouncStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p).to_str().map(PathBuf::from).map_err(|_| fail(GeouncStatus::InvalidArgument, "path is not UTF-8"))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], GeouncStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(GeouncStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

fn points(xyz: &[f64]) -> Vec<Vec3> {
    xyz.chunks_exact(3).map(|c| Vec3::new(c[0], c[1], c[2])).collect()
}

/// Description of the last failure on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn geounc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn geounc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a dataset directory written by `geounc gen`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn geounc_dataset_load(path: *const c_char, out: *mut *mut GeouncDataset) -> GeouncStatus {
    guard(|| {
        if out.is_null() {
            return fail(GeouncStatus::NullPointer, "out is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match SceneDataset::load(&path) {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(GeouncDataset { inner: ds }));
                GeouncStatus::Ok
            }
            Err(e) => fail(GeouncStatus::Io, e),
        }
    })
}

/// # Safety
/// `ds` must come from [`geounc_dataset_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn geounc_dataset_free(ds: *mut GeouncDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Number of views; 0 for a null handle.
///
/// # Safety
/// `ds` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn geounc_dataset_view_count(ds: *const GeouncDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.inner.views.len())
}

/// Loads a `UNCG` grid file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn geounc_grid_load(path: *const c_char, out: *mut *mut GeouncGrid) -> GeouncStatus {
    guard(|| {
        if out.is_null() {
            return fail(GeouncStatus::NullPointer, "out is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match UncertaintyGrid::load(&path) {
            Ok(g) => {
                *out = Box::into_raw(Box::new(GeouncGrid { inner: g }));
                GeouncStatus::Ok
            }
            Err(e) => fail(GeouncStatus::Io, e),
        }
    })
}

/// # Safety
/// `grid` must come from [`geounc_grid_load`] or be null.
#[no_mangle]
pub unsafe extern "C" fn geounc_grid_free(grid: *mut GeouncGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Writes the node counts per axis into `dims[0..3]`.
///
/// # Safety
/// `grid` must be a live handle and `dims` point to 3 writable values.
#[no_mangle]
pub unsafe extern "C" fn geounc_grid_dims(grid: *const GeouncGrid, dims: *mut usize) -> GeouncStatus {
    guard(|| {
        let Some(g) = grid.as_ref() else { return fail(GeouncStatus::NullPointer, "grid is null") };
        if dims.is_null() {
            return fail(GeouncStatus::NullPointer, "dims is null");
        }
        std::ptr::copy_nonoverlapping(g.inner.spec.dims.as_ptr(), dims, 3);
        GeouncStatus::Ok
    })
}

/// Evaluates the uncertainty at `n` points given as packed `x y z` triples.
///
/// # Safety
/// `xyz` must hold `3n` values and `out` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn geounc_grid_eval(grid: *const GeouncGrid, xyz: *const f64, n: usize, out: *mut f64) -> GeouncStatus {
    guard(|| {
        let Some(g) = grid.as_ref() else { return fail(GeouncStatus::NullPointer, "grid is null") };
        let pts = match slice_arg(xyz, 3 * n, "xyz") {
            Ok(s) => points(s),
            Err(s) => return s,
        };
        if n > 0 && out.is_null() {
            return fail(GeouncStatus::NullPointer, "out is null");
        }
        for (i, p) in pts.iter().enumerate() {
            *out.add(i) = g.inner.eval(p);
        }
        GeouncStatus::Ok
    })
}

/// AUSE of `n` errors ranked by `n` uncertainties.
///
/// # Safety
/// `errors` and `uncertainties` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn geounc_ause(errors: *const f64, uncertainties: *const f64, n: usize, out: *mut f64) -> GeouncStatus {
    guard(|| {
        if out.is_null() {
            return fail(GeouncStatus::NullPointer, "out is null");
        }
        let (e, u) = match (slice_arg(errors, n, "errors"), slice_arg(uncertainties, n, "uncertainties")) {
            (Ok(e), Ok(u)) => (e, u),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match ause_of(e, u) {
            Ok((a, _)) => {
                *out = a;
                GeouncStatus::Ok
            }
            Err(err) => fail(GeouncStatus::InvalidArgument, err),
        }
    })
}

/// Symmetric chamfer distance between two packed `x y z` point sets.
///
/// # Safety
/// `a` must hold `3na` values, `b` `3nb`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn geounc_chamfer(a: *const f64, na: usize, b: *const f64, nb: usize, out: *mut f64) -> GeouncStatus {
    guard(|| {
        if out.is_null() {
            return fail(GeouncStatus::NullPointer, "out is null");
        }
        let (pa, pb) = match (slice_arg(a, 3 * na, "a"), slice_arg(b, 3 * nb, "b")) {
            (Ok(x), Ok(y)) => (points(x), points(y)),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match chamfer(&pa, &pb) {
            Ok(d) => {
                *out = d;
                GeouncStatus::Ok
            }
            Err(err) => fail(GeouncStatus::InvalidArgument, err),
        }
    })
}

/// Full evaluation of `grid` on `ds` with default settings.
///
/// # Safety
/// Both handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn geounc_evaluate(ds: *const GeouncDataset, grid: *const GeouncGrid, out: *mut GeouncReport) -> GeouncStatus {
    guard(|| {
        let (Some(d), Some(g)) = (ds.as_ref(), grid.as_ref()) else { return fail(GeouncStatus::NullPointer, "handle is null") };
        if out.is_null() {
            return fail(GeouncStatus::NullPointer, "out is null");
        }
        let d = &d.inner;
        let input = EvalInput { gt: &d.scene.sdf, recon: &d.recon, views: &d.views, bounds: &d.scene.bounds };
        match evaluate(&input, &g.inner, &EvalConfig::default()) {
            Ok((r, _)) => {
                *out = GeouncReport { ause_mse: r.ause_mse, ause_mae: r.ause_mae, ause_3d: r.ause_3d, cd: r.cd, n_pixels: r.n_pixels, n_points: r.n_points };
                GeouncStatus::Ok
            }
            Err(e) => fail(GeouncStatus::Compute, e),
        }
    })
}
