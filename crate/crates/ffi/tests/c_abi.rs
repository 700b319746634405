use std::ffi::{CStr, CString};
use std::ptr;

use geounc::scene::presets::{self, RigSpec};
use geounc::uncertainty::UncertaintyGrid;
use geounc::{Aabb, Vec3};
use geounc_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(geounc_last_error()) }.to_string_lossy().into_owned()
}

#[test]
fn ause_and_chamfer_on_arrays() {
    let errors = [1.0, 2.0, 3.0, 4.0];
    let unc = [4.0, 3.0, 2.0, 1.0];
    let mut out = f64::NAN;
    let s = unsafe { geounc_ause(errors.as_ptr(), unc.as_ptr(), 4, &mut out) };
    assert_eq!(s, GeouncStatus::Ok);
    assert_eq!(last_error(), "");
    let direct = geounc::eval::ause_of(&errors, &unc).unwrap().0;
    assert_eq!(out, direct);

    let a = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0];
    let b = [0.0, 0.0, 1.0];
    let s = unsafe { geounc_chamfer(a.as_ptr(), 2, b.as_ptr(), 1, &mut out) };
    assert_eq!(s, GeouncStatus::Ok);
    let expect = 0.5 * ((1.0 + 2f64.sqrt()) / 2.0 + 1.0);
    assert!((out - expect).abs() < 1e-15);
}

#[test]
fn errors_are_reported() {
    let mut out = 0.0;
    let s = unsafe { geounc_ause(ptr::null(), ptr::null(), 3, &mut out) };
    assert_eq!(s, GeouncStatus::NullPointer);
    assert!(last_error().contains("null"));
    let s = unsafe { geounc_chamfer(ptr::null(), 0, ptr::null(), 0, &mut out) };
    assert_eq!(s, GeouncStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    let e = [1.0];
    let s = unsafe { geounc_ause(e.as_ptr(), e.as_ptr(), 1, ptr::null_mut()) };
    assert_eq!(s, GeouncStatus::NullPointer);

    let path = CString::new("/nonexistent/grid.uncg").unwrap();
    let mut g: *mut GeouncGrid = ptr::null_mut();
    let s = unsafe { geounc_grid_load(path.as_ptr(), &mut g) };
    assert_eq!(s, GeouncStatus::Io);
    assert!(g.is_null());
    unsafe { geounc_grid_free(ptr::null_mut()) };
    assert_eq!(unsafe { geounc_dataset_view_count(ptr::null()) }, 0);
}

#[test]
fn grid_round_trip_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let mut grid = UncertaintyGrid::new([5, 6, 7], Aabb::cube(Vec3::zeros(), 1.0), 0.25).unwrap();
    grid.values[0] = 1.5;
    let path = dir.path().join("g.uncg");
    grid.save(&path).unwrap();

    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut h: *mut GeouncGrid = ptr::null_mut();
    assert_eq!(unsafe { geounc_grid_load(c.as_ptr(), &mut h) }, GeouncStatus::Ok);
    let mut dims = [0usize; 3];
    assert_eq!(unsafe { geounc_grid_dims(h, dims.as_mut_ptr()) }, GeouncStatus::Ok);
    assert_eq!(dims, [5, 6, 7]);
    let xyz = [-1.0, -1.0, -1.0, 0.3, 0.1, -0.2];
    let mut vals = [0.0; 2];
    assert_eq!(unsafe { geounc_grid_eval(h, xyz.as_ptr(), 2, vals.as_mut_ptr()) }, GeouncStatus::Ok);
    assert_eq!(vals[0], 1.5);
    assert_eq!(vals[1], 0.25);
    unsafe { geounc_grid_free(h) };
}

#[test]
fn dataset_evaluation_matches_the_library() {
    let dir = tempfile::tempdir().unwrap();
    let rig = RigSpec { count: 4, width: 24, height: 24, ..Default::default() };
    let ds = presets::generate_dataset(&presets::single_region_sphere(1), &rig, 1).unwrap();
    ds.save(dir.path()).unwrap();
    let grid = UncertaintyGrid::new([8; 3], ds.recon.spec.bbox, 1.0).unwrap();
    let gpath = dir.path().join("u.uncg");
    grid.save(&gpath).unwrap();

    let dpath = CString::new(dir.path().to_str().unwrap()).unwrap();
    let gpath = CString::new(gpath.to_str().unwrap()).unwrap();
    let (mut d, mut g) = (ptr::null_mut(), ptr::null_mut());
    assert_eq!(unsafe { geounc_dataset_load(dpath.as_ptr(), &mut d) }, GeouncStatus::Ok);
    assert_eq!(unsafe { geounc_grid_load(gpath.as_ptr(), &mut g) }, GeouncStatus::Ok);
    assert_eq!(unsafe { geounc_dataset_view_count(d) }, 4);
    let mut rep = GeouncReport::default();
    assert_eq!(unsafe { geounc_evaluate(d, g, &mut rep) }, GeouncStatus::Ok);

    let loaded = geounc::scene::SceneDataset::load(dir.path()).unwrap();
    let input = geounc::eval::EvalInput { gt: &loaded.scene.sdf, recon: &loaded.recon, views: &loaded.views, bounds: &loaded.scene.bounds };
    let grid = UncertaintyGrid::load(&dir.path().join("u.uncg")).unwrap();
    let (r, _) = geounc::eval::evaluate(&input, &grid, &Default::default()).unwrap();
    assert_eq!(rep.ause_3d, r.ause_3d);
    assert_eq!(rep.cd, r.cd);
    assert_eq!(rep.n_points, r.n_points);
    unsafe {
        geounc_dataset_free(d);
        geounc_grid_free(g);
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(geounc_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

/// The generated header must compile as C when a compiler is around.
#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/geounc.h");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("t.c");
    std::fs::write(&src, format!("#include \"{header}\"\nint main(void) {{ GeouncStatus s = GEOUNC_STATUS_OK; (void)s; return 0; }}\n")).unwrap();
    match std::process::Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).status() {
        Ok(st) => assert!(st.success(), "header does not compile"),
        Err(_) => eprintln!("no C compiler; skipped"),
    }
}
