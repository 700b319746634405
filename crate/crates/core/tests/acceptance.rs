//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS/FAIL line, then exits non-zero if any
//! of them failed.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use geounc::commands::{ablate, distill};
use geounc::config::{Preset, RunConfig};
use geounc::consistency::{homography, pair_consistency, ssim, ssim_constants, tangent_plane, PatchGrid};
use geounc::eval::{ause, ause_of, chamfer, default_fractions, point_errors, random_uncertainties, sparsification, spearman, EvalInput};
use geounc::nbv::{init_pool, rounds_to_reach, run_incremental, NbvConfig, Policy};
use geounc::raster::GrayImage;
use geounc::scene::{presets, trace_pixel, AnalyticSdf, SceneDataset, SdfField, RENDER_TRACE};
use geounc::surface::{find_zero_crossing, sphere_trace, Ray, SurfacePoint, TraceParams};
use geounc::uncertainty::{fixed_source, train, Target, TrainConfig, UncertaintyGrid, U_MAX};
use geounc::{Aabb, BoundingSphere, Vec3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

/// Outcome of one criterion: pass flag and a one-line summary.
type Outcome = (bool, String);

fn gray_of(ds: &SceneDataset) -> Vec<GrayImage> {
    ds.views.iter().map(|v| v.image.as_ref().expect("rendered view").to_gray()).collect()
}

fn within_budget(ok: bool, detail: String, elapsed: Duration, budget_s: f64) -> Outcome {
    let fast = elapsed.as_secs_f64() < budget_s;
    let note = if fast { String::new() } else { format!("; over the {budget_s} s budget") };
    (ok && fast, format!("{detail}{note}"))
}

fn c1_homography() -> Outcome {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..200u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = random_unit(&mut rng);
        let mut eye = || {
            let mut d = random_unit(&mut rng);
            if d.dot(&n) < 0.2 {
                d = (d + n * (0.7 - d.dot(&n))).normalize();
            }
            p + d * rng.random_range(2.0..4.0)
        };
        let (e0, e1) = (eye(), eye());
        let reference = random_camera(&mut rng, 0, e0, p, 64, 64);
        let source = random_camera(&mut rng, 1, e1, p, 64, 64);
        let sp = SurfacePoint { position: p, normal: n, t: 0.0, ray_dir: -n, view_id: None, residual: 0.0, degenerate_normal: false };
        let plane = tangent_plane(&sp);
        let h = homography(&plane, &reference, &source).expect("regular configuration");
        let (c, _) = reference.project(&p).expect("p in front of the camera");
        for q in &PatchGrid::centered(c.x, c.y, 11, 10_000, 10_000).coords {
            let (ou, ov) = lift_transform_project(&reference, &source, &n, plane.d, q[0], q[1]).unwrap();
            let (hu, hv) = apply_h(&h, q[0], q[1]);
            worst = worst.max((ou - hu).hypot(ov - hv));
        }
    }
    within_budget(worst < 1e-6, format!("max error {worst:.2e} px over 200 configurations"), t.elapsed(), 1.0)
}

fn c2_root_finding() -> Outcome {
    let unit = (AnalyticSdf::unit_sphere(), BoundingSphere { center: Vec3::zeros(), radius: 1.5 });
    let bump = presets::sphere_with_bump(0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut rays = Vec::new();
    for (sdf, bounds) in [&unit, &(bump.sdf.clone(), bump.bounds)] {
        for _ in 0..500 {
            let origin = bounds.center + random_unit(&mut rng) * 3.0;
            let target = bounds.center + random_unit(&mut rng) * rng.random_range(0.0..0.9);
            let dir = (target - origin).normalize();
            let (t0, t1) = bounds.ray_interval(&origin, &dir).unwrap();
            rays.push((sdf.clone(), Ray::new(origin, dir, t0, t1).unwrap()));
        }
    }
    let oracle: Vec<Option<f64>> = rays.iter().map(|(sdf, ray)| bisection_first_crossing(sdf, ray, 20_000, 1e-9)).collect();
    let t = Instant::now();
    let params = TraceParams::default();
    let mut worst_ratio: f64 = 0.0;
    let mut worst_residual: f64 = 0.0;
    let mut misses = 0;
    for ((sdf, ray), o) in rays.iter().zip(&oracle) {
        match (find_zero_crossing(sdf, ray, 128), o) {
            (Some(hit), Some(o)) => worst_ratio = worst_ratio.max((hit.t - o).abs() / (ray.length() / 128.0)),
            _ => misses += 1,
        }
        match sphere_trace(sdf, ray, &params).hit {
            Some(hit) => worst_residual = worst_residual.max(sdf.eval(&hit.position).abs()),
            None => misses += 1,
        }
    }
    let ok = misses == 0 && worst_ratio < 1.0 && worst_residual < 1e-4;
    within_budget(ok, format!("1000 rays, worst |t - t*| = {worst_ratio:.3} of the sample interval, worst residual {worst_residual:.3e}, {misses} misses"), t.elapsed(), 5.0)
}

fn c3_ssim() -> Outcome {
    let ramp: Vec<f64> = (0..121).map(|i| (i as f64 / 120.0).sqrt()).collect();
    let self_err = (ssim(&ramp, &ramp, 1.0) - 1.0).abs();
    let (c1, _) = ssim_constants(1.0);
    let const_err = (ssim(&[0.0; 121], &[1.0; 121], 1.0) - c1 / (1.0 + c1)).abs();
    let spec = presets::perturbed_sphere(3);
    let rig = presets::RigSpec { count: 8, width: 64, height: 64, ..Default::default() };
    let ds = presets::generate_dataset(&spec, &rig, 3).expect("dataset");
    let gray = gray_of(&ds);
    let (mut scores, mut out_of_range) = (0, 0);
    for (i, v) in ds.views.iter().enumerate() {
        for y in (4..60).step_by(4) {
            for x in (4..60).step_by(4) {
                let Some(sp) = trace_pixel(&ds.recon, v, &ds.scene.bounds, x, y, &RENDER_TRACE) else { continue };
                for (j, w) in ds.views.iter().enumerate() {
                    let p = pair_consistency(&sp, v, &gray[i], w, &gray[j], 11, None);
                    if p.valid {
                        scores += 1;
                        out_of_range += usize::from(!(0.0..=2.0).contains(&p.score));
                    }
                }
            }
        }
    }
    let ok = self_err <= 1e-12 && const_err <= 1e-12 && out_of_range == 0 && scores > 0;
    (ok, format!("|SSIM(P,P)-1| = {self_err:.1e}, constant pair off by {const_err:.1e}, {out_of_range} of {scores} pair scores outside [0,2]"))
}

fn c4_gradient() -> Outcome {
    let worst = (0..10).map(gradient_error).fold(0.0, f64::max);
    (worst < 1e-4, format!("worst relative error {worst:.2e} over 10 batches x 20 parameters"))
}

fn c5_median() -> Outcome {
    let t = Instant::now();
    let bbox = Aabb::cube(Vec3::zeros(), 1.0);
    let mut grid = UncertaintyGrid::new([4, 4, 4], bbox, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut targets, mut oracles) = (Vec::new(), Vec::new());
    for idx in 0..grid.values.len() {
        let [i, j, k] = grid.spec.coords(idx);
        let point = grid.spec.node_position(i, j, k);
        let mut labels: Vec<(f64, f64)> = (0..3).map(|_| (rng.random_range(0.0..U_MAX), rng.random_range(1..4) as f64)).collect();
        if labels.iter().map(|l| l.1).sum::<f64>() as usize % 2 == 0 {
            labels[0].1 += 1.0;
        }
        for &(value, w) in &labels {
            targets.extend(std::iter::repeat_n(Target { point, value }, w as usize * 10));
        }
        oracles.push(brute_weighted_median(&labels, 0.0, U_MAX, 20_000));
    }
    let cfg = TrainConfig { lr: 2e-3, ..TrainConfig::default() };
    let mut opt = cfg.optimizer(grid.values.len());
    train(&mut grid, &mut opt, 4000, 0, fixed_source(targets, 256, 2));
    let worst = grid.values.iter().zip(&oracles).map(|(v, o)| (v - o).abs()).fold(0.0, f64::max);
    within_budget(worst < 0.05, format!("worst node distance to its weighted median {worst:.4} over 64 nodes"), t.elapsed(), 30.0)
}

fn c6_ause() -> Outcome {
    let f = [0.0, 0.25, 0.5, 0.75];
    let (e, u) = ([1.0, 2.0, 3.0, 4.0], [4.0, 3.0, 2.0, 1.0]);
    let mut worst = (ause(&sparsification(&e, &u, &f).unwrap()) - brute_ause(&e, &u, &f)).abs();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut self_nonzero = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..200);
        let e: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        let u: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
        worst = worst.max((ause_of(&e, &u).unwrap().0 - brute_ause(&e, &u, &default_fractions())).abs());
        self_nonzero += usize::from(ause_of(&e, &e).unwrap().0 != 0.0);
    }
    (worst < 1e-9 && self_nonzero == 0, format!("max deviation from the oracle {worst:.1e}, {self_nonzero} non-zero self AUSE"))
}

fn c7_end_to_end() -> Outcome {
    let t = Instant::now();
    let (mut rho, mut a_field, mut a_rand) = (0.0, 0.0, 0.0);
    let mut per_seed = Vec::new();
    for seed in SEEDS {
        let mut cfg = RunConfig { preset: Some(Preset::PerturbedSphere), seed, ..Default::default() };
        cfg.eval.point_stride = 2;
        let ds = presets::generate_dataset(&cfg.scene_spec().unwrap(), &cfg.rig, seed).expect("dataset");
        let res = distill(&ds, &gray_of(&ds), None, &cfg).expect("distillation");
        let input = EvalInput { gt: &ds.scene.sdf, recon: &ds.recon, views: &ds.views, bounds: &ds.scene.bounds };
        let (_, err, unc) = point_errors(&input, &res.stage1, cfg.eval.point_stride);
        let r = spearman(&unc, &err);
        let a = ause_of(&err, &unc).unwrap().0;
        let b = ause_of(&err, &random_uncertainties(err.len(), seed)).unwrap().0;
        per_seed.push(format!("{r:.2}/{:.2}", a / b));
        rho += r / SEEDS.len() as f64;
        a_field += a / SEEDS.len() as f64;
        a_rand += b / SEEDS.len() as f64;
    }
    let ok = rho > 0.6 && a_field <= 0.5 * a_rand;
    let detail = format!("mean Spearman {rho:.3}, mean AUSE_3D {a_field:.4} vs random {a_rand:.4} (ratio {:.3}); per seed rho/ratio [{}]", a_field / a_rand, per_seed.join(" "));
    within_budget(ok, detail, t.elapsed(), 300.0)
}

fn c8_decoupling() -> Outcome {
    let mut wins = 0;
    let mut per_seed = Vec::new();
    for seed in SEEDS {
        let mut cfg = RunConfig { preset: Some(Preset::SpecularSphere), seed, ..Default::default() };
        cfg.eval.point_stride = 2;
        cfg.ablate.patch_sizes = vec![1, 11];
        cfg.ablate.decouple = vec![true, false];
        let ds = presets::generate_dataset(&cfg.scene_spec().unwrap(), &cfg.rig, seed).expect("dataset");
        let rows = ablate(&ds, &cfg).expect("ablation");
        let get = |k: usize, d: bool| rows.iter().find(|r| r.patch_size == k && r.decouple == d).unwrap().ause_3d;
        let (full, wo, k1) = (get(11, true), get(11, false), get(1, true));
        if full < wo && full < k1 {
            wins += 1;
        }
        per_seed.push(format!("{full:.3}/{wo:.3}/{k1:.3}"));
    }
    (wins >= 4, format!("ordering held on {wins}/5 seeds; full/without/K=1 [{}]", per_seed.join(" ")))
}

fn c9_nbv() -> Outcome {
    let t = Instant::now();
    let mut wins = 0;
    let mut per_seed = Vec::new();
    for seed in SEEDS {
        let scene = presets::sphere_with_bump(seed).description();
        let rig = presets::RigSpec { count: 40, width: 64, height: 64, ..Default::default() };
        let views = presets::render_views(&scene, &rig.cameras(scene.bounds.center));
        let mut traj = Vec::new();
        for policy in [Policy::Random, Policy::Uncertainty] {
            let cfg = NbvConfig { policy, seed, ..Default::default() };
            let pool = init_pool(views.clone(), scene.bounds.center, cfg.n_regions, seed).expect("pool");
            traj.push(run_incremental(&scene, pool, &cfg, None).map_err(|e| e.0).expect("incremental run").trajectory);
        }
        let target = traj[0].last().unwrap().cd;
        let (r, u) = (rounds_to_reach(&traj[0], target), rounds_to_reach(&traj[1], target));
        if let (Some(r), Some(u)) = (r, u) {
            wins += usize::from(u < r);
        }
        let show = |x: Option<usize>| x.map_or("never".to_string(), |x| x.to_string());
        per_seed.push(format!("{}/{}", show(u), show(r)));
    }
    within_budget(wins >= 4, format!("uncertainty policy faster on {wins}/5 seeds; rounds uncertainty/random [{}]", per_seed.join(" ")), t.elapsed(), 600.0)
}

fn c10_chamfer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut cloud = |n: usize| -> Vec<Vec3> { (0..n).map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect() };
    let (mut worst, mut asym) = (0.0f64, 0);
    for _ in 0..10 {
        let (a, b) = (cloud(200), cloud(200));
        let d = chamfer(&a, &b).unwrap();
        worst = worst.max((d - brute_chamfer(&a, &b)).abs());
        asym += usize::from(d.to_bits() != chamfer(&b, &a).unwrap().to_bits());
    }
    (worst <= 1e-12 && asym == 0, format!("max deviation from brute force {worst:.1e}, {asym} asymmetric pairs"))
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn c11_reproducible() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_geounc");
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.json");
    std::fs::write(
        &config,
        r#"{
  "preset": "perturbed_sphere",
  "seed": 7,
  "rig": {"count": 16, "distance": 3.0, "width": 40, "height": 40, "fov_deg": 45.0},
  "train": {"steps_stage1": 150, "steps_finetune": 50, "dims": 24, "batch_rays": 128},
  "eval": {"point_stride": 2, "chamfer_dims": 32},
  "nbv": {"rounds": 2, "tsdf_dims": 32, "cd_dims": 32, "train": {"steps_stage1": 60, "dims": 16, "batch_rays": 128}},
  "labels": {"rays": 200},
  "ablate": {"patch_sizes": [1, 11], "decouple": [true, false]}
}"#,
    )
    .unwrap();
    let run = |dir: &Path| -> Result<(), String> {
        let d = |s: &str| dir.join(s).to_string_lossy().into_owned();
        let steps: Vec<Vec<String>> = vec![
            vec!["gen".into(), "--out".into(), d("data")],
            vec!["labels".into(), "--dataset".into(), d("data"), "--out".into(), d("labels.csv")],
            vec!["distill".into(), "--dataset".into(), d("data"), "--out".into(), d("distill"), "--finetune".into()],
            vec!["eval".into(), "--dataset".into(), d("data"), "--grid".into(), d("distill/uncertainty.uncg"), "--out".into(), d("eval")],
            vec!["nbv".into(), "--dataset".into(), d("data"), "--out".into(), d("nbv"), "--heatmaps".into()],
            vec!["nbv".into(), "--dataset".into(), d("data"), "--out".into(), d("nbv_random"), "--policy".into(), "random".into()],
            vec!["ablate".into(), "--dataset".into(), d("data"), "--out".into(), d("ablate")],
        ];
        for args in steps {
            let st = Command::new(bin).arg("--config").arg(&config).arg("--deterministic").args(&args).output().map_err(|e| e.to_string())?;
            if !st.status.success() {
                return Err(format!("`{}` failed: {}", args[0], String::from_utf8_lossy(&st.stderr).trim()));
            }
        }
        Ok(())
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    if let Err(e) = run(&a).and_then(|_| run(&b)) {
        return (false, e);
    }
    let (fa, fb) = (files_under(&a), files_under(&b));
    if fa != fb {
        return (false, "the two runs wrote different file sets".into());
    }
    let differing: Vec<String> = fa.iter().filter(|f| std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap()).map(|f| f.display().to_string()).collect();
    (differing.is_empty(), format!("{} artifacts from 6 commands compared, {} differ {:?}", fa.len(), differing.len(), differing))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("homography oracle", c1_homography),
        ("root finding oracle", c2_root_finding),
        ("SSIM identities and score range", c3_ssim),
        ("distillation gradient check", c4_gradient),
        ("median property", c5_median),
        ("AUSE oracle", c6_ause),
        ("end-to-end uncertainty quality", c7_end_to_end),
        ("decoupling and patch size ordering", c8_decoupling),
        ("next-best-view direction", c9_nbv),
        ("chamfer oracle", c10_chamfer),
        ("CLI reproducibility", c11_reproducible),
    ];
    // an optional argument restricts the run to one criterion number
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let t = Instant::now();
        let (ok, detail) = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_default();
            (false, format!("panicked: {msg}"))
        });
        failed += usize::from(!ok);
        println!("criterion {n:>2} {} {name}: {detail} [{:.1} s]", if ok { "PASS" } else { "FAIL" }, t.elapsed().as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
