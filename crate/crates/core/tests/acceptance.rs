//! End-to-end acceptance checks. Every criterion runs and prints one
//! `PASS`/`FAIL` line; the test fails afterwards if any criterion failed.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use num_complex::Complex64;
use rand::Rng;

use fdb::correction::{estimate_w, w_power_law};
use fdb::degradation::{
    corrupt, per_step_count, radius_threshold, removal_target, sample_trajectory, ProcessConfig,
};
use fdb::experiment::{run_variants, RunConfig, Variant};
use fdb::grid::{fft, ifft, radius_map, ComplexImage};
use fdb::imaging::{
    adjoint, dc_projection, forward, make_sampling_mask, synth_coil_maps, ImagingSystem, MaskDensity,
};
use fdb::phantom::{make_dataset, ContrastChoice};
use fdb::recovery::{grad_check, Architecture, OracleRecovery, TinyRegressor};
use fdb::rng;
use fdb::sampler::{reconstruction_steps, run_reverse, ReverseRule};

const ROUND_TRIP_TOL: f64 = 1e-10;
const ADJOINT_TOL: f64 = 1e-10;
const IDEMPOTENCE_TOL: f64 = 1e-12;
const PARSEVAL_TOL: f64 = 1e-10;
const W1_TOL: f64 = 1e-6;
const IDENTITY_TOL: f64 = 1e-8;
const FLAT_SPECTRUM_TOL: f64 = 0.05;
const POWER_LAW_TOL: f64 = 1e-12;
const GRAD_TOL: f64 = 1e-4;
const TOY_MARGIN_DB: f64 = 2.0;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_budget(start: Instant, budget: Duration) -> Result<(), String> {
    let took = start.elapsed();
    ensure(took <= budget, || format!("took {took:.1?}, budget {budget:?}"))
}

fn random_image(h: usize, w: usize, seed: u64) -> ComplexImage {
    let mut r = rng::stream(seed, 0);
    let data = (0..h * w)
        .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect();
    ComplexImage::from_vec(h, w, data).unwrap()
}

fn oracle_round_trip() -> Outcome {
    let start = Instant::now();
    let grid = radius_map(64, 64).map_err(|e| e.to_string())?;
    let phantoms = make_dataset(64, 64, 20, ContrastChoice::Mixed, 11, 0).map_err(|e| e.to_string())?;
    let weights = w_power_law(64, 1.0).map_err(|e| e.to_string())?.w;
    let mut worst: f64 = 0.0;
    for (i, (_, x0)) in phantoms.iter().enumerate() {
        let cfg = ProcessConfig::new(2.0, 64, 100 + i as u64).map_err(|e| e.to_string())?;
        let traj = sample_trajectory(&grid, &cfg, 64).map_err(|e| e.to_string())?;
        let x_t = corrupt(x0, &traj, 64).map_err(|e| e.to_string())?;
        let oracle = OracleRecovery::new(x0.clone());
        for rule in [ReverseRule::Fdb { weights: None }, ReverseRule::Fdb { weights: Some(&weights) }] {
            let (x, _) = run_reverse(&x_t, 64, &traj, &oracle, rule, None, None).map_err(|e| e.to_string())?;
            worst = worst.max(x.relative_error(x0).map_err(|e| e.to_string())?);
        }
    }
    ensure(worst <= ROUND_TRIP_TOL, || format!("relative error {worst:.3e}"))?;
    within_budget(start, Duration::from_secs(10))?;
    Ok(format!("max relative error {worst:.2e} over 20 phantoms x 2 rules"))
}

fn trajectory_laws() -> Outcome {
    let start = Instant::now();
    let grid = radius_map(64, 64).map_err(|e| e.to_string())?;
    let (r_prime, t_f) = (2.0, 64);
    let n_k = grid.len();
    let n = per_step_count(n_k, r_prime, t_f).map_err(|e| e.to_string())?;
    let (mut strict_steps, mut relaxed_steps) = (0, 0);
    for seed in 0..50 {
        let cfg = ProcessConfig::new(r_prime, t_f, seed).map_err(|e| e.to_string())?;
        let traj = sample_trajectory(&grid, &cfg, t_f).map_err(|e| e.to_string())?;
        let mut seen = HashSet::new();
        for t in 1..=t_f {
            let set = traj.set(t);
            ensure(set.len() == n, || format!("seed {seed} step {t}: {} removals, expected {n}", set.len()))?;
            for &k in set {
                ensure(seen.insert(k), || format!("seed {seed}: component {k} removed twice"))?;
            }
            let scheduled = radius_threshold(t, t_f, r_prime, grid.r_max()).map_err(|e| e.to_string())?;
            let threshold = if traj.relaxed(t) {
                relaxed_steps += 1;
                let lowered = traj.threshold(t);
                ensure(lowered <= scheduled, || format!("seed {seed} step {t}: relaxation raised the threshold"))?;
                lowered
            } else {
                strict_steps += 1;
                scheduled
            };
            for &k in set {
                let r = grid.radius()[k];
                ensure(r > threshold, || format!("seed {seed} step {t}: radius {r} <= threshold {threshold}"))?;
            }
        }
        let kept = traj.mask(t_f).map_err(|e| e.to_string())?.kept_fraction();
        let slack = n as f64 / n_k as f64;
        ensure((kept - 1.0 / r_prime).abs() <= slack, || {
            format!("seed {seed}: keep fraction {kept} vs {} +- {slack}", 1.0 / r_prime)
        })?;
    }
    within_budget(start, Duration::from_secs(5))?;
    Ok(format!(
        "50 trajectories, n = {n}, radius rule held on {strict_steps} scheduled and {relaxed_steps} relaxed steps"
    ))
}

fn correction_schedule() -> Outcome {
    let start = Instant::now();
    let phantoms: Vec<ComplexImage> = make_dataset(64, 64, 20, ContrastChoice::Mixed, 5, 0)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(_, x)| x)
        .collect();
    let cfg = ProcessConfig::new(2.0, 64, 0).map_err(|e| e.to_string())?;
    let mc = estimate_w(&phantoms, &cfg, 10_000, 21).map_err(|e| e.to_string())?;
    let w1 = mc.w[0];
    ensure((w1 - 1.0).abs() <= W1_TOL, || format!("w_1 = {w1}"))?;
    let gap = mc.identity_gap.ok_or("Monte-Carlo schedule has no identity gap")?;
    ensure(gap <= IDENTITY_TOL, || format!("energy identity gap {gap:.3e}"))?;

    let mut delta = ComplexImage::zeros(64, 64).map_err(|e| e.to_string())?;
    delta.set(0, 0, Complex64::new(1.0, 0.0));
    let flat = estimate_w(&[delta], &cfg, 10_000, 22).map_err(|e| e.to_string())?;
    let flat_err = flat
        .w
        .iter()
        .enumerate()
        .map(|(i, w)| (w - 1.0 / (i + 1) as f64).abs())
        .fold(0.0, f64::max);
    ensure(flat_err <= FLAT_SPECTRUM_TOL, || format!("flat spectrum deviates from 1/t by {flat_err}"))?;

    let k0 = w_power_law(64, 0.0).map_err(|e| e.to_string())?;
    for (i, w) in k0.w.iter().enumerate() {
        let expect = 1.0 / (i + 1) as f64;
        ensure((w - expect).abs() <= POWER_LAW_TOL, || format!("k = 0, t = {}: {w} vs {expect}", i + 1))?;
    }
    let k1 = w_power_law(4, 1.0).map_err(|e| e.to_string())?;
    ensure((k1.weight(2) - 4.0 / 7.0).abs() <= POWER_LAW_TOL, || format!("T = 4, t = 2, k = 1: {}", k1.weight(2)))?;
    within_budget(start, Duration::from_secs(60))?;
    Ok(format!("w_1 - 1 = {:.1e}, identity gap {gap:.1e}, flat-spectrum error {flat_err:.3}", w1 - 1.0))
}

fn operator_algebra() -> Outcome {
    let grid = radius_map(32, 32).map_err(|e| e.to_string())?;
    let mask = make_sampling_mask(&grid, 4.0, MaskDensity::default(), 4, 3).map_err(|e| e.to_string())?;
    let maps = synth_coil_maps(&grid, 4, 8).map_err(|e| e.to_string())?;
    let multi = ImagingSystem::new(grid.clone(), mask.clone(), maps).map_err(|e| e.to_string())?;
    let single = ImagingSystem::single_coil(grid.clone(), mask.clone()).map_err(|e| e.to_string())?;

    let mut adjoint_gap: f64 = 0.0;
    for (s, sys) in [&single, &multi].into_iter().enumerate() {
        let x = random_image(32, 32, 40 + s as u64);
        let y: Vec<ComplexImage> =
            (0..sys.coil_count()).map(|c| random_image(32, 32, 60 + c as u64)).collect();
        let ax = sys.apply(&x).map_err(|e| e.to_string())?;
        let lhs: Complex64 = ax.iter().zip(&y).map(|(a, b)| a.inner(b).unwrap()).sum();
        let rhs = x.inner(&sys.adjoint_coils(&y).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        adjoint_gap = adjoint_gap.max((lhs - rhs).norm() / lhs.norm().max(1.0));
    }
    ensure(adjoint_gap <= ADJOINT_TOL, || format!("adjoint gap {adjoint_gap:.3e}"))?;

    let x0 = random_image(32, 32, 1);
    let y = forward(&single, &x0, 4.0, 0.0, 0).map_err(|e| e.to_string())?;
    let x = random_image(32, 32, 2);
    let once = dc_projection(&single, &x, &y).map_err(|e| e.to_string())?;
    let twice = dc_projection(&single, &once, &y).map_err(|e| e.to_string())?;
    let idem = (&twice - &once).map_err(|e| e.to_string())?.norm() / once.norm();
    ensure(idem <= IDEMPOTENCE_TOL, || format!("DC idempotence gap {idem:.3e}"))?;
    let spectrum = fft(&once);
    let mut pin_gap: f64 = 0.0;
    for k in (0..grid.len()).filter(|&k| mask.is_kept(k)) {
        pin_gap = pin_gap.max((spectrum.data()[k] - y.coils[0].data()[k]).norm());
    }
    ensure(pin_gap <= IDEMPOTENCE_TOL, || format!("sampled frequencies drift by {pin_gap:.3e}"))?;
    ensure(adjoint(&single, &y).is_ok(), || "adjoint of measurement failed".into())?;

    let mut r = rng::stream(77, 0);
    for draw in 0..100u64 {
        let x = random_image(32, 32, 1000 + draw);
        let cfg = ProcessConfig::new(2.0, 16, draw).map_err(|e| e.to_string())?;
        let traj = sample_trajectory(&grid, &cfg, 16).map_err(|e| e.to_string())?;
        let t = r.random_range(0..=16);
        let c = corrupt(&x, &traj, t).map_err(|e| e.to_string())?;
        ensure(c.norm() <= x.norm() * (1.0 + 1e-12), || format!("draw {draw}: ||C_t x|| > ||x||"))?;
    }

    let mut parseval: f64 = 0.0;
    for seed in 0..10 {
        let x = random_image(32, 48, 500 + seed);
        let k = fft(&x);
        parseval = parseval.max((k.norm() - x.norm()).abs() / x.norm());
        parseval = parseval.max(ifft(&k).relative_error(&x).map_err(|e| e.to_string())?);
    }
    ensure(parseval <= PARSEVAL_TOL, || format!("Parseval gap {parseval:.3e}"))?;
    Ok(format!("adjoint {adjoint_gap:.1e}, idempotence {idem:.1e}, Parseval {parseval:.1e}"))
}

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..5u64 {
        for arch in [Architecture::Plain, Architecture::Residual] {
            // Full-scale weights for both heads: the residual init shrinks
            // gradients to where finite differences lose precision.
            let params = TinyRegressor::new(Architecture::Plain, 16, seed).map_err(|e| e.to_string())?.params().to_vec();
            let model = TinyRegressor::from_params(arch, 16, params).map_err(|e| e.to_string())?;
            let x0 = random_image(12, 10, 10 + seed);
            let x_t = random_image(12, 10, 20 + seed);
            let err = grad_check(&model, &x_t, 1 + seed as usize * 3, &x0, 60, seed).map_err(|e| e.to_string())?;
            worst = worst.max(err);
        }
    }
    ensure(worst < GRAD_TOL, || format!("max relative gradient error {worst:.3e}"))?;
    within_budget(start, Duration::from_secs(30))?;
    Ok(format!("max relative error {worst:.2e} over 60 parameters, 5 seeds, 2 architectures"))
}

fn reconstruction_horizon() -> Outcome {
    let a = reconstruction_steps(1000, 4.0, 2.0).map_err(|e| e.to_string())?;
    let b = reconstruction_steps(1000, 8.0, 2.0).map_err(|e| e.to_string())?;
    ensure(a == 1500 && b == 1750, || format!("T_r = {a}, {b}"))?;
    let grid = radius_map(64, 64).map_err(|e| e.to_string())?;
    let n_k = grid.len();
    let n = per_step_count(n_k, 2.0, 64).map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for r in [4.0, 8.0] {
        let t_r = reconstruction_steps(64, r, 2.0).map_err(|e| e.to_string())?;
        let cfg = ProcessConfig::new(2.0, 64, 9).map_err(|e| e.to_string())?;
        let traj = sample_trajectory(&grid, &cfg, t_r).map_err(|e| e.to_string())?;
        let removed = traj.removed_count(t_r);
        let target = n_k as f64 * (r - 1.0) / r;
        ensure((removed as f64 - target).abs() <= n as f64, || {
            format!("R = {r}: removed {removed}, target {target} +- {n}")
        })?;
        ensure(traj.removed_count(64) == removal_target(n_k, 2.0) || traj.removed_count(64) == 64 * n, || {
            format!("R = {r}: {} removed by T_f", traj.removed_count(64))
        })?;
        notes.push(format!("R = {r}: T_r = {t_r}, removed {removed}/{target}"));
    }
    Ok(notes.join("; "))
}

fn toy_reconstruction() -> Outcome {
    let start = Instant::now();
    let cfg = RunConfig::toy(0);
    let train: Vec<ComplexImage> = cfg.train_set().map_err(|e| e.to_string())?.into_iter().map(|(_, x)| x).collect();
    let test = cfg.test_set().map_err(|e| e.to_string())?;
    let report = run_variants(&cfg, &[Variant::Fdb, Variant::WithoutCorrection], &train, &test).map_err(|e| e.to_string())?;
    let score = |v: Variant| report.rows.iter().find(|r| r.variant == v).map(|r| r.psnr_db).unwrap();
    let (fdb, plain, base) = (score(Variant::Fdb), score(Variant::WithoutCorrection), report.baseline_psnr_db);
    let summary = format!("FDB {fdb:.3} dB, w/o correction {plain:.3} dB, A^H y {base:.3} dB");
    ensure(fdb - base >= TOY_MARGIN_DB, || format!("{summary}: margin {:.3} dB < {TOY_MARGIN_DB}", fdb - base))?;
    ensure(plain < fdb, || format!("{summary}: ablation not below full method"))?;
    within_budget(start, Duration::from_secs(600))?;
    Ok(summary)
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fdb"))
        .args(args)
        .env("FDB_THREADS", "1")
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("fdb {args:?} failed: {}", String::from_utf8_lossy(&out.stderr))
    })
}

fn artifacts(dir: &Path) -> Vec<PathBuf> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "cimg")) {
                found.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    found.sort();
    found
}

fn replay_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let mut cfg = RunConfig::toy(4);
    cfg.process = ProcessConfig::new(2.0, 8, 4).map_err(|e| e.to_string())?;
    cfg.data.dims = [32, 32];
    cfg.data.count = 4;
    cfg.data.test_count = 2;
    cfg.train.epochs = 2;
    cfg.train.batch = 2;
    cfg.correction.mc_samples = 40;
    let config = root.join("config.json");
    std::fs::write(&config, serde_json::to_string_pretty(&cfg).unwrap()).map_err(|e| e.to_string())?;
    let c = config.to_str().unwrap();
    let p = |name: &str| root.join(name).to_str().unwrap().to_string();

    run_cli(&["phantom", "--config", c, "--out", &p("data")])?;
    run_cli(&["train", "--config", c, "--data", &p("data/train"), "--out", &p("train")])?;
    run_cli(&[
        "reconstruct", "--config", c, "--model", &p("train/model.ckpt"), "--schedule", &p("train/w.csv"),
        "--data", &p("data/test"), "--out", &p("recon"),
    ])?;
    run_cli(&["forward", "--config", c, "--out", &p("forward")])?;

    let mut compared = 0;
    for run in ["data", "train", "recon", "forward"] {
        let replay = format!("{run}-replay");
        run_cli(&["replay", &p(&format!("{run}/run_manifest.json")), "--out", &p(&replay)])?;
        let (a, b) = (root.join(run), root.join(&replay));
        let files = artifacts(&a);
        ensure(!files.is_empty(), || format!("{run} wrote no CSV or CIMG files"))?;
        ensure(files == artifacts(&b), || format!("{run}: replay wrote a different file set"))?;
        for f in &files {
            let same = std::fs::read(a.join(f)).unwrap() == std::fs::read(b.join(f)).unwrap();
            ensure(same, || format!("{run}: {} differs after replay", f.display()))?;
            compared += 1;
        }
    }
    Ok(format!("{compared} CSV/CIMG files byte-identical across 4 replays"))
}

#[test]
fn acceptance() {
    let criteria: [Criterion; 8] = [
        ("oracle round trip", oracle_round_trip),
        ("trajectory laws", trajectory_laws),
        ("correction schedule", correction_schedule),
        ("operator algebra", operator_algebra),
        ("gradient correctness", gradient_correctness),
        ("reconstruction horizon", reconstruction_horizon),
        ("toy reconstruction", toy_reconstruction),
        ("replay determinism", replay_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("criterion {} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                println!("criterion {} FAIL {name}: {detail}", i + 1);
                failed.push(i + 1);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
