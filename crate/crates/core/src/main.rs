use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{error::ErrorKind, Args, Parser, Subcommand};
use fdb::correction::{CorrectionSchedule, Provenance};
use fdb::ddpm::ddpm_reconstruct;
use fdb::degradation::{corrupt, sample_trajectory};
use fdb::experiment::{load_dataset, run_variants, save_dataset, train_variant, RunConfig, Variant};
use fdb::grid::{radius_map, ComplexImage};
use fdb::imaging::{adjoint, MeasurementSidecar};
use fdb::io::{read_cimg, write_atomic, write_cimg, write_json, write_kmsk};
use fdb::metrics::{metrics_csv, MetricsRecord};
use fdb::phantom::DatasetEntry;
use fdb::recovery::{read_checkpoint, train, write_checkpoint, ForwardProcess, TinyRegressor};
use fdb::rng::{derive_seed, tags};
use fdb::sampler::{reconstruct, CorrectionMode, CtMode, TrajectorySource};
use fdb::FdbError;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(name = "fdb", version, about = "Frequency-removal diffusion bridge for undersampled k-space")]
struct Cli {
    /// Worker threads; falls back to FDB_THREADS, then the core count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
struct Common {
    /// Run configuration JSON; the built-in toy configuration when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand, Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate training and held-out phantom datasets.
    Phantom(Common),
    /// Generate the sampling mask of the first acquisition.
    Mask(Common),
    /// Write forward-process snapshots for one image.
    Forward {
        #[command(flatten)]
        common: Common,
        /// Image to degrade; the first training phantom when omitted.
        #[arg(long)]
        image: Option<PathBuf>,
        /// Steps to export, comma separated; defaults to 0, T_f/4, T_f/2, T_f.
        #[arg(long, value_delimiter = ',')]
        steps: Vec<usize>,
    },
    /// Monte-Carlo estimate of the correction schedule.
    EstimateW {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        mc_samples: Option<usize>,
    },
    /// Train the recovery network.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Process variant to train for (fdb, ct_uniform, n_log, xt_averaging, ct_fixed).
        #[arg(long, default_value = "fdb", value_parser = parse_variant)]
        variant: Variant,
        /// Train a denoiser for the Gaussian diffusion baseline instead.
        #[arg(long)]
        ddpm: bool,
    },
    /// Reconstruct held-out images with the bridge sampler.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// `t,w` schedule CSV, required for learned correction.
        #[arg(long)]
        schedule: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Reconstruct held-out images with the Gaussian diffusion baseline.
    DdpmReconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and score the full method and its six ablations.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// PSNR and SSIM between reference and test images (files or directories).
    Metrics {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        test: PathBuf,
    },
    /// Re-run a recorded command into a new output directory.
    Replay {
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_variant(s: &str) -> std::result::Result<Variant, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|_| format!("unknown variant {s:?}"))
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Phantom(_) => "phantom",
            Command::Mask(_) => "mask",
            Command::Forward { .. } => "forward",
            Command::EstimateW { .. } => "estimate-w",
            Command::Train { .. } => "train",
            Command::Reconstruct { .. } => "reconstruct",
            Command::DdpmReconstruct { .. } => "ddpm-reconstruct",
            Command::Ablate { .. } => "ablate",
            Command::Metrics { .. } => "metrics",
            Command::Replay { .. } => "replay",
        }
    }

    fn common_mut(&mut self) -> Option<&mut Common> {
        match self {
            Command::Phantom(c) | Command::Mask(c) => Some(c),
            Command::Forward { common, .. }
            | Command::EstimateW { common, .. }
            | Command::Train { common, .. }
            | Command::Reconstruct { common, .. }
            | Command::DdpmReconstruct { common, .. }
            | Command::Ablate { common, .. }
            | Command::Metrics { common, .. } => Some(common),
            Command::Replay { .. } => None,
        }
    }

    /// Input paths made absolute so a manifest replays from any directory.
    fn absolutize(&mut self) -> Result<()> {
        let abs = |p: &mut PathBuf| -> Result<()> {
            *p = std::path::absolute(&*p)?;
            Ok(())
        };
        let opt = |p: &mut Option<PathBuf>| -> Result<()> {
            if let Some(p) = p {
                *p = std::path::absolute(&*p)?;
            }
            Ok(())
        };
        match self {
            Command::Forward { image, .. } => opt(image)?,
            Command::EstimateW { data, .. } | Command::Train { data, .. } | Command::Ablate { data, .. } => opt(data)?,
            Command::Reconstruct { model, schedule, data, .. } => {
                abs(model)?;
                opt(schedule)?;
                opt(data)?;
            }
            Command::DdpmReconstruct { model, data, .. } => {
                abs(model)?;
                opt(data)?;
            }
            Command::Metrics { reference, test, .. } => {
                abs(reference)?;
                abs(test)?;
            }
            _ => {}
        }
        Ok(())
    }
}

/// Everything needed to repeat a run exactly.
#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    command: Command,
    config: RunConfig,
    /// Artifact paths relative to the output directory.
    outputs: Vec<String>,
    #[serde(rename = "T_r")]
    t_r: Option<usize>,
    wall_time_s: f64,
}

/// Collects written artifacts relative to the output directory.
struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        }
    }

    fn path(&mut self, rel: &str) -> PathBuf {
        self.written.push(rel.to_string());
        self.dir.join(rel)
    }

    fn text(&mut self, rel: &str, text: &str) -> Result<()> {
        write_atomic(&self.path(rel), text.as_bytes())?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        write_json(&self.path(rel), value)?;
        Ok(())
    }

    fn cimg(&mut self, rel: &str, img: &ComplexImage) -> Result<()> {
        write_cimg(&self.path(rel), img)?;
        Ok(())
    }
}

/// Marks errors caused by invalid user input.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
struct UsageError(String);

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UsageError(msg.into()))
}

fn load_config(common: &Common) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
            RunConfig::from_json(&text)?
        }
        None => RunConfig::toy(0),
    };
    Ok(match common.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn images_from(data: &Option<PathBuf>, cfg: &RunConfig) -> Result<Vec<(DatasetEntry, ComplexImage)>> {
    match data {
        Some(dir) => Ok(load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?),
        None => Ok(cfg.train_set()?),
    }
}

fn test_images(data: &Option<PathBuf>, cfg: &RunConfig) -> Result<Vec<(DatasetEntry, ComplexImage)>> {
    match data {
        Some(dir) => Ok(load_dataset(dir).with_context(|| format!("loading dataset {}", dir.display()))?),
        None => Ok(cfg.test_set()?),
    }
}

fn execute(command: &Command, cfg: &RunConfig, out: &mut Outputs) -> Result<Option<usize>> {
    match command {
        Command::Phantom(_) => {
            let dir = out.dir.clone();
            for (name, set) in [("train", cfg.train_set()?), ("test", cfg.test_set()?)] {
                save_dataset(&dir.join(name), &set)?;
                out.written.extend(set.iter().map(|(e, _)| format!("{name}/images/{}.cimg", e.id)));
                out.written.push(format!("{name}/manifest.json"));
            }
            Ok(None)
        }
        Command::Mask(_) => {
            let [h, w] = cfg.data.dims;
            let grid = radius_map(h, w)?;
            let mask = cfg.sampling_mask(&grid, 0)?;
            write_kmsk(&out.path("mask.kmsk"), &mask)?;
            out.json(
                "mask.json",
                &MeasurementSidecar {
                    r: cfg.sampler.r,
                    coils: cfg.imaging.coils,
                    noise_sigma: cfg.imaging.noise_sigma,
                    seed: cfg.seed,
                    density: cfg.imaging.density,
                },
            )?;
            let pixels: Vec<u8> = mask.keep().iter().map(|&k| if k { 255 } else { 0 }).collect();
            let png = image::GrayImage::from_raw(w as u32, h as u32, pixels).expect("mask buffer size");
            png.save(out.path("mask.png"))?;
            Ok(None)
        }
        Command::Forward { image, steps, .. } => {
            let x0 = match image {
                Some(p) => read_cimg(p)?,
                None => cfg.train_set()?.swap_remove(0).1,
            };
            let process = cfg.process_seeded();
            let grid = radius_map(x0.height(), x0.width())?;
            let traj = sample_trajectory(&grid, &process, process.t_f)?;
            let t_f = process.t_f;
            let steps = if steps.is_empty() {
                vec![0, t_f / 4, t_f / 2, t_f]
            } else {
                steps.clone()
            };
            for &t in &steps {
                if t > t_f {
                    return Err(usage(format!("step {t} exceeds T_f = {t_f}")));
                }
                write_kmsk(&out.path(&format!("masks/t_{t:04}.kmsk")), &traj.mask(t)?)?;
                out.cimg(&format!("x_t/t_{t:04}.cimg"), &corrupt(&x0, &traj, t)?)?;
            }
            out.json("trajectory.json", &traj.manifest())?;
            Ok(None)
        }
        Command::EstimateW { data, mc_samples, .. } => {
            let images: Vec<ComplexImage> = images_from(data, cfg)?.into_iter().map(|(_, x)| x).collect();
            let samples = mc_samples.unwrap_or(cfg.correction.mc_samples);
            let seed = derive_seed(cfg.seed, tags::MONTE_CARLO, u64::MAX);
            let schedule = fdb::correction::estimate_w(&images, &cfg.process_seeded(), samples, seed)?;
            write_schedule(out, &schedule, cfg)?;
            Ok(None)
        }
        Command::Train { data, variant, ddpm, .. } => {
            let images: Vec<ComplexImage> = images_from(data, cfg)?.into_iter().map(|(_, x)| x).collect();
            let tcfg = cfg.train_seeded();
            let (model, losses) = if *ddpm {
                let schedule = cfg.ddpm.schedule()?;
                let init = TinyRegressor::new(tcfg.architecture, schedule.len(), cfg.seed)?;
                let outcome = train(init, &images, &tcfg, &ForwardProcess::Ddpm(schedule))?;
                (outcome.model, outcome.epoch_losses)
            } else {
                if matches!(variant, Variant::WithoutCorrection | Variant::WLinear) {
                    return Err(usage("sampling-only variants share the fdb model; train --variant fdb"));
                }
                let trained = train_variant(cfg, *variant, &images)?;
                if let Some(schedule) = &trained.schedule {
                    write_schedule(out, schedule, cfg)?;
                }
                (trained.model, trained.loss_trace)
            };
            write_checkpoint(&out.path("model.ckpt"), &model, cfg.seed, tcfg.epochs)?;
            let mut csv = String::from("epoch,loss\n");
            for (e, l) in losses.iter().enumerate() {
                csv.push_str(&format!("{},{l}\n", e + 1));
            }
            out.text("loss.csv", &csv)?;
            Ok(None)
        }
        Command::Reconstruct { model, schedule, data, .. } => {
            let (_, net) = read_checkpoint(model)?;
            let schedule = match schedule {
                Some(p) => Some(CorrectionSchedule::from_csv(&std::fs::read_to_string(p)?, Provenance::MonteCarlo)?),
                None if cfg.sampler.correction == CorrectionMode::Learned => {
                    return Err(usage("learned correction needs --schedule"));
                }
                None => None,
            };
            let process = cfg.process_seeded();
            let test = test_images(data, cfg)?;
            let fixed = match (cfg.sampler.ct_mode, test.first()) {
                (CtMode::Fixed, Some((_, x))) => Some(cfg.fixed_trajectory(&process, x.height(), x.width())?),
                _ => None,
            };
            let mut records = Vec::new();
            let mut t_r = None;
            for (i, (entry, x0)) in test.iter().enumerate() {
                let (sys, y) = cfg.acquire(x0, i)?;
                let source = match &fixed {
                    Some(traj) => TrajectorySource::Fixed(traj),
                    None => TrajectorySource::Independent {
                        seed: derive_seed(cfg.seed, tags::TEST_TRAJECTORY, i as u64),
                    },
                };
                let rec = reconstruct(&y, &sys, &net, source, schedule.as_ref(), &process, &cfg.sampler, Some(x0))?;
                let zf = adjoint(&sys, &y)?;
                out.cimg(&format!("recon/{}.cimg", entry.id), &rec.image)?;
                out.cimg(&format!("zero_filled/{}.cimg", entry.id), &zf)?;
                out.text(&format!("traces/{}.csv", entry.id), &rec.trace_csv())?;
                records.push(MetricsRecord::compute(&entry.id, x0, &format!("fdb/{}", entry.id), &rec.image)?);
                records.push(MetricsRecord::compute(&entry.id, x0, &format!("zero_filled/{}", entry.id), &zf)?);
                t_r = Some(rec.t_r);
            }
            out.text("metrics.csv", &metrics_csv(&records))?;
            Ok(t_r)
        }
        Command::DdpmReconstruct { model, data, .. } => {
            let (_, net) = read_checkpoint(model)?;
            let schedule = cfg.ddpm.schedule()?;
            let test = test_images(data, cfg)?;
            let mut records = Vec::new();
            for (i, (entry, x0)) in test.iter().enumerate() {
                let (sys, y) = cfg.acquire(x0, i)?;
                let x = ddpm_reconstruct(&y, &sys, &net, &schedule, derive_seed(cfg.seed, tags::DDPM, i as u64))?;
                out.cimg(&format!("ddpm/{}.cimg", entry.id), &x)?;
                records.push(MetricsRecord::compute(&entry.id, x0, &format!("ddpm/{}", entry.id), &x)?);
            }
            out.text("metrics.csv", &metrics_csv(&records))?;
            Ok(None)
        }
        Command::Ablate { data, .. } => {
            let images: Vec<ComplexImage> = images_from(data, cfg)?.into_iter().map(|(_, x)| x).collect();
            let test = cfg.test_set()?;
            let report = run_variants(cfg, &Variant::ALL, &images, &test)?;
            out.text("ablation.csv", &report.to_csv())?;
            out.json("ablation.json", &report)?;
            Ok(Some(cfg.t_r()?))
        }
        Command::Metrics { reference, test, .. } => {
            let pairs = metric_pairs(reference, test)?;
            let mut records = Vec::new();
            for (id, r, t) in pairs {
                records.push(MetricsRecord::compute(&id, &read_cimg(&r)?, &id, &read_cimg(&t)?)?);
            }
            out.text("metrics.csv", &metrics_csv(&records))?;
            Ok(None)
        }
        Command::Replay { .. } => unreachable!("replay is dispatched before execute"),
    }
}

fn write_schedule(out: &mut Outputs, schedule: &CorrectionSchedule, cfg: &RunConfig) -> Result<()> {
    out.text("w.csv", &schedule.to_csv())?;
    out.json("w.json", &schedule.metadata(Some(cfg.process.r_prime), Some(cfg.seed)))?;
    let violations = schedule.monotonicity_violations(1e-3);
    if !violations.is_empty() {
        eprintln!("warning: schedule increases beyond 1e-3 at steps {violations:?}");
    }
    plot_curve(&schedule.w, &out.path("w.png"))
}

/// Line plot of `values` against their index, scaled to `[0, 1]` vertically.
fn plot_curve(values: &[f64], path: &Path) -> Result<()> {
    let (w, h, pad) = (480u32, 320u32, 20u32);
    let mut img = image::RgbImage::from_pixel(w, h, image::Rgb([255, 255, 255]));
    let axis = image::Rgb([160, 160, 160]);
    for x in pad..w - pad {
        img.put_pixel(x, h - pad, axis);
    }
    for y in pad..=h - pad {
        img.put_pixel(pad, y, axis);
    }
    let n = values.len().max(2) - 1;
    let to_px = |i: usize, v: f64| {
        let x = pad as f64 + (w - 2 * pad) as f64 * i as f64 / n as f64;
        let y = (h - pad) as f64 - (h - 2 * pad) as f64 * v.clamp(0.0, 1.0);
        (x, y)
    };
    for i in 1..values.len() {
        let (x0, y0) = to_px(i - 1, values[i - 1]);
        let (x1, y1) = to_px(i, values[i]);
        let segs = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
        for s in 0..=segs {
            let f = s as f64 / segs as f64;
            let (x, y) = (x0 + (x1 - x0) * f, y0 + (y1 - y0) * f);
            img.put_pixel(x.round() as u32, y.round() as u32, image::Rgb([20, 60, 200]));
        }
    }
    img.save(path)?;
    Ok(())
}

fn metric_pairs(reference: &Path, test: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    if reference.is_file() && test.is_file() {
        let id = reference.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        return Ok(vec![(id, reference.to_path_buf(), test.to_path_buf())]);
    }
    if !(reference.is_dir() && test.is_dir()) {
        return Err(usage("--reference and --test must both be files or both be directories"));
    }
    let mut pairs = Vec::new();
    let mut names: Vec<_> = std::fs::read_dir(reference)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "cimg"))
        .collect();
    names.sort();
    for r in names {
        let t = test.join(r.file_name().expect("file entry"));
        if t.is_file() {
            let id = r.file_stem().unwrap_or_default().to_string_lossy().into_owned();
            pairs.push((id, r, t));
        }
    }
    if pairs.is_empty() {
        bail!(usage("no matching .cimg files between reference and test"));
    }
    Ok(pairs)
}

fn run(mut command: Command, config: Option<RunConfig>) -> Result<()> {
    let start = Instant::now();
    command.absolutize()?;
    let common = command.common_mut().expect("non-replay command").clone();
    let cfg = match config {
        Some(cfg) => cfg,
        None => load_config(&common)?,
    };
    cfg.validate()?;
    std::fs::create_dir_all(&common.out).with_context(|| format!("creating {}", common.out.display()))?;
    let mut out = Outputs::new(&common.out);
    let t_r = execute(&command, &cfg, &mut out)?;
    let manifest = RunManifest {
        command,
        config: cfg,
        outputs: out.written.clone(),
        t_r,
        wall_time_s: start.elapsed().as_secs_f64(),
    };
    write_json(&common.out.join("run_manifest.json"), &manifest)?;
    Ok(())
}

fn replay(manifest: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(manifest).map_err(|e| usage(format!("cannot read manifest {}: {e}", manifest.display())))?;
    let recorded: RunManifest = serde_json::from_str(&text).map_err(|e| usage(format!("bad manifest: {e}")))?;
    let mut command = recorded.command;
    match command.common_mut() {
        Some(common) => common.out = out.to_path_buf(),
        None => return Err(usage("a manifest cannot record a replay")),
    }
    run(command, Some(recorded.config))
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    let threads = match threads {
        Some(n) => Some(n),
        None => match std::env::var("FDB_THREADS") {
            Ok(v) => Some(v.parse().map_err(|_| usage(format!("FDB_THREADS must be a positive integer, got {v:?}")))?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(usage("thread count must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<FdbError>() {
            return if e.is_config() { 1 } else { 2 };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = configure_threads(cli.threads).and_then(|_| match &cli.command {
        Command::Replay { manifest, out } => replay(manifest, out),
        command => run(command.clone(), None),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({}): {e:#}", cli.command.name());
            ExitCode::from(exit_code(&e))
        }
    }
}
