//! Run configuration and the end-to-end toy pipeline: dataset synthesis,
//! training, schedule estimation, reconstruction and the ablation table.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correction::{estimate_w, CorrectionSchedule};
use crate::ddpm::DdpmSchedule;
use crate::degradation::{sample_trajectory, Density, DegradationTrajectory, ProcessConfig, ProcessKind, StepCountSchedule};
use crate::error::{FdbError, Result};
use crate::grid::{radius_map, ComplexImage};
use crate::imaging::{adjoint, forward, make_sampling_mask, default_calib, synth_coil_maps, ImagingSystem, MaskDensity, Measurement};
use crate::io::{read_cimg, write_cimg, write_json};
use crate::metrics::{psnr, ssim};
use crate::phantom::{make_dataset, ContrastChoice, DatasetEntry};
use crate::recovery::{train, ForwardProcess, TinyRegressor, TrainConfig};
use crate::rng::{self, tags};
use crate::sampler::{reconstruct, reconstruction_steps, CorrectionMode, CtMode, SamplerConfig, TrajectorySource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub dims: [usize; 2],
    /// Training images.
    pub count: usize,
    /// Held-out images for evaluation.
    #[serde(default = "default_test_count")]
    pub test_count: usize,
    #[serde(default)]
    pub contrast: ContrastChoice,
}

fn default_test_count() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagingConfig {
    #[serde(default)]
    pub density: MaskDensity,
    /// Calibration block size; defaults to `ceil(min(H, W) / 16)`.
    #[serde(default)]
    pub calib: Option<usize>,
    #[serde(default = "default_coils")]
    pub coils: usize,
    #[serde(default)]
    pub noise_sigma: f64,
}

fn default_coils() -> usize {
    1
}

impl Default for ImagingConfig {
    fn default() -> Self {
        Self {
            density: MaskDensity::default(),
            calib: None,
            coils: 1,
            noise_sigma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionConfig {
    pub mc_samples: usize,
}

impl Default for CorrectionConfig {
    fn default() -> Self {
        Self { mc_samples: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdpmConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for DdpmConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_min: 0.1,
            beta_max: 20.0,
        }
    }
}

impl DdpmConfig {
    pub fn schedule(&self) -> Result<DdpmSchedule> {
        DdpmSchedule::new(self.steps, self.beta_min, self.beta_max)
    }
}

/// Every knob of a run. Seeds inside sections are ignored; all randomness is
/// derived from the top-level `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub process: ProcessConfig,
    pub sampler: SamplerConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    #[serde(default)]
    pub imaging: ImagingConfig,
    #[serde(default)]
    pub correction: CorrectionConfig,
    #[serde(default)]
    pub ddpm: DdpmConfig,
    pub seed: u64,
}

impl RunConfig {
    /// 64x64 phantoms, `R' = 2`, `T_f = 64`, `R = 4`, 200 training steps of batch 5.
    pub fn toy(seed: u64) -> Self {
        let mut train = TrainConfig::new(1e-2, 50, 5, seed);
        train.loss_mode = crate::recovery::LossMode::UpperBound;
        Self {
            process: ProcessConfig::new(2.0, 64, seed).expect("valid toy process"),
            sampler: SamplerConfig::new(4.0),
            train,
            data: DataConfig {
                dims: [64, 64],
                count: 20,
                test_count: 10,
                contrast: ContrastChoice::Mixed,
            },
            imaging: ImagingConfig::default(),
            correction: CorrectionConfig::default(),
            ddpm: DdpmConfig::default(),
            seed,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| FdbError::config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.process.validate()?;
        self.sampler.validate()?;
        self.train.validate()?;
        if self.data.count < 2 {
            return Err(FdbError::config("data.count must be at least 2"));
        }
        if self.imaging.coils == 0 || !(self.imaging.noise_sigma >= 0.0) {
            return Err(FdbError::config("imaging needs coils >= 1 and noise_sigma >= 0"));
        }
        if self.correction.mc_samples == 0 {
            return Err(FdbError::config("correction.mc_samples must be at least 1"));
        }
        Ok(())
    }

    pub fn process_seeded(&self) -> ProcessConfig {
        self.process.with_seed(rng::derive_seed(self.seed, tags::TRAJECTORY, 0))
    }

    pub fn train_seeded(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.seed;
        t
    }

    pub fn t_r(&self) -> Result<usize> {
        reconstruction_steps(self.process.t_f, self.sampler.r, self.process.r_prime)
    }

    pub fn train_set(&self) -> Result<Vec<(DatasetEntry, ComplexImage)>> {
        let [h, w] = self.data.dims;
        make_dataset(h, w, self.data.count, self.data.contrast, self.seed, 0)
    }

    /// Held-out phantoms drawn after the training indices.
    pub fn test_set(&self) -> Result<Vec<(DatasetEntry, ComplexImage)>> {
        let [h, w] = self.data.dims;
        make_dataset(h, w, self.data.test_count, self.data.contrast, self.seed, self.data.count)
    }

    pub fn sampling_mask(&self, grid: &crate::grid::KSpaceGrid, index: usize) -> Result<crate::grid::FrequencyMask> {
        let calib = self.imaging.calib.unwrap_or_else(|| default_calib(grid));
        let seed = rng::derive_seed(self.seed, tags::MASK, index as u64);
        make_sampling_mask(grid, self.sampler.r, self.imaging.density, calib, seed)
    }

    /// Trajectory shared between training and testing when `ct_mode` is fixed.
    pub fn fixed_trajectory(&self, process: &ProcessConfig, height: usize, width: usize) -> Result<DegradationTrajectory> {
        let grid = radius_map(height, width)?;
        let seed = rng::derive_seed(self.seed, tags::TRAJECTORY, u64::MAX);
        sample_trajectory(&grid, &process.with_seed(seed), self.t_r()?.max(process.t_f))
    }

    /// Acquisition of test image `index`: its own mask, coil maps and noise.
    pub fn acquire(&self, x: &ComplexImage, index: usize) -> Result<(ImagingSystem, Measurement)> {
        let (h, w) = x.shape();
        let grid = radius_map(h, w)?;
        let mask = self.sampling_mask(&grid, index)?;
        let maps = synth_coil_maps(&grid, self.imaging.coils, rng::derive_seed(self.seed, tags::COILS, index as u64))?;
        let sys = ImagingSystem::new(grid, mask, maps)?;
        let y = forward(&sys, x, self.sampler.r, self.imaging.noise_sigma, rng::derive_seed(self.seed, tags::NOISE, index as u64))?;
        Ok((sys, y))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub height: usize,
    pub width: usize,
    pub entries: Vec<DatasetEntry>,
}

/// Writes `images/<id>.cimg` and `manifest.json` under `dir`.
pub fn save_dataset(dir: &Path, items: &[(DatasetEntry, ComplexImage)]) -> Result<()> {
    let (height, width) = items.first().map(|(_, x)| x.shape()).unwrap_or((0, 0));
    for (entry, img) in items {
        write_cimg(&dir.join("images").join(format!("{}.cimg", entry.id)), img)?;
    }
    write_json(
        &dir.join("manifest.json"),
        &DatasetManifest {
            height,
            width,
            entries: items.iter().map(|(e, _)| e.clone()).collect(),
        },
    )
}

pub fn load_dataset(dir: &Path) -> Result<Vec<(DatasetEntry, ComplexImage)>> {
    let text = std::fs::read_to_string(dir.join("manifest.json"))?;
    let manifest: DatasetManifest = serde_json::from_str(&text)?;
    manifest
        .entries
        .into_iter()
        .map(|e| {
            let img = read_cimg(&dir.join("images").join(format!("{}.cimg", e.id)))?;
            crate::error::check_shape((manifest.height, manifest.width), img.shape())?;
            Ok((e, img))
        })
        .collect()
}

/// The full method and the six ablations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Fdb,
    CtUniform,
    NLog,
    XtAveraging,
    CtFixed,
    WithoutCorrection,
    WLinear,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Fdb,
        Variant::CtUniform,
        Variant::NLog,
        Variant::XtAveraging,
        Variant::CtFixed,
        Variant::WithoutCorrection,
        Variant::WLinear,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Fdb => "FDB",
            Variant::CtUniform => "C_t uniform",
            Variant::NLog => "n log",
            Variant::XtAveraging => "X_t averaging",
            Variant::CtFixed => "C_t fixed",
            Variant::WithoutCorrection => "w/o correction",
            Variant::WLinear => "w_t linear",
        }
    }

    pub fn process(self, base: &ProcessConfig) -> ProcessConfig {
        let mut p = base.clone();
        match self {
            Variant::CtUniform => p.density = Density::Uniform,
            Variant::NLog => p.step_count_schedule = StepCountSchedule::Log,
            Variant::XtAveraging => p.process_kind = ProcessKind::AveragingConstraint,
            _ => {}
        }
        p
    }

    pub fn sampler(self, base: &SamplerConfig) -> SamplerConfig {
        let mut s = base.clone();
        match self {
            Variant::WithoutCorrection => s.correction = CorrectionMode::None,
            Variant::WLinear => s.correction = CorrectionMode::Linear,
            Variant::CtFixed => s.ct_mode = CtMode::Fixed,
            _ => {}
        }
        s
    }

    /// Variants that reuse another variant's trained model.
    fn model_source(self) -> Variant {
        match self {
            Variant::WithoutCorrection | Variant::WLinear => Variant::Fdb,
            v => v,
        }
    }
}

/// What a variant needs at test time.
pub struct TrainedVariant {
    pub model: TinyRegressor,
    pub schedule: Option<CorrectionSchedule>,
    pub fixed: Option<DegradationTrajectory>,
    pub loss_trace: Vec<f64>,
}

/// Trains the recovery operator for `variant` and, for frequency-removal
/// processes, estimates its correction schedule.
pub fn train_variant(cfg: &RunConfig, variant: Variant, train_images: &[ComplexImage]) -> Result<TrainedVariant> {
    let process = variant.process(&cfg.process_seeded());
    let (h, w) = train_images
        .first()
        .map(|x| x.shape())
        .ok_or_else(|| FdbError::config("empty training set"))?;
    let fixed = if variant == Variant::CtFixed || cfg.sampler.ct_mode == CtMode::Fixed {
        Some(cfg.fixed_trajectory(&process, h, w)?)
    } else {
        None
    };
    let forward_process = ForwardProcess::Fdb {
        cfg: process.clone(),
        fixed: fixed.clone(),
    };
    let tcfg = cfg.train_seeded();
    let init = TinyRegressor::new(tcfg.architecture, process.t_f, cfg.seed)?;
    let outcome = train(init, train_images, &tcfg, &forward_process)?;
    let schedule = match process.process_kind {
        ProcessKind::FrequencyRemoval => Some(estimate_w(
            train_images,
            &process,
            cfg.correction.mc_samples,
            rng::derive_seed(cfg.seed, tags::MONTE_CARLO, u64::MAX),
        )?),
        ProcessKind::AveragingConstraint => None,
    };
    Ok(TrainedVariant {
        model: outcome.model,
        schedule,
        fixed,
        loss_trace: outcome.epoch_losses,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageScore {
    pub id: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Reconstructs every test image with `variant` and scores it.
pub fn evaluate_variant(
    cfg: &RunConfig,
    variant: Variant,
    trained: &TrainedVariant,
    test: &[(DatasetEntry, ComplexImage)],
) -> Result<Vec<(ImageScore, ComplexImage)>> {
    let process = variant.process(&cfg.process_seeded());
    let sampler = variant.sampler(&cfg.sampler);
    test.par_iter()
        .enumerate()
        .map(|(i, (entry, x0))| {
            let (sys, y) = cfg.acquire(x0, i)?;
            let source = match &trained.fixed {
                Some(traj) if sampler.ct_mode == CtMode::Fixed => TrajectorySource::Fixed(traj),
                _ => TrajectorySource::Independent {
                    seed: rng::derive_seed(cfg.seed, tags::TEST_TRAJECTORY, i as u64),
                },
            };
            let rec = reconstruct(&y, &sys, &trained.model, source, trained.schedule.as_ref(), &process, &sampler, None)?;
            let score = ImageScore {
                id: entry.id.clone(),
                psnr_db: psnr(x0, &rec.image, None)?,
                ssim: ssim(x0, &rec.image)?,
            };
            Ok((score, rec.image))
        })
        .collect()
}

/// Scores of the least-squares reconstruction `A^H y`.
pub fn evaluate_baseline(cfg: &RunConfig, test: &[(DatasetEntry, ComplexImage)]) -> Result<Vec<ImageScore>> {
    test.par_iter()
        .enumerate()
        .map(|(i, (entry, x0))| {
            let (sys, y) = cfg.acquire(x0, i)?;
            let x = adjoint(&sys, &y)?;
            Ok(ImageScore {
                id: entry.id.clone(),
                psnr_db: psnr(x0, &x, None)?,
                ssim: ssim(x0, &x)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub label: String,
    pub psnr_db: f64,
    pub ssim: f64,
    pub per_image: Vec<ImageScore>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub baseline_psnr_db: f64,
    pub baseline_ssim: f64,
    pub baseline: Vec<ImageScore>,
}

impl AblationReport {
    pub fn row(&self, variant: Variant) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,psnr_db,ssim\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{}\n", r.label, r.psnr_db, r.ssim));
        }
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Trains what `variants` need (sharing models where possible) and scores
/// each on the held-out set.
pub fn run_variants(
    cfg: &RunConfig,
    variants: &[Variant],
    train_images: &[ComplexImage],
    test: &[(DatasetEntry, ComplexImage)],
) -> Result<AblationReport> {
    cfg.validate()?;
    let mut trained: Vec<(Variant, TrainedVariant)> = Vec::new();
    let mut rows = Vec::with_capacity(variants.len());
    for &v in variants {
        let src = v.model_source();
        if !trained.iter().any(|(k, _)| *k == src) {
            trained.push((src, train_variant(cfg, src, train_images)?));
        }
        let model = &trained.iter().find(|(k, _)| *k == src).expect("trained above").1;
        let scores: Vec<ImageScore> = evaluate_variant(cfg, v, model, test)?.into_iter().map(|(s, _)| s).collect();
        rows.push(AblationRow {
            variant: v,
            label: v.label().to_string(),
            psnr_db: mean(scores.iter().map(|s| s.psnr_db)),
            ssim: mean(scores.iter().map(|s| s.ssim)),
            per_image: scores,
        });
    }
    let baseline = evaluate_baseline(cfg, test)?;
    Ok(AblationReport {
        rows,
        baseline_psnr_db: mean(baseline.iter().map(|s| s.psnr_db)),
        baseline_ssim: mean(baseline.iter().map(|s| s.ssim)),
        baseline,
    })
}
