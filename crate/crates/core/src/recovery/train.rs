use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ddpm::{ddpm_forward_sample, DdpmSchedule};
use crate::degradation::{averaging_corrupt, corrupt, sample_trajectory, DegradationTrajectory, ProcessConfig, ProcessKind};
use crate::error::{FdbError, Result};
use crate::grid::{radius_map, ComplexImage, FrequencyMask, KSpaceGrid};
use crate::rng::{self, tags};

use super::{Adam, Architecture, LossMode, TinyRegressor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch: usize,
    #[serde(default)]
    pub loss_mode: LossMode,
    #[serde(default = "default_betas")]
    pub betas: (f64, f64),
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default)]
    pub seed: u64,
}

fn default_betas() -> (f64, f64) {
    (0.5, 0.9)
}

impl TrainConfig {
    pub fn new(learning_rate: f64, epochs: usize, batch: usize, seed: u64) -> Self {
        Self {
            learning_rate,
            epochs,
            batch,
            loss_mode: LossMode::UpperBound,
            betas: default_betas(),
            architecture: Architecture::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(FdbError::config(format!(
                "learning rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if self.epochs == 0 || self.batch == 0 {
            return Err(FdbError::config("epochs and batch must be positive"));
        }
        Ok(())
    }
}

/// The forward process that generates training pairs `(x_t, x_0)`.
#[derive(Debug, Clone)]
pub enum ForwardProcess {
    /// Frequency removal (or its averaging variant). With `fixed`, every
    /// sample reuses that one trajectory instead of drawing a fresh one.
    Fdb {
        cfg: ProcessConfig,
        fixed: Option<DegradationTrajectory>,
    },
    Ddpm(DdpmSchedule),
}

impl ForwardProcess {
    pub fn fdb(cfg: ProcessConfig) -> Self {
        ForwardProcess::Fdb { cfg, fixed: None }
    }

    /// Largest step index used in training.
    pub fn horizon(&self) -> usize {
        match self {
            ForwardProcess::Fdb { cfg, .. } => cfg.t_f,
            ForwardProcess::Ddpm(s) => s.len(),
        }
    }
}

/// One training draw.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub x_t: ComplexImage,
    pub t: usize,
    /// Cumulative mask of `C_t`, present for frequency-removal processes.
    pub mask: Option<FrequencyMask>,
}

/// Draws `t ~ U[1, horizon]` and the matching degraded image; deterministic in
/// `(seed, draw)`.
pub fn make_training_sample(
    x0: &ComplexImage,
    grid: &KSpaceGrid,
    process: &ForwardProcess,
    seed: u64,
    draw: u64,
) -> Result<TrainingSample> {
    let mut rng = rng::stream(rng::derive_seed(seed, tags::TRAIN_T, draw), 0);
    let t = rng.random_range(1..=process.horizon());
    match process {
        ForwardProcess::Fdb { cfg, fixed } => {
            let owned;
            let traj = match fixed {
                Some(traj) => traj,
                None => {
                    let tseed = rng::derive_seed(seed, tags::TRAJECTORY, draw);
                    owned = sample_trajectory(grid, &cfg.with_seed(tseed), cfg.t_f)?;
                    &owned
                }
            };
            match cfg.process_kind {
                ProcessKind::FrequencyRemoval => Ok(TrainingSample {
                    x_t: corrupt(x0, traj, t)?,
                    t,
                    mask: Some(traj.mask(t)?),
                }),
                ProcessKind::AveragingConstraint => {
                    let x_start = corrupt(x0, traj, cfg.t_f)?;
                    Ok(TrainingSample {
                        x_t: averaging_corrupt(x0, &x_start, t, cfg.t_f)?,
                        t,
                        mask: None,
                    })
                }
            }
        }
        ForwardProcess::Ddpm(schedule) => Ok(TrainingSample {
            x_t: ddpm_forward_sample(x0, t, schedule, rng::derive_seed(seed, tags::DDPM, draw))?,
            t,
            mask: None,
        }),
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TinyRegressor,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Loss of every optimizer step, measured before the update.
    pub step_losses: Vec<f64>,
}

/// Minibatch Adam on the chosen loss. Sample order, step draws and
/// trajectories are all derived from `cfg.seed`, so runs are bit-identical.
pub fn train(
    model: TinyRegressor,
    dataset: &[ComplexImage],
    cfg: &TrainConfig,
    process: &ForwardProcess,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.len() < 2 {
        return Err(FdbError::config("training needs at least two images"));
    }
    let shape = dataset[0].shape();
    if let Some(bad) = dataset.iter().position(|x| x.shape() != shape) {
        return Err(FdbError::ShapeMismatch {
            expected: shape,
            got: dataset[bad].shape(),
        });
    }
    let weighted = cfg.loss_mode == LossMode::Weighted;
    if weighted {
        let ok = matches!(process, ForwardProcess::Fdb { cfg, .. } if cfg.process_kind == ProcessKind::FrequencyRemoval);
        if !ok {
            return Err(FdbError::config("weighted loss needs the frequency-removal process"));
        }
    }
    let grid = radius_map(shape.0, shape.1)?;
    let mut model = model;
    let mut opt = Adam::with_betas(cfg.learning_rate, cfg.betas.0, cfg.betas.1, model.params().len());
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step_losses = Vec::new();
    let n = dataset.len() as u64;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng::stream(rng::derive_seed(cfg.seed, tags::TRAIN_ORDER, epoch as u64), 0));
        let mut epoch_total = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let results: Vec<Result<(f64, Vec<f64>)>> = chunk
                .par_iter()
                .enumerate()
                .map(|(pos, &idx)| {
                    let draw = epoch as u64 * n + (b * cfg.batch + pos) as u64;
                    let x0 = &dataset[idx];
                    let sample = make_training_sample(x0, &grid, process, cfg.seed, draw)?;
                    let mask = if weighted { sample.mask.as_ref() } else { None };
                    model.loss_and_gradient(&sample.x_t, sample.t, x0, mask, 1.0)
                })
                .collect();
            let mut loss = 0.0;
            let mut grad = vec![0.0; model.params().len()];
            for r in results {
                let (l, g) = r?;
                loss += l;
                for (acc, v) in grad.iter_mut().zip(&g) {
                    *acc += v;
                }
            }
            let scale = 1.0 / chunk.len() as f64;
            loss *= scale;
            grad.iter_mut().for_each(|g| *g *= scale);
            let step = step_losses.len();
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(FdbError::NonFinite {
                    step,
                    context: format!(
                        "training loss diverged at epoch {epoch}; lower the learning rate (currently {})",
                        cfg.learning_rate
                    ),
                });
            }
            opt.update(model.params_mut(), &grad);
            step_losses.push(loss);
            epoch_total += loss;
            batches += 1;
        }
        epoch_losses.push(epoch_total / batches as f64);
    }
    Ok(TrainOutcome {
        model,
        epoch_losses,
        step_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    fn toy_set() -> Vec<ComplexImage> {
        (0..4)
            .map(|s| {
                ComplexImage::from_fn(16, 16, |i, j| {
                    let d = (i as f64 - 8.0).hypot(j as f64 - 8.0);
                    Complex64::new(if d < 3.0 + s as f64 { 0.8 } else { 0.1 }, 0.0)
                })
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let model = TinyRegressor::new(Architecture::Plain, 8, 0).unwrap();
        let cfg = TrainConfig::new(0.0, 2, 2, 1);
        let process = ForwardProcess::fdb(ProcessConfig::new(2.0, 8, 0).unwrap());
        let out = train(model.clone(), &toy_set(), &cfg, &process).unwrap();
        assert_eq!(out.model, model);
        assert_eq!(out.step_losses.len(), 4);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let model = TinyRegressor::new(Architecture::Residual, 8, 0).unwrap();
        let mut cfg = TrainConfig::new(2e-3, 15, 2, 7);
        cfg.loss_mode = LossMode::Weighted;
        let process = ForwardProcess::fdb(ProcessConfig::new(2.0, 8, 0).unwrap());
        let a = train(model.clone(), &toy_set(), &cfg, &process).unwrap();
        let b = train(model, &toy_set(), &cfg, &process).unwrap();
        assert_eq!(a.epoch_losses, b.epoch_losses);
        assert_eq!(a.model, b.model);
        assert!(a.epoch_losses.last().unwrap() < &a.epoch_losses[0]);
    }

    #[test]
    fn divergence_is_reported() {
        let model = TinyRegressor::new(Architecture::Plain, 8, 0).unwrap();
        let cfg = TrainConfig::new(1e200, 3, 2, 1);
        let process = ForwardProcess::fdb(ProcessConfig::new(2.0, 8, 0).unwrap());
        assert!(matches!(
            train(model, &toy_set(), &cfg, &process),
            Err(FdbError::NonFinite { .. })
        ));
    }

    #[test]
    fn rejects_tiny_datasets_and_bad_modes() {
        let model = TinyRegressor::new(Architecture::Plain, 8, 0).unwrap();
        let cfg = TrainConfig::new(1e-3, 1, 1, 1);
        let process = ForwardProcess::fdb(ProcessConfig::new(2.0, 8, 0).unwrap());
        assert!(train(model.clone(), &toy_set()[..1], &cfg, &process).is_err());
        let mut weighted = cfg.clone();
        weighted.loss_mode = LossMode::Weighted;
        let ddpm = ForwardProcess::Ddpm(DdpmSchedule::new(50, 0.1, 20.0).unwrap());
        assert!(train(model, &toy_set(), &weighted, &ddpm).is_err());
    }
}
