//! Reverse sampling for the frequency-removal bridge.
//!
//! Going from step `t` to `t - 1` restores the components removed at step
//! `t` from the current clean-image estimate and, in the corrected form,
//! blends the components that are still present toward that estimate:
//!
//! `x_{t-1} = x_t + (C_{t-1} - C_t) x0_hat + w_t C_t (x0_hat - x_t)`.

use serde::{Deserialize, Serialize};

use crate::correction::{resample_w, w_linear, CorrectionSchedule};
use crate::degradation::{floor_exact, sample_trajectory, DegradationTrajectory, ProcessConfig};
use crate::error::{check_shape, FdbError, Result};
use crate::grid::{fft, ifft, radius_map, ComplexImage};
use crate::imaging::{adjoint, dc_projection, residual_norm, ImagingSystem, Measurement};
use crate::metrics::psnr;
use crate::recovery::RecoveryOperator;
use crate::rng::{self, tags};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    /// Monte-Carlo schedule resampled to the reconstruction length.
    #[default]
    Learned,
    Linear,
    /// Standard step without the correction term.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CtMode {
    /// A fresh test-time trajectory per reconstruction.
    #[default]
    Independent,
    /// Reuse a stored trajectory shared with training.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(default)]
    pub correction: CorrectionMode,
    #[serde(default)]
    pub ct_mode: CtMode,
    #[serde(default = "default_true")]
    pub dc_every_step: bool,
}

fn default_true() -> bool {
    true
}

impl SamplerConfig {
    pub fn new(r: f64) -> Self {
        Self {
            r,
            correction: CorrectionMode::Learned,
            ct_mode: CtMode::Independent,
            dc_every_step: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 1.0) || !self.r.is_finite() {
            return Err(FdbError::config(format!("R must be > 1, got {}", self.r)));
        }
        Ok(())
    }
}

/// `floor(T_f (R - 1) R' / ((R' - 1) R))`.
pub fn reconstruction_steps(t_f: usize, r: f64, r_prime: f64) -> Result<usize> {
    if !(r > 1.0) || !(r_prime > 1.0) {
        return Err(FdbError::config(format!("R and R' must exceed 1, got {r} and {r_prime}")));
    }
    let t_r = floor_exact(t_f as f64 * (r - 1.0) * r_prime / ((r_prime - 1.0) * r));
    if t_r == 0 {
        return Err(FdbError::config("reconstruction would take zero steps"));
    }
    Ok(t_r)
}

/// One reverse step from `t` to `t - 1`. A weight of `None` (or zero) gives
/// the standard step.
pub fn fdb_reverse_step(
    x_t: &ComplexImage,
    t: usize,
    traj: &DegradationTrajectory,
    x0_hat: &ComplexImage,
    w_t: Option<f64>,
) -> Result<ComplexImage> {
    if t == 0 {
        return Err(FdbError::Trajectory("reverse step needs t >= 1".into()));
    }
    traj.check_step(t)?;
    check_shape(traj.shape(), x_t.shape())?;
    check_shape(x_t.shape(), x0_hat.shape())?;
    let mut xk = fft(x_t);
    let x0k = fft(x0_hat);
    let w = w_t.filter(|&w| w != 0.0);
    for ((v, &e), &step) in xk.data_mut().iter_mut().zip(x0k.data()).zip(traj.removal_step()) {
        let step = step as usize;
        if step == t {
            *v += e;
        } else if let Some(w) = w {
            if step == 0 || step > t {
                *v += (e - *v) * w;
            }
        }
    }
    Ok(ifft(&xk))
}

/// InDI-style step for the averaging process: `x_{t-1} = x_t + (x0_hat - x_t) / t`.
pub fn averaging_reverse_step(x_t: &ComplexImage, t: usize, x0_hat: &ComplexImage) -> Result<ComplexImage> {
    if t == 0 {
        return Err(FdbError::Trajectory("reverse step needs t >= 1".into()));
    }
    let a = 1.0 / t as f64;
    x_t.zip_with(x0_hat, |x, e| x + (e - x) * a)
}

#[derive(Debug, Clone, Copy)]
pub enum ReverseRule<'a> {
    /// Frequency-restoring step; `weights[t - 1]` applies at step `t`.
    Fdb { weights: Option<&'a [f64]> },
    Averaging,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepDiagnostic {
    pub t: usize,
    /// `||A x - y||` after the step, when measurements are given.
    pub residual: Option<f64>,
    pub psnr: Option<f64>,
}

/// Runs the chain from `x_start` at `t_start` down to `t = 0`.
#[allow(clippy::too_many_arguments)]
pub fn run_reverse(
    x_start: &ComplexImage,
    t_start: usize,
    traj: &DegradationTrajectory,
    model: &dyn RecoveryOperator,
    rule: ReverseRule<'_>,
    dc: Option<(&ImagingSystem, &Measurement)>,
    reference: Option<&ComplexImage>,
) -> Result<(ComplexImage, Vec<StepDiagnostic>)> {
    traj.check_step(t_start)?;
    if let ReverseRule::Fdb { weights: Some(w) } = rule {
        if w.len() < t_start {
            return Err(FdbError::config(format!(
                "{} weights cannot cover {t_start} steps",
                w.len()
            )));
        }
    }
    let mut x = x_start.clone();
    let mut trace = Vec::with_capacity(t_start);
    for t in (1..=t_start).rev() {
        let x0_hat = model.recover(&x, t)?;
        x = match rule {
            ReverseRule::Fdb { weights } => fdb_reverse_step(&x, t, traj, &x0_hat, weights.map(|w| w[t - 1]))?,
            ReverseRule::Averaging => averaging_reverse_step(&x, t, &x0_hat)?,
        };
        let mut residual = None;
        if let Some((sys, y)) = dc {
            x = dc_projection(sys, &x, y)?;
            residual = Some(residual_norm(sys, &x, y)?);
        }
        if !x.is_finite() {
            return Err(FdbError::NonFinite {
                step: t,
                context: "reverse iterate".into(),
            });
        }
        let psnr = reference.map(|r| psnr(r, &x, None)).transpose()?;
        trace.push(StepDiagnostic { t: t - 1, residual, psnr });
    }
    Ok((x, trace))
}

/// Where the reverse chain takes its degradation operators from.
#[derive(Debug, Clone)]
pub enum TrajectorySource<'a> {
    /// Draw a test-time trajectory of `T_r` steps from this seed.
    Independent { seed: u64 },
    /// A stored trajectory at least `T_r` steps long.
    Fixed(&'a DegradationTrajectory),
}

#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub image: ComplexImage,
    pub t_r: usize,
    pub trace: Vec<StepDiagnostic>,
}

impl Reconstruction {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("t,residual,psnr\n");
        for d in &self.trace {
            let cell = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{}\n", d.t, cell(d.residual), cell(d.psnr)));
        }
        out
    }
}

/// Full reconstruction: start from `A^H y`, run `T_r` reverse steps with the
/// resampled weights and data consistency after each step.
#[allow(clippy::too_many_arguments)]
pub fn reconstruct(
    y: &Measurement,
    sys: &ImagingSystem,
    model: &dyn RecoveryOperator,
    source: TrajectorySource<'_>,
    schedule: Option<&CorrectionSchedule>,
    process: &ProcessConfig,
    cfg: &SamplerConfig,
    reference: Option<&ComplexImage>,
) -> Result<Reconstruction> {
    cfg.validate()?;
    process.validate()?;
    let t_r = reconstruction_steps(process.t_f, cfg.r, process.r_prime)?;
    let (h, w) = sys.shape();
    let owned;
    let traj = match source {
        TrajectorySource::Independent { seed } => {
            let grid = radius_map(h, w)?;
            let tseed = rng::derive_seed(seed, tags::TEST_TRAJECTORY, 0);
            owned = sample_trajectory(&grid, &process.with_seed(tseed), t_r)?;
            &owned
        }
        TrajectorySource::Fixed(traj) => {
            if traj.t_total() < t_r {
                return Err(FdbError::Trajectory(format!(
                    "stored trajectory has {} steps but reconstruction needs {t_r}",
                    traj.t_total()
                )));
            }
            traj
        }
    };
    let weights = match cfg.correction {
        CorrectionMode::Learned => {
            let s = schedule.ok_or_else(|| FdbError::config("learned correction needs a schedule"))?;
            if s.t_f() < process.t_f {
                return Err(FdbError::config(format!(
                    "schedule covers {} steps, T_f is {}",
                    s.t_f(),
                    process.t_f
                )));
            }
            Some(resample_w(&s.w, t_r)?)
        }
        CorrectionMode::Linear => Some(w_linear(t_r)?.w),
        CorrectionMode::None => None,
    };
    let x_start = adjoint(sys, y)?;
    let rule = match process.process_kind {
        crate::degradation::ProcessKind::FrequencyRemoval => ReverseRule::Fdb {
            weights: weights.as_deref(),
        },
        crate::degradation::ProcessKind::AveragingConstraint => ReverseRule::Averaging,
    };
    let dc = cfg.dc_every_step.then_some((sys, y));
    let (mut image, trace) = run_reverse(&x_start, t_r, traj, model, rule, dc, reference)?;
    if !cfg.dc_every_step {
        image = dc_projection(sys, &image, y)?;
    }
    Ok(Reconstruction { image, t_r, trace })
}
