//! Recovery operators `x0_hat = G(x_t, t)`, their losses and training.

mod adam;
mod checkpoint;
mod regressor;
mod train;

pub use adam::Adam;
pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointHeader};
pub use regressor::{grad_check, Architecture, TinyRegressor, PARAM_COUNT};
pub use train::{make_training_sample, train, ForwardProcess, TrainConfig, TrainOutcome, TrainingSample};

use serde::{Deserialize, Serialize};

use crate::degradation::{corrupt, DegradationTrajectory};
use crate::error::{check_shape, FdbError, Result};
use crate::grid::{apply_mask, fft, ifft, ComplexImage, FrequencyMask};

/// Predicts the clean image from a degraded state at step `t`.
pub trait RecoveryOperator: Sync {
    fn recover(&self, x_t: &ComplexImage, t: usize) -> Result<ComplexImage>;
}

impl<T: RecoveryOperator + ?Sized> RecoveryOperator for &T {
    fn recover(&self, x_t: &ComplexImage, t: usize) -> Result<ComplexImage> {
        (**self).recover(x_t, t)
    }
}

/// Returns the true clean image regardless of input.
#[derive(Debug, Clone)]
pub struct OracleRecovery {
    x0: ComplexImage,
}

impl OracleRecovery {
    pub fn new(x0: ComplexImage) -> Self {
        Self { x0 }
    }
}

impl RecoveryOperator for OracleRecovery {
    fn recover(&self, x_t: &ComplexImage, _t: usize) -> Result<ComplexImage> {
        check_shape(self.x0.shape(), x_t.shape())?;
        Ok(self.x0.clone())
    }
}

/// Passes the degraded state through unchanged.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroFill;

impl RecoveryOperator for ZeroFill {
    fn recover(&self, x_t: &ComplexImage, _t: usize) -> Result<ComplexImage> {
        Ok(x_t.clone())
    }
}

/// Always predicts zero.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroMap;

impl RecoveryOperator for ZeroMap {
    fn recover(&self, x_t: &ComplexImage, _t: usize) -> Result<ComplexImage> {
        ComplexImage::zeros(x_t.height(), x_t.width())
    }
}

pub fn oracle_recover(x_t: &ComplexImage, _t: usize, x0_true: &ComplexImage) -> Result<ComplexImage> {
    OracleRecovery::new(x0_true.clone()).recover(x_t, 0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// `||C_t (G(x_t, t) - x_0)||^2`.
    Weighted,
    /// `||G(x_t, t) - x_0||^2`.
    #[default]
    UpperBound,
}

/// Image-domain projection `IDFT(mask * DFT(x))`.
pub(crate) fn project(x: &ComplexImage, mask: &FrequencyMask) -> Result<ComplexImage> {
    Ok(ifft(&apply_mask(&fft(x), mask)?))
}

/// Mean training loss over a batch of `(x_0, trajectory, t)` draws.
pub fn fdb_loss(
    model: &dyn RecoveryOperator,
    x0: &[ComplexImage],
    trajectories: &[DegradationTrajectory],
    ts: &[usize],
    mode: LossMode,
) -> Result<f64> {
    if x0.is_empty() {
        return Err(FdbError::config("loss needs a nonempty batch"));
    }
    if trajectories.len() != x0.len() || ts.len() != x0.len() {
        return Err(FdbError::Dimension(format!(
            "batch of {} images with {} trajectories and {} steps",
            x0.len(),
            trajectories.len(),
            ts.len()
        )));
    }
    let mut total = 0.0;
    for ((img, traj), &t) in x0.iter().zip(trajectories).zip(ts) {
        let xt = corrupt(img, traj, t)?;
        let residual = (&model.recover(&xt, t)? - img)?;
        total += match mode {
            LossMode::UpperBound => residual.norm_sqr(),
            LossMode::Weighted => project(&residual, &traj.mask(t)?)?.norm_sqr(),
        };
    }
    Ok(total / x0.len() as f64)
}
