//! Gaussian diffusion baseline: noise schedule, closed-form forward
//! sampling, and a reverse sampler interleaved with data consistency.

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{FdbError, Result};
use crate::grid::ComplexImage;
use crate::imaging::{dc_projection, ImagingSystem, Measurement};
use crate::recovery::RecoveryOperator;
use crate::rng::{self, tags, StreamRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdpmSchedule {
    /// `beta[t - 1]` is the noise variance of step `t`.
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub gamma_bar: Vec<f64>,
}

impl DdpmSchedule {
    /// `beta_t = beta_min / T * (beta_max / beta_min)^((t - 1) / (T - 1))`.
    pub fn new(t: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if t == 0 {
            return Err(FdbError::config("DDPM schedule needs T >= 1"));
        }
        if !(beta_min > 0.0 && beta_min < beta_max) || !beta_max.is_finite() {
            return Err(FdbError::config(format!(
                "need 0 < beta_min < beta_max, got ({beta_min}, {beta_max})"
            )));
        }
        let ratio = beta_max / beta_min;
        let mut beta = Vec::with_capacity(t);
        for step in 1..=t {
            let frac = if t == 1 { 0.0 } else { (step - 1) as f64 / (t - 1) as f64 };
            let b = beta_min / t as f64 * ratio.powf(frac);
            if !(b > 0.0 && b < 1.0) {
                return Err(FdbError::Schedule {
                    t: step,
                    reason: format!("beta = {b} is outside (0, 1); increase T"),
                });
            }
            beta.push(b);
        }
        let gamma: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let gamma_bar = gamma
            .iter()
            .scan(1.0, |acc, g| {
                *acc *= g;
                Some(*acc)
            })
            .collect();
        Ok(Self { beta, gamma, gamma_bar })
    }

    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    /// `gamma_bar` at step `t`, with `gamma_bar(0) = 1`.
    pub fn gamma_bar_at(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.gamma_bar[t - 1]
        }
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(FdbError::config(format!("step {t} outside 1..={}", self.len())));
        }
        Ok(())
    }
}

pub fn ddpm_schedule(t: usize, beta_min: f64, beta_max: f64) -> Result<DdpmSchedule> {
    DdpmSchedule::new(t, beta_min, beta_max)
}

fn gaussian_image(h: usize, w: usize, rng: &mut StreamRng) -> ComplexImage {
    let mut next = || -> f64 { StandardNormal.sample(rng) };
    ComplexImage::from_fn(h, w, |_, _| Complex64::new(next(), next())).expect("nonzero dims")
}

/// `sqrt(gamma_bar_t) x_0 + sqrt(1 - gamma_bar_t) z` with unit-variance
/// noise in each real channel.
pub fn ddpm_forward_sample(x0: &ComplexImage, t: usize, schedule: &DdpmSchedule, seed: u64) -> Result<ComplexImage> {
    schedule.check_step(t)?;
    let gb = schedule.gamma_bar_at(t);
    let mut rng = rng::stream(seed, 0);
    let z = gaussian_image(x0.height(), x0.width(), &mut rng);
    x0.zip_with(&z, |a, b| a * gb.sqrt() + b * (1.0 - gb).sqrt())
}

/// Coefficients `(c_x0, c_xt, sigma)` of the posterior
/// `x_{t-1} = c_x0 x_0 + c_xt x_t + sigma z`.
pub fn posterior_coefficients(schedule: &DdpmSchedule, t: usize) -> Result<(f64, f64, f64)> {
    schedule.check_step(t)?;
    let beta = schedule.beta[t - 1];
    let gamma = schedule.gamma[t - 1];
    let gb = schedule.gamma_bar_at(t);
    let gb_prev = schedule.gamma_bar_at(t - 1);
    let c_x0 = gb_prev.sqrt() * beta / (1.0 - gb);
    let c_xt = gamma.sqrt() * (1.0 - gb_prev) / (1.0 - gb);
    let var = beta * (1.0 - gb_prev) / (1.0 - gb);
    Ok((c_x0, c_xt, var.max(0.0).sqrt()))
}

/// Reverse diffusion from unit Gaussian noise, projecting onto the
/// measurements after every step.
pub fn ddpm_reconstruct(
    y: &Measurement,
    sys: &ImagingSystem,
    model: &dyn RecoveryOperator,
    schedule: &DdpmSchedule,
    seed: u64,
) -> Result<ComplexImage> {
    let (h, w) = sys.shape();
    let mut x = gaussian_image(h, w, &mut rng::stream(rng::derive_seed(seed, tags::DDPM, 0), 0));
    for t in (1..=schedule.len()).rev() {
        let x0_hat = model.recover(&x, t)?;
        let (c_x0, c_xt, sigma) = posterior_coefficients(schedule, t)?;
        let mut next = x0_hat.zip_with(&x, |a, b| a * c_x0 + b * c_xt)?;
        if sigma > 0.0 {
            let mut rng = rng::stream(rng::derive_seed(seed, tags::DDPM, t as u64), 0);
            let z = gaussian_image(h, w, &mut rng);
            next = next.zip_with(&z, |a, b| a + b * sigma)?;
        }
        x = dc_projection(sys, &next, y)?;
        if !x.is_finite() {
            return Err(FdbError::NonFinite {
                step: t,
                context: "DDPM reverse iterate".into(),
            });
        }
    }
    Ok(x)
}
