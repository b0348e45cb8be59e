//! Correction weights `w_t` for the corrected reverse step.
//!
//! The Monte-Carlo estimator evaluates
//! `w_t = (E|X_{t-1}|^2 - E|X_t|^2) / (E|X_0|^2 - E|X_t|^2)` over image and
//! trajectory draws. Because removal sets are disjoint, the same ratio equals
//! `E|X_{t-1} - X_t|^2 / E|X_0 - X_t|^2`; both are accumulated along separate
//! paths and checked against each other.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degradation::{sample_trajectory, ProcessConfig};
use crate::error::{FdbError, Result};
use crate::grid::{fft, radius_map, ComplexImage};
use crate::rng::{self, tags};

/// Maximum relative gap tolerated between the two forms of the estimator.
pub const IDENTITY_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    MonteCarlo,
    PowerLaw,
    Linear,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrectionSchedule {
    /// `w[t - 1]` is the weight of step `t`.
    pub w: Vec<f64>,
    pub provenance: Provenance,
    pub mc_samples: usize,
    /// Mean kept-energy fraction `|X_t|^2 / |X_0|^2` per step, when estimated.
    pub energy_fraction: Option<Vec<f64>>,
    /// Largest relative gap between the two estimator forms.
    pub identity_gap: Option<f64>,
}

/// Schedule file metadata stored next to the `t,w` CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleMetadata {
    pub provenance: Provenance,
    pub mc_samples: usize,
    #[serde(rename = "R_prime")]
    pub r_prime: Option<f64>,
    #[serde(rename = "T_f")]
    pub t_f: usize,
    pub seed: Option<u64>,
}

impl CorrectionSchedule {
    pub fn t_f(&self) -> usize {
        self.w.len()
    }

    pub fn weight(&self, t: usize) -> f64 {
        self.w[t - 1]
    }

    /// Steps `t > 1` where `w_t` exceeds `w_{t-1}` by more than `tol`.
    pub fn monotonicity_violations(&self, tol: f64) -> Vec<usize> {
        self.w
            .windows(2)
            .enumerate()
            .filter(|(_, p)| p[1] > p[0] + tol)
            .map(|(i, _)| i + 2)
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,w\n");
        for (i, w) in self.w.iter().enumerate() {
            out.push_str(&format!("{},{w}\n", i + 1));
        }
        out
    }

    /// Parses a `t,w` CSV; rows must be numbered `1..=T` in order.
    pub fn from_csv(text: &str, provenance: Provenance) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("t,w") {
            return Err(FdbError::Format("schedule CSV must start with header t,w".into()));
        }
        let mut w = Vec::new();
        for (i, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
            let (t, v) = line
                .split_once(',')
                .ok_or_else(|| FdbError::Format(format!("bad schedule row {line:?}")))?;
            let t: usize = t.trim().parse().map_err(|_| FdbError::Format(format!("bad step {t:?}")))?;
            if t != i + 1 {
                return Err(FdbError::Format(format!("expected step {}, found {t}", i + 1)));
            }
            let v: f64 = v.trim().parse().map_err(|_| FdbError::Format(format!("bad weight {v:?}")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(FdbError::Format(format!("weight {v} at step {t} outside [0, 1]")));
            }
            w.push(v);
        }
        if w.is_empty() {
            return Err(FdbError::Format("schedule CSV has no rows".into()));
        }
        Ok(Self {
            w,
            provenance,
            mc_samples: 0,
            energy_fraction: None,
            identity_gap: None,
        })
    }

    pub fn metadata(&self, r_prime: Option<f64>, seed: Option<u64>) -> ScheduleMetadata {
        ScheduleMetadata {
            provenance: self.provenance,
            mc_samples: self.mc_samples,
            r_prime,
            t_f: self.t_f(),
            seed,
        }
    }
}

fn analytic(w: Vec<f64>, provenance: Provenance) -> CorrectionSchedule {
    CorrectionSchedule {
        w,
        provenance,
        mc_samples: 0,
        energy_fraction: None,
        identity_gap: None,
    }
}

/// Closed form for spectra whose energy decays as `1/r^k`:
/// `w_t = (T - t + 1)^-k / sum_{i = T-t+1}^{T} i^-k`.
pub fn w_power_law(t_total: usize, k: f64) -> Result<CorrectionSchedule> {
    if t_total == 0 || !(k >= 0.0) {
        return Err(FdbError::config(format!("power law needs T >= 1 and k >= 0, got T = {t_total}, k = {k}")));
    }
    let w = (1..=t_total)
        .map(|t| {
            let lo = t_total - t + 1;
            let head = (lo as f64).powf(-k);
            let sum: f64 = (lo..=t_total).map(|i| (i as f64).powf(-k)).sum();
            head / sum
        })
        .collect();
    Ok(analytic(w, Provenance::PowerLaw))
}

/// `w_t = 1 - (t - 1) / (T - 1)`.
pub fn w_linear(t_total: usize) -> Result<CorrectionSchedule> {
    if t_total == 0 {
        return Err(FdbError::config("linear schedule needs T >= 1"));
    }
    if t_total == 1 {
        return Ok(analytic(vec![1.0], Provenance::Linear));
    }
    let w = (1..=t_total)
        .map(|t| 1.0 - (t - 1) as f64 / (t_total - 1) as f64)
        .collect();
    Ok(analytic(w, Provenance::Linear))
}

pub fn w_constant(t_total: usize, value: f64) -> Result<CorrectionSchedule> {
    if t_total == 0 || !(0.0..=1.0).contains(&value) {
        return Err(FdbError::config(format!("constant schedule needs T >= 1 and w in [0, 1], got {value}")));
    }
    Ok(analytic(vec![value; t_total], Provenance::Constant))
}

/// Linear interpolation of `w_1..w_T` onto `t_r` evenly spaced steps with
/// both endpoints kept exactly.
pub fn resample_w(w: &[f64], t_r: usize) -> Result<Vec<f64>> {
    if w.is_empty() {
        return Err(FdbError::config("cannot resample an empty schedule"));
    }
    if t_r == 0 {
        return Err(FdbError::config("resampled length must be at least 1"));
    }
    if t_r == 1 || w.len() == 1 {
        return Ok(vec![w[0]; t_r]);
    }
    let span = w.len() - 1;
    let den = t_r - 1;
    Ok((0..t_r)
        .map(|i| {
            // Source position i * span / den, split exactly into integer and fraction.
            let num = i * span;
            let (lo, rem) = (num / den, num % den);
            if rem == 0 {
                w[lo]
            } else {
                let f = rem as f64 / den as f64;
                w[lo] * (1.0 - f) + w[lo + 1] * f
            }
        })
        .collect())
}

/// Per-draw energies: kept energy after each step, and energy removed at
/// each step.
struct DrawEnergies {
    kept: Vec<f64>,
    removed: Vec<f64>,
}

fn draw_energies(power: &[f64], grid: &crate::grid::KSpaceGrid, cfg: &ProcessConfig) -> Result<DrawEnergies> {
    let traj = sample_trajectory(grid, cfg, cfg.t_f)?;
    let t_f = cfg.t_f;
    // Kept path: bucket energy by removal step, then suffix sums.
    let mut by_step = vec![0.0; t_f + 1];
    let mut never = 0.0;
    for (&s, &p) in traj.removal_step().iter().zip(power) {
        if s == 0 {
            never += p;
        } else {
            by_step[s as usize] += p;
        }
    }
    let mut kept = vec![0.0; t_f + 1];
    let mut acc = never;
    for t in (0..=t_f).rev() {
        kept[t] = acc;
        acc += by_step[t];
    }
    // Removed path: sum over the removal sets directly.
    let removed = traj
        .sets()
        .iter()
        .map(|set| set.iter().map(|&k| power[k]).sum())
        .collect();
    Ok(DrawEnergies { kept, removed })
}

// Pairwise reduction keeps the result independent of thread count.
fn pairwise_sum(rows: &[Vec<f64>]) -> Vec<f64> {
    match rows.len() {
        0 => Vec::new(),
        1 => rows[0].clone(),
        n => {
            let (a, b) = rows.split_at(n / 2);
            let mut left = pairwise_sum(a);
            for (x, y) in left.iter_mut().zip(pairwise_sum(b)) {
                *x += y;
            }
            left
        }
    }
}

/// Monte-Carlo estimate over `mc_samples` draws; draw `i` pairs image
/// `i mod len` with a fresh trajectory.
pub fn estimate_w(
    dataset: &[ComplexImage],
    cfg: &ProcessConfig,
    mc_samples: usize,
    seed: u64,
) -> Result<CorrectionSchedule> {
    cfg.validate()?;
    if dataset.is_empty() || mc_samples == 0 {
        return Err(FdbError::config("estimate_w needs a nonempty dataset and mc_samples >= 1"));
    }
    let (h, w) = dataset[0].shape();
    let grid = radius_map(h, w)?;
    let powers: Vec<Vec<f64>> = dataset
        .iter()
        .map(|x| {
            crate::error::check_shape((h, w), x.shape())?;
            Ok(fft(x).data().iter().map(|c| c.norm_sqr()).collect())
        })
        .collect::<Result<_>>()?;
    let t_f = cfg.t_f;
    let draws: Vec<DrawEnergies> = (0..mc_samples)
        .into_par_iter()
        .map(|i| {
            let draw_cfg = cfg.with_seed(rng::derive_seed(seed, tags::MONTE_CARLO, i as u64));
            draw_energies(&powers[i % powers.len()], &grid, &draw_cfg)
        })
        .collect::<Result<_>>()?;
    let kept: Vec<Vec<f64>> = draws.iter().map(|d| d.kept.clone()).collect();
    let removed: Vec<Vec<f64>> = draws.into_iter().map(|d| d.removed).collect();
    let kept = pairwise_sum(&kept);
    let removed = pairwise_sum(&removed);

    let mut weights = Vec::with_capacity(t_f);
    let mut gap: f64 = 0.0;
    let mut cumulative = 0.0;
    for t in 1..=t_f {
        let num = kept[t - 1] - kept[t];
        let den = kept[0] - kept[t];
        cumulative += removed[t - 1];
        if !(den > 0.0) || !(cumulative > 0.0) {
            return Err(FdbError::Schedule {
                t,
                reason: "no energy removed by this step".into(),
            });
        }
        let ratio = num / den;
        let alt = removed[t - 1] / cumulative;
        let scale = ratio.abs().max(alt.abs()).max(f64::MIN_POSITIVE);
        gap = gap.max((ratio - alt).abs() / scale);
        weights.push(ratio.clamp(0.0, 1.0));
    }
    if gap > IDENTITY_TOL {
        return Err(FdbError::Schedule {
            t: 0,
            reason: format!("energy identity violated: relative gap {gap:e}"),
        });
    }
    let energy_fraction = (1..=t_f).map(|t| kept[t] / kept[0]).collect();
    Ok(CorrectionSchedule {
        w: weights,
        provenance: Provenance::MonteCarlo,
        mc_samples,
        energy_fraction: Some(energy_fraction),
        identity_gap: Some(gap),
    })
}
