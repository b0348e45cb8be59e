//! Stochastic frequency-removal forward process.
//!
//! At step `t` a set `S_t` of components is drawn uniformly from the
//! components that are still present, are not DC, and lie outside the radius
//! threshold `r_t`. The cumulative mask after step `t` keeps every component
//! not removed in steps `1..=t`, and the image-domain corruption is
//! `x_t = IDFT(mask_t * DFT(x_0))`.

use serde::{Deserialize, Serialize};

use crate::error::{check_shape, FdbError, Result};
use crate::grid::{apply_mask, fft, ifft, ComplexImage, FrequencyMask, KSpaceGrid};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    /// Only components beyond the scheduled radius threshold are eligible.
    #[default]
    RadiusScheduled,
    /// Every remaining component is eligible.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StepCountSchedule {
    #[default]
    Constant,
    /// Per-step counts proportional to `ln(1 + t)` over `1..=T_f`.
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    #[default]
    FrequencyRemoval,
    /// Intermediate samples are a linear blend of the clean image and the
    /// start point.
    AveragingConstraint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessConfig {
    #[serde(rename = "R_prime")]
    pub r_prime: f64,
    #[serde(rename = "T_f")]
    pub t_f: usize,
    #[serde(default)]
    pub density: Density,
    #[serde(default)]
    pub step_count_schedule: StepCountSchedule,
    #[serde(default)]
    pub process_kind: ProcessKind,
    #[serde(default)]
    pub seed: u64,
}

impl ProcessConfig {
    pub fn new(r_prime: f64, t_f: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            r_prime,
            t_f,
            density: Density::RadiusScheduled,
            step_count_schedule: StepCountSchedule::Constant,
            process_kind: ProcessKind::FrequencyRemoval,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r_prime > 1.0) || !self.r_prime.is_finite() {
            return Err(FdbError::config(format!(
                "R' must be a finite value > 1, got {}",
                self.r_prime
            )));
        }
        if self.t_f == 0 {
            return Err(FdbError::config("T_f must be at least 1"));
        }
        Ok(())
    }
}

/// Radius threshold `r_max * (1 - (1 - R'^(-1/2)) * t / T_f)`, clamped at 0.
///
/// Decreases from `r_max` at `t = 0` to `r_max / sqrt(R')` at `t = T_f` and
/// continues linearly past `T_f`.
pub fn radius_threshold(t: usize, t_f: usize, r_prime: f64, r_max: f64) -> Result<f64> {
    if !(r_prime > 1.0) {
        return Err(FdbError::config(format!("R' must be > 1, got {r_prime}")));
    }
    if t_f == 0 {
        return Err(FdbError::config("T_f must be at least 1"));
    }
    let slope = 1.0 - r_prime.powf(-0.5);
    Ok((r_max * (1.0 - slope * t as f64 / t_f as f64)).max(0.0))
}

// Guards floor() against products like 63.99999999 that are integers in exact arithmetic.
pub(crate) fn floor_exact(x: f64) -> usize {
    (x + 1e-9 * x.abs().max(1.0)).floor() as usize
}

/// `floor(N_K (R' - 1) / (R' T_f))`.
pub fn per_step_count(n_k: usize, r_prime: f64, t_f: usize) -> Result<usize> {
    if n_k == 0 {
        return Err(FdbError::config("grid has no components"));
    }
    if !(r_prime > 1.0) || t_f == 0 {
        return Err(FdbError::config(format!(
            "invalid process parameters R' = {r_prime}, T_f = {t_f}"
        )));
    }
    let n = floor_exact(n_k as f64 * (r_prime - 1.0) / (r_prime * t_f as f64));
    if n == 0 {
        return Err(FdbError::config(format!(
            "T_f = {t_f} removes zero components per step on a grid of {n_k}; use a smaller T_f"
        )));
    }
    Ok(n)
}

/// Total number of components removed by step `T_f`: `floor(N_K (R' - 1) / R')`.
pub fn removal_target(n_k: usize, r_prime: f64) -> usize {
    floor_exact(n_k as f64 * (r_prime - 1.0) / r_prime)
}

/// Per-step removal counts for `t = 1..=t_total`.
///
/// Steps up to `T_f` remove exactly `removal_target` components in total (the
/// last of them absorbs any remainder); steps past `T_f` remove `n` each.
pub fn step_counts(n_k: usize, cfg: &ProcessConfig, t_total: usize) -> Result<Vec<usize>> {
    cfg.validate()?;
    let n = per_step_count(n_k, cfg.r_prime, cfg.t_f)?;
    let target = removal_target(n_k, cfg.r_prime).max(n * cfg.t_f);
    let mut counts = match cfg.step_count_schedule {
        StepCountSchedule::Constant => {
            let mut c = vec![n; cfg.t_f];
            c[cfg.t_f - 1] += target - n * cfg.t_f;
            c
        }
        StepCountSchedule::Log => log_counts(target, cfg.t_f),
    };
    if t_total > cfg.t_f {
        counts.extend(std::iter::repeat_n(n, t_total - cfg.t_f));
    } else {
        counts.truncate(t_total);
    }
    Ok(counts)
}

// Largest-remainder apportionment of `total` with weights ln(1 + t), at least one per step.
fn log_counts(total: usize, t_f: usize) -> Vec<usize> {
    let weights: Vec<f64> = (1..=t_f).map(|t| (1.0 + t as f64).ln()).collect();
    let wsum: f64 = weights.iter().sum();
    let spare = total - t_f;
    let raw: Vec<f64> = weights.iter().map(|w| spare as f64 * w / wsum).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| 1 + r.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..t_f).collect();
    order.sort_by(|&a, &b| {
        let fa = raw[a] - raw[a].floor();
        let fb = raw[b] - raw[b].floor();
        fb.total_cmp(&fa).then(a.cmp(&b))
    });
    for &idx in order.iter().take(total - assigned) {
        counts[idx] += 1;
    }
    counts
}

/// One realization of the forward process.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradationTrajectory {
    height: usize,
    width: usize,
    t_f: usize,
    t_total: usize,
    n: usize,
    seed: u64,
    r_prime: f64,
    density: Density,
    sets: Vec<Vec<usize>>,
    /// Step at which each component is removed; 0 means never.
    removal_step: Vec<u32>,
    thresholds: Vec<f64>,
    relaxed: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryManifest {
    pub seed: u64,
    #[serde(rename = "R_prime")]
    pub r_prime: f64,
    #[serde(rename = "T_f")]
    pub t_f: usize,
    #[serde(rename = "T_total")]
    pub t_total: usize,
    pub n: usize,
    pub density: Density,
    pub per_step_counts: Vec<usize>,
    pub relaxed_steps: usize,
}

impl DegradationTrajectory {
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn t_f(&self) -> usize {
        self.t_f
    }

    pub fn t_total(&self) -> usize {
        self.t_total
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Removal set `S_t`, `1 <= t <= T_total`.
    pub fn set(&self, t: usize) -> &[usize] {
        &self.sets[t - 1]
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    /// Threshold actually used at step `t` (lowered when relaxation fired).
    pub fn threshold(&self, t: usize) -> f64 {
        self.thresholds[t - 1]
    }

    pub fn relaxed(&self, t: usize) -> bool {
        self.relaxed[t - 1]
    }

    pub fn relaxation_count(&self) -> usize {
        self.relaxed.iter().filter(|&&r| r).count()
    }

    pub fn removal_step(&self) -> &[u32] {
        &self.removal_step
    }

    pub fn removed_count(&self, t: usize) -> usize {
        self.sets[..t].iter().map(Vec::len).sum()
    }

    /// Cumulative mask after `t` steps; `t = 0` keeps everything.
    pub fn mask(&self, t: usize) -> Result<FrequencyMask> {
        self.check_step(t)?;
        let keep = self
            .removal_step
            .iter()
            .map(|&s| s == 0 || s as usize > t)
            .collect();
        FrequencyMask::from_vec(self.height, self.width, keep)
    }

    pub fn cumulative_masks(&self) -> impl Iterator<Item = FrequencyMask> + '_ {
        (0..=self.t_total).map(move |t| self.mask(t).expect("step in range"))
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t > self.t_total {
            return Err(FdbError::Trajectory(format!(
                "step {t} outside trajectory of {} steps",
                self.t_total
            )));
        }
        Ok(())
    }

    pub fn manifest(&self) -> TrajectoryManifest {
        TrajectoryManifest {
            seed: self.seed,
            r_prime: self.r_prime,
            t_f: self.t_f,
            t_total: self.t_total,
            n: self.n,
            density: self.density,
            per_step_counts: self.sets.iter().map(Vec::len).collect(),
            relaxed_steps: self.relaxation_count(),
        }
    }

    /// Verifies disjointness, monotone shrinkage and the radius discipline
    /// against `grid`.
    pub fn check_invariants(&self, grid: &KSpaceGrid) -> Result<()> {
        check_shape(grid.shape(), self.shape())?;
        let mut seen = vec![0u32; grid.len()];
        for (idx, set) in self.sets.iter().enumerate() {
            let t = idx + 1;
            for &k in set {
                if seen[k] != 0 {
                    return Err(FdbError::Trajectory(format!(
                        "component {k} removed at steps {} and {t}",
                        seen[k]
                    )));
                }
                if k == grid.dc_index() {
                    return Err(FdbError::Trajectory(format!("DC removed at step {t}")));
                }
                if self.density == Density::RadiusScheduled && grid.radius()[k] <= self.thresholds[idx] {
                    return Err(FdbError::Trajectory(format!(
                        "component {k} at radius {} not beyond threshold {} at step {t}",
                        grid.radius()[k],
                        self.thresholds[idx]
                    )));
                }
                seen[k] = t as u32;
            }
        }
        if seen != self.removal_step {
            return Err(FdbError::Trajectory("removal map disagrees with sets".into()));
        }
        Ok(())
    }
}

/// Draws a trajectory of `t_total` steps on `grid`.
pub fn sample_trajectory(
    grid: &KSpaceGrid,
    cfg: &ProcessConfig,
    t_total: usize,
) -> Result<DegradationTrajectory> {
    cfg.validate()?;
    if t_total < 1 {
        return Err(FdbError::config("trajectory needs at least one step"));
    }
    let n_k = grid.len();
    let n = per_step_count(n_k, cfg.r_prime, cfg.t_f)?;
    let counts = step_counts(n_k, cfg, t_total)?;
    let total: usize = counts.iter().sum();
    if total > n_k - 1 {
        return Err(FdbError::Trajectory(format!(
            "{total} removals over {t_total} steps exceed the {} removable components",
            n_k - 1
        )));
    }

    let radius = grid.radius();
    let dc = grid.dc_index();
    // Remaining components in ascending radius order: eligible sets are suffixes.
    let mut remaining: Vec<usize> = (0..n_k).filter(|&k| k != dc).collect();
    remaining.sort_by(|&a, &b| radius[a].total_cmp(&radius[b]).then(a.cmp(&b)));

    let mut sets = Vec::with_capacity(t_total);
    let mut thresholds = Vec::with_capacity(t_total);
    let mut relaxed = Vec::with_capacity(t_total);
    let mut removal_step = vec![0u32; n_k];

    for (idx, &count) in counts.iter().enumerate() {
        let t = idx + 1;
        let mut rng = rng::stream(cfg.seed, t as u64);
        let (mut start, mut threshold) = match cfg.density {
            Density::RadiusScheduled => {
                let thr = radius_threshold(t, cfg.t_f, cfg.r_prime, grid.r_max())?;
                (remaining.partition_point(|&k| radius[k] <= thr), thr)
            }
            Density::Uniform => (0, f64::NEG_INFINITY),
        };
        let mut fired = false;
        if remaining.len() - start < count {
            if remaining.len() < count {
                return Err(FdbError::Trajectory(format!(
                    "step {t} needs {count} components but only {} remain",
                    remaining.len()
                )));
            }
            // Lower the threshold just enough to make `count` components eligible.
            let v = radius[remaining[remaining.len() - count]];
            start = remaining.partition_point(|&k| radius[k] < v);
            threshold = if start > 0 { radius[remaining[start - 1]] } else { 0.0 };
            fired = true;
        }
        let eligible = remaining.len() - start;
        let mut picks: Vec<usize> = rand::seq::index::sample(&mut rng, eligible, count)
            .into_iter()
            .map(|p| start + p)
            .collect();
        picks.sort_unstable();
        if picks.is_empty() {
            sets.push(Vec::new());
            thresholds.push(threshold);
            relaxed.push(fired);
            continue;
        }
        let set: Vec<usize> = picks.iter().map(|&p| remaining[p]).collect();
        for &k in &set {
            removal_step[k] = t as u32;
        }
        // Compact the suffix in place, preserving radius order.
        let mut write = picks[0];
        let mut next_pick = 0;
        for read in picks[0]..remaining.len() {
            if next_pick < picks.len() && picks[next_pick] == read {
                next_pick += 1;
                continue;
            }
            remaining[write] = remaining[read];
            write += 1;
        }
        remaining.truncate(write);

        sets.push(set);
        thresholds.push(threshold);
        relaxed.push(fired);
    }

    let traj = DegradationTrajectory {
        height: grid.height(),
        width: grid.width(),
        t_f: cfg.t_f,
        t_total,
        n,
        seed: cfg.seed,
        r_prime: cfg.r_prime,
        density: cfg.density,
        sets,
        removal_step,
        thresholds,
        relaxed,
    };
    traj.check_invariants(grid)?;
    Ok(traj)
}

/// `C_t x_0`: forward DFT, cumulative mask, inverse DFT. `t = 0` is the identity.
pub fn corrupt(x0: &ComplexImage, traj: &DegradationTrajectory, t: usize) -> Result<ComplexImage> {
    check_shape(traj.shape(), x0.shape())?;
    traj.check_step(t)?;
    if t == 0 {
        return Ok(x0.clone());
    }
    let masked = apply_mask(&fft(x0), &traj.mask(t)?)?;
    Ok(ifft(&masked))
}

/// `(1 - t/T_f) x_0 + (t/T_f) x_start`.
pub fn averaging_corrupt(
    x0: &ComplexImage,
    x_start: &ComplexImage,
    t: usize,
    t_f: usize,
) -> Result<ComplexImage> {
    if t_f == 0 {
        return Err(FdbError::config("T_f must be at least 1"));
    }
    let a = t as f64 / t_f as f64;
    x0.zip_with(x_start, |c0, cs| c0 * (1.0 - a) + cs * a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::radius_map;
    use num_complex::Complex64;

    fn cfg(r_prime: f64, t_f: usize, seed: u64) -> ProcessConfig {
        ProcessConfig::new(r_prime, t_f, seed).unwrap()
    }

    #[test]
    fn threshold_schedule() {
        let r_max = 10.0;
        assert_eq!(radius_threshold(0, 64, 4.0, r_max).unwrap(), r_max);
        assert!((radius_threshold(64, 64, 4.0, r_max).unwrap() - 5.0).abs() < 1e-12);
        assert!((radius_threshold(32, 64, 4.0, r_max).unwrap() - 7.5).abs() < 1e-12);
        assert_eq!(radius_threshold(1000, 64, 4.0, r_max).unwrap(), 0.0);
        assert!(radius_threshold(1, 64, 1.0, r_max).is_err());
        let mut prev = f64::INFINITY;
        for t in 0..200 {
            let r = radius_threshold(t, 64, 2.0, r_max).unwrap();
            assert!(r <= prev);
            prev = r;
        }
    }

    #[test]
    fn per_step_count_examples() {
        assert_eq!(per_step_count(65536, 2.0, 1000).unwrap(), 32);
        assert_eq!(per_step_count(4096, 2.0, 64).unwrap(), 32);
        assert_eq!(per_step_count(4096, 4.0, 48).unwrap(), 64);
        assert!(matches!(per_step_count(16, 2.0, 100), Err(FdbError::Config(_))));
    }

    #[test]
    fn final_step_absorbs_remainder() {
        let c = cfg(2.0, 1000, 0);
        let counts = step_counts(65536, &c, 1000).unwrap();
        assert!(counts[..999].iter().all(|&x| x == 32));
        assert_eq!(counts.iter().sum::<usize>(), 32768);
        let ext = step_counts(65536, &c, 1200).unwrap();
        assert!(ext[1000..].iter().all(|&x| x == 32));
    }

    #[test]
    fn log_schedule_totals_and_grows() {
        let mut c = cfg(2.0, 64, 0);
        c.step_count_schedule = StepCountSchedule::Log;
        let counts = step_counts(4096, &c, 64).unwrap();
        assert_eq!(counts.iter().sum::<usize>(), 2048);
        assert!(counts[0] < counts[63]);
        assert!(counts.iter().all(|&x| x >= 1));
    }

    #[test]
    fn trajectory_reaches_start_degradation() {
        let grid = radius_map(64, 64).unwrap();
        let traj = sample_trajectory(&grid, &cfg(2.0, 64, 9), 64).unwrap();
        assert_eq!(traj.mask(64).unwrap().kept_fraction(), 0.5);
        assert_eq!(traj.mask(0).unwrap().kept_count(), 4096);
        assert!(traj.mask(64).unwrap().is_kept(grid.dc_index()));
    }

    #[test]
    fn trajectory_is_deterministic() {
        let grid = radius_map(32, 32).unwrap();
        let a = sample_trajectory(&grid, &cfg(2.0, 16, 5), 16).unwrap();
        let b = sample_trajectory(&grid, &cfg(2.0, 16, 5), 16).unwrap();
        let c = sample_trajectory(&grid, &cfg(2.0, 16, 6), 16).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.sets(), c.sets());
    }

    #[test]
    fn small_grid_singleton_steps() {
        let grid = radius_map(8, 8).unwrap();
        let c = cfg(2.0, 32, 3);
        assert_eq!(per_step_count(64, c.r_prime, c.t_f).unwrap(), 1);
        let traj = sample_trajectory(&grid, &c, 4).unwrap();
        for t in 1..=4 {
            assert_eq!(traj.set(t).len(), 1);
        }
        assert_eq!(traj.mask(4).unwrap().kept_count(), 60);
    }

    #[test]
    fn monotone_masks() {
        let grid = radius_map(16, 16).unwrap();
        let traj = sample_trajectory(&grid, &cfg(2.0, 8, 1), 12).unwrap();
        let masks: Vec<_> = traj.cumulative_masks().collect();
        for t in 1..masks.len() {
            assert!(masks[t].is_subset_of(&masks[t - 1]));
            assert_eq!(masks[t - 1].kept_count() - masks[t].kept_count(), traj.set(t).len());
        }
    }

    #[test]
    fn infeasible_horizon_is_rejected() {
        let grid = radius_map(8, 8).unwrap();
        assert!(matches!(
            sample_trajectory(&grid, &cfg(2.0, 4, 0), 9),
            Err(FdbError::Trajectory(_))
        ));
    }

    #[test]
    fn corruption_properties() {
        let grid = radius_map(16, 16).unwrap();
        let traj = sample_trajectory(&grid, &cfg(2.0, 8, 2), 8).unwrap();
        let x0 = ComplexImage::from_fn(16, 16, |i, j| Complex64::new((i * j) as f64 % 7.0, i as f64 * 0.1)).unwrap();
        assert_eq!(corrupt(&x0, &traj, 0).unwrap(), x0);
        for t in 1..=8 {
            let xt = corrupt(&x0, &traj, t).unwrap();
            assert!(xt.norm() <= x0.norm());
            let again = corrupt(&xt, &traj, t).unwrap();
            assert!(again.relative_error(&xt).unwrap() < 1e-12);
        }
        assert!(corrupt(&x0, &traj, 9).is_err());
    }

    #[test]
    fn averaging_blend() {
        let a = ComplexImage::from_real(2, 2, &[0.0, 1.0, 2.0, 3.0]).unwrap();
        let b = ComplexImage::from_real(2, 2, &[4.0, 4.0, 4.0, 4.0]).unwrap();
        assert_eq!(averaging_corrupt(&a, &b, 0, 10).unwrap(), a);
        assert_eq!(averaging_corrupt(&a, &b, 10, 10).unwrap(), b);
        let mid = averaging_corrupt(&a, &b, 5, 10).unwrap();
        assert_eq!(mid.get(0, 1).re, 2.5);
        assert!(averaging_corrupt(&a, &ComplexImage::zeros(3, 2).unwrap(), 1, 2).is_err());
    }
}
