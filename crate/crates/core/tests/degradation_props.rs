//! Invariants of sampled trajectories and the degradation operator.

use num_complex::Complex64;
use proptest::prelude::*;

use fdb::degradation::{
    corrupt, per_step_count, removal_target, sample_trajectory, Density, ProcessConfig, StepCountSchedule,
};
use fdb::grid::{fft, radius_map, ComplexImage};

fn image(h: usize, w: usize, seed: u64) -> ComplexImage {
    ComplexImage::from_fn(h, w, |i, j| {
        let a = ((i * 7 + j * 13) as u64 ^ seed) % 17;
        Complex64::new(a as f64 / 17.0 - 0.4, ((i + 2 * j) as f64 + seed as f64).sin())
    })
    .unwrap()
}

fn process(r_prime: f64, t_f: usize, seed: u64, density: Density, log: bool) -> ProcessConfig {
    let mut cfg = ProcessConfig::new(r_prime, t_f, seed).unwrap();
    cfg.density = density;
    if log {
        cfg.step_count_schedule = StepCountSchedule::Log;
    }
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trajectories_are_nested_and_spare_dc(
        h in 8usize..24,
        w in 8usize..24,
        r_prime in prop_oneof![Just(2.0), Just(3.0), Just(4.0)],
        t_f in 2usize..8,
        seed in any::<u64>(),
        uniform in any::<bool>(),
        log in any::<bool>(),
    ) {
        let grid = radius_map(h, w).unwrap();
        let density = if uniform { Density::Uniform } else { Density::RadiusScheduled };
        let cfg = process(r_prime, t_f, seed, density, log);
        prop_assume!(per_step_count(grid.len(), r_prime, t_f).is_ok());
        let traj = sample_trajectory(&grid, &cfg, t_f).unwrap();

        let mut previous = traj.mask(0).unwrap();
        prop_assert_eq!(previous.kept_count(), grid.len());
        for t in 1..=t_f {
            let mask = traj.mask(t).unwrap();
            prop_assert!(mask.is_subset_of(&previous));
            prop_assert!(mask.is_kept(grid.dc_index()));
            prop_assert_eq!(previous.kept_count() - mask.kept_count(), traj.set(t).len());
            previous = mask;
        }
        if !log {
            prop_assert_eq!(traj.removed_count(t_f), removal_target(grid.len(), r_prime));
        }
    }

    #[test]
    fn same_seed_same_trajectory(seed in any::<u64>(), t_f in 2usize..6) {
        let grid = radius_map(16, 16).unwrap();
        let cfg = process(2.0, t_f, seed, Density::RadiusScheduled, false);
        let a = sample_trajectory(&grid, &cfg, t_f).unwrap();
        let b = sample_trajectory(&grid, &cfg, t_f).unwrap();
        prop_assert_eq!(a.removal_step(), b.removal_step());
    }

    #[test]
    fn corruption_splits_energy(seed in any::<u64>(), t in 0usize..=8) {
        let grid = radius_map(16, 12).unwrap();
        let cfg = process(2.0, 8, seed, Density::RadiusScheduled, false);
        let traj = sample_trajectory(&grid, &cfg, 8).unwrap();
        let x = image(16, 12, seed);
        let kept = corrupt(&x, &traj, t).unwrap();
        let removed = (&x - &kept).unwrap();
        let total = x.norm_sqr();
        prop_assert!(((kept.norm_sqr() + removed.norm_sqr()) - total).abs() <= 1e-10 * total);
        prop_assert!(kept.norm() <= x.norm() * (1.0 + 1e-12));
        let twice = corrupt(&kept, &traj, t).unwrap();
        prop_assert!(twice.relative_error(&kept).unwrap() < 1e-12);
    }
}

#[test]
fn removed_spectrum_is_exactly_zero() {
    let grid = radius_map(32, 32).unwrap();
    let cfg = process(2.0, 16, 3, Density::RadiusScheduled, false);
    let traj = sample_trajectory(&grid, &cfg, 16).unwrap();
    let x = image(32, 32, 9);
    for t in [1, 8, 16] {
        let spectrum = fft(&corrupt(&x, &traj, t).unwrap());
        let mask = traj.mask(t).unwrap();
        let full = fft(&x);
        for k in 0..grid.len() {
            if mask.is_kept(k) {
                assert!((spectrum.data()[k] - full.data()[k]).norm() < 1e-12);
            } else {
                assert!(spectrum.data()[k].norm() < 1e-12);
            }
        }
    }
}

#[test]
fn outer_frequencies_go_first_on_average() {
    let grid = radius_map(32, 32).unwrap();
    let t_f = 8;
    let mut mean_radius = vec![0.0; t_f];
    for seed in 0..20 {
        let traj = sample_trajectory(&grid, &process(2.0, t_f, seed, Density::RadiusScheduled, false), t_f).unwrap();
        for t in 1..=t_f {
            let set = traj.set(t);
            mean_radius[t - 1] += set.iter().map(|&k| grid.radius()[k]).sum::<f64>() / set.len() as f64;
        }
    }
    assert!(mean_radius.windows(2).all(|p| p[1] <= p[0] + 1e-9), "{mean_radius:?}");
}

#[test]
fn infeasible_horizon_is_rejected() {
    let grid = radius_map(8, 8).unwrap();
    let cfg = process(2.0, 4, 0, Density::Uniform, false);
    assert!(sample_trajectory(&grid, &cfg, 9).is_err());
    assert!(sample_trajectory(&grid, &cfg, 0).is_err());
}
