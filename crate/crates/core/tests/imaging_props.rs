//! Acquisition operator algebra on random systems.

use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

use fdb::grid::{fft, radius_map, ComplexImage};
use fdb::imaging::{
    adjoint, dc_projection, forward, make_sampling_mask, residual_norm, synth_coil_maps, ImagingSystem, MaskDensity,
};
use fdb::rng;

fn random_image(h: usize, w: usize, seed: u64) -> ComplexImage {
    let mut r = rng::stream(seed, 1);
    let data = (0..h * w)
        .map(|_| Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect();
    ComplexImage::from_vec(h, w, data).unwrap()
}

fn density(i: u8) -> MaskDensity {
    [MaskDensity::Normal2d, MaskDensity::Normal1d, MaskDensity::Uniform][i as usize % 3]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn adjoint_identity(seed in any::<u64>(), coils in 1usize..5, d in 0u8..3, r in 2.0f64..8.0) {
        let grid = radius_map(16, 20).unwrap();
        let mask = make_sampling_mask(&grid, r, density(d), 2, seed).unwrap();
        let maps = synth_coil_maps(&grid, coils, seed).unwrap();
        let sys = ImagingSystem::new(grid, mask, maps).unwrap();
        let x = random_image(16, 20, seed);
        let y: Vec<_> = (0..coils).map(|c| random_image(16, 20, seed ^ (c as u64 + 1))).collect();
        let lhs: Complex64 = sys.apply(&x).unwrap().iter().zip(&y).map(|(a, b)| a.inner(b).unwrap()).sum();
        let rhs = x.inner(&sys.adjoint_coils(&y).unwrap()).unwrap();
        prop_assert!((lhs - rhs).norm() <= 1e-10 * lhs.norm().max(1.0));
    }

    #[test]
    fn single_coil_projection(seed in any::<u64>(), d in 0u8..3, r in 2.0f64..8.0) {
        let grid = radius_map(16, 16).unwrap();
        let mask = make_sampling_mask(&grid, r, density(d), 2, seed).unwrap();
        let sys = ImagingSystem::single_coil(grid.clone(), mask.clone()).unwrap();
        let y = forward(&sys, &random_image(16, 16, seed), r, 0.0, seed).unwrap();
        let x = random_image(16, 16, seed.wrapping_add(1));
        let once = dc_projection(&sys, &x, &y).unwrap();
        let twice = dc_projection(&sys, &once, &y).unwrap();
        prop_assert!((&twice - &once).unwrap().norm() <= 1e-12 * once.norm());
        prop_assert!(residual_norm(&sys, &once, &y).unwrap() <= 1e-12 * y.coils[0].norm());
        let spectrum = fft(&once);
        let original = fft(&x);
        for k in 0..grid.len() {
            let expect = if mask.is_kept(k) { y.coils[0].data()[k] } else { original.data()[k] };
            prop_assert!((spectrum.data()[k] - expect).norm() <= 1e-12);
        }
    }

    #[test]
    fn mask_counts_and_calibration(seed in any::<u64>(), r in 2.0f64..10.0, calib in 0usize..6) {
        let grid = radius_map(32, 32).unwrap();
        let mask = make_sampling_mask(&grid, r, MaskDensity::Normal2d, calib, seed).unwrap();
        prop_assert_eq!(mask.kept_count(), (grid.len() as f64 / r).round() as usize);
        prop_assert!(calib == 0 || mask.is_kept(grid.dc_index()));
        let (ci, cj) = grid.center();
        let lo = calib / 2;
        for i in ci - lo..ci - lo + calib {
            for j in cj - lo..cj - lo + calib {
                prop_assert!(mask.is_kept(i * 32 + j));
            }
        }
    }
}

#[test]
fn zero_filled_is_the_masked_inverse() {
    let grid = radius_map(16, 16).unwrap();
    let mask = make_sampling_mask(&grid, 4.0, MaskDensity::Normal2d, 2, 3).unwrap();
    let sys = ImagingSystem::single_coil(grid, mask.clone()).unwrap();
    let x = random_image(16, 16, 8);
    let y = forward(&sys, &x, 4.0, 0.0, 0).unwrap();
    let zf = fft(&adjoint(&sys, &y).unwrap());
    let full = fft(&x);
    for k in 0..256 {
        let expect = if mask.is_kept(k) { full.data()[k] } else { Complex64::new(0.0, 0.0) };
        assert!((zf.data()[k] - expect).norm() < 1e-12);
    }
}

#[test]
fn noise_lands_on_sampled_locations_only() {
    let grid = radius_map(16, 16).unwrap();
    let mask = make_sampling_mask(&grid, 3.0, MaskDensity::Uniform, 2, 1).unwrap();
    let sys = ImagingSystem::single_coil(grid, mask.clone()).unwrap();
    let x = random_image(16, 16, 2);
    let clean = forward(&sys, &x, 3.0, 0.0, 5).unwrap();
    let noisy = forward(&sys, &x, 3.0, 0.1, 5).unwrap();
    let again = forward(&sys, &x, 3.0, 0.1, 5).unwrap();
    assert_eq!(noisy, again);
    for k in 0..256 {
        let diff = (noisy.coils[0].data()[k] - clean.coils[0].data()[k]).norm();
        if mask.is_kept(k) {
            assert!(diff > 0.0);
        } else {
            assert_eq!(diff, 0.0);
        }
    }
    assert!(forward(&sys, &x, 3.0, -1.0, 5).is_err());
}
