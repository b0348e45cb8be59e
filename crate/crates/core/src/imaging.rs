//! Accelerated acquisition model `y = M F (S x) + e`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, FdbError, Result};
use crate::grid::{apply_mask, fft, ifft, ComplexImage, FrequencyMask, KSpaceGrid};
use crate::rng::{self, tags};

/// Tolerance on the per-pixel sum of squared coil sensitivities.
pub const COIL_NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MaskDensity {
    /// Gaussian density in radius across both phase-encode directions.
    #[default]
    Normal2d,
    /// Gaussian density over columns; each selected column is fully sampled.
    Normal1d,
    Uniform,
}

/// Default square calibration size: `ceil(min(H, W) / 16)`.
pub fn default_calib(grid: &KSpaceGrid) -> usize {
    grid.height().min(grid.width()).div_ceil(16)
}

/// Variable-density random sampling pattern with a fully sampled
/// `calib x calib` block around DC. The kept count is `round(N_K / R)`.
pub fn make_sampling_mask(
    grid: &KSpaceGrid,
    r: f64,
    density: MaskDensity,
    calib: usize,
    seed: u64,
) -> Result<FrequencyMask> {
    if !(r > 1.0) || !r.is_finite() {
        return Err(FdbError::config(format!("acceleration R must be > 1, got {r}")));
    }
    let (h, w) = grid.shape();
    if calib >= h || calib >= w {
        return Err(FdbError::config(format!(
            "calibration size {calib} must be smaller than the grid {h}x{w}"
        )));
    }
    let mut rng = rng::stream(rng::derive_seed(seed, tags::MASK, 0), 0);
    let (ci, cj) = grid.center();
    let lo = |c: usize| c - calib / 2;
    let mut keep = vec![false; h * w];

    match density {
        MaskDensity::Normal1d => {
            let budget_lines = (w as f64 / r).round() as usize;
            if budget_lines < calib {
                return Err(FdbError::config(format!(
                    "R = {r} keeps {budget_lines} lines, fewer than the {calib} calibration lines"
                )));
            }
            let calib_cols = lo(cj)..lo(cj) + calib;
            let candidates: Vec<usize> = (0..w).filter(|j| !calib_cols.contains(j)).collect();
            let dist: Vec<f64> = candidates.iter().map(|&j| (j as f64 - cj as f64).abs()).collect();
            let chosen = draw_gaussian(&mut rng, &dist, budget_lines - calib);
            let mut cols = vec![false; w];
            for j in calib_cols {
                cols[j] = true;
            }
            for c in chosen {
                cols[candidates[c]] = true;
            }
            for i in 0..h {
                for j in 0..w {
                    keep[i * w + j] = cols[j];
                }
            }
        }
        MaskDensity::Normal2d | MaskDensity::Uniform => {
            let budget = (grid.len() as f64 / r).round() as usize;
            let calib_count = calib * calib;
            if budget < calib_count {
                return Err(FdbError::config(format!(
                    "R = {r} keeps {budget} components, fewer than the {calib_count} calibration samples"
                )));
            }
            let (rows, cols) = (lo(ci)..lo(ci) + calib, lo(cj)..lo(cj) + calib);
            let mut candidates = Vec::with_capacity(grid.len());
            for i in 0..h {
                for j in 0..w {
                    if rows.contains(&i) && cols.contains(&j) {
                        keep[i * w + j] = true;
                    } else {
                        candidates.push(i * w + j);
                    }
                }
            }
            let extra = budget - calib_count;
            let chosen = if density == MaskDensity::Uniform {
                let extra = extra.min(candidates.len());
                rand::seq::index::sample(&mut rng, candidates.len(), extra).into_vec()
            } else {
                let dist: Vec<f64> = candidates.iter().map(|&k| grid.radius()[k]).collect();
                draw_gaussian(&mut rng, &dist, extra)
            };
            for c in chosen {
                keep[candidates[c]] = true;
            }
        }
    }
    FrequencyMask::from_vec(h, w, keep)
}

/// Draws `count` of the candidates without replacement with weights
/// `exp(-d^2 / (2 sigma^2))`; `sigma` is bisected so the weights sum to `count`.
fn draw_gaussian(rng: &mut impl Rng, dist: &[f64], count: usize) -> Vec<usize> {
    if count >= dist.len() {
        return (0..dist.len()).collect();
    }
    if count == 0 {
        return Vec::new();
    }
    let sigma = calibrate_sigma(dist, count as f64);
    let weights: Vec<f64> = dist.iter().map(|d| gaussian_weight(*d, sigma)).collect();
    // Efraimidis-Spirakis: keep the `count` largest ln(u) / w.
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(idx, &wt)| {
            let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
            let key = if wt > 0.0 { u.ln() / wt } else { f64::NEG_INFINITY };
            (key, idx)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut chosen: Vec<usize> = keyed[..count].iter().map(|&(_, idx)| idx).collect();
    chosen.sort_unstable();
    chosen
}

fn gaussian_weight(d: f64, sigma: f64) -> f64 {
    (-d * d / (2.0 * sigma * sigma)).exp()
}

fn calibrate_sigma(dist: &[f64], target: f64) -> f64 {
    let mass = |s: f64| dist.iter().map(|d| gaussian_weight(*d, s)).sum::<f64>();
    let (mut lo, mut hi) = (1e-6, 1.0);
    while mass(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mass(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-12 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Smooth Gaussian-lobed complex coil maps normalized to unit sum of squares.
pub fn synth_coil_maps(grid: &KSpaceGrid, coils: usize, seed: u64) -> Result<Vec<ComplexImage>> {
    if coils == 0 {
        return Err(FdbError::config("coil count must be at least 1"));
    }
    let (h, w) = grid.shape();
    if coils == 1 {
        return Ok(vec![ComplexImage::from_fn(h, w, |_, _| Complex64::new(1.0, 0.0))?]);
    }
    let mut rng = rng::stream(rng::derive_seed(seed, tags::COILS, 0), 0);
    let half = 0.5 * h.min(w) as f64;
    let lobe = 0.8 * half;
    let mut raw = Vec::with_capacity(coils);
    for c in 0..coils {
        let angle = 2.0 * PI * c as f64 / coils as f64 + rng.random_range(-0.2..0.2);
        let ring = half * rng.random_range(0.7..1.0);
        let (yc, xc) = (0.5 * h as f64 + ring * angle.sin(), 0.5 * w as f64 + ring * angle.cos());
        let (ky, kx) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let phase0 = rng.random_range(0.0..2.0 * PI);
        raw.push(ComplexImage::from_fn(h, w, |i, j| {
            let (dy, dx) = (i as f64 - yc, j as f64 - xc);
            let amp = (-(dy * dy + dx * dx) / (2.0 * lobe * lobe)).exp();
            let phase = phase0 + 2.0 * PI * (ky * i as f64 / h as f64 + kx * j as f64 / w as f64);
            Complex64::from_polar(amp, phase)
        })?);
    }
    let mut sos = vec![0.0; h * w];
    for map in &raw {
        for (acc, c) in sos.iter_mut().zip(map.data()) {
            *acc += c.norm_sqr();
        }
    }
    let inv: Vec<f64> = sos.iter().map(|s| 1.0 / s.sqrt()).collect();
    for map in raw.iter_mut() {
        for (c, s) in map.data_mut().iter_mut().zip(&inv) {
            *c *= *s;
        }
    }
    Ok(raw)
}

/// Sampling mask, coil sensitivities and grid of one acquisition.
#[derive(Debug, Clone)]
pub struct ImagingSystem {
    grid: KSpaceGrid,
    mask: FrequencyMask,
    coil_maps: Vec<ComplexImage>,
}

impl ImagingSystem {
    pub fn new(grid: KSpaceGrid, mask: FrequencyMask, coil_maps: Vec<ComplexImage>) -> Result<Self> {
        check_shape(grid.shape(), mask.shape())?;
        if coil_maps.is_empty() {
            return Err(FdbError::config("imaging system needs at least one coil"));
        }
        let mut sos = vec![0.0; grid.len()];
        for map in &coil_maps {
            check_shape(grid.shape(), map.shape())?;
            for (acc, c) in sos.iter_mut().zip(map.data()) {
                *acc += c.norm_sqr();
            }
        }
        if let Some(bad) = sos.iter().position(|s| (s - 1.0).abs() > COIL_NORM_TOL) {
            return Err(FdbError::config(format!(
                "coil maps not normalized at pixel {bad}: sum of squares {}",
                sos[bad]
            )));
        }
        Ok(Self {
            grid,
            mask,
            coil_maps,
        })
    }

    pub fn single_coil(grid: KSpaceGrid, mask: FrequencyMask) -> Result<Self> {
        let maps = synth_coil_maps(&grid, 1, 0)?;
        Self::new(grid, mask, maps)
    }

    pub fn grid(&self) -> &KSpaceGrid {
        &self.grid
    }

    pub fn mask(&self) -> &FrequencyMask {
        &self.mask
    }

    pub fn coil_maps(&self) -> &[ComplexImage] {
        &self.coil_maps
    }

    pub fn coil_count(&self) -> usize {
        self.coil_maps.len()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.grid.shape()
    }

    /// Noiseless `A x`, one masked spectrum per coil.
    pub fn apply(&self, x: &ComplexImage) -> Result<Vec<ComplexImage>> {
        check_shape(self.shape(), x.shape())?;
        self.coil_maps
            .iter()
            .map(|s| {
                let coil_img = s.zip_with(x, |a, b| a * b)?;
                apply_mask(&fft(&coil_img), &self.mask)
            })
            .collect()
    }

    /// `A^H y = sum_c conj(S_c) IDFT(M y_c)`.
    pub fn adjoint_coils(&self, coils: &[ComplexImage]) -> Result<ComplexImage> {
        if coils.len() != self.coil_maps.len() {
            return Err(FdbError::Dimension(format!(
                "measurement has {} coils, system has {}",
                coils.len(),
                self.coil_maps.len()
            )));
        }
        let (h, w) = self.shape();
        let mut out = ComplexImage::zeros(h, w)?;
        for (s, y) in self.coil_maps.iter().zip(coils) {
            check_shape(self.shape(), y.shape())?;
            let img = ifft(&apply_mask(y, &self.mask)?);
            for ((o, sc), v) in out.data_mut().iter_mut().zip(s.data()).zip(img.data()) {
                *o += sc.conj() * v;
            }
        }
        Ok(out)
    }
}

/// Per-coil undersampled k-space.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub coils: Vec<ComplexImage>,
    pub r: f64,
    pub noise_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSidecar {
    #[serde(rename = "R")]
    pub r: f64,
    #[serde(rename = "C")]
    pub coils: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub density: MaskDensity,
}

/// Simulates `y_c = M DFT(S_c x) + e_c`; noise is complex Gaussian with total
/// standard deviation `noise_sigma`, placed on sampled locations only.
pub fn forward(
    sys: &ImagingSystem,
    x: &ComplexImage,
    r: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Measurement> {
    if !(noise_sigma >= 0.0) {
        return Err(FdbError::config(format!("noise sigma must be >= 0, got {noise_sigma}")));
    }
    let mut coils = sys.apply(x)?;
    if noise_sigma > 0.0 {
        let normal = Normal::new(0.0, noise_sigma / 2f64.sqrt()).expect("finite sigma");
        for (c, y) in coils.iter_mut().enumerate() {
            let mut rng = rng::stream(rng::derive_seed(seed, tags::NOISE, c as u64), 0);
            for (v, &kept) in y.data_mut().iter_mut().zip(sys.mask().keep()) {
                if kept {
                    *v += Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
                }
            }
        }
    }
    Ok(Measurement {
        coils,
        r,
        noise_sigma,
    })
}

pub fn adjoint(sys: &ImagingSystem, y: &Measurement) -> Result<ComplexImage> {
    sys.adjoint_coils(&y.coils)
}

/// `x + A^H (y - A x)`.
pub fn dc_projection(sys: &ImagingSystem, x: &ComplexImage, y: &Measurement) -> Result<ComplexImage> {
    let ax = sys.apply(x)?;
    if ax.len() != y.coils.len() {
        return Err(FdbError::Dimension("coil count mismatch".into()));
    }
    let residual = ax
        .iter()
        .zip(&y.coils)
        .map(|(a, b)| b - a)
        .collect::<Result<Vec<_>>>()?;
    let correction = sys.adjoint_coils(&residual)?;
    x + &correction
}

/// `||A x - y||`.
pub fn residual_norm(sys: &ImagingSystem, x: &ComplexImage, y: &Measurement) -> Result<f64> {
    let ax = sys.apply(x)?;
    let mut acc = 0.0;
    for (a, b) in ax.iter().zip(&y.coils) {
        acc += (a - b)?.norm_sqr();
    }
    Ok(acc.sqrt())
}
