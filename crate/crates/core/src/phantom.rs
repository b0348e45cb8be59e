//! Synthetic ellipse phantoms and datasets.
//!
//! A phantom is an outer head ellipse plus random inner ellipses painted in
//! order, anti-aliased by 3x3 supersampling, then multiplied by a smooth
//! low-order phase. Each ellipse carries a tissue class; the contrast preset
//! only maps classes to intensities, so presets share geometry.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FdbError, Result};
use crate::grid::ComplexImage;
use crate::rng::{self, tags};

pub const MIN_DIM: usize = 32;
const SUPERSAMPLE: usize = 3;
const CLASSES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Contrast {
    #[default]
    T1Like,
    T2Like,
    PdLike,
}

impl Contrast {
    pub const ALL: [Contrast; 3] = [Contrast::T1Like, Contrast::T2Like, Contrast::PdLike];

    /// Intensities for the classes: outer tissue, white matter, gray matter,
    /// fluid, lesion.
    fn intensities(self) -> [f64; CLASSES] {
        match self {
            Contrast::T1Like => [0.55, 0.95, 0.7, 0.15, 0.4],
            Contrast::T2Like => [0.35, 0.45, 0.6, 1.0, 0.85],
            Contrast::PdLike => [0.6, 0.7, 0.85, 0.95, 0.75],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    /// Inclusive range for the number of inner ellipses.
    pub ellipses: (usize, usize),
    pub contrast: Contrast,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn new(height: usize, width: usize, contrast: Contrast, seed: u64) -> Self {
        Self {
            height,
            width,
            ellipses: (4, 9),
            contrast,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    class: usize,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

pub fn make_phantom(spec: &PhantomSpec) -> Result<ComplexImage> {
    let (h, w) = (spec.height, spec.width);
    if h < MIN_DIM || w < MIN_DIM {
        return Err(FdbError::config(format!("phantoms need dims >= {MIN_DIM}, got {h}x{w}")));
    }
    let (lo, hi) = spec.ellipses;
    if lo > hi {
        return Err(FdbError::config(format!("empty ellipse count range {lo}..={hi}")));
    }
    let mut rng = rng::stream(rng::derive_seed(spec.seed, tags::PHANTOM, 0), 0);
    let mut shapes = vec![Ellipse {
        cx: rng.random_range(-0.04..0.04),
        cy: rng.random_range(-0.04..0.04),
        a: rng.random_range(0.72..0.88),
        b: rng.random_range(0.6..0.8),
        cos: 1.0,
        sin: 0.0,
        class: 0,
    }];
    let count = rng.random_range(lo..=hi);
    for _ in 0..count {
        let angle = rng.random_range(0.0..PI);
        let r = 0.5 * rng.random::<f64>().sqrt();
        let phi = rng.random_range(0.0..2.0 * PI);
        shapes.push(Ellipse {
            cx: r * phi.cos(),
            cy: r * phi.sin(),
            a: rng.random_range(0.06..0.35),
            b: rng.random_range(0.05..0.25),
            cos: angle.cos(),
            sin: angle.sin(),
            class: rng.random_range(1..CLASSES),
        });
    }
    let phase: [f64; 4] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
    let levels = spec.contrast.intensities();

    let sub = SUPERSAMPLE as f64;
    ComplexImage::from_fn(h, w, |i, j| {
        let mut acc = 0.0;
        for si in 0..SUPERSAMPLE {
            for sj in 0..SUPERSAMPLE {
                let y = 2.0 * (i as f64 + (si as f64 + 0.5) / sub) / h as f64 - 1.0;
                let x = 2.0 * (j as f64 + (sj as f64 + 0.5) / sub) / w as f64 - 1.0;
                // Painter's order: the last ellipse covering the point wins.
                if let Some(e) = shapes.iter().rev().find(|e| e.contains(x, y)) {
                    acc += levels[e.class];
                }
            }
        }
        let mag = (acc / (sub * sub)).clamp(0.0, 1.0);
        let y = 2.0 * (i as f64 + 0.5) / h as f64 - 1.0;
        let x = 2.0 * (j as f64 + 0.5) / w as f64 - 1.0;
        let theta = PI * (phase[0] + phase[1] * x + phase[2] * y + phase[3] * x * y);
        Complex64::from_polar(mag, theta)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContrastChoice {
    T1Like,
    T2Like,
    PdLike,
    /// Cycle through all presets.
    #[default]
    Mixed,
}

impl ContrastChoice {
    pub fn for_index(self, i: usize) -> Contrast {
        match self {
            ContrastChoice::T1Like => Contrast::T1Like,
            ContrastChoice::T2Like => Contrast::T2Like,
            ContrastChoice::PdLike => Contrast::PdLike,
            ContrastChoice::Mixed => Contrast::ALL[i % 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub contrast: Contrast,
    pub seed: u64,
}

/// `count` phantoms whose seeds are derived from `(seed, first + i)`.
pub fn make_dataset(
    height: usize,
    width: usize,
    count: usize,
    contrast: ContrastChoice,
    seed: u64,
    first: usize,
) -> Result<Vec<(DatasetEntry, ComplexImage)>> {
    (first..first + count)
        .map(|i| {
            let entry = DatasetEntry {
                id: format!("phantom_{i:04}"),
                contrast: contrast.for_index(i),
                seed: rng::derive_seed(seed, tags::PHANTOM, i as u64 + 1),
            };
            let img = make_phantom(&PhantomSpec::new(height, width, entry.contrast, entry.seed))?;
            Ok((entry, img))
        })
        .collect()
}
