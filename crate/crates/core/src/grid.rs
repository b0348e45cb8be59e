//! Complex images, centered k-space geometry and the orthonormal 2D DFT.
//!
//! Spectra use a centered layout: the DC component sits at
//! `(height / 2, width / 2)` and the frequency coordinate of entry `(i, j)`
//! is `(i - height / 2, j - width / 2)`. The image domain is not shifted.
//! Both transform directions are scaled by `1 / sqrt(height * width)`, so
//! the pair is unitary.

use std::cell::RefCell;
use std::ops::{Add, Sub};

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{check_shape, FdbError, Result};

/// Row-major `height x width` array of complex samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexImage {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexImage {
    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        check_dims(height, width)?;
        Ok(Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        })
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<Complex64>) -> Result<Self> {
        check_dims(height, width)?;
        if data.len() != height * width {
            return Err(FdbError::Dimension(format!(
                "data length {} does not match {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_real(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        let data = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        Self::from_vec(height, width, data)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> Complex64,
    ) -> Result<Self> {
        check_dims(height, width)?;
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Complex64> {
        self.data
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.width + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.width + j] = v;
    }

    /// Squared Euclidean norm, `sum |x|^2`.
    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// `<self, other> = sum conj(self) * other`.
    pub fn inner(&self, other: &ComplexImage) -> Result<Complex64> {
        check_shape(self.shape(), other.shape())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum())
    }

    pub fn scale(&self, s: f64) -> ComplexImage {
        self.map(|c| c * s)
    }

    pub fn map(&self, f: impl Fn(Complex64) -> Complex64) -> ComplexImage {
        ComplexImage {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&c| f(c)).collect(),
        }
    }

    /// Elementwise combination of two equally shaped images.
    pub fn zip_with(
        &self,
        other: &ComplexImage,
        f: impl Fn(Complex64, Complex64) -> Complex64,
    ) -> Result<ComplexImage> {
        check_shape(self.shape(), other.shape())?;
        Ok(ComplexImage {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    /// `||self - other|| / ||other||`, falling back to the absolute error
    /// when `other` is zero.
    pub fn relative_error(&self, reference: &ComplexImage) -> Result<f64> {
        let diff = (self - reference)?;
        let denom = reference.norm();
        Ok(if denom > 0.0 {
            diff.norm() / denom
        } else {
            diff.norm()
        })
    }
}

impl Add for &ComplexImage {
    type Output = Result<ComplexImage>;

    fn add(self, rhs: &ComplexImage) -> Self::Output {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &ComplexImage {
    type Output = Result<ComplexImage>;

    fn sub(self, rhs: &ComplexImage) -> Self::Output {
        self.zip_with(rhs, |a, b| a - b)
    }
}

fn check_dims(height: usize, width: usize) -> Result<()> {
    if height == 0 || width == 0 {
        return Err(FdbError::Dimension(format!(
            "image dimensions must be positive, got {height}x{width}"
        )));
    }
    Ok(())
}

/// Centered Cartesian k-space grid with per-component radii.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceGrid {
    height: usize,
    width: usize,
    radius: Vec<f64>,
    r_max: f64,
}

impl KSpaceGrid {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Number of frequency components.
    pub fn len(&self) -> usize {
        self.radius.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radius.is_empty()
    }

    pub fn radius(&self) -> &[f64] {
        &self.radius
    }

    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    pub fn center(&self) -> (usize, usize) {
        (self.height / 2, self.width / 2)
    }

    pub fn dc_index(&self) -> usize {
        let (ci, cj) = self.center();
        ci * self.width + cj
    }

    /// Signed frequency coordinate of linear index `k`.
    pub fn coordinate(&self, k: usize) -> (i64, i64) {
        let (ci, cj) = self.center();
        let i = k / self.width;
        let j = k % self.width;
        (i as i64 - ci as i64, j as i64 - cj as i64)
    }
}

/// Builds the centered radius map for a `height x width` grid.
pub fn radius_map(height: usize, width: usize) -> Result<KSpaceGrid> {
    if height < 2 || width < 2 {
        return Err(FdbError::Dimension(format!(
            "k-space grid needs at least 2x2 components, got {height}x{width}"
        )));
    }
    let ci = (height / 2) as f64;
    let cj = (width / 2) as f64;
    let mut radius = Vec::with_capacity(height * width);
    for i in 0..height {
        for j in 0..width {
            radius.push((i as f64 - ci).hypot(j as f64 - cj));
        }
    }
    let r_max = radius.iter().copied().fold(0.0, f64::max);
    Ok(KSpaceGrid {
        height,
        width,
        radius,
        r_max,
    })
}

/// Binary diagonal k-space mask; `true` keeps the component.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FrequencyMask {
    height: usize,
    width: usize,
    keep: Vec<bool>,
}

impl FrequencyMask {
    pub fn filled(height: usize, width: usize, value: bool) -> Result<Self> {
        check_dims(height, width)?;
        Ok(Self {
            height,
            width,
            keep: vec![value; height * width],
        })
    }

    pub fn from_vec(height: usize, width: usize, keep: Vec<bool>) -> Result<Self> {
        check_dims(height, width)?;
        if keep.len() != height * width {
            return Err(FdbError::Dimension(format!(
                "mask length {} does not match {}x{}",
                keep.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            keep,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn is_kept(&self, k: usize) -> bool {
        self.keep[k]
    }

    pub fn set(&mut self, k: usize, value: bool) {
        self.keep[k] = value;
    }

    pub fn kept_count(&self) -> usize {
        self.keep.iter().filter(|&&b| b).count()
    }

    pub fn kept_fraction(&self) -> f64 {
        self.kept_count() as f64 / self.keep.len() as f64
    }

    /// Componentwise AND.
    pub fn intersect(&self, other: &FrequencyMask) -> Result<FrequencyMask> {
        check_shape(self.shape(), other.shape())?;
        Ok(FrequencyMask {
            height: self.height,
            width: self.width,
            keep: self.keep.iter().zip(&other.keep).map(|(&a, &b)| a && b).collect(),
        })
    }

    /// True when every component kept by `self` is also kept by `other`.
    pub fn is_subset_of(&self, other: &FrequencyMask) -> bool {
        self.shape() == other.shape() && self.keep.iter().zip(&other.keep).all(|(&a, &b)| !a || b)
    }
}

/// Zeroes the components of `spectrum` that `mask` removes.
pub fn apply_mask(spectrum: &ComplexImage, mask: &FrequencyMask) -> Result<ComplexImage> {
    check_shape(spectrum.shape(), mask.shape())?;
    let zero = Complex64::new(0.0, 0.0);
    let data = spectrum
        .data
        .iter()
        .zip(&mask.keep)
        .map(|(&c, &k)| if k { c } else { zero })
        .collect();
    Ok(ComplexImage {
        height: spectrum.height,
        width: spectrum.width,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Centered, orthonormal 2D DFT.
pub fn unitary_dft(img: &ComplexImage, direction: Direction) -> ComplexImage {
    let mut out = img.clone();
    unitary_dft_in_place(&mut out, direction);
    out
}

pub fn unitary_dft_in_place(img: &mut ComplexImage, direction: Direction) {
    let (h, w) = img.shape();
    let (ci, cj) = (h / 2, w / 2);
    match direction {
        Direction::Forward => {
            fft2(&mut img.data, h, w, direction);
            circular_shift(&mut img.data, h, w, ci, cj);
        }
        Direction::Inverse => {
            circular_shift(&mut img.data, h, w, h - ci, w - cj);
            fft2(&mut img.data, h, w, direction);
        }
    }
    let norm = 1.0 / ((h * w) as f64).sqrt();
    for c in img.data.iter_mut() {
        *c *= norm;
    }
}

/// Forward transform shorthand.
pub fn fft(img: &ComplexImage) -> ComplexImage {
    unitary_dft(img, Direction::Forward)
}

/// Inverse transform shorthand.
pub fn ifft(spectrum: &ComplexImage) -> ComplexImage {
    unitary_dft(spectrum, Direction::Inverse)
}

fn fft2(data: &mut [Complex64], h: usize, w: usize, direction: Direction) {
    PLANNER.with(|planner| {
        let mut planner = planner.borrow_mut();
        let (row_plan, col_plan) = match direction {
            Direction::Forward => (planner.plan_fft_forward(w), planner.plan_fft_forward(h)),
            Direction::Inverse => (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h)),
        };
        row_plan.process(data);
        let mut transposed = vec![Complex64::new(0.0, 0.0); h * w];
        for i in 0..h {
            for j in 0..w {
                transposed[j * h + i] = data[i * w + j];
            }
        }
        col_plan.process(&mut transposed);
        for j in 0..w {
            for i in 0..h {
                data[i * w + j] = transposed[j * h + i];
            }
        }
    });
}

/// Moves entry `(i, j)` to `((i + di) mod h, (j + dj) mod w)`.
fn circular_shift(data: &mut [Complex64], h: usize, w: usize, di: usize, dj: usize) {
    if di.is_multiple_of(h) && dj.is_multiple_of(w) {
        return;
    }
    let src = data.to_vec();
    for i in 0..h {
        let ti = (i + di) % h;
        for j in 0..w {
            data[ti * w + (j + dj) % w] = src[i * w + j];
        }
    }
}
