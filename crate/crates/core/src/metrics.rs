//! Image quality metrics on magnitude images.

use serde::{Deserialize, Serialize};

use crate::error::{check_shape, FdbError, Result};
use crate::grid::ComplexImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// `20 log10(peak) - 10 log10(MSE)` on magnitudes. `peak` defaults to the
/// largest reference magnitude; identical images give `+inf`.
pub fn psnr(reference: &ComplexImage, test: &ComplexImage, peak: Option<f64>) -> Result<f64> {
    check_shape(reference.shape(), test.shape())?;
    let a = reference.magnitude();
    let b = test.magnitude();
    let peak = peak.unwrap_or_else(|| a.iter().cloned().fold(0.0, f64::max));
    if !(peak > 0.0) {
        return Err(FdbError::config(format!("PSNR peak must be positive, got {peak}")));
    }
    let mse = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * peak.log10() - 10.0 * mse.log10())
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5) and
/// dynamic range equal to the largest reference magnitude.
pub fn ssim(reference: &ComplexImage, test: &ComplexImage) -> Result<f64> {
    let range = reference.magnitude().into_iter().fold(0.0, f64::max);
    ssim_with_range(reference, test, if range > 0.0 { range } else { 1.0 })
}

pub fn ssim_with_range(reference: &ComplexImage, test: &ComplexImage, range: f64) -> Result<f64> {
    check_shape(reference.shape(), test.shape())?;
    if !(range > 0.0) {
        return Err(FdbError::config(format!("SSIM dynamic range must be positive, got {range}")));
    }
    let (h, w) = reference.shape();
    let size = {
        let m = SSIM_WINDOW.min(h).min(w);
        if m % 2 == 0 {
            m - 1
        } else {
            m
        }
    };
    let kernel = gaussian_window(size, SSIM_SIGMA);
    let a = reference.magnitude();
    let b = test.magnitude();
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - size {
        for j in 0..=w - size {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for di in 0..size {
                for dj in 0..size {
                    let g = kernel[di * size + dj];
                    let p = (i + di) * w + j + dj;
                    let (x, y) = (a[p], b[p]);
                    ma += g * x;
                    mb += g * y;
                    saa += g * x * x;
                    sbb += g * y * y;
                    sab += g * x * y;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let mut k: Vec<f64> = (0..size * size)
        .map(|p| {
            let (i, j) = ((p / size) as f64 - c, (p % size) as f64 - c);
            (-(i * i + j * j) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    #[serde(rename = "ref")]
    pub reference: String,
    pub test: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

impl MetricsRecord {
    pub fn compute(reference_id: &str, reference: &ComplexImage, test_id: &str, test: &ComplexImage) -> Result<Self> {
        Ok(Self {
            reference: reference_id.to_string(),
            test: test_id.to_string(),
            psnr_db: psnr(reference, test, None)?,
            ssim: ssim(reference, test)?,
        })
    }
}

/// CSV with header `ref,test,psnr_db,ssim`; infinite PSNR is written as `inf`.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::from("ref,test,psnr_db,ssim\n");
    for r in records {
        out.push_str(&format!("{},{},{},{}\n", r.reference, r.test, r.psnr_db, r.ssim));
    }
    out
}
