//! Reconstruction quality metrics on the low-frequency tile proxy.
//!
//! Both metrics treat the 16×16 proxy as a flat signal with peak 1.0.
//! PSNR is `10·log10(1/MSE)` capped at 99.00 dB (the cap doubles as the
//! exact-recovery report value). SSIM is the single-window global variant:
//! one mean/variance/covariance over all 256 samples, unbiased (n−1)
//! moments, `C1 = (0.01·L)²`, `C2 = (0.03·L)²`, `L = 1`.

use crate::error::{Error, Result};
use crate::probes::LowFreqTile;

/// PSNR report ceiling; zero-MSE pairs report exactly this.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_C1: f64 = 1e-4; // (0.01)²
const SSIM_C2: f64 = 9e-4; // (0.03)²

/// Per-tile metric pair as aggregated by the protocols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricPair {
    pub psnr_db: f64,
    pub ssim: f64,
}

pub fn psnr(a: &LowFreqTile, b: &LowFreqTile) -> f64 {
    let n = a.values.len() as f64;
    let mse: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn ssim(a: &LowFreqTile, b: &LowFreqTile) -> f64 {
    let n = a.values.len();
    let nf = n as f64;
    let mean_a: f64 = a.values.iter().sum::<f64>() / nf;
    let mean_b: f64 = b.values.iter().sum::<f64>() / nf;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    let mut cov = 0.0;
    for (x, y) in a.values.iter().zip(&b.values) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        var_a += dx * dx;
        var_b += dy * dy;
        cov += dx * dy;
    }
    var_a /= nf - 1.0;
    var_b /= nf - 1.0;
    cov /= nf - 1.0;
    ((2.0 * mean_a * mean_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mean_a * mean_a + mean_b * mean_b + SSIM_C1) * (var_a + var_b + SSIM_C2))
}

pub fn metric_pair(pred: &LowFreqTile, truth: &LowFreqTile) -> MetricPair {
    MetricPair { psnr_db: psnr(pred, truth), ssim: ssim(pred, truth) }
}

/// Mean and sample standard deviation (n−1 denominator; a single value
/// has deviation 0).
pub fn aggregate(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::InvalidParameter("cannot aggregate zero values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}
