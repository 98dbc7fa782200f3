//! PSNR and SSIM.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::buffer::ImageBuffer;
use crate::error::{ImagingError, Result};

pub const PSNR_CAP_DB: f64 = 100.0;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;

fn same_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(ImagingError::Dimension(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// `10·log10(peak² / MSE)` over all channels, capped at 100 dB.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, peak: f64) -> Result<f64> {
    same_dims(a, b)?;
    let n = a.data().len().max(1) as f64;
    let mse = a.data().iter().zip(b.data()).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / n;
    if mse < 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Normalized 1-D window; the 2-D window is its outer product.
pub fn ssim_window() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = k.iter().sum();
    k.map(|v| v / total)
}

/// Valid-mode separable filtering of a `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ho, wo) = (h + 1 - n, w + 1 - n);
    let rows: Vec<f64> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let row = &plane[y * w..(y + 1) * w];
            (0..wo).map(move |x| k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum::<f64>())
        })
        .collect();
    (0..ho)
        .into_par_iter()
        .flat_map_iter(|y| {
            let rows = &rows;
            (0..wo).map(move |x| k.iter().enumerate().map(|(i, kv)| kv * rows[(y + i) * wo + x]).sum::<f64>())
        })
        .collect()
}

/// Gaussian-window SSIM on luminance, averaged over valid window positions.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    same_dims(a, b)?;
    let (h, w, _) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(ImagingError::Dimension(format!("ssim needs at least 11x11, got {h}x{w}")));
    }
    let la: Vec<f64> = a.luminance().data().iter().map(|&v| v as f64).collect();
    let lb: Vec<f64> = b.luminance().data().iter().map(|&v| v as f64).collect();
    let k = ssim_window();
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(&la, h, w, &k);
    let mu_b = filter_valid(&lb, h, w, &k);
    let saa = filter_valid(&prod(&la, &la), h, w, &k);
    let sbb = filter_valid(&prod(&lb, &lb), h, w, &k);
    let sab = filter_valid(&prod(&la, &lb), h, w, &k);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let (va, vb, cov) = (saa[i] - ma * ma, sbb[i] - mb * mb, sab[i] - ma * mb);
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ImageScore {
    pub path: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

/// Per-image scores and their arithmetic means.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub per_image: Vec<ImageScore>,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
}

impl MetricReport {
    pub fn from_scores(per_image: Vec<ImageScore>) -> Self {
        let n = per_image.len().max(1) as f64;
        let mean_psnr_db = per_image.iter().map(|s| s.psnr_db).sum::<f64>() / n;
        let mean_ssim = per_image.iter().map(|s| s.ssim).sum::<f64>() / n;
        Self { per_image, mean_psnr_db, mean_ssim }
    }

    /// Scores one restored/reference pair.
    pub fn score(path: impl Into<String>, restored: &ImageBuffer, reference: &ImageBuffer) -> Result<ImageScore> {
        Ok(ImageScore { path: path.into(), psnr_db: psnr(restored, reference, 1.0)?, ssim: ssim(restored, reference)? })
    }

    /// CSV with a header, one row per image and a trailing `mean` row.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "path,psnr,ssim")?;
        for s in &self.per_image {
            writeln!(out, "{},{:.6},{:.6}", s.path, s.psnr_db, s.ssim)?;
        }
        writeln!(out, "mean,{:.6},{:.6}", self.mean_psnr_db, self.mean_ssim)
    }
}
