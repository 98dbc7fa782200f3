//! Guidance priors: a Canny gradient map and a surface-normal map.

use std::collections::VecDeque;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuffer;
use crate::error::{ImagingError, Result};
use crate::filters::{blur_sigma, sobel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CannyParams {
    pub sigma: f64,
    pub low_ratio: f64,
    pub high_ratio: f64,
    /// Emit normalized gradient magnitude on edge pixels instead of 1.
    #[serde(default)]
    pub soft: bool,
}

impl Default for CannyParams {
    fn default() -> Self {
        Self { sigma: 1.4, low_ratio: 0.1, high_ratio: 0.2, soft: false }
    }
}

/// Gradient prior `[H, W, 1]` plus normal prior `[H, W, 3]` encoded as `(n + 1) / 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorPair {
    pub normal: ImageBuffer,
    pub gradient: ImageBuffer,
}

impl PriorPair {
    /// Priors from the image itself: Canny edges and the height-field normal fallback.
    pub fn from_image(img: &ImageBuffer, canny_params: &CannyParams) -> Result<Self> {
        Ok(Self { normal: normal_from_heightfield(img)?, gradient: canny(img, canny_params)? })
    }
}

/// Canny edge detector on luminance. Thresholds are fractions of the
/// maximum gradient magnitude, so the result is invariant to global
/// intensity scaling.
pub fn canny(img: &ImageBuffer, p: &CannyParams) -> Result<ImageBuffer> {
    if img.is_empty() {
        return Err(ImagingError::Usage("canny on an empty image".into()));
    }
    if !(p.sigma > 0.0 && 0.0 < p.low_ratio && p.low_ratio < p.high_ratio && p.high_ratio <= 1.0) {
        return Err(ImagingError::Config(format!(
            "canny needs sigma > 0 and 0 < low < high <= 1, got {p:?}"
        )));
    }
    let (h, w, _) = img.dims();
    let smooth = blur_sigma(&img.luminance(), p.sigma);
    let (gx, gy) = sobel(&smooth);
    let mag: Vec<f32> = gx.data().iter().zip(gy.data()).map(|(a, b)| a.hypot(*b)).collect();
    let max = mag.iter().cloned().fold(0.0f32, f32::max);
    let mut out = ImageBuffer::filled(h, w, 1, 0.0);
    if max <= 0.0 {
        return Ok(out);
    }

    // Non-maximum suppression against the magnitude interpolated one pixel
    // forward and backward along the gradient direction.
    let sample = |yf: f32, xf: f32| {
        let (y0, x0) = (yf.floor(), xf.floor());
        let (ty, tx) = (yf - y0, xf - x0);
        let at = |yy: f32, xx: f32| {
            if yy < 0.0 || xx < 0.0 || yy >= h as f32 || xx >= w as f32 {
                0.0
            } else {
                mag[yy as usize * w + xx as usize]
            }
        };
        (1.0 - ty) * ((1.0 - tx) * at(y0, x0) + tx * at(y0, x0 + 1.0))
            + ty * ((1.0 - tx) * at(y0 + 1.0, x0) + tx * at(y0 + 1.0, x0 + 1.0))
    };
    let mut thin = vec![0.0f32; h * w];
    thin.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            let m = mag[y * w + x];
            if m == 0.0 {
                continue;
            }
            let (uy, ux) = (gy.get(y, x, 0) / m, gx.get(y, x, 0) / m);
            let (yf, xf) = (y as f32, x as f32);
            if m >= sample(yf + uy, xf + ux) && m > sample(yf - uy, xf - ux) {
                row[x] = m;
            }
        }
    });

    // Double threshold and hysteresis from strong pixels through weak ones.
    let (hi, lo) = (p.high_ratio as f32 * max, p.low_ratio as f32 * max);
    let mut edge = vec![false; h * w];
    let mut queue: VecDeque<usize> = (0..h * w).filter(|&i| thin[i] >= hi).collect();
    for &i in &queue {
        edge[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        for ny in y - 1..=y + 1 {
            for nx in x - 1..=x + 1 {
                if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if !edge[j] && thin[j] >= lo {
                    edge[j] = true;
                    queue.push_back(j);
                }
            }
        }
    }
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if edge[i] {
            *v = if p.soft { thin[i] / max } else { 1.0 };
        }
    }
    Ok(out)
}

fn encode(n: [f32; 3]) -> [f32; 3] {
    n.map(|v| (v + 1.0) / 2.0)
}

fn unit(v: [f32; 3]) -> [f32; 3] {
    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if norm > 0.0 {
        v.map(|c| c / norm)
    } else {
        [0.0, 0.0, 1.0]
    }
}

/// Normals of the luminance height field: `normalize(−∂x L, −∂y L, 1)`.
pub fn normal_from_heightfield(img: &ImageBuffer) -> Result<ImageBuffer> {
    if img.is_empty() {
        return Err(ImagingError::Usage("normal estimation on an empty image".into()));
    }
    let (gx, gy) = sobel(&img.luminance());
    let (h, w, _) = img.dims();
    let mut data = Vec::with_capacity(h * w * 3);
    for (dx, dy) in gx.data().iter().zip(gy.data()) {
        data.extend(encode(unit([-dx, -dy, 1.0])));
    }
    ImageBuffer::new(h, w, 3, data)
}

/// Decodes an encoded normal map to unit vectors and re-encodes it.
/// Returns the map and the largest deviation of a decoded norm from 1.
pub fn renormalize_encoded(map: &ImageBuffer) -> Result<(ImageBuffer, f32)> {
    if map.channels() != 3 {
        return Err(ImagingError::Ingest(format!("normal map needs 3 channels, got {}", map.channels())));
    }
    let mut worst = 0.0f32;
    let mut data = Vec::with_capacity(map.data().len());
    for px in map.data().chunks_exact(3) {
        let v = [2.0 * px[0] - 1.0, 2.0 * px[1] - 1.0, 2.0 * px[2] - 1.0];
        worst = worst.max(((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 1.0).abs());
        data.extend(encode(unit(v)));
    }
    Ok((ImageBuffer::new(map.height(), map.width(), 3, data)?, worst))
}

/// Loads an externally produced normal map (8-bit PNG, or the flat tensor
/// format holding raw vectors as `[H, W, 3]`) and renormalizes it.
pub fn load_normal_map(path: impl AsRef<Path>, expected_hw: (usize, usize)) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let is_tensor = path.extension().is_some_and(|e| e == "bin" || e == "tensor");
    let map = if is_tensor {
        let t = uhddip_tensor::io::load_tensor::<f32>(path)?;
        match t.shape() {
            &[h, w, 3] => ImageBuffer::new(h, w, 3, t.data().iter().map(|v| (v + 1.0) / 2.0).collect())?,
            s => return Err(ImagingError::Ingest(format!("normal tensor must be [H, W, 3], got {s:?}"))),
        }
    } else {
        ImageBuffer::load(path)?
    };
    if (map.height(), map.width()) != expected_hw {
        return Err(ImagingError::Ingest(format!(
            "normal map {} is {}x{}, expected {}x{}",
            path.display(),
            map.height(),
            map.width(),
            expected_hw.0,
            expected_hw.1
        )));
    }
    let (map, worst) = renormalize_encoded(&map)?;
    if worst > 0.1 {
        log::warn!("{}: normals deviate from unit length by up to {worst:.3}; renormalized", path.display());
    }
    Ok(map)
}
