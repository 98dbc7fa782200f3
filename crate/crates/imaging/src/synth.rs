//! Procedural rain and snow masks: noise, crystallize, motion blur,
//! threshold and Gaussian blur, then alpha compositing onto a clean image.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buffer::ImageBuffer;
use crate::error::{ImagingError, Result};
use crate::filters;
use crate::rng::{hash3, uniform, Stream};

/// The fifty rain-streak orientations in degrees.
pub const RAIN_ANGLES: [u16; 50] = [
    45, 50, 55, 60, 61, 62, 63, 64, 65, 66, 67, 68, 69, 70, 71, 72, 73, 74, 75, 76, 77, 78, 79, 80, 85, 95,
    100, 101, 102, 103, 104, 105, 106, 107, 108, 109, 110, 111, 112, 113, 114, 115, 116, 117, 118, 119, 120,
    125, 130, 135,
];

/// Rain densities: four threshold levels spanning 55..=67.
pub const RAIN_LEVELS: [u8; 4] = [55, 59, 63, 67];

/// Snow densities: ten threshold levels spanning 100..=165.
pub const SNOW_LEVELS: [u8; 10] = [100, 107, 114, 122, 129, 136, 143, 151, 158, 165];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeatherKind {
    Snow,
    Rain,
}

impl std::str::FromStr for WeatherKind {
    type Err = ImagingError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "snow" => Ok(Self::Snow),
            "rain" => Ok(Self::Rain),
            other => Err(ImagingError::Usage(format!("unknown weather kind '{other}' (expected snow|rain)"))),
        }
    }
}

impl std::fmt::Display for WeatherKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Snow => "snow",
            Self::Rain => "rain",
        })
    }
}

/// One mask recipe.
///
/// Snow uses one layer per flow: the first flow is a flake layer without
/// motion blur, every later flow is a streak layer. Rain uses a single
/// streak layer per flow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub kind: WeatherKind,
    pub noise_amount: f64,
    pub crystallize_cell: usize,
    pub motion_len: usize,
    pub motion_angle: f64,
    pub threshold_level: u8,
    pub gauss_radius: f64,
    pub flows: Vec<f64>,
    pub seed: u64,
}

impl SynthSpec {
    pub fn snow(threshold_level: u8, seed: u64) -> Self {
        Self {
            kind: WeatherKind::Snow,
            noise_amount: 0.5,
            crystallize_cell: 15,
            motion_len: 25,
            motion_angle: 90.0,
            threshold_level,
            gauss_radius: 5.0,
            flows: vec![0.6, 1.0],
            seed,
        }
    }

    pub fn rain(threshold_level: u8, motion_angle: f64, seed: u64) -> Self {
        Self {
            kind: WeatherKind::Rain,
            noise_amount: 0.5,
            crystallize_cell: 5,
            motion_len: 200,
            motion_angle,
            threshold_level,
            gauss_radius: 2.0,
            flows: vec![1.0],
            seed,
        }
    }

    /// Draws threshold, angle and layer seed from the listed ranges.
    pub fn sample(kind: WeatherKind, stream: &mut Stream) -> Self {
        match kind {
            WeatherKind::Snow => {
                let level = SNOW_LEVELS[stream.below(SNOW_LEVELS.len())];
                Self::snow(level, stream.next_u64())
            }
            WeatherKind::Rain => {
                let level = RAIN_LEVELS[stream.below(RAIN_LEVELS.len())];
                let angle = RAIN_ANGLES[stream.below(RAIN_ANGLES.len())];
                Self::rain(level, angle as f64, stream.next_u64())
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ImagingError::Config(msg));
        if !(self.noise_amount > 0.0 && self.noise_amount <= 1.0) {
            return bad(format!("noise_amount {} outside (0, 1]", self.noise_amount));
        }
        if self.crystallize_cell == 0 || self.motion_len == 0 {
            return bad("crystallize_cell and motion_len must be at least 1".into());
        }
        if !(45.0..=135.0).contains(&self.motion_angle) {
            return bad(format!("motion_angle {} outside [45, 135]", self.motion_angle));
        }
        if self.gauss_radius.is_nan() || self.gauss_radius < 0.0 {
            return bad(format!("gauss_radius {} must be a non-negative number", self.gauss_radius));
        }
        if self.flows.is_empty() || self.flows.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad(format!("flows {:?} must be non-empty opacities in [0, 1]", self.flows));
        }
        Ok(())
    }
}

/// Black canvas with i.i.d. uniform values in `[0, amount]`, keyed by `(seed, x, y)`.
pub fn gen_noise(h: usize, w: usize, amount: f64, seed: u64) -> Result<ImageBuffer> {
    if !(amount > 0.0 && amount <= 1.0) {
        return Err(ImagingError::Config(format!("noise amount {amount} outside (0, 1]")));
    }
    let mut img = ImageBuffer::filled(h, w, 1, 0.0);
    img.data_mut().par_chunks_mut(w.max(1)).enumerate().for_each(|(y, row)| {
        for (x, v) in row.iter_mut().enumerate() {
            *v = (amount * uniform(seed, x as u64, y as u64)) as f32;
        }
    });
    Ok(img)
}

/// Jittered-grid Voronoi cells: one seed point per `cell×cell` grid square,
/// each pixel copies the value at its nearest seed point.
pub fn crystallize(img: &ImageBuffer, cell: usize, seed: u64) -> Result<ImageBuffer> {
    let (h, w, c) = img.dims();
    if cell == 0 || cell > h.min(w) {
        return Err(ImagingError::Config(format!("crystallize cell {cell} must be in 1..={}", h.min(w))));
    }
    let (gh, gw) = (h.div_ceil(cell), w.div_ceil(cell));
    let points: Vec<(usize, usize)> = (0..gh * gw)
        .map(|i| {
            let (gy, gx) = (i / gw, i % gw);
            let jy = (uniform(seed, i as u64, 1) * cell as f64) as usize;
            let jx = (uniform(seed, i as u64, 2) * cell as f64) as usize;
            ((gy * cell + jy).min(h - 1), (gx * cell + jx).min(w - 1))
        })
        .collect();
    let mut out = ImageBuffer::filled(h, w, c, 0.0);
    out.data_mut().par_chunks_mut(w * c).enumerate().for_each(|(y, row)| {
        let gy = (y / cell) as isize;
        for x in 0..w {
            let gx = (x / cell) as isize;
            let mut best = (usize::MAX, (0, 0));
            for ny in gy - 2..=gy + 2 {
                for nx in gx - 2..=gx + 2 {
                    if ny < 0 || nx < 0 || ny >= gh as isize || nx >= gw as isize {
                        continue;
                    }
                    let (py, px) = points[ny as usize * gw + nx as usize];
                    let d = py.abs_diff(y).pow(2) + px.abs_diff(x).pow(2);
                    if d < best.0 {
                        best = (d, (py, px));
                    }
                }
            }
            let (py, px) = best.1;
            for ch in 0..c {
                row[x * c + ch] = img.get(py, px, ch);
            }
        }
    });
    Ok(out)
}

/// Normalized line-kernel blur of the given length and angle.
pub fn motion_blur(img: &ImageBuffer, length: usize, angle_deg: f64) -> ImageBuffer {
    if length <= 1 {
        return img.clone();
    }
    filters::line_blur(img, &filters::line_offsets(length, angle_deg))
}

/// Binary mask: 1 where the value reaches `level / 255`.
pub fn threshold(img: &ImageBuffer, level: u8) -> ImageBuffer {
    let cut = level as f32 / 255.0;
    img.map(|v| if v >= cut { 1.0 } else { 0.0 })
}

/// Separable Gaussian blur with σ = radius / 2.
pub fn gaussian_blur(img: &ImageBuffer, radius: f64) -> ImageBuffer {
    filters::blur_sigma(img, radius / 2.0)
}

/// Affine remap of a field to the given mean and standard deviation, clamped
/// to `[0, 1]`. Constant fields map to `mean`.
pub fn match_contrast(img: &ImageBuffer, mean: f64, std: f64) -> ImageBuffer {
    let n = img.data().len().max(1) as f64;
    let mu = img.mean();
    let var = img.data().iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>() / n;
    let gain = if var > 1e-18 { std / var.sqrt() } else { 0.0 };
    img.map(|v| ((v as f64 - mu) * gain + mean).clamp(0.0, 1.0) as f32)
}

/// Renders the recipe at `h×w`; values in `[0, 1]`.
///
/// Averaging along the motion-blur line shrinks the field's spread, so each
/// layer is remapped back to the raw noise statistics before thresholding;
/// threshold levels then select density consistently for blurred and
/// unblurred layers.
pub fn gen_mask(spec: &SynthSpec, h: usize, w: usize) -> Result<ImageBuffer> {
    spec.validate()?;
    let mut acc = ImageBuffer::filled(h, w, 1, 0.0);
    for (i, &flow) in spec.flows.iter().enumerate() {
        let layer_seed = hash3(spec.seed, i as u64, 0xF10);
        let noise = gen_noise(h, w, spec.noise_amount, layer_seed)?;
        let mut layer = crystallize(&noise, spec.crystallize_cell, layer_seed ^ 0xC0FFEE)?;
        let streak = spec.kind == WeatherKind::Rain || i > 0;
        if streak {
            layer = motion_blur(&layer, spec.motion_len, spec.motion_angle);
        }
        let amount = spec.noise_amount;
        let layer = match_contrast(&layer, amount / 2.0, amount / 12f64.sqrt());
        let layer = gaussian_blur(&threshold(&layer, spec.threshold_level), spec.gauss_radius);
        for (a, l) in acc.data_mut().iter_mut().zip(layer.data()) {
            *a += flow as f32 * l;
        }
    }
    Ok(acc.map(|v| v.clamp(0.0, 1.0)))
}

/// White alpha-over: `clean·(1 − m) + m`.
pub fn composite(clean: &ImageBuffer, mask: &ImageBuffer) -> Result<ImageBuffer> {
    let (h, w, c) = clean.dims();
    if mask.dims() != (h, w, 1) {
        return Err(ImagingError::Usage(format!(
            "mask {:?} does not match clean image {h}x{w}",
            mask.dims()
        )));
    }
    let data = clean
        .data()
        .chunks_exact(c)
        .zip(mask.data())
        .flat_map(|(px, &m)| px.iter().map(move |&v| (v * (1.0 - m) + m).clamp(0.0, 1.0)))
        .collect();
    ImageBuffer::new(h, w, c, data)
}

/// Mask and degraded image for a clean image.
pub fn degrade(clean: &ImageBuffer, spec: &SynthSpec) -> Result<(ImageBuffer, ImageBuffer)> {
    let mask = gen_mask(spec, clean.height(), clean.width())?;
    Ok((composite(clean, &mask)?, mask))
}
