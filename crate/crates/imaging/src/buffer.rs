use std::path::Path;

use image::{DynamicImage, ImageBuffer as RawImage, Luma, Rgb};
use uhddip_tensor::Tensor;

use crate::error::{ImagingError, Result};

/// Rec. 601 luma weights.
pub const LUMA_601: [f32; 3] = [0.299, 0.587, 0.114];

/// Interleaved `H×W×C` raster with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(ImagingError::Dimension(format!(
                "{height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn from_fn(height: usize, width: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self { height, width, channels, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            channels: self.channels,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len().max(1) as f64
    }

    /// Single-channel luminance (Rec. 601 for RGB, identity for grey).
    pub fn luminance(&self) -> Self {
        match self.channels {
            1 => self.clone(),
            3 => Self {
                height: self.height,
                width: self.width,
                channels: 1,
                data: self
                    .data
                    .chunks_exact(3)
                    .map(|p| LUMA_601[0] * p[0] + LUMA_601[1] * p[1] + LUMA_601[2] * p[2])
                    .collect(),
            },
            c => Self {
                height: self.height,
                width: self.width,
                channels: 1,
                data: self.data.chunks_exact(c).map(|p| p.iter().sum::<f32>() / c as f32).collect(),
            },
        }
    }

    /// Replicates a grey image to three channels.
    pub fn to_rgb(&self) -> Self {
        if self.channels == 3 {
            return self.clone();
        }
        let grey = self.luminance();
        Self::from_fn(self.height, self.width, 3, |y, x, _| grey.get(y, x, 0))
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if y0 + h > self.height || x0 + w > self.width {
            return Err(ImagingError::Dimension(format!(
                "crop {h}x{w} at ({y0},{x0}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        Ok(Self::from_fn(h, w, self.channels, |y, x, c| self.get(y0 + y, x0 + x, c)))
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.height, self.width, self.channels, |y, x, c| self.get(y, self.width - 1 - x, c))
    }

    /// Values rounded to the 8-bit grid, as they would be after a PNG round trip.
    pub fn quantized(&self) -> Self {
        self.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
    }

    /// `[1, C, H, W]` tensor view for the network.
    pub fn to_tensor(&self) -> Tensor<f32> {
        let (h, w, c) = self.dims();
        Tensor::from_fn([1, c, h, w], |i| {
            let (ch, rest) = (i / (h * w), i % (h * w));
            self.data[rest * c + ch]
        })
    }

    /// Inverse of [`to_tensor`](Self::to_tensor) for one batch item; values are clamped to `[0, 1]`.
    pub fn from_tensor(t: &Tensor<f32>, index: usize) -> Result<Self> {
        let (n, c, h, w) = t.dims4()?;
        if index >= n {
            return Err(ImagingError::Dimension(format!("batch index {index} out of {n}")));
        }
        let plane = &t.data()[index * c * h * w..(index + 1) * c * h * w];
        Ok(Self::from_fn(h, w, c, |y, x, ch| plane[(ch * h + y) * w + x].clamp(0.0, 1.0)))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let img = image::open(path.as_ref())?;
        Ok(Self::from_dynamic(img))
    }

    pub fn from_dynamic(img: DynamicImage) -> Self {
        match img {
            DynamicImage::ImageLuma8(g) => {
                let (w, h) = g.dimensions();
                Self {
                    height: h as usize,
                    width: w as usize,
                    channels: 1,
                    data: g.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
                }
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                Self {
                    height: h as usize,
                    width: w as usize,
                    channels: 3,
                    data: rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(),
                }
            }
        }
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    /// Writes an 8-bit PNG (grey for one channel, RGB for three).
    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let (w, h) = (self.width as u32, self.height as u32);
        match self.channels {
            1 => RawImage::<Luma<u8>, _>::from_raw(w, h, self.to_bytes())
                .expect("length checked at construction")
                .save(path.as_ref())?,
            3 => RawImage::<Rgb<u8>, _>::from_raw(w, h, self.to_bytes())
                .expect("length checked at construction")
                .save(path.as_ref())?,
            c => return Err(ImagingError::Usage(format!("cannot encode {c}-channel image as PNG"))),
        }
        Ok(())
    }
}
