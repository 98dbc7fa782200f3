//! Spatial filters with clamp-to-edge borders. Every output row is computed
//! independently, so results do not depend on the rayon pool size.

use rayon::prelude::*;

use crate::buffer::ImageBuffer;

#[inline]
fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Normalized sampled Gaussian with half-width `⌈3σ⌉`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let half = (3.0 * sigma).ceil() as isize;
    let raw: Vec<f64> = (-half..=half).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| (v / total) as f32).collect()
}

fn convolve_rows(img: &ImageBuffer, kernel: &[f32]) -> ImageBuffer {
    let (h, w, c) = img.dims();
    let half = (kernel.len() / 2) as isize;
    let mut out = ImageBuffer::filled(h, w, c, 0.0);
    out.data_mut().par_chunks_mut(w * c).enumerate().for_each(|(y, row)| {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0f32;
                for (k, &kv) in kernel.iter().enumerate() {
                    acc += kv * img.get(y, clamp_index(x as isize + k as isize - half, w), ch);
                }
                row[x * c + ch] = acc;
            }
        }
    });
    out
}

fn convolve_cols(img: &ImageBuffer, kernel: &[f32]) -> ImageBuffer {
    let (h, w, c) = img.dims();
    let half = (kernel.len() / 2) as isize;
    let mut out = ImageBuffer::filled(h, w, c, 0.0);
    out.data_mut().par_chunks_mut(w * c).enumerate().for_each(|(y, row)| {
        for (k, &kv) in kernel.iter().enumerate() {
            let sy = clamp_index(y as isize + k as isize - half, h);
            let src = &img.data()[sy * w * c..(sy + 1) * w * c];
            for (o, s) in row.iter_mut().zip(src) {
                *o += kv * s;
            }
        }
    });
    out
}

/// Separable Gaussian blur with standard deviation `sigma`.
pub fn blur_sigma(img: &ImageBuffer, sigma: f64) -> ImageBuffer {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    convolve_cols(&convolve_rows(img, &k), &k)
}

/// Sobel derivatives of a single-channel image, scaled by 1/8 so that a ramp
/// `v = g·x` has `∂x = g` in the interior.
pub fn sobel(img: &ImageBuffer) -> (ImageBuffer, ImageBuffer) {
    let (h, w, _) = img.dims();
    let at = |y: isize, x: isize| img.get(clamp_index(y, h), clamp_index(x, w), 0);
    let mut gx = ImageBuffer::filled(h, w, 1, 0.0);
    let mut gy = ImageBuffer::filled(h, w, 1, 0.0);
    gx.data_mut().par_chunks_mut(w).zip(gy.data_mut().par_chunks_mut(w)).enumerate().for_each(
        |(y, (rx, ry))| {
            let y = y as isize;
            for x in 0..w {
                let xi = x as isize;
                let (tl, t, tr) = (at(y - 1, xi - 1), at(y - 1, xi), at(y - 1, xi + 1));
                let (l, r) = (at(y, xi - 1), at(y, xi + 1));
                let (bl, b, br) = (at(y + 1, xi - 1), at(y + 1, xi), at(y + 1, xi + 1));
                rx[x] = ((tr + 2.0 * r + br) - (tl + 2.0 * l + bl)) / 8.0;
                ry[x] = ((bl + 2.0 * b + br) - (tl + 2.0 * t + tr)) / 8.0;
            }
        },
    );
    (gx, gy)
}

/// Offsets `(dy, dx)` of a centered Bresenham line with `length` pixels.
/// Angles are counter-clockwise from the +x axis with image rows growing
/// downward, so 90° is vertical.
pub fn line_offsets(length: usize, angle_deg: f64) -> Vec<(isize, isize)> {
    let half = (length.max(1) as f64 - 1.0) / 2.0;
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (x0, y0) = ((-half * c).round() as isize, (half * s).round() as isize);
    let (x1, y1) = ((half * c).round() as isize, (-half * s).round() as isize);
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    let mut pts = Vec::with_capacity(length);
    loop {
        pts.push((y, x));
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    pts
}

/// Averages each pixel along a line kernel (normalized, clamp-to-edge).
pub fn line_blur(img: &ImageBuffer, offsets: &[(isize, isize)]) -> ImageBuffer {
    let (h, w, c) = img.dims();
    let norm = 1.0 / offsets.len() as f32;
    let mut out = ImageBuffer::filled(h, w, c, 0.0);
    out.data_mut().par_chunks_mut(w * c).enumerate().for_each(|(y, row)| {
        for &(dy, dx) in offsets {
            let src = &img.data()[clamp_index(y as isize + dy, h) * w * c..][..w * c];
            for x in 0..w {
                let sx = clamp_index(x as isize + dx, w);
                for ch in 0..c {
                    row[x * c + ch] += src[sx * c + ch];
                }
            }
        }
        row.iter_mut().for_each(|v| *v *= norm);
    });
    out
}
