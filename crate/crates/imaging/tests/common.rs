//! Measurement helpers shared by the statistics tests.

#![allow(dead_code)]

use uhddip_imaging::ImageBuffer;

/// Dominant line orientation in degrees `[0, 180)`, counter-clockwise from
/// +x with rows growing downward, from the structure tensor over the interior.
/// The image is smoothed first so pixel-scale staircase steps do not dominate.
pub fn dominant_orientation(img: &ImageBuffer, margin: usize) -> f64 {
    let img = &uhddip_imaging::filters::blur_sigma(img, 2.0);
    let (h, w, _) = img.dims();
    let (mut jxx, mut jyy, mut jxy) = (0.0f64, 0.0f64, 0.0f64);
    for y in margin..h - margin {
        for x in margin..w - margin {
            let gx = (img.get(y, x + 1, 0) - img.get(y, x - 1, 0)) as f64 / 2.0;
            let gy_up = -(img.get(y + 1, x, 0) - img.get(y - 1, x, 0)) as f64 / 2.0;
            jxx += gx * gx;
            jyy += gy_up * gy_up;
            jxy += gx * gy_up;
        }
    }
    let gradient = 0.5 * (2.0 * jxy).atan2(jxx - jyy).to_degrees();
    (gradient + 90.0).rem_euclid(180.0)
}

pub fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

/// 4-connected components of pixels for which `same(a, b)` holds between
/// neighbours and `keep(v)` holds; returns the pixel lists.
pub fn components(
    img: &ImageBuffer,
    keep: impl Fn(f32) -> bool,
    same: impl Fn(f32, f32) -> bool,
) -> Vec<Vec<(usize, usize)>> {
    let (h, w, _) = img.dims();
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if seen[start] || !keep(img.data()[start]) {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut pixels = Vec::new();
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            pixels.push((y, x));
            let v = img.data()[i];
            let mut visit = |j: usize| {
                if !seen[j] && keep(img.data()[j]) && same(v, img.data()[j]) {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
        out.push(pixels);
    }
    out
}

/// Eccentricity of a pixel set from its second moments.
pub fn eccentricity(pixels: &[(usize, usize)]) -> f64 {
    let n = pixels.len() as f64;
    let (my, mx) = pixels.iter().fold((0.0, 0.0), |(a, b), &(y, x)| (a + y as f64, b + x as f64));
    let (my, mx) = (my / n, mx / n);
    let (mut syy, mut sxx, mut sxy) = (0.0, 0.0, 0.0);
    for &(y, x) in pixels {
        let (dy, dx) = (y as f64 - my, x as f64 - mx);
        syy += dy * dy;
        sxx += dx * dx;
        sxy += dx * dy;
    }
    let (a, b, c) = (sxx / n, syy / n, sxy / n);
    let disc = ((a - b).powi(2) / 4.0 + c * c).sqrt();
    let (l1, l2) = ((a + b) / 2.0 + disc, (a + b) / 2.0 - disc);
    if l1 <= 0.0 {
        return 0.0;
    }
    (1.0 - (l2.max(0.0) / l1)).sqrt()
}

pub fn coverage(mask: &ImageBuffer) -> f64 {
    mask.mean()
}
