//! Full-resolution restoration with overlapping aligned tiles, and metric
//! evaluation over a set of examples.

use rayon::prelude::*;
use uhddip_imaging::{ImageBuffer, MetricReport, PriorPair};
use uhddip_tensor::{Scalar, Tensor};

use crate::data::{Batch, Example};
use crate::error::{CoreError, Result};
use crate::model::Model;

/// Tile extent and overlap in pixels. Both are rounded up to the network's
/// alignment before use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tiling {
    pub tile: usize,
    pub overlap: usize,
}

impl Default for Tiling {
    fn default() -> Self {
        Self { tile: 512, overlap: 32 }
    }
}

fn round_up(v: usize, a: usize) -> usize {
    v.div_ceil(a) * a
}

/// Tile origins along one axis covering `[0, len)`.
fn origins(len: usize, tile: usize, stride: usize) -> Vec<usize> {
    if len <= tile {
        return vec![0];
    }
    let mut out: Vec<usize> = (0..).map(|i| i * stride).take_while(|&o| o + tile < len).collect();
    out.push(len - tile);
    out
}

/// Blend weight at offset `i` inside a tile: a linear ramp over the overlap.
fn ramp(i: usize, tile: usize, overlap: usize) -> f32 {
    let edge = (i + 1).min(tile - i);
    edge.min(overlap.max(1)) as f32 / overlap.max(1) as f32
}

fn forward_tensor<T: Scalar>(model: &Model<T>, input: &ImageBuffer, priors: &PriorPair) -> Result<Tensor<f32>> {
    let ex = Example { name: String::new(), input: input.clone(), target: input.clone(), priors: priors.clone() };
    let b = Batch::<T>::from_examples(std::slice::from_ref(&ex))?;
    let (o, _) = model.infer(&b.input, &b.normal, &b.gradient)?;
    Ok(o.cast())
}

/// Edge-replicates `img` on the bottom and right up to `h × w`.
fn pad_edge(img: &ImageBuffer, h: usize, w: usize) -> ImageBuffer {
    let (ih, iw, c) = img.dims();
    ImageBuffer::from_fn(h, w, c, |y, x, ch| img.get(y.min(ih - 1), x.min(iw - 1), ch))
}

/// Restores `input`, tiling when it exceeds the tile size. Inputs whose
/// extents are not multiples of the alignment are edge-padded and the result
/// cropped back.
pub fn restore<T: Scalar>(model: &Model<T>, input: &ImageBuffer, priors: &PriorPair, tiling: Tiling) -> Result<ImageBuffer> {
    let (h, w, _) = input.dims();
    if h == 0 || w == 0 {
        return Err(CoreError::Dimension("empty input image".into()));
    }
    if priors.normal.dims() != (h, w, 3) || priors.gradient.dims() != (h, w, 1) {
        return Err(CoreError::Dimension(format!(
            "priors {:?} / {:?} do not match input {h}x{w}",
            priors.normal.dims(),
            priors.gradient.dims()
        )));
    }
    let a = model.config().alignment();
    let (hp, wp) = (round_up(h, a), round_up(w, a));
    if (hp, wp) != (h, w) {
        let padded = PriorPair { normal: pad_edge(&priors.normal, hp, wp), gradient: pad_edge(&priors.gradient, hp, wp) };
        let out = restore_aligned(model, &pad_edge(input, hp, wp), &padded, tiling)?;
        return Ok(out.crop(0, 0, h, w)?);
    }
    restore_aligned(model, input, priors, tiling)
}

fn restore_aligned<T: Scalar>(model: &Model<T>, input: &ImageBuffer, priors: &PriorPair, tiling: Tiling) -> Result<ImageBuffer> {
    let (h, w, _) = input.dims();
    let a = model.config().alignment();
    let tile = round_up(tiling.tile.max(1), a);
    if h <= tile && w <= tile {
        return Ok(ImageBuffer::from_tensor(&forward_tensor(model, input, priors)?, 0)?);
    }
    let overlap = round_up(tiling.overlap, a);
    if overlap >= tile {
        return Err(CoreError::Config(format!("tile overlap {overlap} must be smaller than tile {tile}")));
    }
    let (th, tw) = (tile.min(h), tile.min(w));
    let mut acc = vec![0f32; 3 * h * w];
    let mut wsum = vec![0f32; h * w];
    for &y0 in &origins(h, th, th.saturating_sub(overlap).max(a)) {
        for &x0 in &origins(w, tw, tw.saturating_sub(overlap).max(a)) {
            let crop = |img: &ImageBuffer| img.crop(y0, x0, th, tw);
            let sub = PriorPair { normal: crop(&priors.normal)?, gradient: crop(&priors.gradient)? };
            let out = forward_tensor(model, &crop(input)?, &sub)?;
            let d = out.data();
            for ty in 0..th {
                let wy = ramp(ty, th, overlap);
                for tx in 0..tw {
                    let wt = wy * ramp(tx, tw, overlap);
                    let p = (y0 + ty) * w + x0 + tx;
                    wsum[p] += wt;
                    for c in 0..3 {
                        acc[c * h * w + p] += wt * d[(c * th + ty) * tw + tx];
                    }
                }
            }
        }
    }
    Ok(ImageBuffer::from_fn(h, w, 3, |y, x, c| {
        let p = y * w + x;
        (acc[c * h * w + p] / wsum[p]).clamp(0.0, 1.0)
    }))
}

/// Restores every example and scores it against its target.
pub fn evaluate<T: Scalar>(model: &Model<T>, examples: &[Example], tiling: Tiling) -> Result<MetricReport> {
    let scores = examples
        .par_iter()
        .map(|ex| {
            let restored = restore(model, &ex.input, &ex.priors, tiling)?;
            Ok(MetricReport::score(ex.name.clone(), &restored, &ex.target)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_scores(scores))
}

/// Scores the degraded inputs themselves, the no-op baseline.
pub fn baseline(examples: &[Example]) -> Result<MetricReport> {
    let scores = examples
        .iter()
        .map(|ex| MetricReport::score(ex.name.clone(), &ex.input, &ex.target))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok(MetricReport::from_scores(scores))
}
