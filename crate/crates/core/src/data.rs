//! Training and evaluation examples: image pairs with their priors, aligned
//! patch sampling and batch assembly.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use uhddip_imaging::{load_normal_map, CannyParams, DatasetManifest, ImageBuffer, PriorPair, Split};
use uhddip_tensor::{Scalar, Tensor};

use crate::error::{CoreError, Result};

/// A degraded input, its clean target and the priors of the input.
#[derive(Debug, Clone)]
pub struct Example {
    pub name: String,
    pub input: ImageBuffer,
    pub target: ImageBuffer,
    pub priors: PriorPair,
}

impl Example {
    /// Priors are estimated from the degraded input, as at inference time.
    pub fn new(name: impl Into<String>, input: ImageBuffer, target: ImageBuffer, canny: &CannyParams) -> Result<Self> {
        if input.dims() != target.dims() {
            return Err(CoreError::Dimension(format!("input {:?} vs target {:?}", input.dims(), target.dims())));
        }
        let priors = PriorPair::from_image(&input, canny)?;
        Ok(Self { name: name.into(), input: input.to_rgb(), target: target.to_rgb(), priors })
    }

    /// Replaces the estimated normal prior with an external map.
    pub fn with_normal_map(mut self, path: impl AsRef<Path>) -> Result<Self> {
        self.priors.normal = load_normal_map(path, (self.input.height(), self.input.width()))?;
        Ok(self)
    }

    pub fn height(&self) -> usize {
        self.input.height()
    }

    pub fn width(&self) -> usize {
        self.input.width()
    }
}

/// Loads every pair of a split, computing priors in parallel. Order follows
/// the manifest.
pub fn load_split(manifest: &DatasetManifest, split: Split, canny: &CannyParams) -> Result<Vec<Example>> {
    let entries: Vec<_> = manifest.split(split).collect();
    entries
        .par_iter()
        .map(|e| {
            let input = ImageBuffer::load(manifest.resolve(&e.degraded_path))?;
            let target = ImageBuffer::load(manifest.resolve(&e.clean_path))?;
            Example::new(e.degraded_path.display().to_string(), input, target, canny)
        })
        .collect()
}

/// Crop window shared by input, target and both priors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crop {
    pub y: usize,
    pub x: usize,
    pub size: usize,
    pub flip: bool,
}

/// Draws a `patch × patch` window at a uniformly random offset on the
/// `align` grid, with an optional horizontal flip.
pub fn sample_crop<R: Rng>(h: usize, w: usize, patch: usize, align: usize, flip: bool, rng: &mut R) -> Result<Crop> {
    if patch > h || patch > w {
        return Err(CoreError::Dimension(format!("image {h}x{w} smaller than patch {patch}")));
    }
    let align = align.max(1);
    let y = rng.gen_range(0..=(h - patch) / align) * align;
    let x = rng.gen_range(0..=(w - patch) / align) * align;
    let flip = flip && rng.gen_bool(0.5);
    Ok(Crop { y, x, size: patch, flip })
}

fn apply(img: &ImageBuffer, c: Crop) -> Result<ImageBuffer> {
    let out = img.crop(c.y, c.x, c.size, c.size)?;
    Ok(if c.flip { out.flip_horizontal() } else { out })
}

/// Applies one crop to all four images of an example.
pub fn crop_example(ex: &Example, c: Crop) -> Result<Example> {
    Ok(Example {
        name: ex.name.clone(),
        input: apply(&ex.input, c)?,
        target: apply(&ex.target, c)?,
        priors: PriorPair { normal: apply(&ex.priors.normal, c)?, gradient: apply(&ex.priors.gradient, c)? },
    })
}

/// Network-ready tensors, `[B,3,H,W]` for input, target and normal, `[B,1,H,W]` for gradient.
#[derive(Debug, Clone)]
pub struct Batch<T: Scalar> {
    pub input: Tensor<T>,
    pub target: Tensor<T>,
    pub normal: Tensor<T>,
    pub gradient: Tensor<T>,
}

fn stack<T: Scalar>(images: &[&ImageBuffer]) -> Result<Tensor<T>> {
    let first = images.first().ok_or_else(|| CoreError::Dimension("empty batch".into()))?;
    let (h, w, c) = first.dims();
    let mut data = Vec::with_capacity(images.len() * h * w * c);
    for img in images {
        if img.dims() != (h, w, c) {
            return Err(CoreError::Dimension(format!("batch mixes {:?} and {:?}", (h, w, c), img.dims())));
        }
        data.extend(img.to_tensor().data().iter().map(|&v| T::lit(v as f64)));
    }
    Ok(Tensor::new([images.len(), c, h, w], data)?)
}

impl<T: Scalar> Batch<T> {
    pub fn from_examples(examples: &[Example]) -> Result<Self> {
        let pick = |f: fn(&Example) -> &ImageBuffer| stack::<T>(&examples.iter().map(f).collect::<Vec<_>>());
        Ok(Self {
            input: pick(|e| &e.input)?,
            target: pick(|e| &e.target)?,
            normal: pick(|e| &e.priors.normal)?,
            gradient: pick(|e| &e.priors.gradient)?,
        })
    }
}
