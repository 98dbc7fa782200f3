//! Pure data rearrangements: pixel (un)shuffle, unfold/fold, resampling,
//! slicing and concatenation. Each has an exact adjoint used by autodiff.

use rayon::prelude::*;

use crate::error::{config_err, dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(dim_err!("pixel_unshuffle: {}x{} not divisible by {}", h, w, r));
    }
    let (ho, wo) = (h / r, w / r);
    let xd = x.data();
    let mut out = vec![T::zero(); x.numel()];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(idx, plane)| {
        let (nn, oc) = (idx / (c * r * r), idx % (c * r * r));
        let (ci, sub) = (oc / (r * r), oc % (r * r));
        let (dy, dx) = (sub / r, sub % r);
        let src = &xd[(nn * c + ci) * h * w..][..h * w];
        for y in 0..ho {
            for xx in 0..wo {
                plane[y * wo + xx] = src[(y * r + dy) * w + xx * r + dx];
            }
        }
    });
    Tensor::new([n, c * r * r, ho, wo], out)
}

pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, cr, h, w) = x.dims4()?;
    if r == 0 || cr % (r * r) != 0 {
        return Err(dim_err!("pixel_shuffle: {} channels not divisible by {}", cr, r * r));
    }
    let c = cr / (r * r);
    let (ho, wo) = (h * r, w * r);
    let xd = x.data();
    let mut out = vec![T::zero(); x.numel()];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(idx, plane)| {
        let (nn, ci) = (idx / c, idx % c);
        for y in 0..ho {
            for xx in 0..wo {
                let ic = ci * r * r + (y % r) * r + xx % r;
                plane[y * wo + xx] = xd[((nn * cr + ic) * h + y / r) * w + xx / r];
            }
        }
    });
    Tensor::new([n, c, ho, wo], out)
}

/// Extracts zero-padded k×k patches: output `[N, C·k², H·W]`, row `c·k² + ky·k + kx`,
/// column `y·W + x` holding the patch centred at (y, x).
pub fn unfold<T: Scalar>(x: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if k.is_multiple_of(2) {
        return Err(config_err!("unfold kernel must be odd, got {}", k));
    }
    let p = k / 2;
    let xd = x.data();
    let hw = h * w;
    let mut out = vec![T::zero(); n * c * k * k * hw];
    out.par_chunks_mut(hw).enumerate().for_each(|(row, dst)| {
        let nn = row / (c * k * k);
        let rem = row % (c * k * k);
        let (ci, tap) = (rem / (k * k), rem % (k * k));
        let (ky, kx) = (tap / k, tap % k);
        let src = &xd[(nn * c + ci) * hw..][..hw];
        for y in 0..h {
            let iy = y + ky;
            if iy < p || iy - p >= h {
                continue;
            }
            for xx in 0..w {
                let ix = xx + kx;
                if ix < p || ix - p >= w {
                    continue;
                }
                dst[y * w + xx] = src[(iy - p) * w + ix - p];
            }
        }
    });
    Tensor::new([n, c * k * k, hw], out)
}

/// Adjoint of [`unfold`]: scatter-adds patch columns back onto an `[N,C,H,W]` grid.
pub fn fold<T: Scalar>(cols: &Tensor<T>, c: usize, h: usize, w: usize, k: usize) -> Result<Tensor<T>> {
    let n = cols.shape().first().copied().unwrap_or(0);
    if cols.shape() != [n, c * k * k, h * w] {
        return Err(dim_err!("fold: unexpected column shape {:?}", cols.shape()));
    }
    let p = k / 2;
    let hw = h * w;
    let cd = cols.data();
    let mut out = vec![T::zero(); n * c * hw];
    out.par_chunks_mut(hw).enumerate().for_each(|(idx, dst)| {
        let (nn, ci) = (idx / c, idx % c);
        for tap in 0..k * k {
            let (ky, kx) = (tap / k, tap % k);
            let src = &cd[((nn * c + ci) * k * k + tap) * hw..][..hw];
            for y in 0..h {
                let iy = y + ky;
                if iy < p || iy - p >= h {
                    continue;
                }
                for xx in 0..w {
                    let ix = xx + kx;
                    if ix < p || ix - p >= w {
                        continue;
                    }
                    let d = &mut dst[(iy - p) * w + ix - p];
                    *d = *d + src[y * w + xx];
                }
            }
        }
    });
    Tensor::new([n, c, h, w], out)
}

pub fn upsample_nearest<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if r == 0 {
        return Err(config_err!("upsample factor must be positive"));
    }
    let (ho, wo) = (h * r, w * r);
    let xd = x.data();
    let mut out = vec![T::zero(); n * c * ho * wo];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(idx, plane)| {
        let src = &xd[idx * h * w..][..h * w];
        for y in 0..ho {
            for xx in 0..wo {
                plane[y * wo + xx] = src[(y / r) * w + xx / r];
            }
        }
    });
    Tensor::new([n, c, ho, wo], out)
}

/// Sums each r×r block (adjoint of nearest upsampling).
pub fn block_sum<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4()?;
    if r == 0 || h % r != 0 || w % r != 0 {
        return Err(dim_err!("block_sum: {}x{} not divisible by {}", h, w, r));
    }
    let (ho, wo) = (h / r, w / r);
    let xd = x.data();
    let mut out = vec![T::zero(); n * c * ho * wo];
    out.par_chunks_mut(ho * wo).enumerate().for_each(|(idx, plane)| {
        let src = &xd[idx * h * w..][..h * w];
        for y in 0..ho {
            for xx in 0..wo {
                let mut acc = T::zero();
                for dy in 0..r {
                    for dx in 0..r {
                        acc = acc + src[(y * r + dy) * w + xx * r + dx];
                    }
                }
                plane[y * wo + xx] = acc;
            }
        }
    });
    Tensor::new([n, c, ho, wo], out)
}

/// Box-filter downsampling by `r` (mean of each r×r block).
pub fn avg_pool<T: Scalar>(x: &Tensor<T>, r: usize) -> Result<Tensor<T>> {
    let inv = T::one() / T::lit((r * r) as f64);
    Ok(block_sum(x, r)?.scale(inv))
}

/// Splits a shape into (outer, extent, inner) around `axis`.
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(dim_err!("axis {} out of range for shape {:?}", axis, shape));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

pub fn narrow<T: Scalar>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
    let (outer, extent, inner) = axis_split(x.shape(), axis)?;
    if start + len > extent {
        return Err(dim_err!("narrow {}..{} exceeds extent {}", start, start + len, extent));
    }
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * extent + start) * inner;
        out.extend_from_slice(&x.data()[base..base + len * inner]);
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::new(shape, out)
}

pub fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = parts.first().ok_or_else(|| dim_err!("concat of zero tensors"))?;
    let (outer, _, inner) = axis_split(first.shape(), axis)?;
    let mut total = 0;
    for p in parts {
        let ok = p.rank() == first.rank()
            && p.shape().iter().zip(first.shape()).enumerate().all(|(d, (a, b))| d == axis || a == b);
        if !ok {
            return Err(dim_err!("concat shape mismatch {:?} vs {:?}", p.shape(), first.shape()));
        }
        total += p.shape()[axis];
    }
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for p in parts {
            let e = p.shape()[axis];
            out.extend_from_slice(&p.data()[o * e * inner..(o + 1) * e * inner]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total;
    Tensor::new(shape, out)
}
