use rayon::prelude::*;

use crate::error::{dim_err, Result};
use crate::kernels::layout::axis_split;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Numerically stable softmax along `axis` (max subtraction).
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (_, len, inner) = axis_split(x.shape(), axis)?;
    let xd = x.data();
    let mut out = vec![T::zero(); x.numel()];
    if len == 0 {
        return Tensor::new(x.shape().to_vec(), out);
    }
    out.par_chunks_mut(len * inner).enumerate().for_each(|(o, block)| {
        let src = &xd[o * len * inner..][..len * inner];
        for i in 0..inner {
            let mut m = T::neg_infinity();
            for l in 0..len {
                m = m.max(src[l * inner + i]);
            }
            let mut z = T::zero();
            for l in 0..len {
                let e = (src[l * inner + i] - m).exp();
                block[l * inner + i] = e;
                z = z + e;
            }
            for l in 0..len {
                block[l * inner + i] = block[l * inner + i] / z;
            }
        }
    });
    Tensor::new(x.shape().to_vec(), out)
}

/// Gradient of softmax given its output `y`: `y ⊙ (g − Σ g⊙y)`.
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, g: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let (_, len, inner) = axis_split(y.shape(), axis)?;
    let (yd, gd) = (y.data(), g.data());
    let mut out = vec![T::zero(); y.numel()];
    if len == 0 {
        return Tensor::new(y.shape().to_vec(), out);
    }
    out.par_chunks_mut(len * inner).enumerate().for_each(|(o, block)| {
        let ys = &yd[o * len * inner..][..len * inner];
        let gs = &gd[o * len * inner..][..len * inner];
        for i in 0..inner {
            let mut dot = T::zero();
            for l in 0..len {
                dot = dot + ys[l * inner + i] * gs[l * inner + i];
            }
            for l in 0..len {
                let j = l * inner + i;
                block[j] = ys[j] * (gs[j] - dot);
            }
        }
    });
    Tensor::new(y.shape().to_vec(), out)
}

/// Saved statistics of a channel layer norm, needed for its backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache<T> {
    /// Normalized input x̂, same shape as x.
    pub xhat: Tensor<T>,
    /// 1/σ per (n, pixel), laid out `[N, H·W]`.
    pub inv_std: Vec<T>,
}

/// Layer norm over the channel axis at every pixel of an `[N,C,H,W]` tensor.
pub fn layer_norm_channel<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(dim_err!("layer_norm affine params must have shape [{}]", c));
    }
    let hw = h * w;
    let xd = x.data();
    let mut xhat = vec![T::zero(); x.numel()];
    let mut inv_std = vec![T::zero(); n * hw];
    let inv_c = T::one() / T::lit(c as f64);
    xhat.par_chunks_mut(c * hw)
        .zip(inv_std.par_chunks_mut(hw))
        .enumerate()
        .for_each(|(nn, (xh, is))| {
            let src = &xd[nn * c * hw..][..c * hw];
            for p in 0..hw {
                let mut mean = T::zero();
                for ch in 0..c {
                    mean = mean + src[ch * hw + p];
                }
                mean = mean * inv_c;
                let mut var = T::zero();
                for ch in 0..c {
                    let d = src[ch * hw + p] - mean;
                    var = var + d * d;
                }
                let inv = T::one() / (var * inv_c + eps).sqrt();
                is[p] = inv;
                for ch in 0..c {
                    xh[ch * hw + p] = (src[ch * hw + p] - mean) * inv;
                }
            }
        });
    let (gd, bd) = (gamma.data(), beta.data());
    let mut out = xhat.clone();
    out.par_chunks_mut(hw).enumerate().for_each(|(idx, plane)| {
        let ch = idx % c;
        for v in plane.iter_mut() {
            *v = *v * gd[ch] + bd[ch];
        }
    });
    let shape = x.shape().to_vec();
    Ok((
        Tensor::new(shape.clone(), out)?,
        LayerNormCache { xhat: Tensor::new(shape, xhat)?, inv_std },
    ))
}

/// Returns (dx, dgamma, dbeta).
pub fn layer_norm_channel_backward<T: Scalar>(
    cache: &LayerNormCache<T>,
    gamma: &Tensor<T>,
    g: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = cache.xhat.dims4()?;
    let hw = h * w;
    let (xh, gd, gam) = (cache.xhat.data(), g.data(), gamma.data());
    let inv_c = T::one() / T::lit(c as f64);
    let mut dx = vec![T::zero(); xh.len()];
    dx.par_chunks_mut(c * hw).enumerate().for_each(|(nn, dxn)| {
        let base = nn * c * hw;
        for p in 0..hw {
            let mut mean_g = T::zero();
            let mut mean_gx = T::zero();
            for ch in 0..c {
                let j = base + ch * hw + p;
                let gh = gd[j] * gam[ch];
                mean_g = mean_g + gh;
                mean_gx = mean_gx + gh * xh[j];
            }
            mean_g = mean_g * inv_c;
            mean_gx = mean_gx * inv_c;
            let inv = cache.inv_std[nn * hw + p];
            for ch in 0..c {
                let j = base + ch * hw + p;
                let gh = gd[j] * gam[ch];
                dxn[ch * hw + p] = inv * (gh - mean_g - xh[j] * mean_gx);
            }
        }
    });
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let (mut sg, mut sb) = (T::zero(), T::zero());
        for nn in 0..n {
            let off = (nn * c + ch) * hw;
            for p in 0..hw {
                sg = sg + gd[off + p] * xh[off + p];
                sb = sb + gd[off + p];
            }
        }
        dgamma[ch] = sg;
        dbeta[ch] = sb;
    }
    Ok((
        Tensor::new(cache.xhat.shape().to_vec(), dx)?,
        Tensor::new([c], dgamma)?,
        Tensor::new([c], dbeta)?,
    ))
}

/// Cosine similarity between matching columns of two `[N, D, M]` tensors:
/// `⟨u,v⟩ / (‖u‖‖v‖ + eps)`, output `[N, 1, M]`.
pub fn cosine_columns<T: Scalar>(u: &Tensor<T>, v: &Tensor<T>, eps: T) -> Result<Tensor<T>> {
    let (n, d, m) = cosine_dims(u, v)?;
    let (ud, vd) = (u.data(), v.data());
    let mut out = vec![T::zero(); n * m];
    for nn in 0..n {
        for j in 0..m {
            let (mut dot, mut uu, mut vv) = (T::zero(), T::zero(), T::zero());
            for k in 0..d {
                let (a, b) = (ud[(nn * d + k) * m + j], vd[(nn * d + k) * m + j]);
                dot = dot + a * b;
                uu = uu + a * a;
                vv = vv + b * b;
            }
            out[nn * m + j] = dot / (uu.sqrt() * vv.sqrt() + eps);
        }
    }
    Tensor::new([n, 1, m], out)
}

pub fn cosine_columns_backward<T: Scalar>(
    u: &Tensor<T>,
    v: &Tensor<T>,
    g: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, d, m) = cosine_dims(u, v)?;
    let (ud, vd, gd) = (u.data(), v.data(), g.data());
    let mut gu = vec![T::zero(); u.numel()];
    let mut gv = vec![T::zero(); v.numel()];
    for nn in 0..n {
        for j in 0..m {
            let (mut dot, mut uu, mut vv) = (T::zero(), T::zero(), T::zero());
            for k in 0..d {
                let (a, b) = (ud[(nn * d + k) * m + j], vd[(nn * d + k) * m + j]);
                dot = dot + a * b;
                uu = uu + a * a;
                vv = vv + b * b;
            }
            let (nu, nv) = (uu.sqrt(), vv.sqrt());
            let den = nu * nv + eps;
            let go = gd[nn * m + j];
            // d/du of dot/den = v/den - dot * nv * (u/nu) / den²
            let cu = if nu > T::zero() { dot * nv / (nu * den * den) } else { T::zero() };
            let cv = if nv > T::zero() { dot * nu / (nv * den * den) } else { T::zero() };
            for k in 0..d {
                let idx = (nn * d + k) * m + j;
                gu[idx] = go * (vd[idx] / den - cu * ud[idx]);
                gv[idx] = go * (ud[idx] / den - cv * vd[idx]);
            }
        }
    }
    Ok((Tensor::new(u.shape().to_vec(), gu)?, Tensor::new(v.shape().to_vec(), gv)?))
}

fn cosine_dims<T: Scalar>(u: &Tensor<T>, v: &Tensor<T>) -> Result<(usize, usize, usize)> {
    if u.shape() != v.shape() || u.rank() != 3 {
        return Err(dim_err!("cosine needs equal [N,D,M] shapes, got {:?} and {:?}", u.shape(), v.shape()));
    }
    Ok((u.shape()[0], u.shape()[1], u.shape()[2]))
}
