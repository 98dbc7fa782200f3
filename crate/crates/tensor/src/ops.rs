//! Differentiable operations on [`Var`].

use crate::error::{dim_err, Result};
use crate::kernels::conv::{conv2d_backward, conv2d_forward, Conv2dSpec};
use crate::kernels::fft::{fft2_backward, fft2_complex};
use crate::kernels::layout;
use crate::kernels::matmul::{matmul_backward, matmul_forward, transpose_last2};
use crate::kernels::reduce;
use crate::scalar::Scalar;
use crate::tape::Var;
use crate::tensor::{broadcast_shape, Tensor};

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_C: f64 = 0.044_715;

fn gelu_fwd<T: Scalar>(x: T) -> T {
    let u = T::lit(GELU_K) * (x + T::lit(GELU_C) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let u = T::lit(GELU_K) * (x + T::lit(GELU_C) * x * x * x);
    let t = u.tanh();
    let du = T::lit(GELU_K) * (T::one() + T::lit(3.0 * GELU_C) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * du
}

impl<'t, T: Scalar> Var<'t, T> {
    fn binary_broadcast(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<(Tensor<T>, Vec<usize>)> {
        let shape = broadcast_shape(self.shape(), other.shape())?;
        let a = self.value().broadcast_to(&shape)?;
        let b = other.value().broadcast_to(&shape)?;
        let out = a.zip_map(&b, f).map_err(|_| dim_err!("{op}: shape mismatch"))?;
        Ok((out, shape))
    }

    /// Elementwise sum with same-rank broadcasting.
    pub fn add(&self, other: &Self) -> Result<Self> {
        let (out, _) = self.binary_broadcast(other, "add", |a, b| a + b)?;
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        self.tape().record("add", out, &[self, other], move |g, need| {
            Ok(vec![
                need[0].then(|| g.reduce_to(&sa)).transpose()?,
                need[1].then(|| g.reduce_to(&sb)).transpose()?,
            ])
        })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        let (out, _) = self.binary_broadcast(other, "sub", |a, b| a - b)?;
        let (sa, sb) = (self.shape().to_vec(), other.shape().to_vec());
        self.tape().record("sub", out, &[self, other], move |g, need| {
            Ok(vec![
                need[0].then(|| g.reduce_to(&sa)).transpose()?,
                need[1].then(|| g.scale(-T::one()).reduce_to(&sb)).transpose()?,
            ])
        })
    }

    /// Elementwise product with same-rank broadcasting.
    pub fn mul(&self, other: &Self) -> Result<Self> {
        let (out, shape) = self.binary_broadcast(other, "mul", |a, b| a * b)?;
        let (a, b) = (self.shared(), other.shared());
        self.tape().record("mul", out, &[self, other], move |g, need| {
            let ga = if need[0] {
                let bb = b.broadcast_to(&shape)?;
                Some(g.zip_map(&bb, |x, y| x * y)?.reduce_to(a.shape())?)
            } else {
                None
            };
            let gb = if need[1] {
                let aa = a.broadcast_to(&shape)?;
                Some(g.zip_map(&aa, |x, y| x * y)?.reduce_to(b.shape())?)
            } else {
                None
            };
            Ok(vec![ga, gb])
        })
    }

    pub fn scale(&self, s: T) -> Result<Self> {
        let out = self.value().scale(s);
        self.tape().record("scale", out, &[self], move |g, _| Ok(vec![Some(g.scale(s))]))
    }

    pub fn add_scalar(&self, s: T) -> Result<Self> {
        let out = self.value().map(|v| v + s);
        self.tape().record("add_scalar", out, &[self], |g, _| Ok(vec![Some(g.clone())]))
    }

    pub fn sigmoid(&self) -> Result<Self> {
        let out = self.value().map(|v| T::one() / (T::one() + (-v).exp()));
        let y = out.clone();
        self.tape().record("sigmoid", out, &[self], move |g, _| {
            Ok(vec![Some(g.zip_map(&y, |gv, yv| gv * yv * (T::one() - yv))?)])
        })
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&self) -> Result<Self> {
        let out = self.value().map(gelu_fwd);
        let x = self.shared();
        self.tape().record("gelu", out, &[self], move |g, _| {
            Ok(vec![Some(g.zip_map(&x, |gv, xv| gv * gelu_grad(xv))?)])
        })
    }

    pub fn sum(&self) -> Result<Self> {
        let out = Tensor::scalar(self.value().sum());
        let shape = self.shape().to_vec();
        self.tape().record("sum", out, &[self], move |g, _| Ok(vec![Some(Tensor::full(shape, g.item()))]))
    }

    pub fn mean(&self) -> Result<Self> {
        let n = T::lit(self.value().numel().max(1) as f64);
        self.sum()?.scale(T::one() / n)
    }

    /// Mean absolute value (the L1 loss reduction). The subgradient at 0 is 0.
    pub fn abs_mean(&self) -> Result<Self> {
        let n = T::lit(self.value().numel().max(1) as f64);
        let out = Tensor::scalar(self.value().data().iter().map(|v| v.abs()).sum::<T>() / n);
        let x = self.shared();
        self.tape().record("abs_mean", out, &[self], move |g, _| {
            let s = g.item() / n;
            Ok(vec![Some(x.map(|v| if v > T::zero() { s } else if v < T::zero() { -s } else { T::zero() }))])
        })
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let out = self.to_tensor().reshape(shape)?;
        let orig = self.shape().to_vec();
        self.tape().record("reshape", out, &[self], move |g, _| Ok(vec![Some(g.clone().reshape(orig)?)]))
    }

    pub fn transpose_last2(&self) -> Result<Self> {
        let out = transpose_last2(self.value())?;
        self.tape().record("transpose", out, &[self], |g, _| Ok(vec![Some(transpose_last2(g)?)]))
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Self> {
        let out = layout::narrow(self.value(), axis, start, len)?;
        let shape = self.shape().to_vec();
        self.tape().record("narrow", out, &[self], move |g, _| {
            let (outer, extent, inner) = layout::axis_split(&shape, axis)?;
            let mut full = vec![T::zero(); outer * extent * inner];
            for o in 0..outer {
                let dst = (o * extent + start) * inner;
                full[dst..dst + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            Ok(vec![Some(Tensor::new(shape, full)?)])
        })
    }

    /// Splits `axis` into two equal halves.
    pub fn chunk2(&self, axis: usize) -> Result<(Self, Self)> {
        let e = *self.shape().get(axis).ok_or_else(|| dim_err!("axis {axis} out of range"))?;
        if e % 2 != 0 {
            return Err(dim_err!("cannot halve odd extent {e} on axis {axis}"));
        }
        Ok((self.narrow(axis, 0, e / 2)?, self.narrow(axis, e / 2, e / 2)?))
    }

    pub fn pixel_unshuffle(&self, r: usize) -> Result<Self> {
        let out = layout::pixel_unshuffle(self.value(), r)?;
        self.tape().record("pixel_unshuffle", out, &[self], move |g, _| {
            Ok(vec![Some(layout::pixel_shuffle(g, r)?)])
        })
    }

    pub fn pixel_shuffle(&self, r: usize) -> Result<Self> {
        let out = layout::pixel_shuffle(self.value(), r)?;
        self.tape().record("pixel_shuffle", out, &[self], move |g, _| {
            Ok(vec![Some(layout::pixel_unshuffle(g, r)?)])
        })
    }

    /// k×k zero-padded patch extraction, `[N,C,H,W] -> [N, C·k², H·W]`.
    pub fn unfold(&self, k: usize) -> Result<Self> {
        let out = layout::unfold(self.value(), k)?;
        let (_, c, h, w) = self.value().dims4()?;
        self.tape().record("unfold", out, &[self], move |g, _| Ok(vec![Some(layout::fold(g, c, h, w, k)?)]))
    }

    pub fn upsample_nearest(&self, r: usize) -> Result<Self> {
        let out = layout::upsample_nearest(self.value(), r)?;
        self.tape().record("upsample_nearest", out, &[self], move |g, _| {
            Ok(vec![Some(layout::block_sum(g, r)?)])
        })
    }

    /// Box downsampling by `r`.
    pub fn avg_pool(&self, r: usize) -> Result<Self> {
        let out = layout::avg_pool(self.value(), r)?;
        self.tape().record("avg_pool", out, &[self], move |g, _| {
            let inv = T::one() / T::lit((r * r) as f64);
            Ok(vec![Some(layout::upsample_nearest(g, r)?.scale(inv))])
        })
    }

    /// Mean over H×W, `[N,C,H,W] -> [N,C,1,1]`.
    pub fn global_avg_pool(&self) -> Result<Self> {
        let (n, c, h, w) = self.value().dims4()?;
        let hw = h * w;
        let inv = T::one() / T::lit(hw.max(1) as f64);
        let data = self.value().data().chunks(hw.max(1)).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        let out = Tensor::new([n, c, 1, 1], data)?;
        self.tape().record("global_avg_pool", out, &[self], move |g, _| {
            let mut full = Vec::with_capacity(n * c * hw);
            for &gv in g.data() {
                full.extend(std::iter::repeat_n(gv * inv, hw));
            }
            Ok(vec![Some(Tensor::new([n, c, h, w], full)?)])
        })
    }

    /// 2-D cross-correlation. `w: [Cout, Cin/groups, kh, kw]`, `b: [Cout]`.
    pub fn conv2d(&self, w: &Self, b: Option<&Self>, spec: Conv2dSpec) -> Result<Self> {
        let out = conv2d_forward(self.value(), w.value(), b.map(|b| b.value()), spec)?;
        let (x, wt) = (self.shared(), w.shared());
        let mut inputs = vec![self, w];
        if let Some(b) = b {
            inputs.push(b);
        }
        let has_bias = b.is_some();
        self.tape().record("conv2d", out, &inputs, move |g, need| {
            let want_b = has_bias && need.get(2).copied().unwrap_or(false);
            let (gx, gw, gb) = conv2d_backward(&x, &wt, g, spec, [need[0], need[1], want_b])?;
            let mut grads = vec![gx, gw];
            if has_bias {
                grads.push(gb);
            }
            Ok(grads)
        })
    }

    /// Batched matrix product over the two trailing axes.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let out = matmul_forward(self.value(), other.value())?;
        let (a, b) = (self.shared(), other.shared());
        self.tape().record("matmul", out, &[self, other], move |g, need| {
            let (ga, gb) = matmul_backward(&a, &b, g, [need[0], need[1]])?;
            Ok(vec![ga, gb])
        })
    }

    pub fn softmax(&self, axis: usize) -> Result<Self> {
        let out = reduce::softmax(self.value(), axis)?;
        let y = out.clone();
        self.tape().record("softmax", out, &[self], move |g, _| {
            Ok(vec![Some(reduce::softmax_backward(&y, g, axis)?)])
        })
    }

    /// Layer norm over channels at each pixel, then per-channel affine.
    pub fn layer_norm_channel(&self, gamma: &Self, beta: &Self, eps: T) -> Result<Self> {
        let (out, cache) = reduce::layer_norm_channel(self.value(), gamma.value(), beta.value(), eps)?;
        let gm = gamma.shared();
        self.tape().record("layer_norm", out, &[self, gamma, beta], move |g, _| {
            let (dx, dg, db) = reduce::layer_norm_channel_backward(&cache, &gm, g)?;
            Ok(vec![Some(dx), Some(dg), Some(db)])
        })
    }

    /// Unnormalized 2-D DFT over the trailing axes; returns (real, imaginary).
    pub fn fft2(&self) -> Result<(Self, Self)> {
        let (re, im) = fft2_complex(self.value(), None)?;
        let re_var = self.tape().record("fft2_re", re, &[self], |g, _| {
            let zeros = Tensor::zeros(g.shape().to_vec());
            Ok(vec![Some(fft2_backward(g, &zeros)?)])
        })?;
        let im_var = self.tape().record("fft2_im", im, &[self], |g, _| {
            let zeros = Tensor::zeros(g.shape().to_vec());
            Ok(vec![Some(fft2_backward(&zeros, g)?)])
        })?;
        Ok((re_var, im_var))
    }

    /// Column-wise cosine similarity of two `[N, D, M]` tensors → `[N, 1, M]`.
    pub fn cosine_columns(&self, other: &Self, eps: T) -> Result<Self> {
        let out = reduce::cosine_columns(self.value(), other.value(), eps)?;
        let (u, v) = (self.shared(), other.shared());
        self.tape().record("cosine", out, &[self, other], move |g, _| {
            let (gu, gv) = reduce::cosine_columns_backward(&u, &v, g, eps)?;
            Ok(vec![Some(gu), Some(gv)])
        })
    }
}

/// Concatenation along `axis`.
pub fn concat<'t, T: Scalar>(parts: &[&Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = parts.first().ok_or_else(|| dim_err!("concat of zero tensors"))?;
    let values: Vec<&Tensor<T>> = parts.iter().map(|p| p.value()).collect();
    let out = layout::concat(&values, axis)?;
    let extents: Vec<usize> = parts.iter().map(|p| p.shape()[axis]).collect();
    first.tape().record("concat", out, parts, move |g, need| {
        let mut start = 0;
        let mut grads = Vec::with_capacity(extents.len());
        for (i, &e) in extents.iter().enumerate() {
            grads.push(need[i].then(|| layout::narrow(g, axis, start, e)).transpose()?);
            start += e;
        }
        Ok(grads)
    })
}
