//! Direct 2-D cross-correlation with grouped channels.
//!
//! Every output plane is produced by exactly one worker in a fixed summation
//! order, so results do not depend on the rayon pool size.

use rayon::prelude::*;

use crate::error::{config_err, dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self { stride: 1, padding: 0, groups: 1 }
    }
}

impl Conv2dSpec {
    /// Stride 1, "same" padding for an odd kernel.
    pub fn same(kernel: usize) -> Self {
        Self { stride: 1, padding: kernel / 2, groups: 1 }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub ho: usize,
    pub wo: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvGeom {
    pub fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    pub fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.n, self.cout, self.ho, self.wo]
    }
}

pub(crate) fn conv_geometry<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: Conv2dSpec,
) -> Result<ConvGeom> {
    let (n, cin, h, wd) = x.dims4()?;
    let (cout, cin_g, kh, kw) = w.dims4()?;
    if spec.groups == 0 || spec.stride == 0 {
        return Err(config_err!("conv2d needs groups >= 1 and stride >= 1"));
    }
    if cin % spec.groups != 0 || cout % spec.groups != 0 {
        return Err(config_err!(
            "groups {} must divide input channels {} and output channels {}",
            spec.groups,
            cin,
            cout
        ));
    }
    if cin / spec.groups != cin_g {
        return Err(dim_err!(
            "weight expects {} input channels per group, input provides {}",
            cin_g,
            cin / spec.groups
        ));
    }
    if let Some(b) = b {
        if b.shape() != [cout] {
            return Err(dim_err!("bias shape {:?} != [{}]", b.shape(), cout));
        }
    }
    if h + 2 * spec.padding < kh || wd + 2 * spec.padding < kw {
        return Err(dim_err!("kernel {}x{} larger than padded input {}x{}", kh, kw, h, wd));
    }
    let ho = (h + 2 * spec.padding - kh) / spec.stride + 1;
    let wo = (wd + 2 * spec.padding - kw) / spec.stride + 1;
    Ok(ConvGeom {
        n,
        cin,
        h,
        w: wd,
        cout,
        kh,
        kw,
        ho,
        wo,
        stride: spec.stride,
        pad: spec.padding,
        groups: spec.groups,
    })
}

/// Output columns `[lo, hi)` whose input column `ox*stride + k - pad` is in bounds,
/// for stride 1 only.
#[inline]
fn unit_stride_span(k: usize, pad: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k);
    let hi = (w + pad).saturating_sub(k).min(wo);
    (lo, hi.max(lo))
}

#[inline]
fn input_index(o: usize, k: usize, g: &ConvGeom, extent: usize) -> Option<usize> {
    let i = o * g.stride + k;
    if i < g.pad || i - g.pad >= extent {
        None
    } else {
        Some(i - g.pad)
    }
}

/// out_plane += wv * shifted(in_plane)
fn accumulate_plane<T: Scalar>(out: &mut [T], inp: &[T], wv: T, ky: usize, kx: usize, g: &ConvGeom) {
    for oy in 0..g.ho {
        let Some(iy) = input_index(oy, ky, g, g.h) else { continue };
        let in_row = &inp[iy * g.w..(iy + 1) * g.w];
        let out_row = &mut out[oy * g.wo..(oy + 1) * g.wo];
        if g.stride == 1 {
            let (lo, hi) = unit_stride_span(kx, g.pad, g.w, g.wo);
            let src = &in_row[lo + kx - g.pad..];
            for (o, &i) in out_row[lo..hi].iter_mut().zip(src) {
                *o = *o + wv * i;
            }
        } else {
            for (ox, o) in out_row.iter_mut().enumerate() {
                if let Some(ix) = input_index(ox, kx, g, g.w) {
                    *o = *o + wv * in_row[ix];
                }
            }
        }
    }
}

/// in_plane_grad += wv * unshifted(out_grad)
fn scatter_plane<T: Scalar>(gin: &mut [T], gout: &[T], wv: T, ky: usize, kx: usize, g: &ConvGeom) {
    for oy in 0..g.ho {
        let Some(iy) = input_index(oy, ky, g, g.h) else { continue };
        let gi_row = &mut gin[iy * g.w..(iy + 1) * g.w];
        let go_row = &gout[oy * g.wo..(oy + 1) * g.wo];
        if g.stride == 1 {
            let (lo, hi) = unit_stride_span(kx, g.pad, g.w, g.wo);
            let dst = &mut gi_row[lo + kx - g.pad..];
            for (d, &s) in dst.iter_mut().zip(&go_row[lo..hi]) {
                *d = *d + wv * s;
            }
        } else {
            for (ox, &s) in go_row.iter().enumerate() {
                if let Some(ix) = input_index(ox, kx, g, g.w) {
                    gi_row[ix] = gi_row[ix] + wv * s;
                }
            }
        }
    }
}

/// Σ gout[oy,ox] * in[iy,ix] for one kernel tap.
fn correlate_plane<T: Scalar>(gout: &[T], inp: &[T], ky: usize, kx: usize, g: &ConvGeom) -> T {
    let mut acc = T::zero();
    for oy in 0..g.ho {
        let Some(iy) = input_index(oy, ky, g, g.h) else { continue };
        let in_row = &inp[iy * g.w..(iy + 1) * g.w];
        let go_row = &gout[oy * g.wo..(oy + 1) * g.wo];
        if g.stride == 1 {
            let (lo, hi) = unit_stride_span(kx, g.pad, g.w, g.wo);
            let src = &in_row[lo + kx - g.pad..];
            for (&a, &b) in go_row[lo..hi].iter().zip(src) {
                acc = acc + a * b;
            }
        } else {
            for (ox, &a) in go_row.iter().enumerate() {
                if let Some(ix) = input_index(ox, kx, g, g.w) {
                    acc = acc + a * in_row[ix];
                }
            }
        }
    }
    acc
}

pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: Option<&Tensor<T>>,
    spec: Conv2dSpec,
) -> Result<Tensor<T>> {
    let g = conv_geometry(x, w, b, spec)?;
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    let taps = g.kh * g.kw;
    let xd = x.data();
    let wd = w.data();
    let mut out = vec![T::zero(); g.n * g.cout * plane_out];
    out.par_chunks_mut(plane_out).enumerate().for_each(|(idx, plane)| {
        let (n, co) = (idx / g.cout, idx % g.cout);
        if let Some(b) = b {
            plane.fill(b.data()[co]);
        }
        let group = co / g.cout_g();
        for cil in 0..g.cin_g() {
            let ci = group * g.cin_g() + cil;
            let inp = &xd[(n * g.cin + ci) * plane_in..][..plane_in];
            let wrow = &wd[(co * g.cin_g() + cil) * taps..][..taps];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = wrow[ky * g.kw + kx];
                    accumulate_plane(plane, inp, wv, ky, kx, &g);
                }
            }
        }
    });
    Tensor::new(g.out_shape(), out)
}

/// Gradients of conv2d w.r.t. its input, weight and bias.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    gout: &Tensor<T>,
    spec: Conv2dSpec,
    need: [bool; 3],
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>, Option<Tensor<T>>)> {
    let g = conv_geometry(x, w, None, spec)?;
    if gout.shape() != g.out_shape() {
        return Err(dim_err!("conv2d grad shape {:?} != {:?}", gout.shape(), g.out_shape()));
    }
    let plane_in = g.h * g.w;
    let plane_out = g.ho * g.wo;
    let taps = g.kh * g.kw;
    let (xd, wd, gd) = (x.data(), w.data(), gout.data());

    let gx = need[0].then(|| {
        let mut gx = vec![T::zero(); g.n * g.cin * plane_in];
        gx.par_chunks_mut(plane_in).enumerate().for_each(|(idx, plane)| {
            let (n, ci) = (idx / g.cin, idx % g.cin);
            let group = ci / g.cin_g();
            let cil = ci % g.cin_g();
            for col in 0..g.cout_g() {
                let co = group * g.cout_g() + col;
                let go = &gd[(n * g.cout + co) * plane_out..][..plane_out];
                let wrow = &wd[(co * g.cin_g() + cil) * taps..][..taps];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        scatter_plane(plane, go, wrow[ky * g.kw + kx], ky, kx, &g);
                    }
                }
            }
        });
        Tensor::new([g.n, g.cin, g.h, g.w], gx)
    });

    let gw = need[1].then(|| {
        let mut gw = vec![T::zero(); w.numel()];
        gw.par_chunks_mut(g.cin_g() * taps).enumerate().for_each(|(co, chunk)| {
            let group = co / g.cout_g();
            for cil in 0..g.cin_g() {
                let ci = group * g.cin_g() + cil;
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let mut acc = T::zero();
                        for n in 0..g.n {
                            let go = &gd[(n * g.cout + co) * plane_out..][..plane_out];
                            let inp = &xd[(n * g.cin + ci) * plane_in..][..plane_in];
                            acc = acc + correlate_plane(go, inp, ky, kx, &g);
                        }
                        chunk[cil * taps + ky * g.kw + kx] = acc;
                    }
                }
            }
        });
        Tensor::new(w.shape().to_vec(), gw)
    });

    let gb = need[2].then(|| {
        let mut gb = vec![T::zero(); g.cout];
        for (co, slot) in gb.iter_mut().enumerate() {
            let mut acc = T::zero();
            for n in 0..g.n {
                acc = acc + gd[(n * g.cout + co) * plane_out..][..plane_out].iter().copied().sum::<T>();
            }
            *slot = acc;
        }
        Tensor::new([g.cout], gb)
    });

    Ok((gx.transpose()?, gw.transpose()?, gb.transpose()?))
}
