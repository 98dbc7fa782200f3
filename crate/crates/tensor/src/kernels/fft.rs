//! Radix-2 decimation-in-time FFT over the two trailing axes.

use rayon::prelude::*;

use crate::error::{config_err, dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// In-place unnormalized forward DFT of one complex sequence.
/// `re.len()` must be a power of two.
pub fn fft_in_place<T: Scalar>(re: &mut [T], im: &mut [T]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two() && im.len() == n);
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let half = len / 2;
        let step = -2.0 * std::f64::consts::PI / len as f64;
        for k in 0..half {
            let (s, c) = (step * k as f64).sin_cos();
            let (wr, wi) = (T::lit(c), T::lit(s));
            let mut start = 0;
            while start < n {
                let (a, b) = (start + k, start + k + half);
                let tr = re[b] * wr - im[b] * wi;
                let ti = re[b] * wi + im[b] * wr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] = re[a] + tr;
                im[a] = im[a] + ti;
                start += len;
            }
        }
        len <<= 1;
    }
}

fn fft2_plane<T: Scalar>(re: &mut [T], im: &mut [T], h: usize, w: usize) {
    for y in 0..h {
        fft_in_place(&mut re[y * w..(y + 1) * w], &mut im[y * w..(y + 1) * w]);
    }
    let mut cr = vec![T::zero(); h];
    let mut ci = vec![T::zero(); h];
    for x in 0..w {
        for y in 0..h {
            cr[y] = re[y * w + x];
            ci[y] = im[y * w + x];
        }
        fft_in_place(&mut cr, &mut ci);
        for y in 0..h {
            re[y * w + x] = cr[y];
            im[y * w + x] = ci[y];
        }
    }
}

pub(crate) fn fft_plane_dims<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize)> {
    let r = x.rank();
    if r < 2 {
        return Err(dim_err!("fft2 needs rank >= 2, got {:?}", x.shape()));
    }
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(config_err!("fft2 needs power-of-two extents, got {}x{}", h, w));
    }
    Ok((h, w))
}

/// Complex 2-D DFT over the trailing axes. `im = None` means a real input.
pub fn fft2_complex<T: Scalar>(re: &Tensor<T>, im: Option<&Tensor<T>>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (h, w) = fft_plane_dims(re)?;
    let mut out_re = re.data().to_vec();
    let mut out_im = match im {
        Some(im) => {
            if im.shape() != re.shape() {
                return Err(dim_err!("fft2 real/imag shapes differ"));
            }
            im.data().to_vec()
        }
        None => vec![T::zero(); re.numel()],
    };
    let plane = h * w;
    out_re
        .par_chunks_mut(plane)
        .zip(out_im.par_chunks_mut(plane))
        .for_each(|(r, i)| fft2_plane(r, i, h, w));
    Ok((Tensor::new(re.shape().to_vec(), out_re)?, Tensor::new(re.shape().to_vec(), out_im)?))
}

/// Gradient of a real input given gradients of the real and imaginary outputs:
/// `Re(FFT2(g_re - i g_im))`.
pub fn fft2_backward<T: Scalar>(g_re: &Tensor<T>, g_im: &Tensor<T>) -> Result<Tensor<T>> {
    let neg_im = g_im.scale(-T::one());
    Ok(fft2_complex(g_re, Some(&neg_im))?.0)
}
