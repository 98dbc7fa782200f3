use rayon::prelude::*;

use crate::error::{dim_err, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// (batch, m, k, n) for `a[..., m, k] @ b[..., k, n]`.
pub(crate) fn matmul_dims<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    let (ra, rb) = (a.rank(), b.rank());
    if ra < 2 || ra != rb {
        return Err(dim_err!("matmul needs equal rank >= 2, got {:?} and {:?}", a.shape(), b.shape()));
    }
    if a.shape()[..ra - 2] != b.shape()[..rb - 2] {
        return Err(dim_err!("matmul batch dims differ: {:?} vs {:?}", a.shape(), b.shape()));
    }
    let (m, k) = (a.shape()[ra - 2], a.shape()[ra - 1]);
    let (k2, n) = (b.shape()[rb - 2], b.shape()[rb - 1]);
    if k != k2 {
        return Err(dim_err!("matmul inner dims differ: {} vs {}", k, k2));
    }
    let batch = a.shape()[..ra - 2].iter().product();
    Ok((batch, m, k, n))
}

pub fn matmul_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (batch, m, k, n) = matmul_dims(a, b)?;
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); batch * m * n];
    if n > 0 {
        out.par_chunks_mut(n).enumerate().for_each(|(row, orow)| {
            let bi = row / m.max(1);
            let arow = &ad[row * k..(row + 1) * k];
            let bmat = &bd[bi * k * n..(bi + 1) * k * n];
            for (kk, &av) in arow.iter().enumerate() {
                let brow = &bmat[kk * n..(kk + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o = *o + av * bv;
                }
            }
        });
    }
    let mut shape = a.shape().to_vec();
    let r = shape.len();
    shape[r - 1] = n;
    Tensor::new(shape, out)
}

/// Gradients of `a @ b` given the output gradient.
pub fn matmul_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    g: &Tensor<T>,
    need: [bool; 2],
) -> Result<(Option<Tensor<T>>, Option<Tensor<T>>)> {
    let (batch, m, k, n) = matmul_dims(a, b)?;
    let (ad, bd, gd) = (a.data(), b.data(), g.data());
    let ga = need[0].then(|| {
        let mut ga = vec![T::zero(); batch * m * k];
        if k > 0 {
            ga.par_chunks_mut(k).enumerate().for_each(|(row, garow)| {
                let bi = row / m.max(1);
                let grow = &gd[row * n..(row + 1) * n];
                let bmat = &bd[bi * k * n..(bi + 1) * k * n];
                for (kk, slot) in garow.iter_mut().enumerate() {
                    let brow = &bmat[kk * n..(kk + 1) * n];
                    *slot = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                }
            });
        }
        Tensor::new(a.shape().to_vec(), ga)
    });
    let gb = need[1].then(|| {
        let mut gb = vec![T::zero(); batch * k * n];
        if n > 0 {
            gb.par_chunks_mut(n).enumerate().for_each(|(row, gbrow)| {
                let (bi, kk) = (row / k.max(1), row % k.max(1));
                for mm in 0..m {
                    let av = ad[(bi * m + mm) * k + kk];
                    let grow = &gd[(bi * m + mm) * n..(bi * m + mm + 1) * n];
                    for (o, &gv) in gbrow.iter_mut().zip(grow) {
                        *o = *o + av * gv;
                    }
                }
            });
        }
        Tensor::new(b.shape().to_vec(), gb)
    });
    Ok((ga.transpose()?, gb.transpose()?))
}

/// Swaps the two trailing axes.
pub fn transpose_last2<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let r = x.rank();
    if r < 2 {
        return Err(dim_err!("transpose needs rank >= 2, got {:?}", x.shape()));
    }
    let (rows, cols) = (x.shape()[r - 2], x.shape()[r - 1]);
    let plane = rows * cols;
    let mut out = vec![T::zero(); x.numel()];
    if plane > 0 {
        out.par_chunks_mut(plane).zip(x.data().par_chunks(plane)).for_each(|(o, i)| {
            for rr in 0..rows {
                for cc in 0..cols {
                    o[cc * rows + rr] = i[rr * cols + cc];
                }
            }
        });
    }
    let mut shape = x.shape().to_vec();
    shape.swap(r - 2, r - 1);
    Tensor::new(shape, out)
}
