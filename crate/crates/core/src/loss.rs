//! Training objective: L1 plus frequency-domain L1 on the restored image,
//! and the same pair (weighted by α) on the low-resolution output against a
//! box-downsampled target.

use uhddip_tensor::{Scalar, Var};

use crate::error::{CoreError, InLayer, Result};

const LAYER: &str = "loss";

/// The four loss terms and their weighted sum, all scalar vars.
pub struct LossTerms<'t, T: Scalar> {
    pub total: Var<'t, T>,
    pub l1_o: Var<'t, T>,
    pub freq_o: Var<'t, T>,
    pub l1_h: Var<'t, T>,
    pub freq_h: Var<'t, T>,
}

impl<T: Scalar> LossTerms<'_, T> {
    /// `[total, l1_o, freq_o, l1_h, freq_h]` as plain numbers.
    pub fn values(&self) -> [f64; 5] {
        [&self.total, &self.l1_o, &self.freq_o, &self.l1_h, &self.freq_h].map(|v| v.value().item().as_f64())
    }
}

/// Mean absolute value over the stacked real and imaginary parts of the
/// unnormalized 2-D DFT of `diff`.
pub fn frequency_l1<'t, T: Scalar>(diff: &Var<'t, T>) -> Result<Var<'t, T>> {
    let (re, im) = diff.fft2().in_layer(LAYER)?;
    let sum = re.abs_mean().in_layer(LAYER)?.add(&im.abs_mean().in_layer(LAYER)?).in_layer(LAYER)?;
    sum.scale(T::lit(0.5)).in_layer(LAYER)
}

/// Box downsampling of the target by the shuffle factor.
pub fn downsample_target<'t, T: Scalar>(g: &Var<'t, T>, s: usize) -> Result<Var<'t, T>> {
    g.avg_pool(s).in_layer(LAYER)
}

/// `L1(o−g) + λ·F(o−g) + α·(L1(h−g↓) + λ·F(h−g↓))`.
pub fn total_loss<'t, T: Scalar>(
    o: &Var<'t, T>,
    h_lr: &Var<'t, T>,
    g: &Var<'t, T>,
    s: usize,
    alpha: f64,
    lambda: f64,
) -> Result<LossTerms<'t, T>> {
    if o.shape() != g.shape() {
        return Err(CoreError::Dimension(format!("output {:?} vs target {:?}", o.shape(), g.shape())));
    }
    let g_low = downsample_target(g, s)?;
    if h_lr.shape() != g_low.shape() {
        return Err(CoreError::Dimension(format!(
            "low-resolution output {:?} vs downsampled target {:?}",
            h_lr.shape(),
            g_low.shape()
        )));
    }
    let d_o = o.sub(g).in_layer(LAYER)?;
    let d_h = h_lr.sub(&g_low).in_layer(LAYER)?;
    let l1_o = d_o.abs_mean().in_layer(LAYER)?;
    let freq_o = frequency_l1(&d_o)?;
    let l1_h = d_h.abs_mean().in_layer(LAYER)?;
    let freq_h = frequency_l1(&d_h)?;
    let lam = T::lit(lambda);
    let main = l1_o.add(&freq_o.scale(lam).in_layer(LAYER)?).in_layer(LAYER)?;
    let aux = l1_h.add(&freq_h.scale(lam).in_layer(LAYER)?).in_layer(LAYER)?;
    let total = main.add(&aux.scale(T::lit(alpha)).in_layer(LAYER)?).in_layer(LAYER)?;
    Ok(LossTerms { total, l1_o, freq_o, l1_h, freq_h })
}
