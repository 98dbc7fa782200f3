//! Central finite-difference verification of analytic gradients (f64).

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many (evenly strided) elements per input.
    pub max_elements_per_input: Option<usize>,
    /// Gradients smaller than this are compared absolutely.
    pub scale_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { step: 1e-5, max_elements_per_input: None, scale_floor: 1e-3 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Per input: max |analytic − numeric| / max(‖analytic‖∞, ‖numeric‖∞, floor).
    pub per_input: Vec<f64>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.per_input.iter().copied().fold(0.0, f64::max)
    }
}

/// Deterministic projection weights in [-1, 1], so non-scalar outputs reduce
/// to a scalar loss `Σ out ⊙ r` with all output entries exercised.
fn projection(n: usize) -> Tensor<f64> {
    let mut state = 0x9e37_79b9_7f4a_7c15u64;
    Tensor::from_fn([n], |_| {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    })
}

fn project<'t>(tape: &'t Tape<f64>, out: &Var<'t, f64>) -> Result<Var<'t, f64>> {
    let r = projection(out.value().numel()).reshape(out.shape().to_vec())?;
    out.mul(&tape.constant(r))?.sum()
}

/// Compares tape gradients of `f` against central differences at `inputs`.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let analytic: Vec<Tensor<f64>> = {
        let tape = Tape::new();
        let leaves: Vec<_> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = project(&tape, &f(&tape, &leaves)?)?;
        let grads = tape.backward(&loss)?;
        leaves.iter().map(|l| grads.get_or_zeros(l)).collect()
    };

    let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        Ok(project(&tape, &f(&tape, &vars)?)?.value().item())
    };

    let mut per_input = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let n = input.numel();
        let stride = match opts.max_elements_per_input {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let mut worst_diff = 0.0f64;
        let mut scale = opts.scale_floor;
        let mut xs = inputs.to_vec();
        for j in (0..n).step_by(stride) {
            let orig = input.data()[j];
            xs[i].data_mut()[j] = orig + opts.step;
            let plus = eval(&xs)?;
            xs[i].data_mut()[j] = orig - opts.step;
            let minus = eval(&xs)?;
            xs[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[i].data()[j];
            worst_diff = worst_diff.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
        }
        per_input.push(worst_diff / scale);
    }
    Ok(GradCheckReport { per_input })
}
