#![allow(dead_code)]

pub mod oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uhddip_core::{Builder, NetConfig, ParamStore};
use uhddip_tensor::{Scalar, Tensor, TensorError};

pub fn rand_tensor<T: Scalar>(shape: &[usize], seed: u64, scale: f64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape.to_vec(), |_| T::lit(rng.gen_range(-scale..scale)))
}

/// Builds a block in a fresh store.
pub fn build<T: Scalar, R>(seed: u64, f: impl FnOnce(&mut Builder<'_, T>) -> R) -> (R, ParamStore<T>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = f(&mut Builder::new(&mut store, &mut rng));
    (out, store)
}

/// Overwrites every parameter with uniform values in `[-scale, scale]`, so
/// zero-initialized residual scalers do not hide gradient paths.
pub fn randomize<T: Scalar>(store: &mut ParamStore<T>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in store.values_mut() {
        for v in t.data_mut() {
            *v = T::lit(rng.gen_range(-scale..scale));
        }
    }
}

pub fn set_param<T: Scalar>(store: &mut ParamStore<T>, name: &str, value: f64) {
    let t = store.by_name_mut(name).unwrap_or_else(|| panic!("no parameter {name}"));
    for v in t.data_mut() {
        *v = T::lit(value);
    }
}

/// Sets every parameter whose name contains `fragment`.
pub fn set_matching<T: Scalar>(store: &mut ParamStore<T>, fragment: &str, value: f64) -> usize {
    let names: Vec<String> = store.names().iter().filter(|n| n.contains(fragment)).cloned().collect();
    for n in &names {
        set_param(store, n, value);
    }
    names.len()
}

pub fn tensor_err(e: uhddip_core::CoreError) -> TensorError {
    TensorError::Usage(e.to_string())
}

/// Small configuration used for micro-model tests.
pub fn micro_config() -> NetConfig {
    let mut cfg = NetConfig { channels: 4, pfi_count: 1, heads: 2, shuffle: 4, dpfi_factor: 2, ..NetConfig::default() };
    cfg.blocks.lr_after_pfi = 1;
    cfg.blocks.lr_intermediate = 1;
    cfg
}

pub fn param(store: &ParamStore<f64>, name: &str) -> Tensor<f64> {
    store.by_name(name).unwrap_or_else(|| panic!("no parameter {name}")).clone()
}
