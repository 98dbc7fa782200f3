//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p uhddip-cli --test acceptance`; pass criterion
//! numbers as arguments (`-- 1 2 9`) to run a subset.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uhddip_core::data::Example;
use uhddip_core::eval::{baseline, evaluate};
use uhddip_core::layers::{Gdfn, Mtca, NafBlock};
use uhddip_core::pfi::{DualGuidedFilter, PatchSimilarity, Pfi, Spfi};
use uhddip_core::{lr_at, Binding, Builder, Model32, Model64, NetConfig, ParamStore, RunConfig, Tiling, Trainer};
use uhddip_imaging::dataset::write_procedural_scenes;
use uhddip_imaging::synth::gen_mask;
use uhddip_imaging::{build_dataset, CannyParams, ImageBuffer, Split, SynthSpec, WeatherKind, LUMA_601};
use uhddip_tensor::gradcheck::{check_gradients, GradCheckOptions};
use uhddip_tensor::{concat, Conv2dSpec, Tape, Tensor, TensorError, Var};

const PARAM_WINDOW: (usize, usize) = (730_000, 890_000);
const FLOP_TARGET: f64 = 34.73e9;
const FLOP_TOLERANCE: f64 = 0.15;
const LR_INIT: f64 = 5e-4;
const LR_FINAL: f64 = 1e-7;
const BLOCK_GRAD_TOL: f64 = 1e-4;
const MODEL_GRAD_TOL: f64 = 1e-3;
const ORACLE_TOL: f64 = 1e-4;
const ORACLE_INSTANCES: usize = 20;
const ANGLE_TOL_DEG: f64 = 3.0;
const DENSITY_LEVELS: [u8; 4] = [55, 67, 100, 165];
const LOSS_RATIO_MAX: f64 = 0.5;
const PSNR_GAIN_MIN_DB: f64 = 3.0;

type Check = fn() -> Result<String>;

fn main() {
    let criteria: [(u8, &str, Duration, Check); 9] = [
        (1, "parameter budget", Duration::from_secs(1), param_budget),
        (2, "FLOP budget", Duration::from_secs(1), flop_budget),
        (3, "schedule endpoints", Duration::from_secs(1), schedule_endpoints),
        (4, "gradient suite", Duration::from_secs(300), gradient_suite),
        (5, "oracle equivalence", Duration::from_secs(120), oracle_equivalence),
        (6, "identity invariants", Duration::from_secs(60), identity_invariants),
        (7, "synthesis statistics", Duration::from_secs(180), synthesis_statistics),
        (8, "desk-scale learning", Duration::from_secs(900), desk_learning),
        (9, "ablation smoke", Duration::from_secs(300), ablation_smoke),
    ];
    let only: Vec<u8> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, budget, check) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if took <= budget => (true, d),
            Ok(d) => (false, format!("{d}; exceeded the {budget:?} runtime budget")),
            Err(e) => (false, format!("{e:#}")),
        };
        failed += usize::from(!ok);
        println!("criterion {n} {} {name}: {detail} [{:.1?}]", if ok { "PASS" } else { "FAIL" }, took);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng, scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-scale..scale))
}

fn build<R>(seed: u64, f: impl FnOnce(&mut Builder<'_, f64>) -> R) -> (R, ParamStore<f64>) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = f(&mut Builder::new(&mut store, &mut rng));
    (out, store)
}

/// Replaces every parameter with uniform noise so zero-initialized
/// residual scalers do not hide any path.
fn randomize(store: &mut ParamStore<f64>, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in store.values_mut() {
        t.data_mut().iter_mut().for_each(|v| *v = rng.gen_range(-scale..scale));
    }
}

fn reference_config() -> Result<RunConfig> {
    let cfg = RunConfig::preset("default")?;
    let n = &cfg.net;
    ensure!(
        (n.channels, n.heads, n.pfi_count, n.shuffle, n.dpfi_factor) == (16, 8, 3, 8, 4),
        "default preset is not C=16, heads=8, L=3, S=8, D=4"
    );
    Ok(cfg)
}

// ---------------------------------------------------------------- 1 to 3

fn param_budget() -> Result<String> {
    let cfg = reference_config()?;
    let model = Model32::new(&cfg.net, 0)?;
    let table = uhddip_cli::describe_table(&model.describe(1024, 1024), 1024, 1024);
    let total = table.lines().find(|l| l.starts_with("total")).context("describe has no total row")?;
    let params: usize = total.split_whitespace().nth(1).context("total row")?.parse()?;
    ensure!(params == model.count_params(), "table total {params} disagrees with the store");
    ensure!((PARAM_WINDOW.0..=PARAM_WINDOW.1).contains(&params), "{params} parameters outside {PARAM_WINDOW:?}");
    Ok(format!("{params} parameters in [{}, {}]", PARAM_WINDOW.0, PARAM_WINDOW.1))
}

fn flop_budget() -> Result<String> {
    let cfg = reference_config()?;
    let flops = Model32::new(&cfg.net, 0)?.count_flops(1024, 1024) as f64;
    let dev = flops / FLOP_TARGET - 1.0;
    ensure!(dev.abs() <= FLOP_TOLERANCE, "{:.2} GFLOPs is {:+.1}% off", flops / 1e9, dev * 100.0);
    Ok(format!("{:.2} GFLOPs at 1024x1024, {:+.1}% from {:.2} G", flops / 1e9, dev * 100.0, FLOP_TARGET / 1e9))
}

fn schedule_endpoints() -> Result<String> {
    let t = reference_config()?.train;
    let (first, last) = (lr_at(0, &t), lr_at(t.iters, &t));
    ensure!(first == LR_INIT && last == LR_FINAL, "lr_at(0)={first:e}, lr_at({})={last:e}", t.iters);
    Ok(format!("lr_at(0)={first:e}, lr_at({})={last:e} exactly", t.iters))
}

// ---------------------------------------------------------------- 4

fn to_tensor_err(e: uhddip_core::CoreError) -> TensorError {
    TensorError::Usage(e.to_string())
}

/// Gradient check over `inputs` followed by every parameter of `store`.
fn block_check<F>(store: &ParamStore<f64>, inputs: Vec<Tensor<f64>>, max_elements: Option<usize>, f: F) -> Result<f64>
where
    F: for<'t> Fn(&Binding<'t, f64>, &[Var<'t, f64>]) -> uhddip_core::Result<Var<'t, f64>>,
{
    let k = inputs.len();
    let mut all = inputs;
    all.extend(store.values().iter().cloned());
    let opts = GradCheckOptions { max_elements_per_input: max_elements, ..GradCheckOptions::default() };
    let report = check_gradients(
        &all,
        |_: &Tape<f64>, vars| {
            let p = Binding::from_vars(vars[k..].to_vec());
            f(&p, &vars[..k]).map_err(to_tensor_err)
        },
        &opts,
    )?;
    Ok(report.max_rel_error())
}

type OpFn = for<'t> fn(&'t Tape<f64>, &[Var<'t, f64>]) -> uhddip_tensor::Result<Var<'t, f64>>;

fn op_cases() -> Vec<(&'static str, Vec<Vec<usize>>, OpFn)> {
    let x4 = vec![2, 3, 4, 4];
    vec![
        ("add", vec![x4.clone(), vec![1, 3, 1, 1]], |_, v| v[0].add(&v[1])),
        ("sub", vec![x4.clone(), x4.clone()], |_, v| v[0].sub(&v[1])),
        ("mul", vec![x4.clone(), vec![1, 3, 1, 1]], |_, v| v[0].mul(&v[1])),
        ("scale", vec![x4.clone()], |_, v| v[0].scale(-1.7)),
        ("add_scalar", vec![x4.clone()], |_, v| v[0].add_scalar(0.3)),
        ("sigmoid", vec![x4.clone()], |_, v| v[0].sigmoid()),
        ("gelu", vec![x4.clone()], |_, v| v[0].gelu()),
        ("sum", vec![x4.clone()], |_, v| v[0].sum()),
        ("mean", vec![x4.clone()], |_, v| v[0].mean()),
        ("abs_mean", vec![x4.clone()], |_, v| v[0].abs_mean()),
        ("reshape", vec![x4.clone()], |_, v| v[0].reshape([6, 16])),
        ("transpose_last2", vec![vec![2, 3, 5]], |_, v| v[0].transpose_last2()),
        ("narrow", vec![x4.clone()], |_, v| v[0].narrow(1, 1, 2)),
        ("chunk2", vec![x4.clone()], |_, v| {
            let (a, b) = v[0].narrow(1, 0, 2)?.chunk2(1)?;
            a.mul(&b)
        }),
        ("concat", vec![x4.clone(), vec![2, 1, 4, 4]], |_, v| concat(&[&v[0], &v[1]], 1)),
        ("pixel_unshuffle", vec![x4.clone()], |_, v| v[0].pixel_unshuffle(2)),
        ("pixel_shuffle", vec![vec![1, 8, 2, 3]], |_, v| v[0].pixel_shuffle(2)),
        ("unfold", vec![x4.clone()], |_, v| v[0].unfold(3)),
        ("upsample_nearest", vec![vec![1, 2, 3, 2]], |_, v| v[0].upsample_nearest(2)),
        ("avg_pool", vec![x4.clone()], |_, v| v[0].avg_pool(2)),
        ("global_avg_pool", vec![x4.clone()], |_, v| v[0].global_avg_pool()),
        ("conv2d", vec![x4.clone(), vec![5, 3, 3, 3], vec![5]], |_, v| {
            v[0].conv2d(&v[1], Some(&v[2]), Conv2dSpec::same(3))
        }),
        ("conv2d_strided", vec![x4.clone(), vec![4, 3, 3, 3]], |_, v| {
            v[0].conv2d(&v[1], None, Conv2dSpec { stride: 2, padding: 1, groups: 1 })
        }),
        ("conv2d_depthwise", vec![x4.clone(), vec![3, 1, 3, 3], vec![3]], |_, v| {
            v[0].conv2d(&v[1], Some(&v[2]), Conv2dSpec::same(3).with_groups(3))
        }),
        ("matmul", vec![vec![2, 3, 4], vec![2, 4, 5]], |_, v| v[0].matmul(&v[1])),
        ("softmax", vec![vec![2, 3, 5]], |_, v| v[0].softmax(2)),
        ("layer_norm_channel", vec![x4.clone(), vec![3], vec![3]], |_, v| v[0].layer_norm_channel(&v[1], &v[2], 1e-6)),
        ("fft2", vec![vec![2, 4, 8]], |_, v| {
            let (re, im) = v[0].fft2()?;
            concat(&[&re, &im], 0)
        }),
        ("cosine_columns", vec![vec![2, 6, 5], vec![2, 6, 5]], |_, v| v[0].cosine_columns(&v[1], 1e-8)),
    ]
}

fn small_lr_config() -> NetConfig {
    NetConfig { channels: 2, lr_channels: Some(4), heads: 2, dpfi_factor: 2, ..NetConfig::default() }
}

fn micro_config() -> NetConfig {
    let mut cfg = NetConfig { channels: 4, pfi_count: 1, heads: 2, shuffle: 4, dpfi_factor: 2, ..NetConfig::default() };
    cfg.blocks.lr_after_pfi = 1;
    cfg.blocks.lr_intermediate = 1;
    cfg
}

fn gradient_suite() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst_op = ("", 0.0f64);
    let cases = op_cases();
    for (name, shapes, f) in &cases {
        let inputs: Vec<_> = shapes.iter().map(|s| rand_tensor(s, &mut rng, 1.0)).collect();
        let err = check_gradients(&inputs, *f, &GradCheckOptions::default())?.max_rel_error();
        ensure!(err < BLOCK_GRAD_TOL, "op {name}: relative error {err:e}");
        if err > worst_op.1 {
            worst_op = (name, err);
        }
    }

    let cfg = small_lr_config();
    let mut blocks = Vec::new();
    let (naf, mut s) = build(1, |b| NafBlock::new(b, "naf", 4));
    randomize(&mut s, 2, 0.5);
    blocks.push(("NAFBlock", block_check(&s, vec![rand_tensor(&[1, 4, 5, 6], &mut rng, 1.0)], None, |p, v| naf.forward(p, &v[0]))?));
    let (mtca, mut s) = build(3, |b| Mtca::new(b, "mtca", 4, 2));
    let mtca = mtca?;
    randomize(&mut s, 4, 0.5);
    let xs = vec![rand_tensor(&[1, 4, 4, 5], &mut rng, 1.0), rand_tensor(&[1, 4, 4, 5], &mut rng, 1.0)];
    blocks.push(("MTCA", block_check(&s, xs, None, |p, v| mtca.forward(p, &v[0], &v[1]))?));
    let (gdfn, mut s) = build(5, |b| Gdfn::new(b, "gdfn", 4, 8));
    randomize(&mut s, 6, 0.5);
    blocks.push(("GDFN", block_check(&s, vec![rand_tensor(&[1, 4, 5, 4], &mut rng, 1.0)], None, |p, v| gdfn.forward(p, &v[0]))?));
    let (spfi, mut s) = build(7, |b| Spfi::new(b, &cfg));
    let spfi = spfi?;
    randomize(&mut s, 8, 0.4);
    let xs = (0..3).map(|_| rand_tensor(&[1, 4, 4, 4], &mut rng, 1.0)).collect();
    blocks.push((
        "SPFI",
        block_check(&s, xs, None, |p, v| {
            let (n, g) = spfi.forward(p, &v[0], &v[1], &v[2])?;
            Ok(concat(&[&n, &g], 1)?)
        })?,
    ));
    let ((sim, guided), mut s) = build(9, |b| (PatchSimilarity::new(b, &cfg), DualGuidedFilter::new(b, &cfg)));
    randomize(&mut s, 10, 0.4);
    let xs = (0..2).map(|_| rand_tensor(&[1, 4, 4, 6], &mut rng, 1.0)).collect();
    blocks.push((
        "DPFI",
        block_check(&s, xs, None, |p, v| {
            let w = sim.forward(p, &v[0], &v[1])?;
            let (a, b) = guided.forward(p, &v[0], &v[1], &w)?;
            Ok(concat(&[&a, &b], 1)?)
        })?,
    ));
    let (pfi, mut s) = build(11, |b| Pfi::new(b, "pfi", &cfg));
    let pfi = pfi?;
    randomize(&mut s, 12, 0.4);
    let xs = (0..3).map(|_| rand_tensor(&[1, 4, 4, 4], &mut rng, 1.0)).collect();
    blocks.push((
        "PFI",
        block_check(&s, xs, Some(24), |p, v| {
            let o = pfi.forward(p, &v[0], &v[1], &v[2])?;
            Ok(concat(&[&o.feature, &o.normal, &o.gradient], 1)?)
        })?,
    ));
    for (name, err) in &blocks {
        ensure!(*err < BLOCK_GRAD_TOL, "{name}: relative error {err:e}");
    }

    let mut model = Model64::new(&micro_config(), 13)?;
    randomize(model.params_mut(), 14, 0.3);
    let unit = |rng: &mut ChaCha8Rng, c| rand_tensor(&[1, c, 32, 32], rng, 1.0).map(|v| 0.5 + 0.5 * v);
    let xs = vec![unit(&mut rng, 3), unit(&mut rng, 3), unit(&mut rng, 1)];
    let model_err = block_check(model.params(), xs, Some(6), |p, v| {
        let out = model.forward(p, &v[0], &v[1], &v[2])?;
        let o = out.restored.reshape([3 * 32 * 32])?;
        let h = out.h_lr.reshape([3 * 8 * 8])?;
        Ok(concat(&[&o, &h], 0)?)
    })?;
    ensure!(model_err < MODEL_GRAD_TOL, "full micro-model: relative error {model_err:e}");

    let worst_block = blocks.iter().cloned().fold(("", 0.0f64), |a, b| if b.1 > a.1 { b } else { a });
    Ok(format!(
        "{} ops (worst {} {:.1e}), {} blocks (worst {} {:.1e}) < {BLOCK_GRAD_TOL:e}; micro-model {:.1e} < {MODEL_GRAD_TOL:e}",
        cases.len(),
        worst_op.0,
        worst_op.1,
        blocks.len(),
        worst_block.0,
        worst_block.1,
        model_err
    ))
}

// ---------------------------------------------------------------- 5

fn max_diff(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure!(a.len() == b.len(), "length {} vs {}", a.len(), b.len());
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

fn with_tape(f: impl for<'t> FnOnce(&'t Tape<f64>) -> uhddip_tensor::Result<Tensor<f64>>) -> Result<Tensor<f64>> {
    let tape = Tape::new();
    Ok(f(&tape)?)
}

fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize, groups: usize) -> Vec<f64> {
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, cin_g, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    let cout_g = cout / groups;
    let ho = (h + 2 * pad - kh) / stride + 1;
    let wo = (wd + 2 * pad - kw) / stride + 1;
    let (xd, wdat) = (x.data(), w.data());
    let mut out = Vec::with_capacity(n * cout * ho * wo);
    for ni in 0..n {
        for co in 0..cout {
            let g = co / cout_g;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = b.data()[co];
                    for ci in 0..cin_g {
                        let c = g * cin_g + ci;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += xd[((ni * cin + c) * h + iy as usize) * wd + ix as usize]
                                    * wdat[((co * cin_g + ci) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn unfold_oracle(x: &Tensor<f64>, k: usize) -> Vec<f64> {
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let p = (k / 2) as isize;
    let mut out = Vec::new();
    for ni in 0..n {
        for ci in 0..c {
            for ky in 0..k as isize {
                for kx in 0..k as isize {
                    for y in 0..h as isize {
                        for xx in 0..w as isize {
                            let (iy, ix) = (y + ky - p, xx + kx - p);
                            let inside = iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize;
                            out.push(if inside { x.data()[((ni * c + ci) * h + iy as usize) * w + ix as usize] } else { 0.0 });
                        }
                    }
                }
            }
        }
    }
    out
}

fn dft2_oracle(x: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let r = x.rank();
    let (h, w) = (x.shape()[r - 2], x.shape()[r - 1]);
    let (mut re, mut im) = (Vec::new(), Vec::new());
    for plane in x.data().chunks(h * w) {
        for u in 0..h {
            for v in 0..w {
                let (mut sr, mut si) = (0.0, 0.0);
                for y in 0..h {
                    for xx in 0..w {
                        let phase = -2.0 * std::f64::consts::PI * ((u * y) as f64 / h as f64 + (v * xx) as f64 / w as f64);
                        sr += plane[y * w + xx] * phase.cos();
                        si += plane[y * w + xx] * phase.sin();
                    }
                }
                re.push(sr);
                im.push(si);
            }
        }
    }
    (re, im)
}

/// Windowed SSIM summed directly over each 11x11 window.
fn ssim_oracle(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let (h, w, _) = a.dims();
    let luma = |img: &ImageBuffer, y, x| -> f64 {
        (0..3).map(|c| LUMA_601[c] as f64 * img.get(y, x, c) as f64).sum()
    };
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
    let gsum: f64 = g.iter().sum();
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    for y0 in 0..=h - 11 {
        for x0 in 0..=w - 11 {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..11 {
                for j in 0..11 {
                    let k = g[i] * g[j] / (gsum * gsum);
                    let (p, q) = (luma(a, y0 + i, x0 + j), luma(b, y0 + i, x0 + j));
                    ma += k * p;
                    mb += k * q;
                    saa += k * p * p;
                    sbb += k * q * q;
                    sab += k * p * q;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    total / ((h - 10) * (w - 10)) as f64
}

fn cosine_oracle(u: &Tensor<f64>, v: &Tensor<f64>, k: usize) -> Vec<f64> {
    let (c, h, w) = (u.shape()[1], u.shape()[2], u.shape()[3]);
    let half = (k / 2) as isize;
    let mut out = Vec::new();
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
            for ci in 0..c {
                for dy in -half..=half {
                    for dx in -half..=half {
                        let (sy, sx) = (y + dy, x + dx);
                        if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                            continue;
                        }
                        let i = (ci * h + sy as usize) * w + sx as usize;
                        dot += u.data()[i] * v.data()[i];
                        nu += u.data()[i] * u.data()[i];
                        nv += v.data()[i] * v.data()[i];
                    }
                }
            }
            out.push(dot / (nu.sqrt() * nv.sqrt() + 1e-8));
        }
    }
    out
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImageBuffer {
    ImageBuffer::from_fn(h, w, 3, |_, _, _| rng.gen_range(0.0..1.0))
}

fn oracle_equivalence() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    let mut record = |name: &'static str, d: f64| -> Result<()> {
        ensure!(d < ORACLE_TOL, "{name}: max abs diff {d:e}");
        let e = worst.entry(name).or_insert(0.0);
        *e = e.max(d);
        Ok(())
    };
    for _ in 0..ORACLE_INSTANCES {
        let groups = [1, 2][rng.gen_range(0..2)];
        let (cin, cout) = (2 * rng.gen_range(1..3), 2 * rng.gen_range(1..3));
        let k = [1, 3, 5][rng.gen_range(0..3)];
        let (stride, pad) = (rng.gen_range(1..3), rng.gen_range(0..=k / 2));
        let (h, w) = (rng.gen_range(k..9), rng.gen_range(k..9));
        let x = rand_tensor(&[rng.gen_range(1..3), cin, h, w], &mut rng, 1.0);
        let wt = rand_tensor(&[cout, cin / groups, k, k], &mut rng, 1.0);
        let b = rand_tensor(&[cout], &mut rng, 1.0);
        let spec = Conv2dSpec { stride, padding: pad, groups };
        let got = with_tape(|t| Ok(t.constant(x.clone()).conv2d(&t.constant(wt.clone()), Some(&t.constant(b.clone())), spec)?.to_tensor()))?;
        record("conv2d", max_diff(got.data(), &conv_oracle(&x, &wt, &b, stride, pad, groups))?)?;

        let (bt, m, kk, n) = (rng.gen_range(1..3), rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(1..6));
        let a = rand_tensor(&[bt, m, kk], &mut rng, 1.0);
        let bm = rand_tensor(&[bt, kk, n], &mut rng, 1.0);
        let got = with_tape(|t| Ok(t.constant(a.clone()).matmul(&t.constant(bm.clone()))?.to_tensor()))?;
        let mut want = Vec::new();
        for bi in 0..bt {
            for i in 0..m {
                for j in 0..n {
                    want.push((0..kk).map(|l| a.data()[(bi * m + i) * kk + l] * bm.data()[(bi * kk + l) * n + j]).sum());
                }
            }
        }
        record("matmul", max_diff(got.data(), &want)?)?;

        let uk = [1, 3, 5][rng.gen_range(0..3)];
        let x = rand_tensor(&[rng.gen_range(1..3), rng.gen_range(1..4), rng.gen_range(1..7), rng.gen_range(1..7)], &mut rng, 1.0);
        let got = with_tape(|t| Ok(t.constant(x.clone()).unfold(uk)?.to_tensor()))?;
        record("unfold", max_diff(got.data(), &unfold_oracle(&x, uk))?)?;

        let x = rand_tensor(&[rng.gen_range(1..3), 1 << rng.gen_range(0..4), 1 << rng.gen_range(0..4)], &mut rng, 1.0);
        let (re, im) = with_tape(|t| {
            let (re, im) = t.constant(x.clone()).fft2()?;
            concat(&[&re, &im], 0).map(|v| v.to_tensor())
        })
        .map(|both| {
            let half = both.numel() / 2;
            (both.data()[..half].to_vec(), both.data()[half..].to_vec())
        })?;
        let (wre, wim) = dft2_oracle(&x);
        record("fft2", max_diff(&re, &wre)?.max(max_diff(&im, &wim)?))?;

        let (h, w) = (rng.gen_range(11..18), rng.gen_range(11..18));
        let (ia, ib) = (random_image(&mut rng, h, w), random_image(&mut rng, h, w));
        let ib = ImageBuffer::from_fn(h, w, 3, |y, x, c| 0.6 * ia.get(y, x, c) + 0.4 * ib.get(y, x, c));
        record("ssim", (uhddip_imaging::ssim(&ia, &ib)? - ssim_oracle(&ia, &ib)).abs())?;
        let mse = ia.data().iter().zip(ib.data()).map(|(p, q)| (*p as f64 - *q as f64).powi(2)).sum::<f64>() / ia.data().len() as f64;
        record("psnr", (uhddip_imaging::psnr(&ia, &ib, 1.0)? - 10.0 * (1.0 / mse).log10()).abs())?;

        let pk = [1, 3, 5][rng.gen_range(0..3)];
        let shape = [1, rng.gen_range(1..4), rng.gen_range(1..7), rng.gen_range(1..7)];
        let (u, v) = (rand_tensor(&shape, &mut rng, 1.0), rand_tensor(&shape, &mut rng, 1.0));
        let got = with_tape(|t| {
            PatchSimilarity::cosine_map(&t.constant(u.clone()), &t.constant(v.clone()), pk)
                .map(|m| m.to_tensor())
                .map_err(to_tensor_err)
        })?;
        record("patch_similarity", max_diff(got.data(), &cosine_oracle(&u, &v, pk))?)?;
    }
    let summary: Vec<String> = worst.iter().map(|(k, v)| format!("{k} {v:.0e}")).collect();
    Ok(format!("{} random instances each, max abs diff: {}", ORACLE_INSTANCES, summary.join(", ")))
}

// ---------------------------------------------------------------- 6

fn identity_invariants() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut model = Model64::new(&micro_config(), 60)?;
    randomize(model.params_mut(), 61, 0.3);
    for name in ["head.weight", "head.bias"] {
        model.params_mut().by_name_mut(name).context("head parameters")?.data_mut().fill(0.0);
    }
    let u = rand_tensor(&[2, 3, 32, 32], &mut rng, 1.0);
    let n = rand_tensor(&[2, 3, 32, 32], &mut rng, 1.0);
    let g = rand_tensor(&[2, 1, 32, 32], &mut rng, 1.0);
    let (o, _) = model.infer(&u, &n, &g)?;
    ensure!(o.data() == u.data(), "zeroed head: output differs from input by {:e}", o.max_abs_diff(&u));

    let (naf, mut store) = build(62, |b| NafBlock::new(b, "naf", 6));
    randomize(&mut store, 63, 0.5);
    for name in ["naf.beta", "naf.gamma"] {
        store.by_name_mut(name).context("scalers")?.data_mut().fill(0.0);
    }
    let x = rand_tensor(&[2, 6, 5, 7], &mut rng, 2.0);
    let tape = Tape::new();
    let y = naf.forward(&store.bind(&tape, false), &tape.constant(x.clone()))?.to_tensor();
    ensure!(y.data() == x.data(), "zero scalers: NAFBlock is not the identity");

    let mut trips = 0;
    for r in [2, 4, 8] {
        let x = rand_tensor(&[2, 3, 2 * r, 3 * r], &mut rng, 1.0);
        let y = rand_tensor(&[2, 3 * r * r, 2, 3], &mut rng, 1.0);
        let tape = Tape::new();
        let back = tape.constant(x.clone()).pixel_unshuffle(r)?.pixel_shuffle(r)?.to_tensor();
        let forth = tape.constant(y.clone()).pixel_shuffle(r)?.pixel_unshuffle(r)?.to_tensor();
        ensure!(back.data() == x.data() && forth.data() == y.data(), "pixel shuffle round trip at r={r} is not exact");
        trips += 2;
    }
    Ok(format!("zero head gives O = u bitwise; zero beta/gamma gives NAF identity; {trips} shuffle round trips exact"))
}

// ---------------------------------------------------------------- 7

/// Dominant line orientation in degrees `[0, 180)` counter-clockwise from +x,
/// from the structure tensor of the sigma-2 smoothed image.
fn dominant_orientation(img: &ImageBuffer, margin: usize) -> f64 {
    let img = &uhddip_imaging::filters::blur_sigma(img, 2.0);
    let (h, w, _) = img.dims();
    let (mut jxx, mut jyy, mut jxy) = (0.0f64, 0.0f64, 0.0f64);
    for y in margin..h - margin {
        for x in margin..w - margin {
            let gx = (img.get(y, x + 1, 0) - img.get(y, x - 1, 0)) as f64 / 2.0;
            let gy = -(img.get(y + 1, x, 0) - img.get(y - 1, x, 0)) as f64 / 2.0;
            jxx += gx * gx;
            jyy += gy * gy;
            jxy += gx * gy;
        }
    }
    (0.5 * (2.0 * jxy).atan2(jxx - jyy).to_degrees() + 90.0).rem_euclid(180.0)
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(180.0);
    d.min(180.0 - d)
}

fn coverage(mask: &ImageBuffer) -> f64 {
    mask.data().iter().filter(|&&v| v > 0.5).count() as f64 / mask.data().len() as f64
}

fn file_tree(root: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in std::fs::read_dir(&dir)? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root)?.display().to_string(), std::fs::read(&p)?);
            }
        }
    }
    Ok(out)
}

fn synthesis_statistics() -> Result<String> {
    let mut worst_gap = 0.0f64;
    let angles = [45.0, 70.0, 90.0, 110.0, 135.0];
    for (i, &angle) in angles.iter().enumerate() {
        let mask = gen_mask(&SynthSpec::rain(63, angle, 70 + i as u64), 512, 512)?;
        let gap = angle_gap(dominant_orientation(&mask, 16), angle);
        ensure!(gap <= ANGLE_TOL_DEG, "rain at {angle} degrees measured {gap:.2} degrees off");
        worst_gap = worst_gap.max(gap);
    }

    let densities = DENSITY_LEVELS
        .iter()
        .map(|&l| Ok(coverage(&gen_mask(&SynthSpec::rain(l, 100.0, 77), 512, 512)?)))
        .collect::<Result<Vec<f64>>>()?;
    ensure!(densities.windows(2).all(|w| w[0] > w[1]), "densities over {DENSITY_LEVELS:?} not strictly decreasing: {densities:?}");

    let tmp = tempfile::tempdir()?;
    let clean = tmp.path().join("clean");
    write_procedural_scenes(&clean, 3, 512, 512, 78)?;
    let mut trees = Vec::new();
    for (run, kind) in [("a", WeatherKind::Rain), ("b", WeatherKind::Rain), ("c", WeatherKind::Snow), ("d", WeatherKind::Snow)] {
        build_dataset(&clean, tmp.path().join(run), 2, 1, kind, 79)?;
        trees.push(file_tree(&tmp.path().join(run))?);
    }
    ensure!(trees[0] == trees[1] && trees[2] == trees[3], "rebuild under a fixed master seed differs");
    let files = trees[0].len() + trees[2].len();
    let pct: Vec<String> = densities.iter().map(|d| format!("{:.1}%", d * 100.0)).collect();
    Ok(format!(
        "orientation within {worst_gap:.2} deg over {} angles; density {} over levels {DENSITY_LEVELS:?}; rain and snow rebuilds byte-identical ({files} files at 512x512)",
        angles.len(),
        pct.join(" > ")
    ))
}

// ---------------------------------------------------------------- 8

fn desk_learning() -> Result<String> {
    let tmp = tempfile::tempdir()?;
    let clean = tmp.path().join("clean");
    write_procedural_scenes(&clean, 10, 128, 128, 3)?;
    let manifest = build_dataset(&clean, tmp.path().join("rain"), 8, 2, WeatherKind::Rain, 11)?;
    let canny = CannyParams::default();
    let train = uhddip_core::data::load_split(&manifest, Split::Train, &canny)?;
    let test = uhddip_core::data::load_split(&manifest, Split::Test, &canny)?;

    let cfg = RunConfig::preset("desk")?;
    ensure!(cfg.net.channels == 8 && cfg.net.pfi_count == 2 && cfg.train.iters == 300, "desk preset changed");
    let mut trainer = Trainer::new(Model32::new(&cfg.net, cfg.train.seed)?, cfg.train.clone())?;
    let log = trainer.run(&train, &[], |_| {})?;
    let (first, last) = (log.first_loss().context("empty log")?, log.last_loss().context("empty log")?);
    let base = baseline(&test)?.mean_psnr_db;
    let restored = evaluate(trainer.model(), &test, Tiling::default())?.mean_psnr_db;
    let ratio = last / first;
    let gain = restored - base;
    let detail = format!(
        "{} pairs at 128x128, loss {first:.4} -> {last:.4} (ratio {ratio:.3}), held-out PSNR {base:.2} -> {restored:.2} dB (gain {gain:+.2} dB)",
        train.len()
    );
    ensure!(ratio < LOSS_RATIO_MAX && gain >= PSNR_GAIN_MIN_DB, "{detail}");
    Ok(detail)
}

// ---------------------------------------------------------------- 9

fn ablation_smoke() -> Result<String> {
    let scene = uhddip_imaging::scenes::procedural_scene(64, 64, 9);
    let (input, _) = uhddip_imaging::synth::degrade(&scene, &SynthSpec::rain(59, 100.0, 9))?;
    let example = Example::new("smoke", input, scene, &CannyParams::default())?;
    let mut count = 0;
    for l in [1, 2, 3] {
        for c in [8, 16] {
            for s in [4, 8] {
                for d in [2, 4] {
                    let mut cfg = RunConfig::preset("desk")?;
                    cfg.net.pfi_count = l;
                    cfg.net.channels = c;
                    cfg.net.shuffle = s;
                    cfg.net.dpfi_factor = d;
                    cfg.train.iters = 1;
                    cfg.train.batch = 1;
                    cfg.train.patch = 64;
                    let tag = format!("L={l} C={c} S={s} D={d}");
                    let model = Model32::new(&cfg.net, 0).with_context(|| format!("{tag}: construct"))?;
                    let p = example.priors.clone();
                    let (o, _) = model
                        .infer(&example.input.to_tensor(), &p.normal.to_tensor(), &p.gradient.to_tensor())
                        .with_context(|| format!("{tag}: forward"))?;
                    ensure!(o.is_finite() && o.shape() == [1, 3, 64, 64], "{tag}: bad output {:?}", o.shape());
                    let mut trainer = Trainer::new(model, cfg.train.clone())?;
                    let log = trainer.run(std::slice::from_ref(&example), &[], |_| {}).with_context(|| format!("{tag}: train step"))?;
                    ensure!(log.last_loss().is_some_and(f64::is_finite), "{tag}: non-finite loss");
                    count += 1;
                }
            }
        }
    }
    Ok(format!("{count} configurations constructed, ran forward and one training step at 64x64"))
}
