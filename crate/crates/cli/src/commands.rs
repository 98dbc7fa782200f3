use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use log::info;
use uhddip_core::checkpoint::{load_checkpoint, save_checkpoint};
use uhddip_core::data::{load_split, Example};
use uhddip_core::eval::{baseline, evaluate, restore, Tiling};
use uhddip_core::{CostRow, Model32, RunConfig, Trainer};
use uhddip_imaging::dataset::{list_images, write_procedural_scenes};
use uhddip_imaging::{build_dataset, CannyParams, DatasetManifest, ImageBuffer, MetricReport, PriorPair, Split};

use crate::{usage, Command, ConfigArgs, DescribeArgs, EvalArgs, InferArgs, MetricsArgs, PriorsArgs, SynthArgs, TilingArgs, TrainArgs, OUT_DIR_ENV};

pub(crate) fn dispatch(cmd: &Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Priors(a) => priors(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Infer(a) => infer(a),
        Command::Metrics(a) => metrics(a),
        Command::Describe(a) => describe(a),
    }
}

/// Explicit flag, then the environment override, then the default.
fn out_dir(flag: &Option<PathBuf>, default: impl AsRef<Path>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| default.as_ref().to_path_buf())
}

fn resolve_config(args: &ConfigArgs) -> Result<RunConfig> {
    Ok(RunConfig::resolve(&args.config, &args.overrides)?)
}

fn banner(cfg: &RunConfig) {
    info!("resolved config:\n{}", cfg.to_toml().trim_end());
    info!("seed {}", cfg.train.seed);
}

fn synth(a: &SynthArgs) -> Result<()> {
    if a.n_train + a.n_test == 0 {
        return usage("nothing to build: --n-train and --n-test are both 0");
    }
    if let Some(clean) = &a.clean {
        if !clean.is_dir() {
            return usage(format!("clean directory {} does not exist", clean.display()));
        }
    } else if a.scene_size < 32 {
        return usage("--scene-size must be at least 32");
    }
    let out = out_dir(&a.out, Path::new("data").join(a.kind.to_string()));
    info!("synthesizing {} dataset into {} (master seed {})", a.kind, out.display(), a.seed);
    let clean = match &a.clean {
        Some(dir) => dir.clone(),
        None => {
            let dir = out.join("clean");
            write_procedural_scenes(&dir, a.n_train + a.n_test, a.scene_size, a.scene_size, a.seed)?;
            dir
        }
    };
    let manifest = build_dataset(&clean, &out, a.n_train, a.n_test, a.kind, a.seed)?;
    info!("wrote {} train and {} test pairs", manifest.counts.train, manifest.counts.test);
    Ok(())
}

fn priors(a: &PriorsArgs) -> Result<()> {
    let params = CannyParams { sigma: a.sigma, low_ratio: a.low, high_ratio: a.high, ..CannyParams::default() };
    if a.sigma.is_nan() || a.sigma <= 0.0 || !(0.0..=1.0).contains(&a.low) || !(a.low..=1.0).contains(&a.high) {
        return usage("need sigma > 0 and 0 <= low <= high <= 1");
    }
    for p in &a.input {
        if !p.is_file() {
            return usage(format!("input {} does not exist", p.display()));
        }
    }
    let out = out_dir(&a.out, "priors");
    fs::create_dir_all(&out)?;
    for p in &a.input {
        let img = ImageBuffer::load(p).with_context(|| format!("reading {}", p.display()))?;
        let pair = PriorPair::from_image(&img, &params)?;
        let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into());
        pair.normal.save_png(out.join(format!("{stem}_normal.png")))?;
        pair.gradient.save_png(out.join(format!("{stem}_gradient.png")))?;
        info!("{}: priors written to {}", p.display(), out.display());
    }
    Ok(())
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.exists() {
        return usage(format!("dataset {} does not exist", path.display()));
    }
    let manifest = if path.is_dir() && !path.join("manifest.json").exists() {
        DatasetManifest::from_pair_folder(path)
    } else {
        DatasetManifest::load(path)
    };
    manifest.with_context(|| format!("reading dataset {}", path.display()))
}

fn train(a: &TrainArgs) -> Result<()> {
    let cfg = resolve_config(&a.config)?;
    cfg.train.validate(&cfg.net)?;
    let manifest = load_manifest(&a.data)?;
    banner(&cfg);
    let canny = CannyParams::default();
    let train_set = load_split(&manifest, Split::Train, &canny)?;
    if train_set.is_empty() {
        return usage("dataset has no training pairs");
    }
    if let Some(ex) = train_set.iter().find(|e| e.height() < cfg.train.patch || e.width() < cfg.train.patch) {
        return usage(format!("{} is smaller than the {} px patch", ex.name, cfg.train.patch));
    }
    let val: Vec<Example> = if a.val_count > 0 {
        load_split(&manifest, Split::Test, &canny)?.into_iter().take(a.val_count).collect()
    } else {
        Vec::new()
    };

    let out = out_dir(&a.out, "runs/latest");
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;

    let model = Model32::new(&cfg.net, cfg.train.seed)?;
    info!("model: {} parameters, {} train pairs", model.count_params(), train_set.len());
    let mut trainer = Trainer::new(model, cfg.train.clone())?;
    let log = trainer.run(&train_set, &val, |r| {
        let val = r.psnr_val.map(|p| format!(" val {p:.2} dB")).unwrap_or_default();
        info!("iter {:>6} lr {:.3e} loss {:.5} (l1 {:.5}){val}", r.iter, r.lr, r.total_loss, r.l1_o);
    })?;
    log.write_csv(fs::File::create(out.join("train_log.csv"))?)?;
    save_checkpoint(out.join("model.ckpt"), trainer.model(), trainer.iterations())?;
    info!("checkpoint and log written to {}", out.display());
    Ok(())
}

fn tiling(a: &TilingArgs) -> Result<Tiling> {
    if a.tile == 0 || a.overlap >= a.tile {
        return usage("need --tile > 0 and --overlap < --tile");
    }
    Ok(Tiling { tile: a.tile, overlap: a.overlap })
}

fn load_model(path: &Path) -> Result<Model32> {
    if !path.is_file() {
        return usage(format!("checkpoint {} does not exist", path.display()));
    }
    let (model, header) = load_checkpoint::<f32>(path).with_context(|| format!("loading {}", path.display()))?;
    info!("loaded {} ({} parameters, {} iterations)", path.display(), model.count_params(), header.iterations);
    Ok(model)
}

fn eval(a: &EvalArgs) -> Result<()> {
    let split = match a.split.as_str() {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return usage(format!("unknown split '{other}' (train or test)")),
    };
    let tiles = tiling(&a.tiling)?;
    let manifest = load_manifest(&a.data)?;
    let model = load_model(&a.checkpoint)?;
    let examples = load_split(&manifest, split, &CannyParams::default())?;
    if examples.is_empty() {
        return usage("split has no pairs");
    }
    let report = evaluate(&model, &examples, tiles)?;
    let base = baseline(&examples)?;
    println!("images        {}", examples.len());
    println!("input  PSNR   {:.3} dB   SSIM {:.4}", base.mean_psnr_db, base.mean_ssim);
    println!("output PSNR   {:.3} dB   SSIM {:.4}", report.mean_psnr_db, report.mean_ssim);
    if let Some(csv) = &a.csv {
        report.write_csv(fs::File::create(csv)?)?;
    }
    if let Some(dir) = &a.save {
        fs::create_dir_all(dir)?;
        for ex in &examples {
            let name = Path::new(&ex.name).file_name().map(PathBuf::from).unwrap_or_else(|| PathBuf::from("out.png"));
            restore(&model, &ex.input, &ex.priors, tiles)?.save_png(dir.join(name))?;
        }
    }
    Ok(())
}

fn infer(a: &InferArgs) -> Result<()> {
    let tiles = tiling(&a.tiling)?;
    if !a.input.is_file() {
        return usage(format!("input {} does not exist", a.input.display()));
    }
    let model = load_model(&a.checkpoint)?;
    let input = ImageBuffer::load(&a.input)?.to_rgb();
    let mut ex = Example::new(a.input.display().to_string(), input.clone(), input, &CannyParams::default())?;
    if let Some(nm) = &a.normal_map {
        ex = ex.with_normal_map(nm)?;
    }
    let out = restore(&model, &ex.input, &ex.priors, tiles)?;
    if let Some(parent) = a.output.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    out.save_png(&a.output)?;
    info!("restored image written to {}", a.output.display());
    Ok(())
}

/// Pairs restored and reference images: a single pair of files, or two
/// directories matched by file name.
fn metric_pairs(restored: &Path, reference: &Path) -> Result<Vec<(PathBuf, PathBuf)>> {
    match (restored.is_dir(), reference.is_dir()) {
        (false, false) if restored.is_file() && reference.is_file() => Ok(vec![(restored.into(), reference.into())]),
        (true, true) => {
            let mut pairs = Vec::new();
            for r in list_images(restored)? {
                let name = r.file_name().expect("listed files have names");
                let g = reference.join(name);
                if !g.is_file() {
                    return usage(format!("no reference for {}", r.display()));
                }
                pairs.push((r, g));
            }
            if pairs.is_empty() {
                return usage(format!("no images in {}", restored.display()));
            }
            Ok(pairs)
        }
        _ => usage("--restored and --reference must both be files or both be directories"),
    }
}

fn metrics(a: &MetricsArgs) -> Result<()> {
    let pairs = metric_pairs(&a.restored, &a.reference)?;
    let scores = pairs
        .iter()
        .map(|(r, g)| {
            let (ri, gi) = (ImageBuffer::load(r)?, ImageBuffer::load(g)?);
            Ok(MetricReport::score(r.display().to_string(), &ri, &gi)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = MetricReport::from_scores(scores);
    match &a.csv {
        Some(path) => report.write_csv(fs::File::create(path)?)?,
        None => report.write_csv(std::io::stdout().lock())?,
    }
    Ok(())
}

/// Text table of the per-module costs with a total row.
pub fn describe_table(rows: &[CostRow], h: usize, w: usize) -> String {
    let mut s = format!("{:<28} {:>10} {:>12}\n", "module", "params", format!("GFLOPs@{h}x{w}"));
    for r in rows {
        s += &format!("{:<28} {:>10} {:>12.4}\n", r.module, r.params, r.flops() as f64 / 1e9);
    }
    let params: usize = rows.iter().map(|r| r.params).sum();
    let flops: u64 = rows.iter().map(CostRow::flops).sum();
    s += &format!("{:<28} {:>10} {:>12.4}\n", "total", params, flops as f64 / 1e9);
    s
}

fn describe(a: &DescribeArgs) -> Result<()> {
    let cfg = resolve_config(&a.config)?;
    if a.print_config {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    if !a.height.is_multiple_of(cfg.net.alignment()) || !a.width.is_multiple_of(cfg.net.alignment()) {
        return usage(format!("size {}x{} must be a multiple of {}", a.height, a.width, cfg.net.alignment()));
    }
    let model = Model32::new(&cfg.net, cfg.train.seed)?;
    let mut out = std::io::stdout().lock();
    write!(out, "{}", describe_table(&model.describe(a.height, a.width), a.height, a.width))?;
    Ok(())
}
