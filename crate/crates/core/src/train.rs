//! Training loop: aligned random patches, the combined loss, AdamW under the
//! cosine schedule, and a CSV log.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use uhddip_tensor::{Scalar, Tape, Tensor};

use crate::config::TrainConfig;
use crate::data::{crop_example, sample_crop, Batch, Example};
use crate::error::{CoreError, Result};
use crate::eval::{evaluate, Tiling};
use crate::loss::total_loss;
use crate::model::Model;
use crate::optim::{lr_at, AdamW};

/// Keeps the data stream independent of the initializer stream.
const DATA_STREAM: u64 = 0x5eed_da7a;

/// Loss terms are means over the steps since the previous record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub lr: f64,
    pub total_loss: f64,
    pub l1_o: f64,
    pub freq_o: f64,
    pub l1_h: f64,
    pub freq_h: f64,
    pub psnr_val: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "iter,lr,total_loss,l1_o,freq_o,l1_h,freq_h,psnr_val";

    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.records {
            let psnr = r.psnr_val.map(|p| format!("{p:.4}")).unwrap_or_default();
            writeln!(
                out,
                "{},{:e},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                r.iter, r.lr, r.total_loss, r.l1_o, r.freq_o, r.l1_h, r.freq_h, psnr
            )?;
        }
        Ok(())
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.records.first().map(|r| r.total_loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.total_loss)
    }
}

/// Owns the model, the optimizer state and the sampling stream.
pub struct Trainer<T: Scalar> {
    model: Model<T>,
    opt: AdamW<T>,
    cfg: TrainConfig,
    rng: ChaCha8Rng,
    iter: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, cfg: TrainConfig) -> Result<Self> {
        cfg.validate(model.config())?;
        let opt = AdamW::from_config(model.params(), &cfg);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ DATA_STREAM);
        Ok(Self { model, opt, cfg, rng, iter: 0 })
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn into_model(self) -> Model<T> {
        self.model
    }

    pub fn iterations(&self) -> usize {
        self.iter
    }

    /// Draws a batch of aligned patches.
    pub fn sample_batch(&mut self, data: &[Example]) -> Result<Batch<T>> {
        if data.is_empty() {
            return Err(CoreError::Config("no training examples".into()));
        }
        let align = self.model.config().alignment();
        let mut picked = Vec::with_capacity(self.cfg.batch);
        for _ in 0..self.cfg.batch {
            let ex = &data[self.rng.gen_range(0..data.len())];
            let crop = sample_crop(ex.height(), ex.width(), self.cfg.patch, align, self.cfg.flip, &mut self.rng)?;
            picked.push(crop_example(ex, crop)?);
        }
        Batch::from_examples(&picked)
    }

    /// One optimizer step on `batch` at learning rate `lr`; returns the loss terms.
    pub fn step_on(&mut self, batch: &Batch<T>, lr: f64) -> Result<[f64; 5]> {
        let iter = self.iter;
        let diverged = |e: CoreError| match e {
            e @ CoreError::NonFinite { .. } => CoreError::Diverged { iter, detail: e.to_string() },
            other => other,
        };
        let tape = Tape::new();
        let p = self.model.params().bind(&tape, true);
        let out = self
            .model
            .forward(&p, &tape.constant(batch.input.clone()), &tape.constant(batch.normal.clone()), &tape.constant(batch.gradient.clone()))
            .map_err(diverged)?;
        let target = tape.constant(batch.target.clone());
        let s = self.model.config().shuffle;
        let terms = total_loss(&out.restored, &out.h_lr, &target, s, self.cfg.alpha, self.cfg.lambda).map_err(diverged)?;
        let values = terms.values();
        let grads = tape.backward(&terms.total)?;
        let grads: Vec<Tensor<T>> = p.vars().iter().map(|v| grads.get_or_zeros(v)).collect();
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            let name = &self.model.params().names()[i];
            return Err(CoreError::Diverged { iter, detail: format!("non-finite gradient for parameter '{name}'") });
        }
        self.opt.step(self.model.params_mut(), &grads, lr)?;
        self.iter += 1;
        Ok(values)
    }

    /// Runs the remaining iterations, calling `on_record` for every log row.
    /// Validation PSNR is computed at each record when `val` is non-empty.
    pub fn run(&mut self, train: &[Example], val: &[Example], mut on_record: impl FnMut(&TrainRecord)) -> Result<TrainLog> {
        let mut log = TrainLog::default();
        let mut sums = [0.0f64; 5];
        let mut count = 0usize;
        while self.iter < self.cfg.iters {
            let iter = self.iter;
            let lr = lr_at(iter, &self.cfg);
            let batch = self.sample_batch(train)?;
            let values = self.step_on(&batch, lr)?;
            for (s, v) in sums.iter_mut().zip(values) {
                *s += v;
            }
            count += 1;
            let last = self.iter == self.cfg.iters;
            if iter == 0 || (iter + 1).is_multiple_of(self.cfg.log_every) || last {
                let psnr_val = if val.is_empty() {
                    None
                } else {
                    Some(evaluate(&self.model, val, Tiling::default())?.mean_psnr_db)
                };
                let m = sums.map(|s| s / count as f64);
                let rec = TrainRecord {
                    iter,
                    lr,
                    total_loss: m[0],
                    l1_o: m[1],
                    freq_o: m[2],
                    l1_h: m[3],
                    freq_h: m[4],
                    psnr_val,
                };
                on_record(&rec);
                log.records.push(rec);
                sums = [0.0; 5];
                count = 0;
            }
        }
        Ok(log)
    }
}
