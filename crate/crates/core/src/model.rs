//! The full two-branch restoration network.
//!
//! The high-resolution branch keeps full-size features and hands a
//! shuffled-down copy to each interaction module; the low-resolution branch
//! carries the normal and gradient priors through the chain of modules and
//! emits an auxiliary 1/S-scale restoration.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use uhddip_tensor::{Scalar, Tape, Tensor, Var};

use crate::config::NetConfig;
use crate::error::{CoreError, InLayer, Result};
use crate::layers::{Conv, NafStack, ShuffleDown, ShuffleUpMerge};
use crate::params::{Binding, Builder, ParamStore};
use crate::pfi::Pfi;

/// Channels of the gradient prior.
pub const GRADIENT_CHANNELS: usize = 1;
/// Channels of the normal prior.
pub const NORMAL_CHANNELS: usize = 3;

#[derive(Debug, Clone)]
struct PriorInit {
    down: ShuffleDown,
    conv: Conv,
    nafs: NafStack,
}

impl PriorInit {
    fn new<T: Scalar>(b: &mut Builder<'_, T>, leaf: &str, cin: usize, cfg: &NetConfig) -> Self {
        let c = cfg.lr_width();
        b.scope(leaf, |b| Self {
            down: ShuffleDown::new(b, "down", cin, c, cfg.shuffle),
            conv: Conv::new(b, "conv", c, c, 3, 1),
            nafs: NafStack::new(b, "naf", c, cfg.blocks.lr_prior_init),
        })
    }

    fn forward<'t, T: Scalar>(&self, p: &Binding<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.nafs.forward(p, &self.conv.forward(p, &self.down.forward(p, x)?)?)
    }

    fn params(&self) -> usize {
        self.down.params() + self.conv.params() + self.nafs.params()
    }

    fn macs(&self, h: usize, w: usize, s: usize) -> u64 {
        self.down.macs(h, w) + self.conv.macs(h / s, w / s) + self.nafs.macs(h / s, w / s)
    }
}

#[derive(Debug, Clone)]
struct Level {
    hr: NafStack,
    down: ShuffleDown,
    pfi: Pfi,
    lr: NafStack,
    up: ShuffleUpMerge,
}

/// One row of the cost breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostRow {
    pub module: String,
    pub params: usize,
    pub macs: u64,
}

impl CostRow {
    fn new(module: impl Into<String>, params: usize, macs: u64) -> Self {
        Self { module: module.into(), params, macs }
    }

    /// Two FLOPs per multiply-accumulate.
    pub fn flops(&self) -> u64 {
        2 * self.macs
    }
}

/// Layer graph holding parameter handles only, independent of the scalar type.
#[derive(Debug, Clone)]
pub struct Network {
    cfg: NetConfig,
    stem: Conv,
    levels: Vec<Level>,
    recon: NafStack,
    head: Conv,
    normal: PriorInit,
    gradient: PriorInit,
    lr_tail: NafStack,
    lr_head: Conv,
}

/// Forward outputs: the full-resolution restoration `O` and the auxiliary
/// low-resolution restoration `H_lr`.
pub struct ModelOutput<'t, T: Scalar> {
    pub restored: Var<'t, T>,
    pub h_lr: Var<'t, T>,
}

impl Network {
    fn build<T: Scalar>(b: &mut Builder<'_, T>, cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let (c, cl, s) = (cfg.channels, cfg.lr_width(), cfg.shuffle);
        let bl = &cfg.blocks;
        let stem = Conv::new(b, "stem", 3, c, 3, 1);
        let normal = PriorInit::new(b, "prior_normal", NORMAL_CHANNELS, cfg);
        let gradient = PriorInit::new(b, "prior_gradient", GRADIENT_CHANNELS, cfg);
        let mut levels = Vec::with_capacity(cfg.pfi_count);
        for i in 0..cfg.pfi_count {
            let level = b.scope(&format!("level{i}"), |b| -> Result<Level> {
                Ok(Level {
                    hr: NafStack::new(b, "hr", c, bl.hr_per_group),
                    down: ShuffleDown::new(b, "down", c, cl, s),
                    pfi: Pfi::new(b, "pfi", cfg)?,
                    lr: NafStack::new(b, "lr", cl, bl.lr_after_pfi),
                    up: ShuffleUpMerge::new(b, "up", cl, c, s),
                })
            })?;
            levels.push(level);
        }
        Ok(Self {
            cfg: cfg.clone(),
            stem,
            levels,
            recon: NafStack::new(b, "recon", c, bl.hr_recon),
            head: Conv::new(b, "head", c, 3, 3, 1),
            normal,
            gradient,
            lr_tail: NafStack::new(b, "lr_tail", cl, bl.lr_intermediate),
            lr_head: Conv::new(b, "lr_head", cl, 3, 3, 1),
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    /// `u: [N,3,H,W]`, `normal: [N,3,H,W]`, `gradient: [N,1,H,W]`.
    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Binding<'t, T>,
        u: &Var<'t, T>,
        normal: &Var<'t, T>,
        gradient: &Var<'t, T>,
    ) -> Result<ModelOutput<'t, T>> {
        let (n, ch, h, w) = u.value().dims4()?;
        if ch != 3 {
            return Err(CoreError::Dimension(format!("input must have 3 channels, got {ch}")));
        }
        self.cfg.check_input(h, w)?;
        for (what, v, c) in [("normal", normal, NORMAL_CHANNELS), ("gradient", gradient, GRADIENT_CHANNELS)] {
            if v.shape() != [n, c, h, w] {
                return Err(CoreError::Dimension(format!(
                    "{what} prior has shape {:?}, expected {:?}",
                    v.shape(),
                    [n, c, h, w]
                )));
            }
        }

        let mut p_n = self.normal.forward(p, normal)?;
        let mut p_g = self.gradient.forward(p, gradient)?;
        let mut feat = self.stem.forward(p, u)?;
        let mut low = None;
        for level in &self.levels {
            let hr = level.hr.forward(p, &feat)?;
            let down = level.down.forward(p, &hr)?;
            let out = level.pfi.forward(p, &p_n, &p_g, &down)?;
            let lr = level.lr.forward(p, &out.feature)?;
            feat = level.up.forward(p, &lr, &hr)?;
            p_n = out.normal;
            p_g = out.gradient;
            low = Some(lr);
        }
        let low = low.ok_or_else(|| CoreError::Config("network has no levels".into()))?;

        let residual = self.head.forward(p, &self.recon.forward(p, &feat)?)?;
        let restored = residual.add(u).in_layer(self.head.name())?;
        let lr_res = self.lr_head.forward(p, &self.lr_tail.forward(p, &low)?)?;
        let u_low = u.avg_pool(self.cfg.shuffle).in_layer(self.lr_head.name())?;
        let h_lr = lr_res.add(&u_low).in_layer(self.lr_head.name())?;
        Ok(ModelOutput { restored, h_lr })
    }

    /// Per-module parameter and MAC counts for an `h × w` input.
    pub fn describe(&self, h: usize, w: usize) -> Vec<CostRow> {
        let s = self.cfg.shuffle;
        let (hl, wl) = (h / s, w / s);
        let mut rows = vec![
            CostRow::new("stem", self.stem.params(), self.stem.macs(h, w)),
            CostRow::new("prior_normal", self.normal.params(), self.normal.macs(h, w, s)),
            CostRow::new("prior_gradient", self.gradient.params(), self.gradient.macs(h, w, s)),
        ];
        for (i, lv) in self.levels.iter().enumerate() {
            rows.push(CostRow::new(format!("level{i}.hr"), lv.hr.params(), lv.hr.macs(h, w)));
            rows.push(CostRow::new(format!("level{i}.down"), lv.down.params(), lv.down.macs(h, w)));
            rows.push(CostRow::new(format!("level{i}.pfi.spfi"), lv.pfi.spfi.params(), lv.pfi.spfi.macs(hl, wl)));
            rows.push(CostRow::new(
                format!("level{i}.pfi.similarity"),
                lv.pfi.similarity.params(),
                lv.pfi.similarity.macs(hl, wl),
            ));
            rows.push(CostRow::new(format!("level{i}.pfi.guided"), lv.pfi.guided.params(), lv.pfi.guided.macs(hl, wl)));
            rows.push(CostRow::new(format!("level{i}.pfi.merge"), lv.pfi.merge.params(), lv.pfi.merge.macs(hl, wl)));
            rows.push(CostRow::new(format!("level{i}.lr"), lv.lr.params(), lv.lr.macs(hl, wl)));
            rows.push(CostRow::new(format!("level{i}.up"), lv.up.params(), lv.up.macs(h, w)));
        }
        rows.push(CostRow::new("recon", self.recon.params(), self.recon.macs(h, w)));
        rows.push(CostRow::new("head", self.head.params(), self.head.macs(h, w)));
        rows.push(CostRow::new("lr_tail", self.lr_tail.params(), self.lr_tail.macs(hl, wl)));
        rows.push(CostRow::new("lr_head", self.lr_head.params(), self.lr_head.macs(hl, wl)));
        rows
    }

    pub fn count_params(&self) -> usize {
        self.describe(self.cfg.alignment(), self.cfg.alignment()).iter().map(|r| r.params).sum()
    }

    /// Forward FLOPs (2 × MACs) for an `h × w` input.
    pub fn count_flops(&self, h: usize, w: usize) -> u64 {
        self.describe(h, w).iter().map(CostRow::flops).sum()
    }
}

/// Network plus its parameter values.
#[derive(Debug, Clone)]
pub struct Model<T: Scalar> {
    net: Network,
    params: ParamStore<T>,
    seed: u64,
}

impl<T: Scalar> Model<T> {
    /// Builds and initializes a model. Initial values are drawn in f64 from a
    /// seeded ChaCha8 stream, so f32 and f64 models from one seed agree.
    pub fn new(cfg: &NetConfig, seed: u64) -> Result<Self> {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Network::build(&mut Builder::new(&mut store, &mut rng), cfg)?;
        Ok(Self { net, params: store, seed })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn config(&self) -> &NetConfig {
        &self.net.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn forward<'t>(
        &self,
        p: &Binding<'t, T>,
        u: &Var<'t, T>,
        normal: &Var<'t, T>,
        gradient: &Var<'t, T>,
    ) -> Result<ModelOutput<'t, T>> {
        self.net.forward(p, u, normal, gradient)
    }

    /// Gradient-free forward pass returning `(O, H_lr)`.
    pub fn infer(&self, u: &Tensor<T>, normal: &Tensor<T>, gradient: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let out = self.net.forward(&p, &tape.constant(u.clone()), &tape.constant(normal.clone()), &tape.constant(gradient.clone()))?;
        Ok((out.restored.to_tensor(), out.h_lr.to_tensor()))
    }

    pub fn count_params(&self) -> usize {
        self.net.count_params()
    }

    pub fn count_flops(&self, h: usize, w: usize) -> u64 {
        self.net.count_flops(h, w)
    }

    pub fn describe(&self, h: usize, w: usize) -> Vec<CostRow> {
        self.net.describe(h, w)
    }

    /// Same architecture with parameters converted to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model { net: self.net.clone(), params: self.params.cast(), seed: self.seed }
    }
}
