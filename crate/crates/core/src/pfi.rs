//! Prior feature interaction: single-prior fusion with the image feature
//! (cross-attention plus feed-forward per prior), then prior-to-prior
//! similarity driving a dual guided filter.

use uhddip_tensor::{Scalar, Var};

use crate::config::NetConfig;
use crate::error::{CoreError, InLayer, Result};
use crate::layers::{Conv, Gdfn, Mtca, NafBlock, ShuffleDown};
use crate::params::{Binding, Builder};

pub const COSINE_EPS: f64 = 1e-8;

/// One prior stream of the single-prior fusion.
#[derive(Debug, Clone)]
pub struct SpfiStream {
    pub mtca: Mtca,
    pub gdfn: Gdfn,
}

impl SpfiStream {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, leaf: &str, cfg: &NetConfig) -> Result<Self> {
        let c = cfg.lr_width();
        b.scope(leaf, |b| {
            Ok(Self { mtca: Mtca::new(b, "mtca", c, cfg.heads)?, gdfn: Gdfn::new(b, "gdfn", c, cfg.gdfn_width()) })
        })
    }

    /// `GDFN(p + MTCA(p, f))`.
    pub fn forward<'t, T: Scalar>(&self, p: &Binding<'t, T>, prior: &Var<'t, T>, f: &Var<'t, T>) -> Result<Var<'t, T>> {
        let fused = prior.add(&self.mtca.forward(p, prior, f)?).in_layer(self.mtca.name())?;
        self.gdfn.forward(p, &fused)
    }

    pub fn params(&self) -> usize {
        self.mtca.params() + self.gdfn.params()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.mtca.macs(h, w) + self.gdfn.macs(h, w)
    }
}

#[derive(Debug, Clone)]
pub struct Spfi {
    pub normal: SpfiStream,
    pub gradient: SpfiStream,
}

impl Spfi {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &NetConfig) -> Result<Self> {
        b.scope("spfi", |b| Ok(Self { normal: SpfiStream::new(b, "normal", cfg)?, gradient: SpfiStream::new(b, "gradient", cfg)? }))
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Binding<'t, T>,
        p_n: &Var<'t, T>,
        p_g: &Var<'t, T>,
        f: &Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        if p_n.shape() != f.shape() || p_g.shape() != f.shape() {
            return Err(CoreError::Dimension(format!(
                "prior shapes {:?}, {:?} differ from feature {:?}",
                p_n.shape(),
                p_g.shape(),
                f.shape()
            )));
        }
        Ok((self.normal.forward(p, p_n, f)?, self.gradient.forward(p, p_g, f)?))
    }

    pub fn params(&self) -> usize {
        self.normal.params() + self.gradient.params()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.normal.macs(h, w) + self.gradient.macs(h, w)
    }
}

/// Per-location cosine similarity of the two priors' k×k neighbourhoods,
/// computed at `1/D` of the prior resolution.
#[derive(Debug, Clone)]
pub struct PatchSimilarity {
    d: usize,
    k: usize,
    pub down_n: ShuffleDown,
    pub naf_n: NafBlock,
    pub down_g: ShuffleDown,
    pub naf_g: NafBlock,
}

impl PatchSimilarity {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &NetConfig) -> Self {
        let (c, d) = (cfg.lr_width(), cfg.dpfi_factor);
        b.scope("similarity", |b| Self {
            d,
            k: cfg.unfold_k,
            down_n: ShuffleDown::new(b, "down_normal", c, c, d),
            naf_n: NafBlock::new(b, "naf_normal", c),
            down_g: ShuffleDown::new(b, "down_gradient", c, c, d),
            naf_g: NafBlock::new(b, "naf_gradient", c),
        })
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Binding<'t, T>, p_n: &Var<'t, T>, p_g: &Var<'t, T>) -> Result<Var<'t, T>> {
        let (_, _, h, w) = p_n.value().dims4()?;
        if h % self.d != 0 || w % self.d != 0 {
            return Err(CoreError::Dimension(format!("similarity input {h}x{w} not divisible by {}", self.d)));
        }
        let u = self.naf_n.forward(p, &self.down_n.forward(p, p_n)?)?;
        let v = self.naf_g.forward(p, &self.down_g.forward(p, p_g)?)?;
        Self::cosine_map(&u, &v, self.k)
    }

    /// Unfolds both maps and takes the column-wise cosine, `[N,1,H,W]`.
    pub fn cosine_map<'t, T: Scalar>(u: &Var<'t, T>, v: &Var<'t, T>, k: usize) -> Result<Var<'t, T>> {
        let layer = "similarity.cosine";
        let (n, _, h, w) = u.value().dims4()?;
        let cu = u.unfold(k).in_layer(layer)?;
        let cv = v.unfold(k).in_layer(layer)?;
        cu.cosine_columns(&cv, T::lit(COSINE_EPS)).in_layer(layer)?.reshape([n, 1, h, w]).in_layer(layer)
    }

    pub fn params(&self) -> usize {
        self.down_n.params() + self.naf_n.params() + self.down_g.params() + self.naf_g.params()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (hd, wd) = (h / self.d, w / self.d);
        self.down_n.macs(h, w) + self.down_g.macs(h, w) + self.naf_n.macs(hd, wd) + self.naf_g.macs(hd, wd)
    }
}

/// One side of the dual guided filter: feature extraction `F = NAF(conv3(p'))`
/// and kernel generation `K = sigmoid(1×1(conv3(F) ⊙ up(w)))`.
#[derive(Debug, Clone)]
pub struct GuideBranch {
    pub conv: Conv,
    pub naf: NafBlock,
    pub kernel_conv: Conv,
    pub kernel_head: Conv,
}

impl GuideBranch {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, leaf: &str, c: usize) -> Self {
        b.scope(leaf, |b| Self {
            conv: Conv::new(b, "conv", c, c, 3, 1),
            naf: NafBlock::new(b, "naf", c),
            kernel_conv: Conv::new(b, "kernel_conv", c, c, 3, 1),
            kernel_head: Conv::pointwise(b, "kernel_head", c, c),
        })
    }

    fn feature<'t, T: Scalar>(&self, p: &Binding<'t, T>, prior: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.naf.forward(p, &self.conv.forward(p, prior)?)
    }

    fn kernel<'t, T: Scalar>(&self, p: &Binding<'t, T>, feat: &Var<'t, T>, w_up: &Var<'t, T>) -> Result<Var<'t, T>> {
        let name = self.kernel_head.name();
        let modulated = self.kernel_conv.forward(p, feat)?.mul(w_up).in_layer(name)?;
        self.kernel_head.forward(p, &modulated)?.sigmoid().in_layer(name)
    }

    fn params(&self) -> usize {
        self.conv.params() + self.naf.params() + self.kernel_conv.params() + self.kernel_head.params()
    }

    fn macs(&self, h: usize, w: usize) -> u64 {
        self.conv.macs(h, w) + self.naf.macs(h, w) + self.kernel_conv.macs(h, w) + self.kernel_head.macs(h, w)
    }
}

/// Each prior's generated kernel gates the other prior's feature:
/// `f_pn = F_n ⊙ K_g + F_n`, `f_pg = F_g ⊙ K_n + F_g`.
#[derive(Debug, Clone)]
pub struct DualGuidedFilter {
    d: usize,
    pub normal: GuideBranch,
    pub gradient: GuideBranch,
}

impl DualGuidedFilter {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, cfg: &NetConfig) -> Self {
        let c = cfg.lr_width();
        b.scope("guided", |b| Self {
            d: cfg.dpfi_factor,
            normal: GuideBranch::new(b, "normal", c),
            gradient: GuideBranch::new(b, "gradient", c),
        })
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Binding<'t, T>,
        p_n: &Var<'t, T>,
        p_g: &Var<'t, T>,
        w: &Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let layer = "guided";
        let (_, _, h, wd) = p_n.value().dims4()?;
        let (_, _, wh, ww) = w.value().dims4()?;
        if wh * self.d != h || ww * self.d != wd {
            return Err(CoreError::Dimension(format!("similarity map {wh}x{ww} does not match features {h}x{wd} / {}", self.d)));
        }
        let w_up = w.upsample_nearest(self.d).in_layer(layer)?;
        let f_n = self.normal.feature(p, p_n)?;
        let f_g = self.gradient.feature(p, p_g)?;
        let k_n = self.normal.kernel(p, &f_n, &w_up)?;
        let k_g = self.gradient.kernel(p, &f_g, &w_up)?;
        let f_pn = f_n.mul(&k_g).in_layer(layer)?.add(&f_n).in_layer(layer)?;
        let f_pg = f_g.mul(&k_n).in_layer(layer)?.add(&f_g).in_layer(layer)?;
        Ok((f_pn, f_pg))
    }

    pub fn params(&self) -> usize {
        self.normal.params() + self.gradient.params()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.normal.macs(h, w) + self.gradient.macs(h, w)
    }
}

/// Output of one interaction module.
pub struct PfiOutput<'t, T: Scalar> {
    pub feature: Var<'t, T>,
    pub normal: Var<'t, T>,
    pub gradient: Var<'t, T>,
}

#[derive(Debug, Clone)]
pub struct Pfi {
    pub spfi: Spfi,
    pub similarity: PatchSimilarity,
    pub guided: DualGuidedFilter,
    pub merge: Conv,
}

impl Pfi {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, leaf: &str, cfg: &NetConfig) -> Result<Self> {
        let c = cfg.lr_width();
        b.scope(leaf, |b| {
            Ok(Self {
                spfi: Spfi::new(b, cfg)?,
                similarity: PatchSimilarity::new(b, cfg),
                guided: DualGuidedFilter::new(b, cfg),
                merge: Conv::pointwise(b, "merge", c, c),
            })
        })
    }

    pub fn forward<'t, T: Scalar>(
        &self,
        p: &Binding<'t, T>,
        p_n: &Var<'t, T>,
        p_g: &Var<'t, T>,
        f: &Var<'t, T>,
    ) -> Result<PfiOutput<'t, T>> {
        let (n2, g2) = self.spfi.forward(p, p_n, p_g, f)?;
        let w = self.similarity.forward(p, &n2, &g2)?;
        let (f_pn, f_pg) = self.guided.forward(p, &n2, &g2, &w)?;
        let name = self.merge.name();
        let sum = f.add(&f_pn).in_layer(name)?.add(&f_pg).in_layer(name)?;
        Ok(PfiOutput { feature: self.merge.forward(p, &sum)?, normal: n2, gradient: g2 })
    }

    pub fn params(&self) -> usize {
        self.spfi.params() + self.similarity.params() + self.guided.params() + self.merge.params()
    }

    /// `h, w` are the low-resolution extents.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.spfi.macs(h, w) + self.similarity.macs(h, w) + self.guided.macs(h, w) + self.merge.macs(h, w)
    }
}
