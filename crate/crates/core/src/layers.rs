//! Network building blocks: convolution, layer norm, NAFBlock, transposed
//! cross-attention (MTCA), gated feed-forward (GDFN) and the shuffle-based
//! converters between the two resolution spaces.
//!
//! Every block reports its learnable-scalar count and its multiply-accumulate
//! count for a given input size, so budgets are computed without running it.

use uhddip_tensor::{concat, Conv2dSpec, Scalar, Var};

use crate::error::{CoreError, InLayer, Result};
use crate::params::{Binding, Builder, ParamId};

pub const LN_EPS: f64 = 1e-6;

/// Stride-1 "same" convolution with bias.
#[derive(Debug, Clone)]
pub struct Conv {
    name: String,
    w: ParamId,
    b: ParamId,
    cin: usize,
    cout: usize,
    k: usize,
    groups: usize,
}

impl Conv {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, leaf: &str, cin: usize, cout: usize, k: usize, groups: usize) -> Self {
        let name = b.name(leaf);
        let fan_in = (cin / groups) * k * k;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let (w, bias) = b.scope(leaf, |b| {
            (b.uniform("weight", vec![cout, cin / groups, k, k], bound), b.uniform("bias", vec![cout], bound))
        });
        Self { name, w, b: bias, cin, cout, k, groups }
    }

    pub fn pointwise<T: Scalar>(b: &mut Builder<'_, T>, leaf: &str, cin: usize, cout: usize) -> Self {
        Self::new(b, leaf, cin, cout, 1, 1)
    }

    pub fn depthwise<T: Scalar>(b: &mut Builder<'_, T>, leaf: &str, c: usize) -> Self {
        Self::new(b, leaf, c, c, 3, c)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn weight(&self) -> ParamId {
        self.w
    }

    pub fn bias(&self) -> ParamId {
        self.b
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Binding<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let spec = Conv2dSpec::same(self.k).with_groups(self.groups);
        x.conv2d(p.var(self.w), Some(p.var(self.b)), spec).in_layer(&self.name)
    }

    pub fn params(&self) -> usize {
        self.cout * (self.cin / self.groups) * self.k * self.k + self.cout
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        (self.cout * (self.cin / self.groups) * self.k * self.k) as u64 * (h * w) as u64
    }
}

/// Channel layer norm with per-channel affine.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    name: String,
    gamma: ParamId,
    beta: ParamId,
    c: usize,
}

impl LayerNorm {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, leaf: &str, c: usize) -> Self {
        let name = b.name(leaf);
        let (gamma, beta) = b.scope(leaf, |b| (b.constant("weight", vec![c], 1.0), b.constant("bias", vec![c], 0.0)));
        Self { name, gamma, beta, c }
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Binding<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        x.layer_norm_channel(p.var(self.gamma), p.var(self.beta), T::lit(LN_EPS)).in_layer(&self.name)
    }

    pub fn params(&self) -> usize {
        2 * self.c
    }
}

fn simple_gate<'t, T: Scalar>(x: &Var<'t, T>, layer: &str) -> Result<Var<'t, T>> {
    let (a, b) = x.chunk2(1).in_layer(layer)?;
    a.mul(&b).in_layer(layer)
}

/// NAFBlock: LN → 1×1 (C→2C) → dw3×3 → SimpleGate → SCA → 1×1, scaled by
/// β; then LN → 1×1 (C→2C) → SimpleGate → 1×1, scaled by γ. β and γ start at
/// zero so a fresh block is the identity.
#[derive(Debug, Clone)]
pub struct NafBlock {
    name: String,
    c: usize,
    norm1: LayerNorm,
    expand: Conv,
    dw: Conv,
    sca: Conv,
    project: Conv,
    norm2: LayerNorm,
    ffn_expand: Conv,
    ffn_project: Conv,
    beta: ParamId,
    gamma: ParamId,
}

impl NafBlock {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, leaf: &str, c: usize) -> Self {
        let name = b.name(leaf);
        b.scope(leaf, |b| Self {
            name: name.clone(),
            c,
            norm1: LayerNorm::new(b, "norm1", c),
            expand: Conv::pointwise(b, "expand", c, 2 * c),
            dw: Conv::depthwise(b, "dw", 2 * c),
            sca: Conv::pointwise(b, "sca", c, c),
            project: Conv::pointwise(b, "project", c, c),
            norm2: LayerNorm::new(b, "norm2", c),
            ffn_expand: Conv::pointwise(b, "ffn_expand", c, 2 * c),
            ffn_project: Conv::pointwise(b, "ffn_project", c, c),
            beta: b.constant("beta", vec![1, c, 1, 1], 0.0),
            gamma: b.constant("gamma", vec![1, c, 1, 1], 0.0),
        })
    }

    pub fn beta(&self) -> ParamId {
        self.beta
    }

    pub fn gamma(&self) -> ParamId {
        self.gamma
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Binding<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let n = &self.name;
        let y = self.norm1.forward(p, x)?;
        let y = self.dw.forward(p, &self.expand.forward(p, &y)?)?;
        let y = simple_gate(&y, n)?;
        let att = self.sca.forward(p, &y.global_avg_pool().in_layer(n)?)?;
        let y = self.project.forward(p, &y.mul(&att).in_layer(n)?)?;
        let x1 = x.add(&y.mul(p.var(self.beta)).in_layer(n)?).in_layer(n)?;
        let z = self.ffn_expand.forward(p, &self.norm2.forward(p, &x1)?)?;
        let z = self.ffn_project.forward(p, &simple_gate(&z, n)?)?;
        x1.add(&z.mul(p.var(self.gamma)).in_layer(n)?).in_layer(n)
    }

    pub fn params(&self) -> usize {
        self.norm1.params()
            + self.expand.params()
            + self.dw.params()
            + self.sca.params()
            + self.project.params()
            + self.norm2.params()
            + self.ffn_expand.params()
            + self.ffn_project.params()
            + 2 * self.c
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.expand.macs(h, w)
            + self.dw.macs(h, w)
            + self.sca.macs(1, 1)
            + self.project.macs(h, w)
            + self.ffn_expand.macs(h, w)
            + self.ffn_project.macs(h, w)
    }
}

/// A run of NAFBlocks.
#[derive(Debug, Clone, Default)]
pub struct NafStack {
    blocks: Vec<NafBlock>,
}

impl NafStack {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, leaf: &str, c: usize, count: usize) -> Self {
        b.scope(leaf, |b| Self { blocks: (0..count).map(|i| NafBlock::new(b, &i.to_string(), c)).collect() })
    }

    pub fn blocks(&self) -> &[NafBlock] {
        &self.blocks
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Binding<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let mut x = x.clone();
        for blk in &self.blocks {
            x = blk.forward(p, &x)?;
        }
        Ok(x)
    }

    pub fn params(&self) -> usize {
        self.blocks.iter().map(NafBlock::params).sum()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.blocks.iter().map(|b| b.macs(h, w)).sum()
    }
}

/// Transposed cross-attention: queries from a prior feature, keys and values
/// from the image feature, attention over channels within each head.
#[derive(Debug, Clone)]
pub struct Mtca {
    name: String,
    c: usize,
    heads: usize,
    norm_q: LayerNorm,
    q_pw: Conv,
    q_dw: Conv,
    norm_kv: LayerNorm,
    kv_pw: Conv,
    kv_dw: Conv,
    project: Conv,
}

impl Mtca {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, leaf: &str, c: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !c.is_multiple_of(heads) {
            return Err(CoreError::Config(format!("{c} channels not divisible by {heads} heads")));
        }
        let name = b.name(leaf);
        Ok(b.scope(leaf, |b| Self {
            name: name.clone(),
            c,
            heads,
            norm_q: LayerNorm::new(b, "norm_q", c),
            q_pw: Conv::pointwise(b, "q_pw", c, c),
            q_dw: Conv::depthwise(b, "q_dw", c),
            norm_kv: LayerNorm::new(b, "norm_kv", c),
            kv_pw: Conv::pointwise(b, "kv_pw", c, 2 * c),
            kv_dw: Conv::depthwise(b, "kv_dw", 2 * c),
            project: Conv::pointwise(b, "project", c, c),
        }))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Query, key and value tensors, each `[N, heads, C/heads, H·W]`.
    pub fn qkv<'t, T: Scalar>(
        &self,
        p: &Binding<'t, T>,
        prior: &Var<'t, T>,
        image: &Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>, Var<'t, T>)> {
        let n = &self.name;
        let (bn, c, h, w) = prior.value().dims4().in_layer(n)?;
        if image.shape() != prior.shape() {
            return Err(CoreError::Dimension(format!(
                "{n}: prior {:?} vs image {:?}",
                prior.shape(),
                image.shape()
            )));
        }
        let heads = [bn, self.heads, c / self.heads, h * w];
        let q = self.q_dw.forward(p, &self.q_pw.forward(p, &self.norm_q.forward(p, prior)?)?)?;
        let kv = self.kv_dw.forward(p, &self.kv_pw.forward(p, &self.norm_kv.forward(p, image)?)?)?;
        let (k, v) = kv.chunk2(1).in_layer(n)?;
        Ok((q.reshape(heads).in_layer(n)?, k.reshape(heads).in_layer(n)?, v.reshape(heads).in_layer(n)?))
    }

    /// `softmax(Q·Kᵀ / √(H·W))` per head, `[N, heads, C/heads, C/heads]`.
    pub fn attention<'t, T: Scalar>(q: &Var<'t, T>, k: &Var<'t, T>, layer: &str) -> Result<Var<'t, T>> {
        let hw = q.shape()[3];
        let logits = q.matmul(&k.transpose_last2().in_layer(layer)?).in_layer(layer)?;
        logits.scale(T::lit(1.0 / (hw as f64).sqrt())).in_layer(layer)?.softmax(3).in_layer(layer)
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Binding<'t, T>, prior: &Var<'t, T>, image: &Var<'t, T>) -> Result<Var<'t, T>> {
        let n = &self.name;
        let (q, k, v) = self.qkv(p, prior, image)?;
        let out = Self::attention(&q, &k, n)?.matmul(&v).in_layer(n)?;
        let merged = out.reshape(prior.shape().to_vec()).in_layer(n)?;
        self.project.forward(p, &merged)
    }

    pub fn params(&self) -> usize {
        self.norm_q.params()
            + self.q_pw.params()
            + self.q_dw.params()
            + self.norm_kv.params()
            + self.kv_pw.params()
            + self.kv_dw.params()
            + self.project.params()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let per_head = (self.c / self.heads) as u64;
        let attention = 2 * self.c as u64 * per_head * (h * w) as u64;
        self.q_pw.macs(h, w)
            + self.q_dw.macs(h, w)
            + self.kv_pw.macs(h, w)
            + self.kv_dw.macs(h, w)
            + attention
            + self.project.macs(h, w)
    }
}

/// Gated feed-forward with depthwise mixing and a residual connection.
#[derive(Debug, Clone)]
pub struct Gdfn {
    name: String,
    norm: LayerNorm,
    expand: Conv,
    dw: Conv,
    project: Conv,
}

impl Gdfn {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, leaf: &str, c: usize, width: usize) -> Self {
        let name = b.name(leaf);
        b.scope(leaf, |b| Self {
            name: name.clone(),
            norm: LayerNorm::new(b, "norm", c),
            expand: Conv::pointwise(b, "expand", c, 2 * width),
            dw: Conv::depthwise(b, "dw", 2 * width),
            project: Conv::pointwise(b, "project", width, c),
        })
    }

    pub fn project(&self) -> &Conv {
        &self.project
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Binding<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        let n = &self.name;
        let y = self.dw.forward(p, &self.expand.forward(p, &self.norm.forward(p, x)?)?)?;
        let (a, g) = y.chunk2(1).in_layer(n)?;
        let gated = a.gelu().in_layer(n)?.mul(&g).in_layer(n)?;
        x.add(&self.project.forward(p, &gated)?).in_layer(n)
    }

    pub fn params(&self) -> usize {
        self.norm.params() + self.expand.params() + self.dw.params() + self.project.params()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.expand.macs(h, w) + self.dw.macs(h, w) + self.project.macs(h, w)
    }
}

/// Pixel-unshuffle by `s` followed by a 1×1 projection to `cout` channels.
#[derive(Debug, Clone)]
pub struct ShuffleDown {
    s: usize,
    proj: Conv,
}

impl ShuffleDown {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, leaf: &str, cin: usize, cout: usize, s: usize) -> Self {
        Self { s, proj: Conv::pointwise(b, leaf, cin * s * s, cout) }
    }

    pub fn conv(&self) -> &Conv {
        &self.proj
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Binding<'t, T>, x: &Var<'t, T>) -> Result<Var<'t, T>> {
        self.proj.forward(p, &x.pixel_unshuffle(self.s).in_layer(self.proj.name())?)
    }

    pub fn params(&self) -> usize {
        self.proj.params()
    }

    /// `h, w` are the full-resolution input extents.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.proj.macs(h / self.s, w / self.s)
    }
}

/// 1×1 expansion to `c·s²`, pixel-shuffle by `s`, concatenation with the
/// skip feature and a 1×1 merge back to `c` channels.
#[derive(Debug, Clone)]
pub struct ShuffleUpMerge {
    s: usize,
    up: Conv,
    merge: Conv,
}

impl ShuffleUpMerge {
    pub fn new<T: Scalar>(b: &mut Builder<'_, T>, leaf: &str, c_low: usize, c: usize, s: usize) -> Self {
        b.scope(leaf, |b| Self {
            s,
            up: Conv::pointwise(b, "up", c_low, c * s * s),
            merge: Conv::pointwise(b, "merge", 2 * c, c),
        })
    }

    pub fn up(&self) -> &Conv {
        &self.up
    }

    pub fn merge(&self) -> &Conv {
        &self.merge
    }

    pub fn forward<'t, T: Scalar>(&self, p: &Binding<'t, T>, low: &Var<'t, T>, skip: &Var<'t, T>) -> Result<Var<'t, T>> {
        let up = self.up.forward(p, low)?.pixel_shuffle(self.s).in_layer(self.up.name())?;
        if up.shape() != skip.shape() {
            return Err(CoreError::Dimension(format!(
                "{}: upsampled {:?} vs skip {:?}",
                self.merge.name(),
                up.shape(),
                skip.shape()
            )));
        }
        self.merge.forward(p, &concat(&[&up, skip], 1).in_layer(self.merge.name())?)
    }

    pub fn params(&self) -> usize {
        self.up.params() + self.merge.params()
    }

    /// `h, w` are the full-resolution extents.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.up.macs(h / self.s, w / self.s) + self.merge.macs(h, w)
    }
}
