//! Direct loop implementations of the blocks on single feature maps, read
//! straight from parameter names. Shares nothing with the library kernels.
#![allow(dead_code)]

use uhddip_core::ParamStore;
use uhddip_tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Map {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub d: Vec<f64>,
}

impl Map {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, d: vec![0.0; c * h * w] }
    }

    pub fn from_tensor(t: &Tensor<f64>) -> Self {
        let s = t.shape();
        assert_eq!(s[0], 1, "oracle maps are single images");
        Self { c: s[1], h: s[2], w: s[3], d: t.data().to_vec() }
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.d[(c * self.h + y) * self.w + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.d[(c * self.h + y) * self.w + x] = v;
    }

    pub fn zip(&self, o: &Map, f: impl Fn(f64, f64) -> f64) -> Map {
        assert_eq!((self.c, self.h, self.w), (o.c, o.h, o.w));
        Map { d: self.d.iter().zip(&o.d).map(|(&a, &b)| f(a, b)).collect(), ..self.clone() }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Map {
        Map { d: self.d.iter().map(|&a| f(a)).collect(), ..self.clone() }
    }

    pub fn channels(&self, start: usize, len: usize) -> Map {
        let hw = self.h * self.w;
        Map { c: len, h: self.h, w: self.w, d: self.d[start * hw..(start + len) * hw].to_vec() }
    }

    pub fn max_abs_diff(&self, t: &Tensor<f64>) -> f64 {
        assert_eq!(self.d.len(), t.numel());
        self.d.iter().zip(t.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

fn p<'a>(s: &'a ParamStore<f64>, name: &str) -> &'a Tensor<f64> {
    s.by_name(name).unwrap_or_else(|| panic!("no parameter {name}"))
}

/// Zero-padded "same" convolution with groups.
pub fn conv(x: &Map, s: &ParamStore<f64>, name: &str, groups: usize) -> Map {
    let wt = p(s, &format!("{name}.weight"));
    let b = p(s, &format!("{name}.bias"));
    let (co, cig, k) = (wt.shape()[0], wt.shape()[1], wt.shape()[2]);
    let half = (k / 2) as isize;
    let cog = co / groups;
    let mut out = Map::zeros(co, x.h, x.w);
    for o in 0..co {
        let g = o / cog;
        for y in 0..x.h {
            for xx in 0..x.w {
                let mut acc = b.data()[o];
                for i in 0..cig {
                    let ci = g * cig + i;
                    for ky in 0..k {
                        for kx in 0..k {
                            let sy = y as isize + ky as isize - half;
                            let sx = xx as isize + kx as isize - half;
                            if sy < 0 || sx < 0 || sy >= x.h as isize || sx >= x.w as isize {
                                continue;
                            }
                            acc += wt.data()[((o * cig + i) * k + ky) * k + kx] * x.at(ci, sy as usize, sx as usize);
                        }
                    }
                }
                out.set(o, y, xx, acc);
            }
        }
    }
    out
}

pub fn layer_norm(x: &Map, s: &ParamStore<f64>, name: &str) -> Map {
    let g = p(s, &format!("{name}.weight"));
    let b = p(s, &format!("{name}.bias"));
    let mut out = x.clone();
    for y in 0..x.h {
        for xx in 0..x.w {
            let vals: Vec<f64> = (0..x.c).map(|c| x.at(c, y, xx)).collect();
            let mean = vals.iter().sum::<f64>() / x.c as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / x.c as f64;
            for c in 0..x.c {
                out.set(c, y, xx, (vals[c] - mean) / (var + 1e-6).sqrt() * g.data()[c] + b.data()[c]);
            }
        }
    }
    out
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x.powi(3))).tanh())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gate(x: &Map) -> Map {
    let half = x.c / 2;
    x.channels(0, half).zip(&x.channels(half, half), |a, b| a * b)
}

pub fn naf(x: &Map, s: &ParamStore<f64>, pre: &str) -> Map {
    let y = layer_norm(x, s, &format!("{pre}.norm1"));
    let y = conv(&conv(&y, s, &format!("{pre}.expand"), 1), s, &format!("{pre}.dw"), 2 * x.c);
    let y = gate(&y);
    let mut pooled = Map::zeros(x.c, 1, 1);
    for c in 0..x.c {
        let m = (0..x.h * x.w).map(|i| y.d[c * x.h * x.w + i]).sum::<f64>() / (x.h * x.w) as f64;
        pooled.set(c, 0, 0, m);
    }
    let att = conv(&pooled, s, &format!("{pre}.sca"), 1);
    let mut y2 = y.clone();
    for c in 0..x.c {
        for i in 0..x.h * x.w {
            y2.d[c * x.h * x.w + i] *= att.d[c];
        }
    }
    let y = conv(&y2, s, &format!("{pre}.project"), 1);
    let beta = p(s, &format!("{pre}.beta"));
    let x1 = Map { d: (0..x.d.len()).map(|i| x.d[i] + y.d[i] * beta.data()[i / (x.h * x.w)]).collect(), ..x.clone() };
    let z = conv(&layer_norm(&x1, s, &format!("{pre}.norm2")), s, &format!("{pre}.ffn_expand"), 1);
    let z = conv(&gate(&z), s, &format!("{pre}.ffn_project"), 1);
    let gamma = p(s, &format!("{pre}.gamma"));
    Map { d: (0..x.d.len()).map(|i| x1.d[i] + z.d[i] * gamma.data()[i / (x.h * x.w)]).collect(), ..x.clone() }
}

/// Per-head loop: `A = softmax(q kᵀ / √(HW))`, `out = A v`.
pub fn mtca(prior: &Map, image: &Map, s: &ParamStore<f64>, pre: &str, heads: usize) -> Map {
    let c = prior.c;
    let q = conv(&conv(&layer_norm(prior, s, &format!("{pre}.norm_q")), s, &format!("{pre}.q_pw"), 1), s, &format!("{pre}.q_dw"), c);
    let kv = conv(
        &conv(&layer_norm(image, s, &format!("{pre}.norm_kv")), s, &format!("{pre}.kv_pw"), 1),
        s,
        &format!("{pre}.kv_dw"),
        2 * c,
    );
    let (k, v) = (kv.channels(0, c), kv.channels(c, c));
    let hw = prior.h * prior.w;
    let ch = c / heads;
    let scale = 1.0 / (hw as f64).sqrt();
    let mut out = Map::zeros(c, prior.h, prior.w);
    for hd in 0..heads {
        for i in 0..ch {
            let qi = hd * ch + i;
            let logits: Vec<f64> = (0..ch)
                .map(|j| (0..hw).map(|t| q.d[qi * hw + t] * k.d[(hd * ch + j) * hw + t]).sum::<f64>() * scale)
                .collect();
            let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let z: f64 = e.iter().sum();
            for t in 0..hw {
                out.d[qi * hw + t] = (0..ch).map(|j| e[j] / z * v.d[(hd * ch + j) * hw + t]).sum();
            }
        }
    }
    conv(&out, s, &format!("{pre}.project"), 1)
}

pub fn gdfn(x: &Map, s: &ParamStore<f64>, pre: &str) -> Map {
    let y = conv(&layer_norm(x, s, &format!("{pre}.norm")), s, &format!("{pre}.expand"), 1);
    let y = conv(&y, s, &format!("{pre}.dw"), y.c);
    let half = y.c / 2;
    let gated = y.channels(0, half).zip(&y.channels(half, half), |a, b| gelu(a) * b);
    x.zip(&conv(&gated, s, &format!("{pre}.project"), 1), |a, b| a + b)
}

/// Pixel unshuffle with channel index `c·r² + i·r + j`.
pub fn unshuffle(x: &Map, r: usize) -> Map {
    let mut out = Map::zeros(x.c * r * r, x.h / r, x.w / r);
    for c in 0..x.c {
        for y in 0..x.h {
            for xx in 0..x.w {
                out.set(c * r * r + (y % r) * r + xx % r, y / r, xx / r, x.at(c, y, xx));
            }
        }
    }
    out
}

pub fn upsample_nearest(x: &Map, r: usize) -> Map {
    let mut out = Map::zeros(x.c, x.h * r, x.w * r);
    for c in 0..x.c {
        for y in 0..x.h * r {
            for xx in 0..x.w * r {
                out.set(c, y, xx, x.at(c, y / r, xx / r));
            }
        }
    }
    out
}

/// Cosine of the zero-padded k×k neighbourhood columns of `u` and `v`.
pub fn cosine_map(u: &Map, v: &Map, k: usize) -> Map {
    let half = (k / 2) as isize;
    let mut out = Map::zeros(1, u.h, u.w);
    for y in 0..u.h {
        for x in 0..u.w {
            let (mut dot, mut nu, mut nv) = (0.0, 0.0, 0.0);
            for c in 0..u.c {
                for dy in -half..=half {
                    for dx in -half..=half {
                        let (sy, sx) = (y as isize + dy, x as isize + dx);
                        if sy < 0 || sx < 0 || sy >= u.h as isize || sx >= u.w as isize {
                            continue;
                        }
                        let (a, b) = (u.at(c, sy as usize, sx as usize), v.at(c, sy as usize, sx as usize));
                        dot += a * b;
                        nu += a * a;
                        nv += b * b;
                    }
                }
            }
            out.set(0, y, x, dot / (nu.sqrt() * nv.sqrt() + 1e-8));
        }
    }
    out
}

pub fn similarity(pn: &Map, pg: &Map, s: &ParamStore<f64>, pre: &str, d: usize, k: usize) -> Map {
    let u = naf(&conv(&unshuffle(pn, d), s, &format!("{pre}.down_normal"), 1), s, &format!("{pre}.naf_normal"));
    let v = naf(&conv(&unshuffle(pg, d), s, &format!("{pre}.down_gradient"), 1), s, &format!("{pre}.naf_gradient"));
    cosine_map(&u, &v, k)
}

pub fn guided(pn: &Map, pg: &Map, w: &Map, s: &ParamStore<f64>, pre: &str, d: usize) -> (Map, Map) {
    let w_up = upsample_nearest(w, d);
    let branch = |x: &Map, side: &str| {
        let f = naf(&conv(x, s, &format!("{pre}.{side}.conv"), 1), s, &format!("{pre}.{side}.naf"));
        let kc = conv(&f, s, &format!("{pre}.{side}.kernel_conv"), 1);
        let mut modulated = kc.clone();
        for c in 0..kc.c {
            for y in 0..kc.h {
                for xx in 0..kc.w {
                    modulated.set(c, y, xx, kc.at(c, y, xx) * w_up.at(0, y, xx));
                }
            }
        }
        let kernel = conv(&modulated, s, &format!("{pre}.{side}.kernel_head"), 1).map(sigmoid);
        (f, kernel)
    };
    let (f_n, k_n) = branch(pn, "normal");
    let (f_g, k_g) = branch(pg, "gradient");
    let f_pn = f_n.zip(&k_g, |f, k| f * k + f);
    let f_pg = f_g.zip(&k_n, |f, k| f * k + f);
    (f_pn, f_pg)
}

pub fn spfi(pn: &Map, pg: &Map, f: &Map, s: &ParamStore<f64>, pre: &str, heads: usize) -> (Map, Map) {
    let stream = |x: &Map, side: &str| {
        let a = mtca(x, f, s, &format!("{pre}.{side}.mtca"), heads);
        gdfn(&x.zip(&a, |p, q| p + q), s, &format!("{pre}.{side}.gdfn"))
    };
    (stream(pn, "normal"), stream(pg, "gradient"))
}

/// Returns `(feature, normal', gradient')`.
pub fn pfi(pn: &Map, pg: &Map, f: &Map, s: &ParamStore<f64>, pre: &str, heads: usize, d: usize, k: usize) -> (Map, Map, Map) {
    let (n2, g2) = spfi(pn, pg, f, s, &format!("{pre}.spfi"), heads);
    let w = similarity(&n2, &g2, s, &format!("{pre}.similarity"), d, k);
    let (f_pn, f_pg) = guided(&n2, &g2, &w, s, &format!("{pre}.guided"), d);
    let sum = f.zip(&f_pn, |a, b| a + b).zip(&f_pg, |a, b| a + b);
    (conv(&sum, s, &format!("{pre}.merge"), 1), n2, g2)
}
