//! Network and training configuration: TOML files, named presets and
//! `section.key=value` overrides. Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// NAFBlock counts at each site of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockAllocation {
    /// High-resolution blocks before each shuffle-down.
    pub hr_per_group: usize,
    /// High-resolution blocks before the final convolution.
    pub hr_recon: usize,
    /// Blocks on each prior right after its stem.
    pub lr_prior_init: usize,
    /// Low-resolution blocks after each PFI.
    pub lr_after_pfi: usize,
    /// Blocks producing the intermediate low-resolution image.
    pub lr_intermediate: usize,
}

impl Default for BlockAllocation {
    fn default() -> Self {
        Self { hr_per_group: 1, hr_recon: 1, lr_prior_init: 1, lr_after_pfi: 4, lr_intermediate: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetConfig {
    /// High-resolution width C.
    pub channels: usize,
    /// Low-resolution width; `None` means `2·channels`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_channels: Option<usize>,
    /// Number of PFI modules L.
    pub pfi_count: usize,
    pub heads: usize,
    /// Shuffle factor S between the two branches.
    pub shuffle: usize,
    /// Shuffle-down factor D inside DPFI.
    pub dpfi_factor: usize,
    /// Unfold window k for patch similarity.
    pub unfold_k: usize,
    pub gdfn_expansion: f64,
    pub blocks: BlockAllocation,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            lr_channels: None,
            pfi_count: 3,
            heads: 8,
            shuffle: 8,
            dpfi_factor: 4,
            unfold_k: 3,
            gdfn_expansion: 2.0,
            blocks: BlockAllocation::default(),
        }
    }
}

impl NetConfig {
    pub fn lr_width(&self) -> usize {
        self.lr_channels.unwrap_or(2 * self.channels)
    }

    /// Width of each GDFN branch.
    pub fn gdfn_width(&self) -> usize {
        (self.gdfn_expansion * self.lr_width() as f64).round() as usize
    }

    /// Spatial sizes must be multiples of this.
    pub fn alignment(&self) -> usize {
        self.shuffle * self.dpfi_factor
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.channels == 0 || self.lr_width() == 0 {
            return bad("channel widths must be positive".into());
        }
        if self.heads == 0 || !self.lr_width().is_multiple_of(self.heads) {
            return bad(format!("low-resolution width {} not divisible by heads {}", self.lr_width(), self.heads));
        }
        if !self.shuffle.is_power_of_two() || !self.dpfi_factor.is_power_of_two() {
            return bad(format!("shuffle {} and dpfi_factor {} must be powers of two", self.shuffle, self.dpfi_factor));
        }
        if self.pfi_count == 0 {
            return bad("pfi_count must be at least 1".into());
        }
        if self.unfold_k.is_multiple_of(2) {
            return bad(format!("unfold_k {} must be odd", self.unfold_k));
        }
        let e = self.gdfn_expansion * self.lr_width() as f64;
        if self.gdfn_expansion.is_nan() || self.gdfn_expansion <= 0.0 || (e - e.round()).abs() > 1e-9 {
            return bad(format!("gdfn_expansion {} gives a non-integral width", self.gdfn_expansion));
        }
        Ok(())
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let a = self.alignment();
        if h == 0 || w == 0 || !h.is_multiple_of(a) || !w.is_multiple_of(a) {
            return Err(CoreError::Dimension(format!("input {h}x{w} must be a positive multiple of S*D = {a}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_final: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub batch: usize,
    /// Square training crop, a power of two divisible by S·D.
    pub patch: usize,
    pub iters: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub seed: u64,
    /// Random horizontal flips of training crops.
    pub flip: bool,
    /// Log interval in iterations.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_init: 5e-4,
            lr_final: 1e-7,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-4,
            batch: 1,
            patch: 512,
            iters: 500_000,
            alpha: 0.5,
            lambda: 0.1,
            seed: 0,
            flip: true,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, net: &NetConfig) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.lr_final.is_nan() || self.lr_init.is_nan() || self.lr_final >= self.lr_init || self.lr_final < 0.0 {
            return bad(format!("need 0 <= lr_final < lr_init, got {} and {}", self.lr_final, self.lr_init));
        }
        if !self.patch.is_power_of_two() || !self.patch.is_multiple_of(net.alignment()) {
            return bad(format!("patch {} must be a power of two divisible by {}", self.patch, net.alignment()));
        }
        if self.batch == 0 || self.iters == 0 || self.log_every == 0 {
            return bad("batch, iters and log_every must be positive".into());
        }
        Ok(())
    }
}

/// Complete run configuration as stored in a config file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub net: NetConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

pub const PRESETS: [&str; 2] = ["default", "desk"];

impl RunConfig {
    /// `default` is the full-size network; `desk` is the small CPU profile.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "desk" => Ok(Self {
                net: NetConfig { channels: 8, pfi_count: 2, ..NetConfig::default() },
                train: TrainConfig {
                    lr_init: 2e-3,
                    batch: 2,
                    patch: 128,
                    iters: 300,
                    log_every: 10,
                    ..TrainConfig::default()
                },
            }),
            other => Err(CoreError::Config(format!("unknown preset '{other}' (known: {})", PRESETS.join(", ")))),
        }
    }

    /// A preset name or a path to a TOML file, with overrides applied.
    pub fn resolve(source: &str, overrides: &[String]) -> Result<Self> {
        let base = if PRESETS.contains(&source) {
            toml::Value::try_from(Self::preset(source)?).map_err(|e| CoreError::Config(e.to_string()))?
        } else {
            let text = std::fs::read_to_string(Path::new(source))
                .map_err(|e| CoreError::Config(format!("cannot read config '{source}': {e}")))?;
            text.parse::<toml::Table>()
                .map(toml::Value::Table)
                .map_err(|e| CoreError::Config(format!("{source}: {e}")))?
        };
        Self::from_value(base, overrides)
    }

    fn from_value(mut value: toml::Value, overrides: &[String]) -> Result<Self> {
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let cfg: Self = value.try_into().map_err(|e: toml::de::Error| CoreError::Config(e.to_string()))?;
        cfg.net.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always serializable")
    }
}

/// Applies `a.b.c=value`; the value is parsed as a TOML literal, falling back
/// to a bare string.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .ok_or_else(|| CoreError::Config(format!("override '{spec}' is not key=value")))?;
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let keys: Vec<&str> = path.trim().split('.').collect();
    let mut node = root;
    for (i, key) in keys.iter().enumerate() {
        let table = node
            .as_table_mut()
            .ok_or_else(|| CoreError::Config(format!("override '{spec}': '{}' is not a section", keys[..i].join("."))))?;
        if i + 1 == keys.len() {
            table.insert(key.to_string(), value);
            return Ok(());
        }
        node = table.entry(key.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Err(CoreError::Config(format!("override '{spec}' has an empty key")))
}
