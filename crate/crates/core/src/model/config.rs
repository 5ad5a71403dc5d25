use std::fmt::Write as _;

use crate::error::{LatteError, Result};
use crate::geometry::Curvature;
use crate::layers::{InceptionShape, PoolMode, PredecoderAdapter, PredecoderSpec};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LatteConfig {
    pub channels: usize,
    pub timesteps: usize,
    pub classes: usize,
    /// Spatial components produced by the channel-mixing stage.
    pub components: usize,
    /// Temporal kernel of the spatio-temporal filter.
    pub temporal_kernel: usize,
    /// Euclidean feature size lifted onto the manifold.
    pub latent_dim: usize,
    pub windows: usize,
    pub bottleneck: usize,
    pub filters: usize,
    pub kernels: Vec<usize>,
    pub heads: usize,
    pub projection_dim: usize,
    pub curvature: f64,
    pub adapters: bool,
    pub processor_rank: usize,
    pub processor_lora_std: f64,
    pub decoder_rank: usize,
    pub decoder_alpha: f64,
    pub decoder_adapter: PredecoderAdapter,
    pub boosts: usize,
    pub boost_scale: f64,
    pub baseline_pool: PoolMode,
    pub task_pool: PoolMode,
    pub prototype_std: f64,
    pub prototypes_trainable: bool,
    pub decoder_hidden: usize,
    pub decoder_conv_channels: usize,
}

impl Default for LatteConfig {
    fn default() -> Self {
        Self {
            channels: 22,
            timesteps: 438,
            classes: 4,
            components: 22,
            temporal_kernel: 25,
            latent_dim: 32,
            windows: 5,
            bottleneck: 32,
            filters: 32,
            kernels: vec![9, 19, 39],
            heads: 4,
            projection_dim: 32,
            curvature: 1.0,
            adapters: true,
            processor_rank: 4,
            processor_lora_std: 0.02,
            decoder_rank: 8,
            decoder_alpha: 1.0,
            decoder_adapter: PredecoderAdapter::LowRank,
            boosts: 2,
            boost_scale: 0.1,
            baseline_pool: PoolMode::Avg,
            task_pool: PoolMode::Max,
            prototype_std: 1.0,
            prototypes_trainable: false,
            decoder_hidden: 64,
            decoder_conv_channels: 8,
        }
    }
}

fn pool_name(m: PoolMode) -> &'static str {
    match m {
        PoolMode::Max => "max",
        PoolMode::Avg => "avg",
    }
}

fn parse_pool(v: &str) -> Option<PoolMode> {
    match v {
        "max" => Some(PoolMode::Max),
        "avg" => Some(PoolMode::Avg),
        _ => None,
    }
}

fn adapter_name(a: PredecoderAdapter) -> &'static str {
    match a {
        PredecoderAdapter::LowRank => "lowrank",
        PredecoderAdapter::Boost => "boost",
    }
}

/// Error for a key whose value does not parse.
pub fn bad_value(key: &str, value: &str) -> LatteError {
    LatteError::InvalidArgument(format!("invalid value {value:?} for key {key}"))
}

pub fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| bad_value(key, v))
}

pub fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad_value(key, v)),
    }
}

/// Formats an `f64` so it parses back to the same bits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

impl LatteConfig {
    /// Scaled-down architecture for small synthetic problems.
    pub fn desk(channels: usize, timesteps: usize, classes: usize) -> Self {
        Self {
            channels,
            timesteps,
            classes,
            components: channels,
            temporal_kernel: 9,
            latent_dim: 8,
            windows: 1,
            bottleneck: 8,
            filters: 4,
            kernels: vec![3, 7, 15],
            heads: 2,
            projection_dim: 8,
            decoder_hidden: 32,
            decoder_conv_channels: 4,
            ..Self::default()
        }
    }

    pub fn curvature(&self) -> Result<Curvature> {
        Curvature::new(self.curvature)
    }

    /// Sequence length after the temporal filter.
    pub fn filtered_len(&self) -> usize {
        self.timesteps.saturating_sub(self.temporal_kernel) + 1
    }

    pub fn inception_shape(&self) -> InceptionShape {
        InceptionShape {
            in_dim: self.latent_dim,
            bottleneck: self.bottleneck,
            filters: self.filters,
            kernels: self.kernels.clone(),
        }
    }

    pub fn token_dim(&self) -> usize {
        self.inception_shape().out_dim()
    }

    pub fn predecoder_spec(&self) -> PredecoderSpec {
        PredecoderSpec {
            in_dim: self.token_dim(),
            out_dim: self.projection_dim,
            rank: self.decoder_rank,
            alpha: self.decoder_alpha,
            adapter: self.decoder_adapter,
            boosts: self.boosts,
            boost_scale: self.boost_scale,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("channels", self.channels),
            ("timesteps", self.timesteps),
            ("classes", self.classes),
            ("components", self.components),
            ("temporal_kernel", self.temporal_kernel),
            ("latent_dim", self.latent_dim),
            ("windows", self.windows),
            ("bottleneck", self.bottleneck),
            ("filters", self.filters),
            ("heads", self.heads),
            ("projection_dim", self.projection_dim),
            ("processor_rank", self.processor_rank),
            ("decoder_rank", self.decoder_rank),
            ("boosts", self.boosts),
            ("decoder_hidden", self.decoder_hidden),
            ("decoder_conv_channels", self.decoder_conv_channels),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(LatteError::InvalidArgument(format!("{k} must be positive")));
            }
        }
        if self.classes < 2 {
            return Err(LatteError::InvalidArgument(
                "classes must be at least 2".into(),
            ));
        }
        if self.temporal_kernel > self.timesteps {
            return Err(LatteError::InvalidArgument(format!(
                "temporal_kernel {} exceeds timesteps {}",
                self.temporal_kernel, self.timesteps
            )));
        }
        if self.windows > self.filtered_len() {
            return Err(LatteError::InvalidArgument(format!(
                "windows {} exceeds filtered length {}",
                self.windows,
                self.filtered_len()
            )));
        }
        if self.kernels.is_empty() || self.kernels.iter().any(|k| k % 2 == 0) {
            return Err(LatteError::InvalidArgument(
                "kernels must be a non-empty list of odd sizes".into(),
            ));
        }
        if self.bottleneck > self.latent_dim {
            return Err(LatteError::InvalidArgument(format!(
                "bottleneck {} exceeds latent_dim {}",
                self.bottleneck, self.latent_dim
            )));
        }
        if !self.token_dim().is_multiple_of(self.heads) {
            return Err(LatteError::InvalidArgument(format!(
                "heads {} do not divide token dim {}",
                self.heads,
                self.token_dim()
            )));
        }
        if !(self.prototype_std > 0.0) || !self.prototype_std.is_finite() {
            return Err(LatteError::InvalidArgument(
                "prototype_std must be positive".into(),
            ));
        }
        if !(self.boost_scale.is_finite() && self.decoder_alpha.is_finite()) {
            return Err(LatteError::InvalidArgument("scales must be finite".into()));
        }
        self.curvature()?;
        Ok(())
    }

    /// Keys accepted by [`LatteConfig::set`], in serialization order.
    pub const KEYS: &'static [&'static str] = &[
        "channels",
        "timesteps",
        "classes",
        "components",
        "temporal_kernel",
        "latent_dim",
        "windows",
        "bottleneck",
        "filters",
        "kernels",
        "heads",
        "projection_dim",
        "curvature",
        "adapters",
        "processor_rank",
        "processor_lora_std",
        "decoder_rank",
        "decoder_alpha",
        "decoder_adapter",
        "boosts",
        "boost_scale",
        "baseline_pool",
        "task_pool",
        "prototype_std",
        "prototypes_trainable",
        "decoder_hidden",
        "decoder_conv_channels",
    ];

    /// Sets one key; `Ok(false)` when the key is not an architecture key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let v = value.trim();
        match key {
            "channels" => self.channels = parse_num(key, v)?,
            "timesteps" => self.timesteps = parse_num(key, v)?,
            "classes" => self.classes = parse_num(key, v)?,
            "components" => self.components = parse_num(key, v)?,
            "temporal_kernel" => self.temporal_kernel = parse_num(key, v)?,
            "latent_dim" => self.latent_dim = parse_num(key, v)?,
            "windows" => self.windows = parse_num(key, v)?,
            "bottleneck" => self.bottleneck = parse_num(key, v)?,
            "filters" => self.filters = parse_num(key, v)?,
            "kernels" => {
                self.kernels = v
                    .split(',')
                    .map(|p| parse_num(key, p))
                    .collect::<Result<Vec<usize>>>()?
            }
            "heads" => self.heads = parse_num(key, v)?,
            "projection_dim" => self.projection_dim = parse_num(key, v)?,
            "curvature" => self.curvature = parse_num(key, v)?,
            "adapters" => self.adapters = parse_bool(key, v)?,
            "processor_rank" => self.processor_rank = parse_num(key, v)?,
            "processor_lora_std" => self.processor_lora_std = parse_num(key, v)?,
            "decoder_rank" => self.decoder_rank = parse_num(key, v)?,
            "decoder_alpha" => self.decoder_alpha = parse_num(key, v)?,
            "decoder_adapter" => {
                self.decoder_adapter = match v {
                    "lowrank" => PredecoderAdapter::LowRank,
                    "boost" => PredecoderAdapter::Boost,
                    _ => return Err(bad_value(key, v)),
                }
            }
            "boosts" => self.boosts = parse_num(key, v)?,
            "boost_scale" => self.boost_scale = parse_num(key, v)?,
            "baseline_pool" => {
                self.baseline_pool = parse_pool(v).ok_or_else(|| bad_value(key, v))?
            }
            "task_pool" => self.task_pool = parse_pool(v).ok_or_else(|| bad_value(key, v))?,
            "prototype_std" => self.prototype_std = parse_num(key, v)?,
            "prototypes_trainable" => self.prototypes_trainable = parse_bool(key, v)?,
            "decoder_hidden" => self.decoder_hidden = parse_num(key, v)?,
            "decoder_conv_channels" => self.decoder_conv_channels = parse_num(key, v)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "channels" => self.channels.to_string(),
            "timesteps" => self.timesteps.to_string(),
            "classes" => self.classes.to_string(),
            "components" => self.components.to_string(),
            "temporal_kernel" => self.temporal_kernel.to_string(),
            "latent_dim" => self.latent_dim.to_string(),
            "windows" => self.windows.to_string(),
            "bottleneck" => self.bottleneck.to_string(),
            "filters" => self.filters.to_string(),
            "kernels" => self
                .kernels
                .iter()
                .map(|k| k.to_string())
                .collect::<Vec<_>>()
                .join(","),
            "heads" => self.heads.to_string(),
            "projection_dim" => self.projection_dim.to_string(),
            "curvature" => fmt_f64(self.curvature),
            "adapters" => self.adapters.to_string(),
            "processor_rank" => self.processor_rank.to_string(),
            "processor_lora_std" => fmt_f64(self.processor_lora_std),
            "decoder_rank" => self.decoder_rank.to_string(),
            "decoder_alpha" => fmt_f64(self.decoder_alpha),
            "decoder_adapter" => adapter_name(self.decoder_adapter).to_string(),
            "boosts" => self.boosts.to_string(),
            "boost_scale" => fmt_f64(self.boost_scale),
            "baseline_pool" => pool_name(self.baseline_pool).to_string(),
            "task_pool" => pool_name(self.task_pool).to_string(),
            "prototype_std" => fmt_f64(self.prototype_std),
            "prototypes_trainable" => self.prototypes_trainable.to_string(),
            "decoder_hidden" => self.decoder_hidden.to_string(),
            "decoder_conv_channels" => self.decoder_conv_channels.to_string(),
            _ => return None,
        })
    }

    /// `key = value` lines in [`LatteConfig::KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for k in Self::KEYS {
            let _ = writeln!(s, "{k} = {}", self.get(k).expect("known key"));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in parse_kv_lines(text)? {
            if !cfg.set(&key, &value)? {
                return Err(LatteError::InvalidArgument(format!("unknown key {key}")));
            }
        }
        Ok(cfg)
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_kv_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            LatteError::InvalidArgument(format!("line {}: expected key = value", n + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
