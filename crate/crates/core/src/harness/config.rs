//! Run configuration: a flat, typed TOML file, optionally layered on a
//! shipped preset.
//!
//! ```toml
//! preset = "sym40"
//! name = "sym40-seed3"
//! seed = 3
//! no_local_threshold = true
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{BlobSpec, NoiseKind, NoiseSpec};
use crate::error::{Error, Result};
use crate::trainer::{Ablation, Method, TrainConfig};

pub const PRESETS: [&str; 6] = ["sym20", "sym40", "sym80", "asym40", "openset-asym40", "heterogeneous"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub name: String,
    pub blobs: BlobSpec,
    pub noise: NoiseSpec,
    /// Held-out clean samples per class.
    pub test_per_class: usize,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::config("name", "must be non-empty and contain no path separators"));
        }
        self.blobs.validate()?;
        self.noise.validate()?;
        if self.test_per_class == 0 {
            return Err(Error::config("test_per_class", "must be at least 1"));
        }
        self.train.validate()
    }

    pub fn seed(&self) -> u64 {
        self.train.seed
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.train.ablation = ablation;
        self
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.train.method = method;
        self
    }

    /// Everything that determines the data, for comparability checks.
    pub fn data_key(&self) -> (BlobSpec, NoiseSpec, usize, u64) {
        (self.blobs.clone(), self.noise.clone(), self.test_per_class, self.train.seed)
    }
}

fn four_class(name: &str, spread: Vec<f64>, noise: NoiseSpec) -> RunConfig {
    RunConfig {
        name: name.to_string(),
        blobs: BlobSpec {
            class_count: 4,
            per_class: 1000,
            dim: 2,
            spread,
            radius: 3.0,
        },
        noise,
        test_per_class: 500,
        train: TrainConfig::default(),
    }
}

/// One of the shipped presets.
pub fn preset(name: &str) -> Result<RunConfig> {
    let cfg = match name {
        "sym20" => four_class(name, vec![1.0; 4], NoiseSpec::symmetric(0.2)),
        "sym40" => four_class(name, vec![1.0; 4], NoiseSpec::symmetric(0.4)),
        // 80% symmetric noise on four classes leaves the true class in the
        // minority; ten classes keep it the plurality label.
        "sym80" => {
            let mut cfg = four_class(name, vec![1.0; 10], NoiseSpec::symmetric(0.8));
            cfg.blobs.class_count = 10;
            cfg.blobs.per_class = 400;
            cfg.blobs.radius = 6.0;
            cfg.test_per_class = 200;
            cfg
        }
        "asym40" => four_class(name, vec![1.0; 4], NoiseSpec::asymmetric(0.4)),
        "openset-asym40" => four_class(name, vec![1.0; 4], NoiseSpec::openset(0.2, 1, NoiseSpec::asymmetric(0.4))),
        "heterogeneous" => four_class(name, vec![0.5, 0.9, 1.3, 1.7], NoiseSpec::symmetric(0.4)),
        other => {
            return Err(Error::config(
                "preset",
                format!("unknown preset `{other}` (available: {})", PRESETS.join(", ")),
            ))
        }
    };
    Ok(cfg)
}

/// Every key a config file may set. Anything else is rejected by name.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FlatConfig {
    preset: Option<String>,
    name: Option<String>,
    // data
    class_count: Option<usize>,
    per_class: Option<usize>,
    dim: Option<usize>,
    spread: Option<Spread>,
    radius: Option<f64>,
    test_per_class: Option<usize>,
    noise_kind: Option<NoiseKind>,
    noise_rate: Option<f64>,
    ood_class_count: Option<usize>,
    inner_noise_kind: Option<NoiseKind>,
    inner_noise_rate: Option<f64>,
    // training
    total_epochs: Option<usize>,
    warmup_epochs: Option<usize>,
    batch_size: Option<usize>,
    base_lr: Option<f64>,
    weight_decay: Option<f64>,
    ema_m: Option<f64>,
    teacher_alpha: Option<f64>,
    lambda_max: Option<f64>,
    hidden: Option<Vec<usize>>,
    seed: Option<u64>,
    method: Option<Method>,
    // ablations
    no_local_threshold: Option<bool>,
    no_global_threshold: Option<bool>,
    no_threshold_ema: Option<bool>,
    no_reweight: Option<bool>,
    no_distribution_ema: Option<bool>,
    no_class_balanced_stats: Option<bool>,
    no_noisy_loss: Option<bool>,
    no_consistency_reg: Option<bool>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum Spread {
    One(f64),
    PerClass(Vec<f64>),
}

macro_rules! overlay {
    ($flat:ident, $target:expr, $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $flat.$field { $target.$field = v; })+
    };
}

/// Parses config text. Without `preset`, values start from `sym40`.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let flat: FlatConfig = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let field = unknown_field(&message).unwrap_or_else(|| "config".to_string());
        Error::config(field, message)
    })?;

    let mut cfg = preset(flat.preset.as_deref().unwrap_or("sym40"))?;
    if let Some(name) = flat.name {
        cfg.name = name;
    } else if let Some(p) = &flat.preset {
        cfg.name = p.clone();
    }

    overlay!(flat, cfg.blobs, class_count, per_class, dim, radius);
    match flat.spread {
        Some(Spread::One(s)) => cfg.blobs.spread = vec![s; cfg.blobs.class_count],
        Some(Spread::PerClass(v)) => cfg.blobs.spread = v,
        None if cfg.blobs.spread.len() != cfg.blobs.class_count => {
            // Class count changed without a spread: keep a uniform value.
            let s = cfg.blobs.spread.first().copied().unwrap_or(1.0);
            cfg.blobs.spread = vec![s; cfg.blobs.class_count];
        }
        None => {}
    }
    overlay!(flat, cfg, test_per_class);

    if let Some(kind) = flat.noise_kind {
        cfg.noise.kind = kind;
        if kind != NoiseKind::Openset {
            cfg.noise.inner = None;
            cfg.noise.ood_class_count = 0;
        }
    }
    if let Some(rate) = flat.noise_rate {
        cfg.noise.rate = rate;
    }
    if let Some(k) = flat.ood_class_count {
        cfg.noise.ood_class_count = k;
    }
    if flat.inner_noise_kind.is_some() || flat.inner_noise_rate.is_some() {
        let inner = cfg.noise.inner.get_or_insert_with(|| Box::new(NoiseSpec::symmetric(0.2)));
        if let Some(kind) = flat.inner_noise_kind {
            inner.kind = kind;
        }
        if let Some(rate) = flat.inner_noise_rate {
            inner.rate = rate;
        }
    }

    overlay!(
        flat,
        cfg.train,
        total_epochs,
        warmup_epochs,
        batch_size,
        base_lr,
        weight_decay,
        ema_m,
        teacher_alpha,
        lambda_max,
        hidden,
        seed,
        method,
    );
    overlay!(
        flat,
        cfg.train.ablation,
        no_local_threshold,
        no_global_threshold,
        no_threshold_ema,
        no_reweight,
        no_distribution_ema,
        no_class_balanced_stats,
        no_noisy_loss,
        no_consistency_reg,
    );
    cfg.validate()?;
    Ok(cfg)
}

fn unknown_field(message: &str) -> Option<String> {
    let rest = message.strip_prefix("unknown field `")?;
    rest.split('`').next().map(str::to_string)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}
