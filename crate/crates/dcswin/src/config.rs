//! Flat INI-style run configuration: `section.key = value` lines, `#`
//! comments, unknown keys rejected, every default printable.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant};
use crate::train::TrainConfig;

/// Where samples come from and how they are cut.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// Dataset root (manifest layout). Empty means synthesize scenes instead.
    pub root: Option<PathBuf>,
    pub tile: usize,
    pub stride: usize,
    pub synth_count: usize,
    pub synth_size: usize,
    pub synth_classes: usize,
    pub synth_seed: u64,
    pub augment: bool,
    pub ignore_label: Option<u32>,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            root: None,
            tile: 1024,
            stride: 1024,
            synth_count: 16,
            synth_size: 64,
            synth_classes: 6,
            synth_seed: 0,
            augment: false,
            ignore_label: None,
        }
    }
}

/// Everything a run needs, grouped in the config file's section order.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::swin_nano(6),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{}' for {}", value.trim(), key)))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Config(format!(
            "bad value '{}' for {} (expected true or false)",
            other, key
        ))),
    }
}

fn parse_four(key: &str, value: &str) -> Result<[usize; 4]> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    if parts.len() != 4 {
        return Err(Error::Config(format!(
            "{} needs exactly 4 comma-separated values, got '{}'",
            key, value
        )));
    }
    let mut out = [0usize; 4];
    for (slot, p) in out.iter_mut().zip(parts) {
        *slot = parse_num(key, p)?;
    }
    Ok(out)
}

impl RunConfig {
    /// Parse config text, starting from defaults. Later lines override
    /// earlier ones; a `model.preset` line resets the architecture fields
    /// while keeping class count and variant.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'section.key = value'", lineno + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            cfg.apply(key, value).map_err(|e| {
                let msg = match e {
                    Error::Config(m) => m,
                    other => other.to_string(),
                };
                Error::Config(format!("line {}: {}", lineno + 1, msg))
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "model.preset" => {
                let fresh = ModelConfig::by_name(value, self.model.num_classes)?;
                let variant = self.model.variant;
                self.model = fresh;
                self.model.variant = variant;
            }
            "model.embed_dim" => self.model.embed_dim = parse_num(key, value)?,
            "model.depths" => self.model.depths = parse_four(key, value)?,
            "model.num_heads" => self.model.num_heads = parse_four(key, value)?,
            "model.window_size" => self.model.window_size = parse_num(key, value)?,
            "model.patch_size" => self.model.patch_size = parse_num(key, value)?,
            "model.mlp_ratio" => self.model.mlp_ratio = parse_num(key, value)?,
            "model.num_classes" => self.model.num_classes = parse_num(key, value)?,
            "model.variant" => self.model.variant = Variant::parse(value)?,
            "train.lr" => self.train.lr = parse_num(key, value)?,
            "train.weight_decay" => self.train.weight_decay = parse_num(key, value)?,
            "train.beta1" => self.train.beta1 = parse_num(key, value)?,
            "train.beta2" => self.train.beta2 = parse_num(key, value)?,
            "train.label_smoothing" => self.train.label_smoothing = parse_num(key, value)?,
            "train.steps" => self.train.steps = parse_num(key, value)?,
            "train.batch" => self.train.batch = parse_num(key, value)?,
            "train.seed" => self.train.seed = parse_num(key, value)?,
            "train.eval_every" => self.train.eval_every = parse_num(key, value)?,
            "data.root" => {
                self.data.root = (!value.is_empty()).then(|| PathBuf::from(value));
            }
            "data.tile" => self.data.tile = parse_num(key, value)?,
            "data.stride" => self.data.stride = parse_num(key, value)?,
            "data.synth_count" => self.data.synth_count = parse_num(key, value)?,
            "data.synth_size" => self.data.synth_size = parse_num(key, value)?,
            "data.synth_classes" => self.data.synth_classes = parse_num(key, value)?,
            "data.synth_seed" => self.data.synth_seed = parse_num(key, value)?,
            "data.augment" => self.data.augment = parse_bool(key, value)?,
            "data.ignore_label" => {
                self.data.ignore_label = match value {
                    "none" => None,
                    v => Some(parse_num(key, v)?),
                };
            }
            "output.dir" => self.output_dir = PathBuf::from(value),
            other => {
                return Err(Error::Config(format!("unknown config key '{}'", other)));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let d = &self.data;
        if d.tile == 0 || d.stride == 0 || d.stride > d.tile {
            return Err(Error::Config(format!(
                "data tiling needs 0 < stride <= tile, got tile {} stride {}",
                d.tile, d.stride
            )));
        }
        if d.root.is_none() {
            if !(2..=8).contains(&d.synth_classes) {
                return Err(Error::Config(format!(
                    "data.synth_classes must be 2..=8, got {}",
                    d.synth_classes
                )));
            }
            if d.synth_classes != self.model.num_classes {
                return Err(Error::Config(format!(
                    "model.num_classes {} must match data.synth_classes {}",
                    self.model.num_classes, d.synth_classes
                )));
            }
            if d.synth_count == 0 {
                return Err(Error::Config("data.synth_count must be positive".into()));
            }
        }
        // Batch norm computes per-channel statistics in training; the
        // coarsest stage sees batch · ceil(tile/total_stride)² values per
        // channel, and a population of one has no variance.
        let ts = self.model.total_stride();
        let coarsest = self.data.tile.div_ceil(ts).pow(2);
        if self.train.batch * coarsest < 2 {
            return Err(Error::Config(format!(
                "train.batch {} with data.tile {} leaves batch normalization a single value \
                 per channel at the coarsest stage; raise train.batch or data.tile",
                self.train.batch, self.data.tile
            )));
        }
        Ok(())
    }

    /// Canonical text form: every key, current values. `parse(to_text())`
    /// reproduces the config exactly.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let d = &self.data;
        let four = |v: &[usize; 4]| {
            v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
        };
        format!(
            "# model architecture\n\
             model.preset = {}\n\
             model.embed_dim = {}\n\
             model.depths = {}\n\
             model.num_heads = {}\n\
             model.window_size = {}\n\
             model.patch_size = {}\n\
             model.mlp_ratio = {}\n\
             model.num_classes = {}\n\
             model.variant = {}\n\
             \n# optimization\n\
             train.lr = {}\n\
             train.weight_decay = {}\n\
             train.beta1 = {}\n\
             train.beta2 = {}\n\
             train.label_smoothing = {}\n\
             train.steps = {}\n\
             train.batch = {}\n\
             train.seed = {}\n\
             train.eval_every = {}\n\
             \n# data source\n\
             data.root = {}\n\
             data.tile = {}\n\
             data.stride = {}\n\
             data.synth_count = {}\n\
             data.synth_size = {}\n\
             data.synth_classes = {}\n\
             data.synth_seed = {}\n\
             data.augment = {}\n\
             data.ignore_label = {}\n\
             \n# artifacts\n\
             output.dir = {}\n",
            m.preset,
            m.embed_dim,
            four(&m.depths),
            four(&m.num_heads),
            m.window_size,
            m.patch_size,
            m.mlp_ratio,
            m.num_classes,
            m.variant.name(),
            t.lr,
            t.weight_decay,
            t.beta1,
            t.beta2,
            t.label_smoothing,
            t.steps,
            t.batch,
            t.seed,
            t.eval_every,
            d.root.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            d.tile,
            d.stride,
            d.synth_count,
            d.synth_size,
            d.synth_classes,
            d.synth_seed,
            d.augment,
            d.ignore_label.map(|v| v.to_string()).unwrap_or_else(|| "none".into()),
            self.output_dir.display(),
        )
    }
}
