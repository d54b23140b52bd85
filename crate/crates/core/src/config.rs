//! Training strategies and the flat `key = value` training configuration.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write;
use core::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::Preset;
use crate::tiling::{PadMode, TileSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    /// Land-cover mapping, change from comparing the two maps.
    S1,
    /// Direct multiclass change over ordered class pairs.
    S2,
    /// Independent land-cover and binary change networks.
    S3,
    /// Integrated network trained on the combined loss.
    S4_1,
    /// Integrated network, land-cover branches first, then the change
    /// branch with the land-cover branches frozen.
    S4_2,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [Strategy::S1, Strategy::S2, Strategy::S3, Strategy::S4_1, Strategy::S4_2];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::S1 => "S1",
            Strategy::S2 => "S2",
            Strategy::S3 => "S3",
            Strategy::S4_1 => "S4_1",
            Strategy::S4_2 => "S4_2",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Strategy::S1 => "LCM supervision",
            Strategy::S2 => "Multiclass CD supervision",
            Strategy::S3 => "Separate LCM and CD",
            Strategy::S4_1 => "Triple loss function",
            Strategy::S4_2 => "Sequential training",
        }
    }

    pub fn has_land_cover(self) -> bool {
        self != Strategy::S2
    }
}

impl FromStr for Strategy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_uppercase().replace('.', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?} (expected S1, S2, S3, S4_1 or S4_2)")))
    }
}

impl core::fmt::Display for Strategy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightScheme {
    InverseFrequency,
    Uniform,
}

impl WeightScheme {
    fn name(self) -> &'static str {
        match self {
            WeightScheme::InverseFrequency => "inverse_frequency",
            WeightScheme::Uniform => "uniform",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub strategy: Strategy,
    /// Weight of the land-cover terms in the combined loss; S4_1 only.
    pub lambda: Option<f64>,
    /// Epochs of every single-stage strategy, and of the first S4_2 stage.
    pub epochs_stage1: u32,
    /// Epochs of the second S4_2 stage.
    pub epochs_stage2: u32,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplicative learning-rate decay applied after every epoch.
    pub lr_decay: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub crop_size: usize,
    pub crops_per_pair: usize,
    pub augment: bool,
    pub val_fraction: f64,
    pub class_weights: WeightScheme,
    pub clip_max: f64,
    pub depth: usize,
    pub blocks_per_level: usize,
    pub base_width: usize,
    /// Tiling used for validation and prediction.
    pub tile: TileSpec,
}

impl TrainConfig {
    pub fn new(strategy: Strategy) -> Self {
        let p = Preset::OSCD;
        Self {
            strategy,
            lambda: (strategy == Strategy::S4_1).then_some(0.05),
            epochs_stage1: 30,
            epochs_stage2: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            weight_decay: 0.0,
            seed: 0,
            crop_size: 512,
            crops_per_pair: 1,
            augment: true,
            val_fraction: 0.1,
            class_weights: WeightScheme::InverseFrequency,
            clip_max: crate::weights::DEFAULT_CLIP_MAX,
            depth: p.depth,
            blocks_per_level: p.blocks_per_level,
            base_width: p.base_width,
            tile: TileSpec { tile_size: 512, stride: 256, pad_mode: PadMode::Reflect },
        }
    }

    pub fn preset(&self) -> Preset {
        Preset { depth: self.depth, blocks_per_level: self.blocks_per_level, base_width: self.base_width }
    }

    pub fn set_preset(&mut self, p: Preset) {
        self.depth = p.depth;
        self.blocks_per_level = p.blocks_per_level;
        self.base_width = p.base_width;
    }

    pub fn validate(&self) -> Result<()> {
        match (self.strategy, self.lambda) {
            (Strategy::S4_1, None) => return Err(Error::Config("strategy S4_1 requires lambda".into())),
            (Strategy::S4_1, Some(l)) if !(l >= 0.0 && l.is_finite()) => {
                return Err(Error::Config(format!("lambda must be a non-negative number, got {l}")))
            }
            (s, Some(_)) if s != Strategy::S4_1 => {
                return Err(Error::Config(format!("lambda is only meaningful for S4_1, not {s}")))
            }
            _ => {}
        }
        let unit = 1usize << self.depth.min(16);
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::Config(format!("depth must be in 1..=8, got {}", self.depth)));
        }
        if self.crop_size == 0 || self.crop_size % unit != 0 {
            return Err(Error::Config(format!("crop_size {} must be a positive multiple of {unit}", self.crop_size)));
        }
        if self.tile.tile_size % unit != 0 {
            return Err(Error::Config(format!("tile_size {} must be a multiple of {unit}", self.tile.tile_size)));
        }
        self.tile.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.batch_size == 0 || self.crops_per_pair == 0 || self.base_width == 0 {
            return Err(Error::Config("batch_size, crops_per_pair and base_width must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be non-negative, got {}", self.learning_rate)));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config(format!("lr_decay must be in (0, 1], got {}", self.lr_decay)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction must be in [0, 1), got {}", self.val_fraction)));
        }
        if !(self.clip_max >= 1.0) {
            return Err(Error::Config(format!("clip_max must be >= 1, got {}", self.clip_max)));
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. `strategy` must be
    /// given. `preset = desk|oscd|hrscd` sets depth, blocks and width, and
    /// later explicit keys override it.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<(usize, &str, &str)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            let k = k.trim();
            if entries.iter().any(|e| e.1 == k) {
                return Err(Error::Config(format!("line {}: duplicate key {k}", i + 1)));
            }
            entries.push((i + 1, k, v.trim()));
        }
        let strategy = entries
            .iter()
            .find(|e| e.1 == "strategy")
            .ok_or_else(|| Error::Config("missing key strategy".into()))?
            .2
            .parse()?;
        let mut c = Self::new(strategy);
        c.lambda = None;
        if let Some(e) = entries.iter().find(|e| e.1 == "preset") {
            c.set_preset(Preset::parse(e.2).ok_or_else(|| Error::Config(format!("line {}: unknown preset {}", e.0, e.2)))?);
        }
        for &(line, k, v) in &entries {
            c.set(k, v).map_err(|e| Error::Config(format!("line {line}: {e}")))?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Sets one key from its text value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse().map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "strategy" => self.strategy = v.parse()?,
            "preset" => {}
            "lambda" => self.lambda = if v == "none" { None } else { Some(num(key, v)?) },
            "epochs_stage1" => self.epochs_stage1 = num(key, v)?,
            "epochs_stage2" => self.epochs_stage2 = num(key, v)?,
            "batch_size" => self.batch_size = num(key, v)?,
            "learning_rate" => self.learning_rate = num(key, v)?,
            "lr_decay" => self.lr_decay = num(key, v)?,
            "weight_decay" => self.weight_decay = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "crop_size" => self.crop_size = num(key, v)?,
            "crops_per_pair" => self.crops_per_pair = num(key, v)?,
            "augment" => self.augment = num(key, v)?,
            "val_fraction" => self.val_fraction = num(key, v)?,
            "class_weights" => {
                self.class_weights = match v {
                    "inverse_frequency" => WeightScheme::InverseFrequency,
                    "uniform" => WeightScheme::Uniform,
                    _ => return Err(Error::Config(format!("class_weights: unknown scheme {v:?}"))),
                }
            }
            "clip_max" => self.clip_max = num(key, v)?,
            "depth" => self.depth = num(key, v)?,
            "blocks_per_level" => self.blocks_per_level = num(key, v)?,
            "base_width" => self.base_width = num(key, v)?,
            "tile_size" => self.tile.tile_size = num(key, v)?,
            "tile_stride" => self.tile.stride = num(key, v)?,
            "pad_mode" => {
                self.tile.pad_mode = match v {
                    "reflect" => PadMode::Reflect,
                    "zero" => PadMode::Zero,
                    _ => return Err(Error::Config(format!("pad_mode: expected reflect or zero, got {v:?}"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown key {key}"))),
        }
        Ok(())
    }

    /// Every key in a fixed order; `parse(render(c)) == c`.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: &dyn core::fmt::Display| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("strategy", &self.strategy);
        if let Some(l) = self.lambda {
            kv("lambda", &l);
        }
        kv("epochs_stage1", &self.epochs_stage1);
        kv("epochs_stage2", &self.epochs_stage2);
        kv("batch_size", &self.batch_size);
        kv("learning_rate", &self.learning_rate);
        kv("lr_decay", &self.lr_decay);
        kv("weight_decay", &self.weight_decay);
        kv("seed", &self.seed);
        kv("crop_size", &self.crop_size);
        kv("crops_per_pair", &self.crops_per_pair);
        kv("augment", &self.augment);
        kv("val_fraction", &self.val_fraction);
        kv("class_weights", &self.class_weights.name());
        kv("clip_max", &self.clip_max);
        kv("depth", &self.depth);
        kv("blocks_per_level", &self.blocks_per_level);
        kv("base_width", &self.base_width);
        kv("tile_size", &self.tile.tile_size);
        kv("tile_stride", &self.tile.stride);
        kv("pad_mode", &match self.tile.pad_mode {
            PadMode::Reflect => "reflect",
            PadMode::Zero => "zero",
        });
        s
    }
}
