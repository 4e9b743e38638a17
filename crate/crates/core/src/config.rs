//! Plain-text `key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored. Keys may be written with `-` or
//! `_`; unknown keys are errors.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::evaluation::{EvalOptions, RefineConfig};
use crate::render::DEFAULT_CHUNK;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub train: TrainConfig,
    /// Integer box-filter factor applied when loading images.
    pub downsample: usize,
    pub refine_steps: usize,
    pub refine_lr_init: f64,
    pub refine_lr_final: f64,
    /// Field samples per chunk when rendering full frames.
    pub render_chunk: usize,
}

impl Default for Config {
    fn default() -> Self {
        let refine = RefineConfig::default();
        Self {
            train: TrainConfig::default(),
            downsample: 1,
            refine_steps: refine.steps,
            refine_lr_init: refine.lr_init,
            refine_lr_final: refine.lr_final,
            render_chunk: DEFAULT_CHUNK,
        }
    }
}

/// Every accepted key, in file order.
pub const KEYS: &[&str] = &[
    "epochs",
    "batch_rows",
    "batch_cols",
    "samples_per_ray",
    "lr_init",
    "lr_final_net",
    "lr_final_cam",
    "detach_mode",
    "per_camera_focal",
    "checkpoint_every",
    "seed",
    "encoding_dir",
    "color_correction",
    "position_degree",
    "hidden_width",
    "hidden_layers",
    "skip_layer",
    "view_width",
    "cc_width",
    "hash_levels",
    "hash_features",
    "hash_table_size",
    "hash_min_resolution",
    "hash_max_resolution",
    "downsample",
    "refine_steps",
    "refine_lr_init",
    "refine_lr_final",
    "render_chunk",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key} = {value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("{key} = {value:?}: expected true or false"))),
    }
}

/// `-` and `_` are interchangeable in keys.
pub fn normalize_key(key: &str) -> String {
    key.trim().replace('-', "_")
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = normalize_key(key);
        let v = value.trim();
        let t = &mut self.train;
        let f = &mut t.field;
        match key.as_str() {
            "epochs" => t.epochs = parse(&key, v)?,
            "batch_rows" => t.batch_rows = parse(&key, v)?,
            "batch_cols" => t.batch_cols = parse(&key, v)?,
            "samples_per_ray" => t.samples_per_ray = parse(&key, v)?,
            "lr_init" => t.lr_init = parse(&key, v)?,
            "lr_final_net" => t.lr_final_net = parse(&key, v)?,
            "lr_final_cam" => t.lr_final_cam = parse(&key, v)?,
            "detach_mode" => t.detach_mode = v.parse()?,
            "per_camera_focal" => t.per_camera_focal = parse_bool(&key, v)?,
            "checkpoint_every" => t.checkpoint_every = parse(&key, v)?,
            "seed" => t.seed = parse(&key, v)?,
            "encoding_dir" => f.direction = v.parse()?,
            "color_correction" => f.color_correction = parse_bool(&key, v)?,
            "position_degree" => f.position_degree = parse(&key, v)?,
            "hidden_width" => f.hidden_width = parse(&key, v)?,
            "hidden_layers" => f.hidden_layers = parse(&key, v)?,
            "skip_layer" => f.skip_layer = parse(&key, v)?,
            "view_width" => f.view_width = parse(&key, v)?,
            "cc_width" => f.cc_width = parse(&key, v)?,
            "hash_levels" => f.hash.levels = parse(&key, v)?,
            "hash_features" => f.hash.features_per_level = parse(&key, v)?,
            "hash_table_size" => f.hash.table_size = parse(&key, v)?,
            "hash_min_resolution" => f.hash.min_resolution = parse(&key, v)?,
            "hash_max_resolution" => f.hash.max_resolution = parse(&key, v)?,
            "downsample" => self.downsample = parse(&key, v)?,
            "refine_steps" => self.refine_steps = parse(&key, v)?,
            "refine_lr_init" => self.refine_lr_init = parse(&key, v)?,
            "refine_lr_final" => self.refine_lr_final = parse(&key, v)?,
            "render_chunk" => self.render_chunk = parse(&key, v)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let key = normalize_key(key);
        let t = &self.train;
        let f = &t.field;
        Ok(match key.as_str() {
            "epochs" => t.epochs.to_string(),
            "batch_rows" => t.batch_rows.to_string(),
            "batch_cols" => t.batch_cols.to_string(),
            "samples_per_ray" => t.samples_per_ray.to_string(),
            // `{:e}` round-trips f64 exactly.
            "lr_init" => format!("{:e}", t.lr_init),
            "lr_final_net" => format!("{:e}", t.lr_final_net),
            "lr_final_cam" => format!("{:e}", t.lr_final_cam),
            "detach_mode" => t.detach_mode.to_string(),
            "per_camera_focal" => t.per_camera_focal.to_string(),
            "checkpoint_every" => t.checkpoint_every.to_string(),
            "seed" => t.seed.to_string(),
            "encoding_dir" => f.direction.as_str().to_string(),
            "color_correction" => f.color_correction.to_string(),
            "position_degree" => f.position_degree.to_string(),
            "hidden_width" => f.hidden_width.to_string(),
            "hidden_layers" => f.hidden_layers.to_string(),
            "skip_layer" => f.skip_layer.to_string(),
            "view_width" => f.view_width.to_string(),
            "cc_width" => f.cc_width.to_string(),
            "hash_levels" => f.hash.levels.to_string(),
            "hash_features" => f.hash.features_per_level.to_string(),
            "hash_table_size" => f.hash.table_size.to_string(),
            "hash_min_resolution" => f.hash.min_resolution.to_string(),
            "hash_max_resolution" => f.hash.max_resolution.to_string(),
            "downsample" => self.downsample.to_string(),
            "refine_steps" => self.refine_steps.to_string(),
            "refine_lr_init" => format!("{:e}", self.refine_lr_init),
            "refine_lr_final" => format!("{:e}", self.refine_lr_final),
            "render_chunk" => self.render_chunk.to_string(),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        })
    }

    /// Defaults overridden by the lines of `text`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1))
            })?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Every key, one `key = value` line each; parses back to `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("listed key"));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.downsample == 0 || self.render_chunk == 0 {
            return Err(Error::Config("downsample and render_chunk must be positive".into()));
        }
        Ok(())
    }

    /// Refinement and rendering settings derived from this configuration.
    pub fn eval_options(&self) -> EvalOptions {
        let mut opts = EvalOptions::matching(&self.train);
        opts.refine.steps = self.refine_steps;
        opts.refine.lr_init = self.refine_lr_init;
        opts.refine.lr_final = self.refine_lr_final;
        opts.render.chunk = self.render_chunk;
        opts
    }
}
