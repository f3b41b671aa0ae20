//! Flat key=value run configuration with section prefixes (`model.dim=64`).
//! File values override the desk-scale defaults; CLI flags override both.

use std::path::Path;

use xspec_core::data::{SieScheme, SynthConfig};
use xspec_core::eval::EvalConfig;
use xspec_core::losses::LossConfig;
use xspec_core::model::ModelConfig;
use xspec_core::train::TrainConfig;
use xspec_core::{Error, Result};

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
    pub synth_n_ids: usize,
    pub synth_n_domains: usize,
    pub synth_per_domain: usize,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig {
                // full-scale runs train 120 epochs; the desk default is 30
                epochs: 30,
                warmup_epochs: 5,
                ..TrainConfig::default()
            },
            eval: EvalConfig::default(),
            synth: SynthConfig::default(),
            synth_n_ids: 8,
            synth_n_domains: 2,
            synth_per_domain: 10,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: ln + 1,
                msg: format!("expected key=value, got {line:?}"),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                line: ln + 1,
                msg: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    /// Apply one `section.key = value` setting. Unknown keys are errors so a
    /// typo never silently falls back to a default.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("bad value {value:?} for {key} ({what})"));
        let as_usize = || value.parse::<usize>().map_err(|_| bad("integer"));
        let as_f64 = || value.parse::<f64>().map_err(|_| bad("number"));
        let as_u64 = || value.parse::<u64>().map_err(|_| bad("integer"));
        let as_bool = || match value {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            _ => Err(bad("boolean")),
        };
        match key {
            "model.image_h" => self.model.image_h = as_usize()?,
            "model.image_w" => self.model.image_w = as_usize()?,
            "model.channels" => self.model.channels = as_usize()?,
            "model.patch" => self.model.patch = as_usize()?,
            "model.dim" => self.model.dim = as_usize()?,
            "model.layers" => self.model.layers = as_usize()?,
            "model.heads" => self.model.heads = as_usize()?,
            "model.k_local" => self.model.k_local = as_usize()?,
            "model.n_sie" => self.model.n_sie = as_usize()?,
            "model.lambda_sie" => self.model.lambda_sie = as_f64()?,
            "model.n_classes" => self.model.n_classes = as_usize()?,
            "model.gem_enabled" => self.model.gem_enabled = as_bool()?,
            "model.gem_p_init" => self.model.gem_p_init = as_f64()?,
            "loss.margin" => self.train.loss.margin = as_f64()?,
            "loss.lambda_t" => self.train.loss.lambda_t = as_f64()?,
            "train.lr" => self.train.lr = as_f64()?,
            "train.warmup_epochs" => self.train.warmup_epochs = as_usize()?,
            "train.epochs" => self.train.epochs = as_usize()?,
            "train.momentum" => self.train.momentum = as_f64()?,
            "train.weight_decay" => self.train.weight_decay = as_f64()?,
            "train.p_ids" => self.train.p_ids = as_usize()?,
            "train.k_batch" => self.train.k_batch = as_usize()?,
            "train.n_d" => self.train.n_d = as_usize()?,
            "train.range_pairing" => self.train.range_pairing = as_bool()?,
            "train.checkpoint_every" => self.train.checkpoint_every = as_usize()?,
            "train.flip" => self.train.augment.flip = as_bool()?,
            "train.crop" => self.train.augment.crop = as_bool()?,
            "train.pad" => self.train.augment.pad = as_usize()?,
            "train.erase" => self.train.augment.erase = as_bool()?,
            "eval.n_gallery" => self.eval.n_gallery = as_usize()?,
            "eval.n_probe" => self.eval.n_probe = as_usize()?,
            "eval.gallery_domain" => self.eval.gallery_domain = as_usize()?,
            "eval.probe_domain" => self.eval.probe_domain = as_usize()?,
            "eval.normalize" => self.eval.normalize = as_bool()?,
            "sie.scheme" => {
                let scheme = SieScheme::parse(value)?;
                self.train.sie_scheme = scheme;
                self.eval.sie_scheme = scheme;
            }
            "synth.n_ids" => self.synth_n_ids = as_usize()?,
            "synth.n_domains" => self.synth_n_domains = as_usize()?,
            "synth.per_domain" => self.synth_per_domain = as_usize()?,
            "synth.h" => self.synth.h = as_usize()?,
            "synth.w" => self.synth.w = as_usize()?,
            "synth.channels" => self.synth.c = as_usize()?,
            "synth.noise" => self.synth.noise = as_f64()?,
            "synth.cameras_per_domain" => self.synth.cameras_per_domain = as_usize()?,
            "synth.with_ranges" => self.synth.with_ranges = as_bool()?,
            "seed" => self.seed = as_u64()?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn loss(&self) -> &LossConfig {
        &self.train.loss
    }
}
