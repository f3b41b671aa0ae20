//! SGD training loop: warmup + cosine learning-rate schedule, momentum with
//! weight decay, flip/crop/erase augmentations, and per-step metric rows.

mod augment;
mod schedule;
mod sgd;

pub use augment::{augment, flip_horizontal, pad_random_crop, random_erase, AugmentConfig};
pub use schedule::lr_at;
pub use sgd::SgdState;

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::{assign_sie_index, sample_batch, Dataset, SieScheme};
use crate::error::{Error, Result};
use crate::losses::{batch_hard_triplet, cross_entropy_id, total_loss, LabeledBatch, LossConfig};
use crate::model::{checkpoint, forward_batch, BoundParams, ModelConfig, ModelParams};

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    /// P identities per batch.
    pub p_ids: usize,
    /// K samples per identity, split evenly over `n_d` domains.
    pub k_batch: usize,
    pub n_d: usize,
    /// Pair one short- and one long-range image per domain slot.
    pub range_pairing: bool,
    pub sie_scheme: SieScheme,
    pub loss: LossConfig,
    pub augment: AugmentConfig,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (0 disables periodic saves;
    /// the final state is always written when a directory is given).
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.0004,
            warmup_epochs: 20,
            epochs: 120,
            momentum: 0.9,
            weight_decay: 0.0001,
            p_ids: 8,
            k_batch: 4,
            n_d: 2,
            range_pairing: false,
            sie_scheme: SieScheme::DomainOnly,
            loss: LossConfig::default(),
            augment: AugmentConfig::default(),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup ({}) must be shorter than the run ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::Config("weight decay must be non-negative".into()));
        }
        if self.p_ids < 2 {
            return Err(Error::Config("need at least 2 identities per batch".into()));
        }
        self.loss.validate()
    }
}

pub const METRICS_HEADER: &str = "epoch,step,lr,loss_ce,loss_tri,loss_total";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    pub epoch: usize,
    pub step: usize,
    pub lr: f64,
    pub loss_ce: f64,
    pub loss_tri: f64,
    pub loss_total: f64,
}

impl StepMetrics {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.epoch, self.step, self.lr, self.loss_ce, self.loss_tri, self.loss_total
        )
    }
}

/// One forward/backward/update on a sampled batch. Returns the losses; the
/// parameters are updated in place.
pub fn train_step(
    params: &mut ModelParams,
    opt: &mut SgdState,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    ds: &Dataset,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64, f64)> {
    let plan = sample_batch(ds, cfg.p_ids, cfg.k_batch, cfg.n_d, cfg.range_pairing, rng)?;
    let mut images = Vec::with_capacity(plan.len());
    let mut labels = Vec::with_capacity(plan.len());
    for &(id, _, ri) in &plan.entries {
        let img = augment(&ds.pixels(ri)?, &cfg.augment, rng);
        let sie = assign_sie_index(&ds.records[ri], cfg.sie_scheme, ds)?;
        images.push((img, sie));
        labels.push(id);
    }

    let tape = Tape::new();
    let bp = BoundParams::bind(&tape, params);
    let (features, logits) = forward_batch(&bp, model_cfg, &images);
    let ce = cross_entropy_id(&logits, &labels);
    let batch = LabeledBatch::new(features, labels)?;
    let tri = batch_hard_triplet(&batch, cfg.loss.margin);
    let total = total_loss(&ce, &tri, cfg.loss.lambda_t);

    let (ce_v, tri_v, total_v) = (ce.item(), tri.item(), total.item());
    if !total_v.is_finite() {
        return Err(Error::Numerical(format!(
            "loss became non-finite (ce={ce_v}, triplet={tri_v})"
        )));
    }
    if model_cfg.lambda_sie == 0.0 {
        debug_assert_eq!(bp.sie_reads(), 0, "lambda=0 run read the sie table");
    }

    tape.backward(&total);
    opt.step(params, &bp.grads(), lr, cfg.momentum, cfg.weight_decay)?;
    Ok((ce_v, tri_v, total_v))
}

/// Full training run. Emits one metric row per step and optionally writes
/// checkpoints under `ckpt_dir`. On a non-finite loss or gradient the run
/// aborts with the parameters restored to the last completed step.
pub fn train(
    params: &mut ModelParams,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    ds: &Dataset,
    ckpt_dir: Option<&Path>,
) -> Result<Vec<StepMetrics>> {
    cfg.validate()?;
    model_cfg.validate()?;
    ds.validate()?;
    if let Some(dir) = ckpt_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let batch_size = cfg.p_ids * cfg.k_batch;
    let steps_per_epoch = ds.records.len().div_ceil(batch_size).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = SgdState::new(params);
    let mut metrics = Vec::with_capacity(cfg.epochs * steps_per_epoch);

    for epoch in 0..cfg.epochs {
        let lr = lr_at(cfg, epoch);
        for step in 0..steps_per_epoch {
            let snapshot = params.clone();
            match train_step(params, &mut opt, model_cfg, cfg, ds, lr, &mut rng) {
                Ok((loss_ce, loss_tri, loss_total)) => metrics.push(StepMetrics {
                    epoch,
                    step,
                    lr,
                    loss_ce,
                    loss_tri,
                    loss_total,
                }),
                Err(e @ Error::Numerical(_)) => {
                    *params = snapshot;
                    if let Some(dir) = ckpt_dir {
                        checkpoint::save(params, &ckpt_path(dir, epoch, true))?;
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(dir) = ckpt_dir {
            let periodic =
                cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0;
            if periodic || epoch + 1 == cfg.epochs {
                checkpoint::save(params, &ckpt_path(dir, epoch, false))?;
            }
        }
    }
    if let Some(dir) = ckpt_dir {
        checkpoint::save(params, &dir.join("final.ckpt"))?;
    }
    Ok(metrics)
}

fn ckpt_path(dir: &Path, epoch: usize, aborted: bool) -> PathBuf {
    if aborted {
        dir.join(format!("abort_epoch_{epoch:04}.ckpt"))
    } else {
        dir.join(format!("epoch_{epoch:04}.ckpt"))
    }
}

#[cfg(test)]
mod tests;
