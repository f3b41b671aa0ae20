use std::f64::consts::PI;

use super::TrainConfig;

/// Learning rate for an epoch: linear warmup to the base rate, then a cosine
/// decay to zero over the remaining epochs.
pub fn lr_at(cfg: &TrainConfig, epoch: usize) -> f64 {
    assert!(epoch < cfg.epochs, "epoch {} past the end of the run", epoch);
    if epoch < cfg.warmup_epochs {
        cfg.lr * (epoch + 1) as f64 / cfg.warmup_epochs as f64
    } else {
        let t = (epoch - cfg.warmup_epochs) as f64 / (cfg.epochs - cfg.warmup_epochs) as f64;
        0.5 * cfg.lr * (1.0 + (PI * t).cos())
    }
}
