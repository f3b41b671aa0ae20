//! Whole-model gradient verification: the analytic gradients from one
//! backward pass are compared against central finite differences of the
//! training loss, a few hundred coordinates per parameter group.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::Image;
use crate::error::{Error, Result};
use crate::losses::{batch_hard_triplet, cross_entropy_id, total_loss, LabeledBatch, LossConfig};
use crate::model::{forward_batch, BoundParams, ModelConfig, ModelParams};

#[derive(Debug, Clone)]
pub struct GroupReport {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Coordinate within the group where the worst error occurred.
    pub worst_coord: usize,
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

#[derive(Debug, Clone)]
pub struct ModelCheckReport {
    pub groups: Vec<GroupReport>,
    pub max_rel_err: f64,
    pub checked: usize,
}

impl ModelCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }

    pub fn worst_group(&self) -> Option<&GroupReport> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_err.partial_cmp(&b.max_rel_err).unwrap())
    }
}

/// Training loss of a fixed batch, evaluated without building a tape.
pub fn batch_loss(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    images: &[(Image, usize)],
    labels: &[usize],
    loss_cfg: &LossConfig,
) -> Result<f64> {
    let tape = Tape::no_grad();
    let bp = BoundParams::bind(&tape, params);
    let (features, logits) = forward_batch(&bp, model_cfg, images);
    let ce = cross_entropy_id(&logits, labels);
    let batch = LabeledBatch::new(features, labels.to_vec())?;
    let tri = batch_hard_triplet(&batch, loss_cfg.margin);
    Ok(total_loss(&ce, &tri, loss_cfg.lambda_t).item())
}

/// One backward pass: gradients of the training loss for every parameter
/// group, in `named()` order.
pub fn analytic_grads(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    images: &[(Image, usize)],
    labels: &[usize],
    loss_cfg: &LossConfig,
) -> Result<Vec<(String, Vec<f64>)>> {
    let tape = Tape::new();
    let bp = BoundParams::bind(&tape, params);
    let (features, logits) = forward_batch(&bp, model_cfg, images);
    let ce = cross_entropy_id(&logits, labels);
    let batch = LabeledBatch::new(features, labels.to_vec())?;
    let tri = batch_hard_triplet(&batch, loss_cfg.margin);
    let total = total_loss(&ce, &tri, loss_cfg.lambda_t);
    tape.backward(&total);
    Ok(bp.grads())
}

/// Compare supplied analytic gradients against central finite differences.
/// Up to `coords_per_group` coordinates are probed per group, chosen at
/// random by the seed (every coordinate when the group is small enough).
#[allow(clippy::too_many_arguments)]
pub fn fd_compare(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    images: &[(Image, usize)],
    labels: &[usize],
    loss_cfg: &LossConfig,
    grads: &[(String, Vec<f64>)],
    coords_per_group: usize,
    h: f64,
    seed: u64,
) -> Result<ModelCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.clone();
    let mut groups = Vec::with_capacity(grads.len());
    let mut max_rel = 0.0f64;
    let mut total_checked = 0usize;

    for (gi, (name, grad)) in grads.iter().enumerate() {
        let size = grad.len();
        let coords = pick_coords(size, coords_per_group, &mut rng);
        let mut report = GroupReport {
            name: name.clone(),
            checked: coords.len(),
            max_rel_err: 0.0,
            worst_coord: 0,
            worst_analytic: 0.0,
            worst_numeric: 0.0,
        };
        for &c in &coords {
            let orig = work.named()[gi].1.data[c];
            work.named_mut()[gi].1.data[c] = orig + h;
            let plus = batch_loss(&work, model_cfg, images, labels, loss_cfg)?;
            work.named_mut()[gi].1.data[c] = orig - h;
            let minus = batch_loss(&work, model_cfg, images, labels, loss_cfg)?;
            work.named_mut()[gi].1.data[c] = orig;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numerical(format!(
                    "loss non-finite probing {name} coordinate {c}"
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let analytic = grad[c];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0);
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_coord = c;
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
        max_rel = max_rel.max(report.max_rel_err);
        total_checked += report.checked;
        groups.push(report);
    }
    Ok(ModelCheckReport {
        groups,
        max_rel_err: max_rel,
        checked: total_checked,
    })
}

/// Full-model check: backward once, then probe every parameter group with
/// finite differences.
pub fn check_model_gradients(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    images: &[(Image, usize)],
    labels: &[usize],
    loss_cfg: &LossConfig,
    coords_per_group: usize,
    h: f64,
    seed: u64,
) -> Result<ModelCheckReport> {
    let grads = analytic_grads(params, model_cfg, images, labels, loss_cfg)?;
    fd_compare(
        params,
        model_cfg,
        images,
        labels,
        loss_cfg,
        &grads,
        coords_per_group,
        h,
        seed,
    )
}

fn pick_coords(size: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if size <= n {
        return (0..size).collect();
    }
    // sample without replacement via a partial shuffle
    use rand::seq::SliceRandom;
    let mut all: Vec<usize> = (0..size).collect();
    let (picked, _) = all.partial_shuffle(rng, n);
    picked.to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{assign_sie_index, sample_batch, synth_generate, SieScheme, SynthConfig};

    fn tiny_setup() -> (
        ModelConfig,
        ModelParams,
        Vec<(Image, usize)>,
        Vec<usize>,
        LossConfig,
    ) {
        let model_cfg = ModelConfig {
            image_h: 8,
            image_w: 8,
            patch: 4,
            dim: 8,
            layers: 1,
            heads: 2,
            k_local: 1,
            n_classes: 3,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let params = ModelParams::init(&model_cfg, &mut rng);
        let synth = SynthConfig {
            h: 8,
            w: 8,
            ..SynthConfig::default()
        };
        let ds = synth_generate(3, 2, 2, 0, &synth);
        let mut srng = ChaCha8Rng::seed_from_u64(1);
        let plan = sample_batch(&ds, 2, 2, 2, false, &mut srng).unwrap();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for &(id, _, ri) in &plan.entries {
            let sie = assign_sie_index(&ds.records[ri], SieScheme::DomainOnly, &ds).unwrap();
            images.push((ds.pixels(ri).unwrap(), sie));
            labels.push(id);
        }
        (model_cfg, params, images, labels, LossConfig::default())
    }

    #[test]
    fn tiny_model_gradients_match_finite_differences() {
        let (model_cfg, params, images, labels, loss_cfg) = tiny_setup();
        let report = check_model_gradients(
            &params, &model_cfg, &images, &labels, &loss_cfg, 20, 1e-5, 0,
        )
        .unwrap();
        assert!(
            report.passes(1e-4),
            "max rel err {} in {:?}",
            report.max_rel_err,
            report.worst_group().map(|g| &g.name)
        );
        assert!(report.checked > 100);
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let (model_cfg, params, images, labels, loss_cfg) = tiny_setup();
        let mut grads = analytic_grads(&params, &model_cfg, &images, &labels, &loss_cfg).unwrap();
        // poison one group the way a broken backward rule would
        let victim = grads
            .iter_mut()
            .find(|(n, g)| n == "classifier.w" && !g.is_empty())
            .unwrap();
        for g in victim.1.iter_mut() {
            *g = *g * 1.5 + 0.01;
        }
        let report = fd_compare(
            &params, &model_cfg, &images, &labels, &loss_cfg, &grads, 20, 1e-5, 0,
        )
        .unwrap();
        assert!(!report.passes(1e-4), "corruption slipped through");
        let bad = report
            .groups
            .iter()
            .find(|g| g.name == "classifier.w")
            .unwrap();
        assert!(bad.max_rel_err > 1e-3);
    }

    #[test]
    fn batch_loss_matches_taped_value() {
        let (model_cfg, params, images, labels, loss_cfg) = tiny_setup();
        let fast = batch_loss(&params, &model_cfg, &images, &labels, &loss_cfg).unwrap();
        let tape = Tape::new();
        let bp = BoundParams::bind(&tape, &params);
        let (features, logits) = forward_batch(&bp, &model_cfg, &images);
        let ce = cross_entropy_id(&logits, &labels);
        let batch = LabeledBatch::new(features, labels.clone()).unwrap();
        let tri = batch_hard_triplet(&batch, loss_cfg.margin);
        let slow = total_loss(&ce, &tri, loss_cfg.lambda_t).item();
        assert_eq!(fast.to_bits(), slow.to_bits());
    }
}
