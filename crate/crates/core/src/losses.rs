//! Identity cross-entropy, batch-hard triplet, and their weighted total.

use std::collections::BTreeMap;

use crate::autodiff::{Array, Tensor};
use crate::error::{Error, Result};

/// Margin and loss-mixing weights.
#[derive(Debug, Clone)]
pub struct LossConfig {
    /// Triplet margin m; 0.3 is the usual batch-hard default.
    pub margin: f64,
    /// Weight of the triplet term in the total loss.
    pub lambda_t: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 0.3,
            lambda_t: 1.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin < 0.0 {
            return Err(Error::Config("loss: margin must be >= 0".into()));
        }
        if self.lambda_t < 0.0 {
            return Err(Error::Config("loss: lambda_t must be >= 0".into()));
        }
        Ok(())
    }
}

/// PK features with identity labels: P distinct identities, K samples each.
pub struct LabeledBatch {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub p: usize,
    pub k: usize,
}

impl LabeledBatch {
    pub fn new(features: Tensor, labels: Vec<usize>) -> Result<Self> {
        assert_eq!(features.shape.len(), 2, "features must be a matrix");
        assert_eq!(
            features.shape[0],
            labels.len(),
            "one label per feature row"
        );
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &l in &labels {
            *counts.entry(l).or_insert(0) += 1;
        }
        let p = counts.len();
        if p < 2 {
            return Err(Error::Config(
                "batch must contain at least 2 identities".into(),
            ));
        }
        if counts.values().any(|&c| c < 2) {
            return Err(Error::Config(
                "hardest positive undefined: a label has fewer than 2 samples".into(),
            ));
        }
        let k = *counts.values().next().unwrap();
        if counts.values().any(|&c| c != k) {
            return Err(Error::Config(format!(
                "unbalanced batch: identity counts {:?}",
                counts.values().collect::<Vec<_>>()
            )));
        }
        Ok(LabeledBatch {
            features,
            labels,
            p,
            k,
        })
    }
}

/// Symmetric Euclidean distance matrix with an exactly-zero diagonal.
/// Differentiable away from coincident points; the sqrt is guarded so a
/// zero distance contributes zero gradient.
pub fn pairwise_dist(features: &Tensor) -> Tensor {
    let f = features.value();
    let (n, d) = (f.shape[0], f.shape[1]);
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let mut s = 0.0;
            for c in 0..d {
                let diff = f.data[i * d + c] - f.data[j * d + c];
                s += diff * diff;
            }
            let v = if s > 0.0 { s.sqrt() } else { 0.0 };
            dist[i * n + j] = v;
            dist[j * n + i] = v;
        }
    }
    let id = features.id;
    let out = Array::new(vec![n, n], dist.clone());
    features.tape.push_op(out, move || {
        let fv = f.data;
        Box::new(move |go, grads| {
            for i in 0..n {
                for j in 0..n {
                    let dij = dist[i * n + j];
                    let g = go[i * n + j];
                    if g != 0.0 && dij > 0.0 {
                        let scale = g / dij;
                        for c in 0..d {
                            let diff = fv[i * d + c] - fv[j * d + c];
                            grads[id][i * d + c] += scale * diff;
                            grads[id][j * d + c] -= scale * diff;
                        }
                    }
                }
            }
        })
    })
}

/// Batch-hard triplet loss: the sum over all PK anchors of
/// [m + max same-label distance - min different-label distance]_+.
/// Sum reduction, exactly as the hardest-mining formulation writes it.
pub fn batch_hard_triplet(batch: &LabeledBatch, margin: f64) -> Tensor {
    assert!(margin >= 0.0, "margin must be >= 0");
    let dist = pairwise_dist(&batch.features);
    let dv = dist.value();
    let n = batch.labels.len();
    let labels = batch.labels.clone();

    let mut loss = 0.0;
    // (anchor, hardest positive, hardest negative) for active hinges
    let mut active: Vec<(usize, usize, usize)> = Vec::new();
    for a in 0..n {
        let mut hp = a;
        let mut hp_d = 0.0;
        let mut hn = usize::MAX;
        let mut hn_d = f64::INFINITY;
        for j in 0..n {
            let dj = dv.at(a, j);
            if labels[j] == labels[a] {
                if dj > hp_d {
                    hp_d = dj;
                    hp = j;
                }
            } else if dj < hn_d {
                hn_d = dj;
                hn = j;
            }
        }
        assert!(hn != usize::MAX, "anchor {a} has no negative in batch");
        let term = margin + hp_d - hn_d;
        if term > 0.0 {
            loss += term;
            active.push((a, hp, hn));
        }
    }

    let id = dist.id;
    dist.tape.push_op(Array::scalar(loss), move || {
        Box::new(move |go, grads| {
            for &(a, hp, hn) in &active {
                grads[id][a * n + hp] += go[0];
                grads[id][a * n + hn] -= go[0];
            }
        })
    })
}

/// Identity cross-entropy: mean over the batch of -log softmax(logits)[label],
/// via the log-sum-exp trick.
pub fn cross_entropy_id(logits: &Tensor, labels: &[usize]) -> Tensor {
    let lse = logits.logsumexp_rows();
    let picked = logits.gather_rows(labels);
    lse.sub(&picked).mean_all()
}

/// Weighted sum of the identity and triplet terms.
pub fn total_loss(ce: &Tensor, tri: &Tensor, lambda_t: f64) -> Tensor {
    ce.add(&tri.scale(lambda_t))
}
