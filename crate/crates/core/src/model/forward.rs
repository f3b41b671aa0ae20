use std::cell::Cell;

use crate::autodiff::{concat1d, concat_cols, concat_rows, Array, Tape, Tensor};
use crate::data::Image;

use super::config::ModelConfig;
use super::params::ModelParams;

pub const GEM_EPS: f64 = 1e-6;
const LN_EPS: f64 = 1e-6;

/// Split an image into N row-major flattened P x P patches.
pub fn patchify(image: &Image, patch: usize) -> Array {
    assert!(
        patch > 0 && image.h % patch == 0 && image.w % patch == 0,
        "image {}x{} not divisible by patch {}",
        image.h,
        image.w,
        patch
    );
    let (ph, pw) = (image.h / patch, image.w / patch);
    let pv = patch * patch * image.c;
    let mut data = Vec::with_capacity(ph * pw * pv);
    for py in 0..ph {
        for px in 0..pw {
            for y in 0..patch {
                for x in 0..patch {
                    for ch in 0..image.c {
                        data.push(image.at(py * patch + y, px * patch + x, ch));
                    }
                }
            }
        }
    }
    Array::new(vec![ph * pw, pv], data)
}

/// Inverse of `patchify`; reconstruction oracle for tests and tools.
pub fn unpatchify(patches: &Array, patch: usize, h: usize, w: usize, c: usize) -> Image {
    let (ph, pw) = (h / patch, w / patch);
    assert_eq!(patches.shape, vec![ph * pw, patch * patch * c]);
    let mut img = Image::zeros(h, w, c);
    let mut it = patches.data.iter();
    for py in 0..ph {
        for px in 0..pw {
            for y in 0..patch {
                for x in 0..patch {
                    for ch in 0..c {
                        img.set(py * patch + y, px * patch + x, ch, *it.next().unwrap());
                    }
                }
            }
        }
    }
    img
}

/// Parameter leaves bound to one tape for a forward/backward pass.
pub struct BoundParams {
    pub tape: Tape,
    names: Vec<String>,
    tensors: Vec<Tensor>,
    sie_reads: Cell<usize>,
}

struct BoundLayer<'a> {
    ln1_g: &'a Tensor,
    ln1_b: &'a Tensor,
    wq: &'a Tensor,
    bq: &'a Tensor,
    wk: &'a Tensor,
    bk: &'a Tensor,
    wv: &'a Tensor,
    bv: &'a Tensor,
    wo: &'a Tensor,
    bo: &'a Tensor,
    ln2_g: &'a Tensor,
    ln2_b: &'a Tensor,
    w1: &'a Tensor,
    b1: &'a Tensor,
    w2: &'a Tensor,
    b2: &'a Tensor,
}

impl BoundParams {
    pub fn bind(tape: &Tape, params: &ModelParams) -> Self {
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, arr) in params.named() {
            names.push(name);
            tensors.push(tape.leaf(arr.clone()));
        }
        BoundParams {
            tape: tape.clone(),
            names,
            tensors,
            sie_reads: Cell::new(0),
        }
    }

    pub fn get(&self, name: &str) -> &Tensor {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.tensors[idx]
    }

    fn layer(&self, i: usize) -> BoundLayer<'_> {
        let g = |s: &str| self.get(&format!("layers.{i}.{s}"));
        BoundLayer {
            ln1_g: g("ln1.g"),
            ln1_b: g("ln1.b"),
            wq: g("attn.wq"),
            bq: g("attn.bq"),
            wk: g("attn.wk"),
            bk: g("attn.bk"),
            wv: g("attn.wv"),
            bv: g("attn.bv"),
            wo: g("attn.wo"),
            bo: g("attn.bo"),
            ln2_g: g("ln2.g"),
            ln2_b: g("ln2.b"),
            w1: g("mlp.w1"),
            b1: g("mlp.b1"),
            w2: g("mlp.w2"),
            b2: g("mlp.b2"),
        }
    }

    /// How many times the SIE table was read on this binding. A lambda=0 run
    /// never touches it.
    pub fn sie_reads(&self) -> usize {
        self.sie_reads.get()
    }

    /// Gradients collected after `tape.backward`, keyed by parameter name.
    pub fn grads(&self) -> Vec<(String, Vec<f64>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| (n.clone(), t.grad().expect("backward not run")))
            .collect()
    }
}

/// Token assembly: [cls; local_1..local_K; F(patch_1)..F(patch_N)] + pos.
pub fn assemble_sequence(bp: &BoundParams, cfg: &ModelConfig, image: &Image) -> Tensor {
    let patches = bp.tape.leaf(patchify(image, cfg.patch));
    let proj = patches
        .matmul(bp.get("patch_proj.w"))
        .add_rowvec(bp.get("patch_proj.b"));
    let cls = bp.get("cls_token").reshape(vec![1, cfg.dim]);
    let z = concat_rows(&[cls, bp.get("local_tokens").clone(), proj]);
    z.add(bp.get("pos_table"))
}

/// Side-information shift: add lambda * S[sie_index] to every row.
pub fn apply_sie(bp: &BoundParams, cfg: &ModelConfig, z0: &Tensor, sie_index: usize) -> Tensor {
    assert!(
        sie_index < cfg.n_sie,
        "sie index {} out of range for table of size {}",
        sie_index,
        cfg.n_sie
    );
    bp.sie_reads.set(bp.sie_reads.get() + 1);
    let shift = bp.get("sie_table").row(sie_index).scale(cfg.lambda_sie);
    z0.add_rowvec(&shift)
}

fn attention(x: &Tensor, l: &BoundLayer<'_>, cfg: &ModelConfig) -> Tensor {
    let dh = cfg.dim / cfg.heads;
    let q = x.matmul(l.wq).add_rowvec(l.bq);
    let k = x.matmul(l.wk).add_rowvec(l.bk);
    let v = x.matmul(l.wv).add_rowvec(l.bv);
    let mut heads = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let (a, b) = (h * dh, (h + 1) * dh);
        let qh = q.slice_cols(a, b);
        let kh = k.slice_cols(a, b);
        let vh = v.slice_cols(a, b);
        let scores = qh.matmul_nt(&kh).scale(1.0 / (dh as f64).sqrt());
        heads.push(scores.softmax_rows().matmul(&vh));
    }
    concat_cols(&heads).matmul(l.wo).add_rowvec(l.bo)
}

/// Pre-norm encoder blocks followed by a final layernorm.
pub fn encode(bp: &BoundParams, cfg: &ModelConfig, z0: &Tensor) -> Tensor {
    let mut x = z0.clone();
    for i in 0..cfg.layers {
        let l = bp.layer(i);
        let attn = attention(&x.layernorm(l.ln1_g, l.ln1_b, LN_EPS), &l, cfg);
        let h = x.add(&attn);
        let mlp = h
            .layernorm(l.ln2_g, l.ln2_b, LN_EPS)
            .matmul(l.w1)
            .add_rowvec(l.b1)
            .gelu()
            .matmul(l.w2)
            .add_rowvec(l.b2);
        x = h.add(&mlp);
    }
    x.layernorm(bp.get("final_ln.g"), bp.get("final_ln.b"), LN_EPS)
}

/// Generalized-mean pool over token rows: (mean(max(x, eps)^p))^(1/p).
pub fn gem_pool(patch_tokens: &Tensor, p: &Tensor, eps: f64) -> Tensor {
    assert!(
        p.item() >= 1.0,
        "gem exponent must be >= 1, got {}",
        p.item()
    );
    let clamped = patch_tokens.clamp_min(eps);
    let powed = clamped.pow_t(p);
    powed.mean_axis0().pow_t(&p.recip())
}

/// Feature composition: f = [cls_out ; mean(local outputs)], with an
/// optional GeM block.
pub fn compose_feature(bp: &BoundParams, cfg: &ModelConfig, tokens: &Tensor) -> Tensor {
    let cls_out = tokens.row(0);
    let local_mean = tokens.rows_range(1, 1 + cfg.k_local).mean_axis0();
    if cfg.gem_enabled {
        let patches = tokens.rows_range(1 + cfg.k_local, cfg.seq_len());
        let gem = gem_pool(&patches, bp.get("gem_p"), GEM_EPS);
        concat1d(&[cls_out, local_mean, gem])
    } else {
        concat1d(&[cls_out, local_mean])
    }
}

/// Full forward pass for one image: composed feature plus identity logits.
/// `sie_index` is ignored (and the SIE table never read) when lambda is 0.
pub fn forward(
    bp: &BoundParams,
    cfg: &ModelConfig,
    image: &Image,
    sie_index: usize,
) -> (Tensor, Tensor) {
    let feature = forward_feature(bp, cfg, image, sie_index);
    let logits = feature
        .reshape(vec![1, cfg.feature_dim()])
        .matmul(bp.get("classifier.w"))
        .reshape(vec![cfg.n_classes]);
    (feature, logits)
}

/// Forward pass up to the composed feature.
pub fn forward_feature(
    bp: &BoundParams,
    cfg: &ModelConfig,
    image: &Image,
    sie_index: usize,
) -> Tensor {
    let z0 = assemble_sequence(bp, cfg, image);
    let z0 = if cfg.lambda_sie != 0.0 {
        apply_sie(bp, cfg, &z0, sie_index)
    } else {
        z0
    };
    let tokens = encode(bp, cfg, &z0);
    compose_feature(bp, cfg, &tokens)
}

/// Batched forward: stacked features (PK x feature_dim) and logits (PK x C).
pub fn forward_batch(
    bp: &BoundParams,
    cfg: &ModelConfig,
    images: &[(Image, usize)],
) -> (Tensor, Tensor) {
    assert!(!images.is_empty(), "forward_batch on an empty batch");
    let rows: Vec<Tensor> = images
        .iter()
        .map(|(img, sie)| forward_feature(bp, cfg, img, *sie).reshape(vec![1, cfg.feature_dim()]))
        .collect();
    let features = concat_rows(&rows);
    let logits = features.matmul(bp.get("classifier.w"));
    (features, logits)
}
