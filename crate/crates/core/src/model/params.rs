use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Array;

use super::config::ModelConfig;

/// One encoder block: pre-norm attention and MLP.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub ln1_g: Array,
    pub ln1_b: Array,
    pub wq: Array,
    pub bq: Array,
    pub wk: Array,
    pub bk: Array,
    pub wv: Array,
    pub bv: Array,
    pub wo: Array,
    pub bo: Array,
    pub ln2_g: Array,
    pub ln2_b: Array,
    pub w1: Array,
    pub b1: Array,
    pub w2: Array,
    pub b2: Array,
}

/// All learnable state. Weight matrices are stored input x output.
#[derive(Debug, Clone)]
pub struct ModelParams {
    pub patch_w: Array,
    pub patch_b: Array,
    pub cls_token: Array,
    pub local_tokens: Array,
    pub pos_table: Array,
    pub sie_table: Array,
    pub layers: Vec<LayerParams>,
    pub ln_f_g: Array,
    pub ln_f_b: Array,
    /// feature_dim x n_classes
    pub classifier: Array,
    /// Learnable GeM exponent (scalar), used only when gem is enabled.
    pub gem_p: Array,
}

fn trunc_normal(rng: &mut ChaCha8Rng, shape: Vec<usize>, std: f64) -> Array {
    let normal = Normal::new(0.0, std).unwrap();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break v;
            }
        })
        .collect();
    Array::new(shape, data)
}

fn fan_in_uniform(rng: &mut ChaCha8Rng, fan_in: usize, shape: Vec<usize>) -> Array {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Array::new(shape, data)
}

fn ones(n: usize) -> Array {
    Array::new(vec![n], vec![1.0; n])
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.dim;
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                ln1_g: ones(d),
                ln1_b: Array::zeros(vec![d]),
                wq: fan_in_uniform(rng, d, vec![d, d]),
                bq: Array::zeros(vec![d]),
                wk: fan_in_uniform(rng, d, vec![d, d]),
                bk: Array::zeros(vec![d]),
                wv: fan_in_uniform(rng, d, vec![d, d]),
                bv: Array::zeros(vec![d]),
                wo: fan_in_uniform(rng, d, vec![d, d]),
                bo: Array::zeros(vec![d]),
                ln2_g: ones(d),
                ln2_b: Array::zeros(vec![d]),
                w1: fan_in_uniform(rng, d, vec![d, cfg.mlp_hidden()]),
                b1: Array::zeros(vec![cfg.mlp_hidden()]),
                w2: fan_in_uniform(rng, cfg.mlp_hidden(), vec![cfg.mlp_hidden(), d]),
                b2: Array::zeros(vec![d]),
            })
            .collect();
        ModelParams {
            patch_w: fan_in_uniform(rng, cfg.patch_values(), vec![cfg.patch_values(), d]),
            patch_b: Array::zeros(vec![d]),
            cls_token: trunc_normal(rng, vec![d], 0.02),
            local_tokens: trunc_normal(rng, vec![cfg.k_local, d], 0.02),
            pos_table: trunc_normal(rng, vec![cfg.seq_len(), d], 0.02),
            sie_table: trunc_normal(rng, vec![cfg.n_sie, d], 0.02),
            layers,
            ln_f_g: ones(d),
            ln_f_b: Array::zeros(vec![d]),
            classifier: fan_in_uniform(rng, cfg.feature_dim(), vec![cfg.feature_dim(), cfg.n_classes]),
            gem_p: Array::scalar(cfg.gem_p_init),
        }
    }

    /// Stable named view of every parameter group, in checkpoint order.
    pub fn named(&self) -> Vec<(String, &Array)> {
        let mut out: Vec<(String, &Array)> = vec![
            ("patch_proj.w".into(), &self.patch_w),
            ("patch_proj.b".into(), &self.patch_b),
            ("cls_token".into(), &self.cls_token),
            ("local_tokens".into(), &self.local_tokens),
            ("pos_table".into(), &self.pos_table),
            ("sie_table".into(), &self.sie_table),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            out.push((p("ln1.g"), &l.ln1_g));
            out.push((p("ln1.b"), &l.ln1_b));
            out.push((p("attn.wq"), &l.wq));
            out.push((p("attn.bq"), &l.bq));
            out.push((p("attn.wk"), &l.wk));
            out.push((p("attn.bk"), &l.bk));
            out.push((p("attn.wv"), &l.wv));
            out.push((p("attn.bv"), &l.bv));
            out.push((p("attn.wo"), &l.wo));
            out.push((p("attn.bo"), &l.bo));
            out.push((p("ln2.g"), &l.ln2_g));
            out.push((p("ln2.b"), &l.ln2_b));
            out.push((p("mlp.w1"), &l.w1));
            out.push((p("mlp.b1"), &l.b1));
            out.push((p("mlp.w2"), &l.w2));
            out.push((p("mlp.b2"), &l.b2));
        }
        out.push(("final_ln.g".into(), &self.ln_f_g));
        out.push(("final_ln.b".into(), &self.ln_f_b));
        out.push(("classifier.w".into(), &self.classifier));
        out.push(("gem_p".into(), &self.gem_p));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Array)> {
        let mut out: Vec<(String, &mut Array)> = vec![
            ("patch_proj.w".into(), &mut self.patch_w),
            ("patch_proj.b".into(), &mut self.patch_b),
            ("cls_token".into(), &mut self.cls_token),
            ("local_tokens".into(), &mut self.local_tokens),
            ("pos_table".into(), &mut self.pos_table),
            ("sie_table".into(), &mut self.sie_table),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            out.push((p("ln1.g"), &mut l.ln1_g));
            out.push((p("ln1.b"), &mut l.ln1_b));
            out.push((p("attn.wq"), &mut l.wq));
            out.push((p("attn.bq"), &mut l.bq));
            out.push((p("attn.wk"), &mut l.wk));
            out.push((p("attn.bk"), &mut l.bk));
            out.push((p("attn.wv"), &mut l.wv));
            out.push((p("attn.bv"), &mut l.bv));
            out.push((p("attn.wo"), &mut l.wo));
            out.push((p("attn.bo"), &mut l.bo));
            out.push((p("ln2.g"), &mut l.ln2_g));
            out.push((p("ln2.b"), &mut l.ln2_b));
            out.push((p("mlp.w1"), &mut l.w1));
            out.push((p("mlp.b1"), &mut l.b1));
            out.push((p("mlp.w2"), &mut l.w2));
            out.push((p("mlp.b2"), &mut l.b2));
        }
        out.push(("final_ln.g".into(), &mut self.ln_f_g));
        out.push(("final_ln.b".into(), &mut self.ln_f_b));
        out.push(("classifier.w".into(), &mut self.classifier));
        out.push(("gem_p".into(), &mut self.gem_p));
        out
    }
}
