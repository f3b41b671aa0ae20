//! Python bindings: dataset synthesis, training, evaluation, gradient
//! checking, and direct feature extraction, mirroring the CLI pipeline.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use xspec_core::check::check_model_gradients;
use xspec_core::data::{
    assign_sie_index, load_manifest, sample_batch, synth_generate, write_dataset, Image,
    SieScheme, SynthConfig,
};
use xspec_core::eval::{evaluate as eval_run, EvalConfig};
use xspec_core::losses::LossConfig;
use xspec_core::model::{checkpoint, forward_feature, BoundParams, ModelConfig, ModelParams};
use xspec_core::train::{train as train_run, AugmentConfig, TrainConfig};

fn py_err(e: xspec_core::Error) -> PyErr {
    match &e {
        xspec_core::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// SIE-ViT model with its configuration and parameters.
#[pyclass]
struct Model {
    cfg: ModelConfig,
    params: ModelParams,
}

#[pymethods]
impl Model {
    /// Fresh randomly initialized model; defaults are the desk-scale
    /// reference configuration (64x32x3 images, dim 64, 2 layers).
    #[new]
    #[pyo3(signature = (n_classes=8, n_sie=2, dim=64, layers=2, heads=4, k_local=3,
                        image_h=64, image_w=32, channels=3, patch=8, lambda_sie=3.0, seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        n_classes: usize,
        n_sie: usize,
        dim: usize,
        layers: usize,
        heads: usize,
        k_local: usize,
        image_h: usize,
        image_w: usize,
        channels: usize,
        patch: usize,
        lambda_sie: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = ModelConfig {
            image_h,
            image_w,
            channels,
            patch,
            dim,
            layers,
            heads,
            k_local,
            n_sie,
            lambda_sie,
            n_classes,
            ..ModelConfig::default()
        };
        cfg.validate().map_err(py_err)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(&cfg, &mut rng);
        Ok(Model { cfg, params })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save(&self.params, &path).map_err(py_err)
    }

    fn load(&mut self, path: PathBuf) -> PyResult<()> {
        checkpoint::load_into(&mut self.params, &path).map_err(py_err)
    }

    /// Feature vector for one image given as a flat h*w*c float list in
    /// row-major (y, x, channel) order.
    fn feature(&self, pixels: Vec<f64>, sie_index: usize) -> PyResult<Vec<f64>> {
        let (h, w, c) = (self.cfg.image_h, self.cfg.image_w, self.cfg.channels);
        if pixels.len() != h * w * c {
            return Err(PyValueError::new_err(format!(
                "expected {} pixel values for a {h}x{w}x{c} image, got {}",
                h * w * c,
                pixels.len()
            )));
        }
        let img = Image::new(h, w, c, pixels);
        let tape = xspec_core::autodiff::Tape::no_grad();
        let bp = BoundParams::bind(&tape, &self.params);
        Ok(forward_feature(&bp, &self.cfg, &img, sie_index).value().data)
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.cfg.feature_dim()
    }
}

/// Generate a synthetic multi-domain dataset; returns the manifest path.
#[pyfunction]
#[pyo3(signature = (out_dir, n_ids=8, n_domains=2, per_domain=10, seed=0, h=64, w=32))]
fn synth(
    out_dir: PathBuf,
    n_ids: usize,
    n_domains: usize,
    per_domain: usize,
    seed: u64,
    h: usize,
    w: usize,
) -> PyResult<String> {
    let cfg = SynthConfig {
        h,
        w,
        ..SynthConfig::default()
    };
    let ds = synth_generate(n_ids, n_domains, per_domain, seed, &cfg);
    let manifest = write_dataset(&ds, &out_dir).map_err(py_err)?;
    Ok(manifest.display().to_string())
}

/// Train on a manifest; writes checkpoints under `out_dir` and returns the
/// per-step total losses.
#[pyfunction]
#[pyo3(signature = (manifest, out_dir, epochs=30, lr=0.0004, warmup_epochs=5,
                    p_ids=8, k_batch=4, n_d=2, lambda_t=1.0, lambda_sie=3.0,
                    augment=true, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train(
    manifest: PathBuf,
    out_dir: PathBuf,
    epochs: usize,
    lr: f64,
    warmup_epochs: usize,
    p_ids: usize,
    k_batch: usize,
    n_d: usize,
    lambda_t: f64,
    lambda_sie: f64,
    augment: bool,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let ds = load_manifest(&manifest).map_err(py_err)?;
    let model_cfg = ModelConfig {
        n_classes: ds.n_ids,
        n_sie: ds.n_domains.max(1),
        lambda_sie,
        ..ModelConfig::default()
    };
    let train_cfg = TrainConfig {
        epochs,
        warmup_epochs,
        lr,
        p_ids,
        k_batch,
        n_d,
        loss: LossConfig {
            lambda_t,
            ..LossConfig::default()
        },
        augment: if augment {
            AugmentConfig::default()
        } else {
            AugmentConfig::none()
        },
        seed,
        ..TrainConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(&model_cfg, &mut rng);
    let metrics =
        train_run(&mut params, &model_cfg, &train_cfg, &ds, Some(&out_dir)).map_err(py_err)?;
    Ok(metrics.iter().map(|m| m.loss_total).collect())
}

/// Evaluate a checkpoint cross-domain; returns (rank1, rank5, rank10, mAP).
#[pyfunction]
#[pyo3(signature = (manifest, checkpoint_path, gallery_domain=0, probe_domain=1,
                    lambda_sie=3.0, seed=0))]
fn evaluate(
    manifest: PathBuf,
    checkpoint_path: PathBuf,
    gallery_domain: usize,
    probe_domain: usize,
    lambda_sie: f64,
    seed: u64,
) -> PyResult<(f64, f64, f64, f64)> {
    let ds = load_manifest(&manifest).map_err(py_err)?;
    let model_cfg = ModelConfig {
        n_classes: ds.n_ids,
        n_sie: ds.n_domains.max(1),
        lambda_sie,
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(&model_cfg, &mut rng);
    checkpoint::load_into(&mut params, &checkpoint_path).map_err(py_err)?;
    let cfg = EvalConfig {
        gallery_domain,
        probe_domain,
        seed,
        ..EvalConfig::default()
    };
    let r = eval_run(&params, &model_cfg, &ds, &cfg).map_err(py_err)?;
    Ok((r.rank1, r.rank5, r.rank10, r.map))
}

/// Full-model finite-difference gradient check on a small synthetic batch;
/// returns the maximum relative error.
#[pyfunction]
#[pyo3(signature = (coords_per_group=20, seed=0))]
fn gradcheck(coords_per_group: usize, seed: u64) -> PyResult<f64> {
    let model = ModelConfig {
        image_h: 16,
        image_w: 8,
        patch: 4,
        dim: 16,
        layers: 1,
        heads: 2,
        k_local: 2,
        n_classes: 4,
        ..ModelConfig::default()
    };
    let synth_cfg = SynthConfig {
        h: 16,
        w: 8,
        ..SynthConfig::default()
    };
    let ds = synth_generate(4, 2, 2, seed, &synth_cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = sample_batch(&ds, 2, 2, 2, false, &mut rng).map_err(py_err)?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for &(id, _, ri) in &plan.entries {
        let sie =
            assign_sie_index(&ds.records[ri], SieScheme::DomainOnly, &ds).map_err(py_err)?;
        images.push((ds.pixels(ri).map_err(py_err)?, sie));
        labels.push(id);
    }
    let mut prng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    let params = ModelParams::init(&model, &mut prng);
    let report = check_model_gradients(
        &params,
        &model,
        &images,
        &labels,
        &LossConfig::default(),
        coords_per_group,
        1e-5,
        seed,
    )
    .map_err(py_err)?;
    Ok(report.max_rel_err)
}

/// Row count of a manifest (cheap sanity helper for scripting).
#[pyfunction]
fn manifest_len(manifest: PathBuf) -> PyResult<usize> {
    Ok(load_manifest(Path::new(&manifest)).map_err(py_err)?.records.len())
}

#[pymodule]
fn xspec(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(manifest_len, m)?)?;
    Ok(())
}
