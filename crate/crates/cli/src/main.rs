mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use config::RunConfig;
use xspec_core::check::check_model_gradients;
use xspec_core::data::{
    assign_sie_index, load_manifest, sample_batch, synth_generate, write_dataset, SieScheme,
};
use xspec_core::eval::{evaluate, export_embeddings, extract_features, REPORT_HEADER};
use xspec_core::model::{checkpoint, ModelParams};
use xspec_core::train::{train, METRICS_HEADER};
use xspec_core::Error;

#[derive(Parser)]
#[command(name = "xspec", about = "Cross-spectral body recognition pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat key=value config file (`model.dim=64`); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override every seeded component.
    #[arg(long)]
    seed: Option<u64>,
    /// Side-information scheme: domain-only, camera-only, domain+camera,
    /// or domain+range.
    #[arg(long)]
    sie_scheme: Option<String>,
    /// Override the SIE strength; 0 disables the table entirely.
    #[arg(long)]
    lambda_sie: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multi-domain dataset on disk.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output directory for the manifest and image blobs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write checkpoints plus a metrics log.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset manifest to train on.
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for checkpoints and the metrics log.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint: CMC and mAP over the retrieval protocol.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Report file to write (stdout always gets the same rows).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the embedding table to this path.
        #[arg(long)]
        export_embeddings: Option<PathBuf>,
    },
    /// Verify model gradients against finite differences.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Maximum allowed relative error.
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        /// Finite-difference coordinates probed per parameter group.
        #[arg(long, default_value_t = 200)]
        coords: usize,
    },
    /// Extract embeddings for every record in a manifest.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(t) = read_thread_cap() {
        // compute is single-threaded today; the cap is validated so configs
        // stay portable, and anything above 1 is simply not used yet
        if t == 0 {
            eprintln!("config error: XSPEC_THREADS must be at least 1");
            return ExitCode::from(2);
        }
    } else if std::env::var_os("XSPEC_THREADS").is_some() {
        eprintln!("config error: XSPEC_THREADS must be a positive integer");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

fn read_thread_cap() -> Option<usize> {
    match std::env::var("XSPEC_THREADS") {
        Ok(v) => v.parse::<usize>().ok(),
        Err(_) => Some(1),
    }
}

/// 2 = config error, 3 = numerical failure, 4 = I/O error.
fn exit_code_for(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Scheme(_) | Error::Sampler(_) | Error::Parse { .. } => 2,
        Error::Numerical(_) => 3,
        Error::Io { .. } | Error::Checkpoint(_) => 4,
    }
}

fn load_config(common: &Common) -> xspec_core::Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(s) = &common.sie_scheme {
        let scheme = SieScheme::parse(s)?;
        cfg.train.sie_scheme = scheme;
        cfg.eval.sie_scheme = scheme;
    }
    if let Some(l) = common.lambda_sie {
        cfg.model.lambda_sie = l;
    }
    cfg.train.seed = cfg.seed;
    cfg.eval.seed = cfg.seed;
    Ok(cfg)
}

fn run(cli: Cli) -> xspec_core::Result<ExitCode> {
    match cli.command {
        Command::Synth { common, out } => {
            let cfg = load_config(&common)?;
            if cfg.synth_n_ids < 2 || cfg.synth_n_domains < 2 {
                return Err(Error::Config(format!(
                    "synth needs at least 2 identities and 2 domains, got {} and {}",
                    cfg.synth_n_ids, cfg.synth_n_domains
                )));
            }
            let ds = synth_generate(
                cfg.synth_n_ids,
                cfg.synth_n_domains,
                cfg.synth_per_domain,
                cfg.seed,
                &cfg.synth,
            );
            let manifest = write_dataset(&ds, &out)?;
            println!(
                "wrote {} records ({} identities x {} domains x {}) to {}",
                ds.records.len(),
                cfg.synth_n_ids,
                cfg.synth_n_domains,
                cfg.synth_per_domain,
                manifest.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Train { common, manifest, out } => {
            let mut cfg = load_config(&common)?;
            let ds = load_manifest(&manifest)?;
            fit_model_to_dataset(&mut cfg, &ds)?;
            if cfg.model.lambda_sie == 0.0 {
                println!("sie: disabled (lambda = 0)");
            } else {
                println!(
                    "sie: scheme {} with {} entries, lambda {}",
                    cfg.train.sie_scheme.as_str(),
                    cfg.model.n_sie,
                    cfg.model.lambda_sie
                );
            }
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut params = ModelParams::init(&cfg.model, &mut rng);
            let metrics = train(&mut params, &cfg.model, &cfg.train, &ds, Some(&out))?;
            let mut log = String::from(METRICS_HEADER);
            log.push('\n');
            for m in &metrics {
                log.push_str(&m.csv_line());
                log.push('\n');
            }
            let log_path = out.join("metrics.csv");
            std::fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;
            let last = metrics.last().expect("training produced no steps");
            println!(
                "trained {} epochs ({} steps); final loss {:.6}; checkpoint {}",
                cfg.train.epochs,
                metrics.len(),
                last.loss_total,
                out.join("final.ckpt").display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval {
            common,
            manifest,
            checkpoint: ckpt,
            out,
            export_embeddings: emb,
        } => {
            let mut cfg = load_config(&common)?;
            let ds = load_manifest(&manifest)?;
            fit_model_to_dataset(&mut cfg, &ds)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut params = ModelParams::init(&cfg.model, &mut rng);
            checkpoint::load_into(&mut params, &ckpt)?;
            let mut rows = String::from(REPORT_HEADER);
            rows.push('\n');
            // both matching directions over the two protocol domains
            for (name, g, p) in [
                ("g0-p1", cfg.eval.gallery_domain, cfg.eval.probe_domain),
                ("g1-p0", cfg.eval.probe_domain, cfg.eval.gallery_domain),
            ] {
                let mut ecfg = cfg.eval.clone();
                ecfg.gallery_domain = g;
                ecfg.probe_domain = p;
                let report = evaluate(&params, &cfg.model, &ds, &ecfg)?;
                rows.push_str(&report.csv_line(name));
                rows.push('\n');
            }
            print!("{rows}");
            if let Some(path) = out {
                std::fs::write(&path, &rows).map_err(|e| Error::io(&path, e))?;
            }
            if let Some(path) = emb {
                let idx: Vec<usize> = (0..ds.records.len()).collect();
                let feats = extract_features(&params, &cfg.model, &ds, &idx, &cfg.eval)?;
                export_embeddings(&ds, &idx, &feats, &path)?;
                println!("embeddings written to {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { common, tol, coords } => {
            let cfg = load_config(&common)?;
            cfg.model.validate()?;
            let report = gradcheck_on_synth(&cfg, coords)?;
            let worst = report.worst_group().expect("no parameter groups");
            println!(
                "checked {} coordinates over {} groups; max rel err {:.3e} \
                 ({} coordinate {}, analytic {:.6e}, numeric {:.6e})",
                report.checked,
                report.groups.len(),
                report.max_rel_err,
                worst.name,
                worst.worst_coord,
                worst.worst_analytic,
                worst.worst_numeric
            );
            if report.passes(tol) {
                println!("gradcheck pass (tol {tol:.1e})");
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("gradcheck FAIL (tol {tol:.1e})");
                Ok(ExitCode::from(3))
            }
        }
        Command::Export {
            common,
            manifest,
            checkpoint: ckpt,
            out,
        } => {
            let mut cfg = load_config(&common)?;
            let ds = load_manifest(&manifest)?;
            fit_model_to_dataset(&mut cfg, &ds)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut params = ModelParams::init(&cfg.model, &mut rng);
            checkpoint::load_into(&mut params, &ckpt)?;
            let idx: Vec<usize> = (0..ds.records.len()).collect();
            let feats = extract_features(&params, &cfg.model, &ds, &idx, &cfg.eval)?;
            export_embeddings(&ds, &idx, &feats, &out)?;
            println!("wrote {} embeddings to {}", idx.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Derive the dataset-dependent model settings: class count from the
/// manifest and SIE table size from the active scheme.
fn fit_model_to_dataset(
    cfg: &mut RunConfig,
    ds: &xspec_core::data::Dataset,
) -> xspec_core::Result<()> {
    cfg.model.n_classes = ds.n_ids;
    cfg.model.n_sie = cfg.train.sie_scheme.table_size(ds).max(1);
    cfg.model.validate()?;
    cfg.train.validate()?;
    Ok(())
}

/// Gradcheck runs on a small synthetic batch so it needs no manifest.
fn gradcheck_on_synth(
    cfg: &RunConfig,
    coords: usize,
) -> xspec_core::Result<xspec_core::check::ModelCheckReport> {
    let mut synth = cfg.synth.clone();
    synth.h = cfg.model.image_h;
    synth.w = cfg.model.image_w;
    synth.c = cfg.model.channels;
    let n_ids = cfg.model.n_classes.max(2);
    let ds = synth_generate(n_ids, 2, 2, cfg.seed, &synth);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let plan = sample_batch(&ds, 2, 2, 2, false, &mut rng)?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for &(id, _, ri) in &plan.entries {
        let sie = assign_sie_index(&ds.records[ri], cfg.train.sie_scheme, &ds)?;
        images.push((ds.pixels(ri)?, sie));
        labels.push(id);
    }
    let mut model = cfg.model.clone();
    model.n_sie = cfg.train.sie_scheme.table_size(&ds).max(1);
    let mut prng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let params = ModelParams::init(&model, &mut prng);
    check_model_gradients(
        &params,
        &model,
        &images,
        &labels,
        cfg.loss(),
        coords,
        1e-5,
        cfg.seed,
    )
}
