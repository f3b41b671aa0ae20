//! Retrieval evaluation: disjoint gallery/probe protocols, feature
//! extraction, CMC and mean average precision, and embedding export.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::{assign_sie_index, Dataset, SieScheme};
use crate::error::{Error, Result};
use crate::model::{forward_feature, BoundParams, ModelConfig, ModelParams};

#[derive(Debug, Clone)]
pub struct EvalConfig {
    /// Gallery images drawn per identity (clamped to availability).
    pub n_gallery: usize,
    /// Probe images drawn per identity (clamped to availability).
    pub n_probe: usize,
    /// Domain the gallery is drawn from.
    pub gallery_domain: usize,
    /// Domain the probes are drawn from.
    pub probe_domain: usize,
    pub sie_scheme: SieScheme,
    /// L2-normalize features before ranking.
    pub normalize: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_gallery: 10,
            n_probe: 100,
            gallery_domain: 0,
            probe_domain: 1,
            sie_scheme: SieScheme::DomainOnly,
            normalize: true,
            seed: 0,
        }
    }
}

/// Disjoint record index sets for one retrieval run.
#[derive(Debug, Clone)]
pub struct Protocol {
    pub gallery: Vec<usize>,
    pub probe: Vec<usize>,
    /// Identities skipped because they had no image in one of the domains.
    pub excluded_identities: usize,
}

/// Split a dataset into gallery and probe record sets. Per identity, up to
/// `n_gallery` images come from the gallery domain and up to `n_probe` from
/// the probe domain; when both domains coincide the two sets stay disjoint.
/// Identities missing either domain are counted in `excluded_identities`.
pub fn build_protocol(ds: &Dataset, cfg: &EvalConfig) -> Result<Protocol> {
    if cfg.gallery_domain >= ds.n_domains || cfg.probe_domain >= ds.n_domains {
        return Err(Error::Config(format!(
            "protocol domains ({}, {}) out of range for {} domains",
            cfg.gallery_domain, cfg.probe_domain, ds.n_domains
        )));
    }
    if cfg.n_gallery == 0 || cfg.n_probe == 0 {
        return Err(Error::Config("protocol needs gallery and probe images".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut gallery = Vec::new();
    let mut probe = Vec::new();
    let mut excluded = 0usize;
    for id in 0..ds.n_ids {
        let mut g_pool = ds.cell(id, cfg.gallery_domain);
        let mut p_pool = ds.cell(id, cfg.probe_domain);
        if g_pool.is_empty() || p_pool.is_empty() {
            excluded += 1;
            continue;
        }
        g_pool.shuffle(&mut rng);
        if cfg.gallery_domain == cfg.probe_domain {
            if g_pool.len() < 2 {
                excluded += 1;
                continue;
            }
            // carve the probe pool out of what the gallery did not take
            let take = cfg.n_gallery.min(g_pool.len() - 1);
            let (g_half, p_half) = g_pool.split_at(take);
            gallery.extend_from_slice(g_half);
            let mut rest = p_half.to_vec();
            rest.shuffle(&mut rng);
            rest.truncate(cfg.n_probe);
            probe.extend(rest);
            continue;
        }
        g_pool.truncate(cfg.n_gallery);
        gallery.extend(g_pool);
        p_pool.shuffle(&mut rng);
        p_pool.truncate(cfg.n_probe);
        probe.extend(p_pool);
    }
    if gallery.is_empty() || probe.is_empty() {
        return Err(Error::Config(
            "protocol is empty: no identity has images in both domains".into(),
        ));
    }
    Ok(Protocol {
        gallery,
        probe,
        excluded_identities: excluded,
    })
}

/// Features for a set of records, one row per index, in a no-grad pass.
pub fn extract_features(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    ds: &Dataset,
    indices: &[usize],
    cfg: &EvalConfig,
) -> Result<Vec<Vec<f64>>> {
    let tape = Tape::no_grad();
    let bp = BoundParams::bind(&tape, params);
    let mut rows = Vec::with_capacity(indices.len());
    for &i in indices {
        let img = ds.pixels(i)?;
        let sie = assign_sie_index(&ds.records[i], cfg.sie_scheme, ds)?;
        let mut f = forward_feature(&bp, model_cfg, &img, sie).value().data;
        if cfg.normalize {
            let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in &mut f {
                    *v /= norm;
                }
            }
        }
        rows.push(f);
    }
    Ok(rows)
}

/// Gallery order for each probe, ascending Euclidean distance, ties broken
/// by gallery index.
pub fn rank_queries(probe: &[Vec<f64>], gallery: &[Vec<f64>]) -> Vec<Vec<usize>> {
    probe
        .iter()
        .map(|q| {
            let mut order: Vec<usize> = (0..gallery.len()).collect();
            let d: Vec<f64> = gallery
                .iter()
                .map(|g| {
                    q.iter()
                        .zip(g)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .collect();
            // stable sort keeps the lower gallery index first on exact ties
            order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap());
            order
        })
        .collect()
}

/// CMC at rank k: fraction of probes with a correct identity in the top k.
pub fn cmc(ranked: &[Vec<usize>], probe_ids: &[usize], gallery_ids: &[usize], k: usize) -> f64 {
    assert_eq!(ranked.len(), probe_ids.len(), "probe count mismatch");
    assert!(k >= 1, "cmc rank must be at least 1");
    let hits = ranked
        .iter()
        .zip(probe_ids)
        .filter(|(order, &pid)| {
            order
                .iter()
                .take(k)
                .any(|&g| gallery_ids[g] == pid)
        })
        .count();
    hits as f64 / ranked.len() as f64
}

/// Mean average precision over the probes. Probes with no relevant gallery
/// image are skipped.
pub fn mean_ap(ranked: &[Vec<usize>], probe_ids: &[usize], gallery_ids: &[usize]) -> f64 {
    assert_eq!(ranked.len(), probe_ids.len(), "probe count mismatch");
    let mut sum = 0.0;
    let mut counted = 0usize;
    for (order, &pid) in ranked.iter().zip(probe_ids) {
        let n_rel = gallery_ids.iter().filter(|&&g| g == pid).count();
        if n_rel == 0 {
            continue;
        }
        let mut hits = 0usize;
        let mut ap = 0.0;
        for (rank0, &g) in order.iter().enumerate() {
            if gallery_ids[g] == pid {
                hits += 1;
                ap += hits as f64 / (rank0 + 1) as f64;
            }
        }
        sum += ap / n_rel as f64;
        counted += 1;
    }
    if counted == 0 {
        0.0
    } else {
        sum / counted as f64
    }
}

pub const REPORT_HEADER: &str = "protocol,rank1,rank5,rank10,mAP";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub map: f64,
}

impl EvalReport {
    pub fn csv_line(&self, protocol: &str) -> String {
        format!(
            "{},{},{},{},{}",
            protocol, self.rank1, self.rank5, self.rank10, self.map
        )
    }
}

/// Run a full retrieval evaluation on a dataset.
pub fn evaluate(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    ds: &Dataset,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    let protocol = build_protocol(ds, cfg)?;
    let gallery_f = extract_features(params, model_cfg, ds, &protocol.gallery, cfg)?;
    let probe_f = extract_features(params, model_cfg, ds, &protocol.probe, cfg)?;
    let gallery_ids: Vec<usize> = protocol.gallery.iter().map(|&i| ds.records[i].identity).collect();
    let probe_ids: Vec<usize> = protocol.probe.iter().map(|&i| ds.records[i].identity).collect();
    let ranked = rank_queries(&probe_f, &gallery_f);
    Ok(EvalReport {
        rank1: cmc(&ranked, &probe_ids, &gallery_ids, 1),
        rank5: cmc(&ranked, &probe_ids, &gallery_ids, 5),
        rank10: cmc(&ranked, &probe_ids, &gallery_ids, 10),
        map: mean_ap(&ranked, &probe_ids, &gallery_ids),
    })
}

/// Write one CSV row per record: path, identity, domain, camera, then the
/// feature values with 17 significant digits so a reload is bit-exact.
pub fn export_embeddings(
    ds: &Dataset,
    indices: &[usize],
    features: &[Vec<f64>],
    path: &Path,
) -> Result<()> {
    assert_eq!(indices.len(), features.len(), "row count mismatch");
    let dim = features.first().map_or(0, |f| f.len());
    let mut out = String::from("record_path,identity,domain,camera");
    for j in 0..dim {
        out.push_str(&format!(",f_{j}"));
    }
    out.push('\n');
    for (&i, f) in indices.iter().zip(features) {
        let rec = &ds.records[i];
        let p = rec
            .path
            .as_ref()
            .map_or_else(|| format!("record_{i}"), |p| p.display().to_string());
        let cam = rec.camera.map_or(String::from("-"), |c| c.to_string());
        out.push_str(&format!("{p},{},{},{cam}", rec.identity, rec.domain));
        for v in f {
            out.push_str(&format!(",{v:.16e}"));
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Read back an embedding CSV: (record index order is lost; rows come back
/// as (path, identity, domain, camera, feature)).
pub fn load_embeddings(path: &Path) -> Result<Vec<(String, usize, usize, Option<usize>, Vec<f64>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            return Err(Error::Parse {
                line: ln + 1,
                msg: format!("expected at least 4 fields, got {}", fields.len()),
            });
        }
        let parse_usize = |s: &str, what: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                line: ln + 1,
                msg: format!("bad {what} {s:?}"),
            })
        };
        let identity = parse_usize(fields[1], "identity")?;
        let domain = parse_usize(fields[2], "domain")?;
        let camera = if fields[3] == "-" {
            None
        } else {
            Some(parse_usize(fields[3], "camera")?)
        };
        let mut feat = Vec::with_capacity(fields.len() - 4);
        for s in &fields[4..] {
            feat.push(s.parse::<f64>().map_err(|_| Error::Parse {
                line: ln + 1,
                msg: format!("bad feature value {s:?}"),
            })?);
        }
        rows.push((fields[0].to_string(), identity, domain, camera, feat));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests;
