use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Tape;
use crate::data::{assign_sie_index, synth_generate, SynthConfig};
use crate::error::Error;
use crate::model::{forward_batch, BoundParams, ModelConfig, ModelParams};

use super::*;

fn small_model() -> (ModelConfig, ModelParams) {
    let cfg = ModelConfig {
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
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = ModelParams::init(&cfg, &mut rng);
    (cfg, params)
}

fn small_ds() -> crate::data::Dataset {
    let synth = SynthConfig {
        h: 16,
        w: 8,
        ..SynthConfig::default()
    };
    synth_generate(4, 2, 6, 0, &synth)
}

// ---------------------------------------------------------------- protocol

#[test]
fn protocol_sets_are_disjoint_and_clamped() {
    let ds = small_ds();
    let cfg = EvalConfig::default(); // asks for 10 gallery / 100 probes per id
    let proto = build_protocol(&ds, &cfg).unwrap();
    // only 6 images per (identity, domain): clamped to availability
    assert_eq!(proto.gallery.len(), 4 * 6);
    assert_eq!(proto.probe.len(), 4 * 6);
    assert_eq!(proto.excluded_identities, 0);
    for &g in &proto.gallery {
        assert_eq!(ds.records[g].domain, cfg.gallery_domain);
        assert!(!proto.probe.contains(&g), "record {g} in both sets");
    }
    for &p in &proto.probe {
        assert_eq!(ds.records[p].domain, cfg.probe_domain);
    }
}

#[test]
fn protocol_same_domain_split_stays_disjoint() {
    let ds = small_ds();
    let cfg = EvalConfig {
        gallery_domain: 0,
        probe_domain: 0,
        n_gallery: 3,
        n_probe: 3,
        ..EvalConfig::default()
    };
    let proto = build_protocol(&ds, &cfg).unwrap();
    for &g in &proto.gallery {
        assert!(!proto.probe.contains(&g));
    }
}

#[test]
fn protocol_counts_identities_missing_a_domain() {
    let mut ds = small_ds();
    // strip identity 2 out of domain 1 entirely
    ds.records.retain(|r| !(r.identity == 2 && r.domain == 1));
    let proto = build_protocol(&ds, &EvalConfig::default()).unwrap();
    assert_eq!(proto.excluded_identities, 1);
    assert!(proto.gallery.iter().all(|&i| ds.records[i].identity != 2));
}

#[test]
fn protocol_is_seed_deterministic() {
    let ds = small_ds();
    let cfg = EvalConfig {
        n_gallery: 3,
        n_probe: 3,
        seed: 5,
        ..EvalConfig::default()
    };
    let a = build_protocol(&ds, &cfg).unwrap();
    let b = build_protocol(&ds, &cfg).unwrap();
    assert_eq!(a.gallery, b.gallery);
    assert_eq!(a.probe, b.probe);
}

#[test]
fn protocol_rejects_bad_domains() {
    let ds = small_ds();
    let cfg = EvalConfig {
        probe_domain: 9,
        ..EvalConfig::default()
    };
    assert!(matches!(build_protocol(&ds, &cfg), Err(Error::Config(_))));
}

// ---------------------------------------------------------------- features

#[test]
fn extracted_features_are_unit_norm_when_normalized() {
    let (model_cfg, params) = small_model();
    let ds = small_ds();
    let cfg = EvalConfig::default();
    let feats = extract_features(&params, &model_cfg, &ds, &[0, 1, 2], &cfg).unwrap();
    for f in &feats {
        assert_eq!(f.len(), model_cfg.feature_dim());
        let n: f64 = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-12, "norm {n}");
    }
}

#[test]
fn one_by_one_extraction_matches_batched_forward() {
    let (model_cfg, params) = small_model();
    let ds = small_ds();
    let cfg = EvalConfig {
        normalize: false,
        ..EvalConfig::default()
    };
    let idx = [0usize, 5, 9];
    let single = extract_features(&params, &model_cfg, &ds, &idx, &cfg).unwrap();

    let tape = Tape::no_grad();
    let bp = BoundParams::bind(&tape, &params);
    let images: Vec<_> = idx
        .iter()
        .map(|&i| {
            let sie = assign_sie_index(&ds.records[i], cfg.sie_scheme, &ds).unwrap();
            (ds.pixels(i).unwrap(), sie)
        })
        .collect();
    let (features, _) = forward_batch(&bp, &model_cfg, &images);
    let batched = features.value();
    let d = model_cfg.feature_dim();
    for (r, f) in single.iter().enumerate() {
        for j in 0..d {
            assert_eq!(f[j], batched.data[r * d + j], "row {r} col {j}");
        }
    }
}

// ----------------------------------------------------------------- ranking

#[test]
fn rank_queries_matches_full_sort_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let gallery: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let probe: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let ranked = rank_queries(&probe, &gallery);
        for (q, order) in probe.iter().zip(&ranked) {
            let dist = |g: &Vec<f64>| -> f64 {
                q.iter().zip(g).map(|(a, b)| (a - b) * (a - b)).sum()
            };
            let mut oracle: Vec<usize> = (0..gallery.len()).collect();
            oracle.sort_by(|&a, &b| {
                dist(&gallery[a])
                    .partial_cmp(&dist(&gallery[b]))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            assert_eq!(*order, oracle);
        }
    }
}

#[test]
fn rank_queries_breaks_ties_by_gallery_index() {
    let g = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]];
    let ranked = rank_queries(&[vec![1.0, 0.0]], &g);
    assert_eq!(ranked[0], vec![0, 2, 1]);
}

// --------------------------------------------------------------- cmc / map

#[test]
fn cmc_hand_case() {
    // probe 0 finds its match at rank 2, probe 1 at rank 1
    let ranked = vec![vec![1, 0, 2], vec![2, 0, 1]];
    let probe_ids = vec![7, 8];
    let gallery_ids = vec![7, 9, 8];
    assert_eq!(cmc(&ranked, &probe_ids, &gallery_ids, 1), 0.5);
    assert_eq!(cmc(&ranked, &probe_ids, &gallery_ids, 2), 1.0);
    assert_eq!(cmc(&ranked, &probe_ids, &gallery_ids, 3), 1.0);
}

#[test]
fn map_hand_case_five_sixths() {
    // two relevant items at ranks 1 and 3: AP = (1/1 + 2/3) / 2 = 5/6
    let ranked = vec![vec![0, 1, 2, 3]];
    let probe_ids = vec![4];
    let gallery_ids = vec![4, 5, 4, 6];
    let ap = mean_ap(&ranked, &probe_ids, &gallery_ids);
    assert!((ap - 5.0 / 6.0).abs() < 1e-15, "ap {ap}");
}

#[test]
fn cmc_and_map_match_brute_force_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let n_ids = rng.random_range(2..5);
        let n_g = rng.random_range(4..10);
        let n_p = rng.random_range(2..6);
        let gallery_ids: Vec<usize> = (0..n_g).map(|i| i % n_ids).collect();
        let probe_ids: Vec<usize> = (0..n_p).map(|_| rng.random_range(0..n_ids)).collect();
        let ranked: Vec<Vec<usize>> = (0..n_p)
            .map(|_| {
                let mut o: Vec<usize> = (0..n_g).collect();
                use rand::seq::SliceRandom;
                o.shuffle(&mut rng);
                o
            })
            .collect();

        for k in 1..=n_g {
            let mut hits = 0;
            for (order, &pid) in ranked.iter().zip(&probe_ids) {
                let mut found = false;
                for &g in order.iter().take(k) {
                    if gallery_ids[g] == pid {
                        found = true;
                    }
                }
                if found {
                    hits += 1;
                }
            }
            let expect = hits as f64 / n_p as f64;
            assert!((cmc(&ranked, &probe_ids, &gallery_ids, k) - expect).abs() < 1e-12);
        }

        let mut ap_sum = 0.0;
        for (order, &pid) in ranked.iter().zip(&probe_ids) {
            let n_rel = gallery_ids.iter().filter(|&&g| g == pid).count();
            let mut seen = 0;
            let mut ap = 0.0;
            for (r, &g) in order.iter().enumerate() {
                if gallery_ids[g] == pid {
                    seen += 1;
                    ap += seen as f64 / (r + 1) as f64;
                }
            }
            ap_sum += ap / n_rel as f64;
        }
        let expect = ap_sum / n_p as f64;
        assert!((mean_ap(&ranked, &probe_ids, &gallery_ids) - expect).abs() < 1e-12);
    }
}

// ------------------------------------------------------------ end to end

#[test]
fn evaluate_produces_sane_report() {
    let (model_cfg, params) = small_model();
    let ds = small_ds();
    let cfg = EvalConfig {
        n_gallery: 4,
        n_probe: 4,
        ..EvalConfig::default()
    };
    let report = evaluate(&params, &model_cfg, &ds, &cfg).unwrap();
    for v in [report.rank1, report.rank5, report.rank10, report.map] {
        assert!((0.0..=1.0).contains(&v));
    }
    assert!(report.rank5 >= report.rank1);
    assert!(report.rank10 >= report.rank5);
    let line = report.csv_line("vis-ir");
    assert!(line.starts_with("vis-ir,"));
    assert_eq!(line.split(',').count(), 5);
}

// ------------------------------------------------------------------ export

#[test]
fn embedding_export_roundtrip_is_bit_exact() {
    let (model_cfg, params) = small_model();
    let ds = small_ds();
    let cfg = EvalConfig::default();
    let idx: Vec<usize> = (0..6).collect();
    let feats = extract_features(&params, &model_cfg, &ds, &idx, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.csv");
    export_embeddings(&ds, &idx, &feats, &path).unwrap();

    let rows = load_embeddings(&path).unwrap();
    assert_eq!(rows.len(), 6);
    for (r, (_, id, dom, _, f)) in rows.iter().enumerate() {
        assert_eq!(*id, ds.records[idx[r]].identity);
        assert_eq!(*dom, ds.records[idx[r]].domain);
        assert_eq!(f.len(), feats[r].len());
        for (a, b) in f.iter().zip(&feats[r]) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
