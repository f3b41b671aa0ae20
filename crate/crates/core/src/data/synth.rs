use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::Image;
use super::records::{Dataset, ImageRecord, RangeTag};

/// Knobs for the synthetic multi-domain generator.
#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    /// Per-image uniform noise amplitude.
    pub noise: f64,
    /// Cameras per domain; record cameras are indexed 0..cameras_per_domain.
    pub cameras_per_domain: usize,
    /// Tag half of each (identity, domain) cell short-range, half long-range,
    /// with a mild blur on the long-range half.
    pub with_ranges: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            h: 64,
            w: 32,
            c: 3,
            noise: 0.05,
            cameras_per_domain: 2,
            with_ranges: false,
        }
    }
}

struct IdentityPattern {
    freq: Vec<(f64, f64, f64, f64)>, // (fx, fy, phase, weight) per component
    color: Vec<f64>,
}

/// Deterministic synthetic dataset: each identity gets a random sinusoidal
/// base pattern, each domain applies a fixed transform (channel permutation,
/// contrast curve, additive pattern), each image adds fresh noise.
pub fn synth_generate(
    n_ids: usize,
    n_domains: usize,
    per_domain: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Dataset {
    assert!(n_ids >= 2, "synth needs at least 2 identities");
    assert!(n_domains >= 2, "synth needs at least 2 domains");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patterns: Vec<IdentityPattern> = (0..n_ids)
        .map(|_| IdentityPattern {
            freq: (0..3)
                .map(|_| {
                    (
                        rng.random_range(0.5..4.0),
                        rng.random_range(0.5..4.0),
                        rng.random_range(0.0..TAU),
                        rng.random_range(0.5..1.0),
                    )
                })
                .collect(),
            color: (0..cfg.c).map(|_| rng.random_range(-0.2..0.2)).collect(),
        })
        .collect();

    let mut records = Vec::with_capacity(n_ids * n_domains * per_domain);
    for (id, pat) in patterns.iter().enumerate() {
        for domain in 0..n_domains {
            for img_idx in 0..per_domain {
                let mut img = render_base(pat, cfg);
                apply_domain_transform(&mut img, domain, cfg);
                let range_tag = if cfg.with_ranges {
                    if img_idx < per_domain / 2 {
                        RangeTag::Short
                    } else {
                        blur_2x(&mut img);
                        RangeTag::Long
                    }
                } else {
                    RangeTag::None
                };
                for v in img.data.iter_mut() {
                    *v = (*v + rng.random_range(-cfg.noise..cfg.noise)).clamp(0.0, 1.0);
                }
                records.push(ImageRecord {
                    pixels: Some(img),
                    identity: id,
                    domain,
                    camera: Some(img_idx % cfg.cameras_per_domain),
                    range_tag,
                    path: None,
                });
            }
        }
    }
    Dataset {
        records,
        n_ids,
        n_domains,
        n_cameras: cfg.cameras_per_domain,
        base_dir: None,
    }
}

fn render_base(pat: &IdentityPattern, cfg: &SynthConfig) -> Image {
    let mut img = Image::zeros(cfg.h, cfg.w, cfg.c);
    for y in 0..cfg.h {
        for x in 0..cfg.w {
            let mut v = 0.0;
            for &(fx, fy, phase, weight) in &pat.freq {
                v += weight
                    * (TAU * (fx * x as f64 / cfg.w as f64 + fy * y as f64 / cfg.h as f64)
                        + phase)
                        .sin();
            }
            for ch in 0..cfg.c {
                let shade = 0.5 + 0.18 * v + pat.color[ch];
                img.set(y, x, ch, shade.clamp(0.0, 1.0));
            }
        }
    }
    img
}

fn apply_domain_transform(img: &mut Image, domain: usize, cfg: &SynthConfig) {
    let c = cfg.c;
    // channel permutation: rotate by the domain index
    if c > 1 && domain % c != 0 {
        let shift = domain % c;
        let mut buf = vec![0.0; c];
        for y in 0..img.h {
            for x in 0..img.w {
                for ch in 0..c {
                    buf[(ch + shift) % c] = img.at(y, x, ch);
                }
                for ch in 0..c {
                    img.set(y, x, ch, buf[ch]);
                }
            }
        }
    }
    // contrast curve and additive pattern, both fixed per domain
    let gamma = 0.7 + 0.4 * domain as f64;
    let period = 7.0 + 3.0 * domain as f64;
    for y in 0..img.h {
        for x in 0..img.w {
            let add = 0.12 * (TAU * (x as f64 + 2.0 * y as f64) / period).sin();
            for ch in 0..c {
                let v = img.at(y, x, ch).max(0.0).powf(gamma) + add;
                img.set(y, x, ch, v.clamp(0.0, 1.0));
            }
        }
    }
}

fn blur_2x(img: &mut Image) {
    let src = img.clone();
    for y in 0..img.h {
        for x in 0..img.w {
            for ch in 0..img.c {
                let y2 = (y / 2) * 2;
                let x2 = (x / 2) * 2;
                let mut s = 0.0;
                let mut n = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        if y2 + dy < img.h && x2 + dx < img.w {
                            s += src.at(y2 + dy, x2 + dx, ch);
                            n += 1.0;
                        }
                    }
                }
                img.set(y, x, ch, s / n);
            }
        }
    }
}
