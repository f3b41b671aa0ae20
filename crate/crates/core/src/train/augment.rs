use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::Image;

#[derive(Debug, Clone, Copy)]
pub struct AugmentConfig {
    /// Horizontal flip with probability 0.5.
    pub flip: bool,
    /// Zero-pad by `pad` then crop back at a random offset.
    pub crop: bool,
    pub pad: usize,
    /// Erase a random rectangle (refilled with uniform noise) with
    /// probability 0.5.
    pub erase: bool,
    pub erase_area: (f64, f64),
    pub erase_aspect: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip: true,
            crop: true,
            pad: 4,
            erase: true,
            erase_area: (0.02, 0.4),
            erase_aspect: (0.3, 3.3),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        AugmentConfig {
            flip: false,
            crop: false,
            erase: false,
            ..AugmentConfig::default()
        }
    }
}

pub fn flip_horizontal(img: &Image) -> Image {
    let mut out = Image::zeros(img.h, img.w, img.c);
    for y in 0..img.h {
        for x in 0..img.w {
            for ch in 0..img.c {
                out.set(y, x, ch, img.at(y, img.w - 1 - x, ch));
            }
        }
    }
    out
}

/// Zero-pad by `pad` on every side, then crop the original size back at a
/// random offset.
pub fn pad_random_crop(img: &Image, pad: usize, rng: &mut ChaCha8Rng) -> Image {
    if pad == 0 {
        return img.clone();
    }
    let oy = rng.random_range(0..=2 * pad) as isize - pad as isize;
    let ox = rng.random_range(0..=2 * pad) as isize - pad as isize;
    let mut out = Image::zeros(img.h, img.w, img.c);
    for y in 0..img.h {
        for x in 0..img.w {
            let sy = y as isize + oy;
            let sx = x as isize + ox;
            if sy >= 0 && sy < img.h as isize && sx >= 0 && sx < img.w as isize {
                for ch in 0..img.c {
                    out.set(y, x, ch, img.at(sy as usize, sx as usize, ch));
                }
            }
        }
    }
    out
}

/// Erase one rectangle whose area and aspect ratio are drawn from the
/// configured ranges, refilled with per-pixel uniform noise. Falls back to
/// the untouched image when no geometry fits after a few tries.
pub fn random_erase(img: &Image, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Image {
    let total = (img.h * img.w) as f64;
    for _ in 0..10 {
        let area = total * rng.random_range(cfg.erase_area.0..cfg.erase_area.1);
        let aspect = rng.random_range(cfg.erase_aspect.0..cfg.erase_aspect.1);
        let eh = (area * aspect).sqrt().round() as usize;
        let ew = (area / aspect).sqrt().round() as usize;
        if eh == 0 || ew == 0 || eh > img.h || ew > img.w {
            continue;
        }
        let y0 = rng.random_range(0..=img.h - eh);
        let x0 = rng.random_range(0..=img.w - ew);
        let mut out = img.clone();
        for y in y0..y0 + eh {
            for x in x0..x0 + ew {
                for ch in 0..img.c {
                    out.set(y, x, ch, rng.random_range(0.0..1.0));
                }
            }
        }
        return out;
    }
    img.clone()
}

/// Apply the enabled augmentations in a fixed order: flip, crop, erase.
/// Every random draw comes from the caller's rng, so a seeded run is
/// reproducible.
pub fn augment(img: &Image, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Image {
    let mut out = img.clone();
    if cfg.flip && rng.random_range(0.0..1.0) < 0.5 {
        out = flip_horizontal(&out);
    }
    if cfg.crop {
        out = pad_random_crop(&out, cfg.pad, rng);
    }
    if cfg.erase && rng.random_range(0.0..1.0) < 0.5 {
        out = random_erase(&out, cfg, rng);
    }
    out
}
