//! Tactile-image augmentations: Gaussian blur and small random resized crops.
//! Color-style augmentations are deliberately absent; they would alter the
//! force signal itself.

use crate::data::{TactileImage, IMAGE_SIZE, NUM_AXES};
use crate::error::{Result, TdexError};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub blur_prob: f64,
    /// Sigma is drawn uniformly from this range for a 3x3 kernel.
    pub blur_sigma: (f64, f64),
    pub crop_prob: f64,
    /// Area fraction of the square crop, drawn uniformly from this range.
    pub crop_scale: (f64, f64),
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let p_ok = |p: f64| (0.0..=1.0).contains(&p);
        if !p_ok(self.blur_prob) || !p_ok(self.crop_prob) {
            return Err(TdexError::InvalidArg(
                "augment probabilities must be in [0,1]".into(),
            ));
        }
        let (lo, hi) = self.crop_scale;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(TdexError::InvalidArg(
                "crop scale range must satisfy 0 < lo <= hi <= 1".into(),
            ));
        }
        if !(self.blur_sigma.0 > 0.0 && self.blur_sigma.0 <= self.blur_sigma.1) {
            return Err(TdexError::InvalidArg("bad blur sigma range".into()));
        }
        Ok(())
    }

    /// Disables both augmentations (identity transform).
    pub fn off() -> Self {
        AugmentConfig {
            blur_prob: 0.0,
            crop_prob: 0.0,
            ..AugmentConfig::default()
        }
    }
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            blur_prob: 0.5,
            blur_sigma: (1.0, 2.0),
            crop_prob: 0.5,
            crop_scale: (0.9, 1.0),
        }
    }
}

/// Applies blur then crop, each gated by its own probability. RNG draws
/// happen in a fixed order so a seeded stream reproduces exactly.
pub fn augment(image: &TactileImage, cfg: &AugmentConfig, rng: &mut impl Rng) -> TactileImage {
    let mut out = image.clone();
    let do_blur = rng.gen::<f64>() < cfg.blur_prob;
    if do_blur {
        let sigma = rng.gen_range(cfg.blur_sigma.0..=cfg.blur_sigma.1);
        out = gaussian_blur_3x3(&out, sigma);
    }
    let do_crop = rng.gen::<f64>() < cfg.crop_prob;
    if do_crop {
        let area = rng.gen_range(cfg.crop_scale.0..=cfg.crop_scale.1);
        let side = ((IMAGE_SIZE as f64) * area.sqrt()).round().max(1.0) as usize;
        let side = side.min(IMAGE_SIZE);
        let top = rng.gen_range(0..=IMAGE_SIZE - side);
        let left = rng.gen_range(0..=IMAGE_SIZE - side);
        out = resized_crop(&out, top, left, side);
    }
    out
}

/// 3x3 Gaussian blur with reflect-padded borders.
pub(crate) fn gaussian_blur_3x3(image: &TactileImage, sigma: f64) -> TactileImage {
    let mut kernel = [0.0f64; 9];
    let mut sum = 0.0;
    for dr in -1i32..=1 {
        for dc in -1i32..=1 {
            let w = (-((dr * dr + dc * dc) as f64) / (2.0 * sigma * sigma)).exp();
            kernel[((dr + 1) * 3 + dc + 1) as usize] = w;
            sum += w;
        }
    }
    for w in &mut kernel {
        *w /= sum;
    }
    let reflect = |i: i32| -> usize {
        let n = IMAGE_SIZE as i32;
        let r = if i < 0 { -i - 1 } else if i >= n { 2 * n - i - 1 } else { i };
        r as usize
    };
    let mut out = TactileImage::zeros();
    for c in 0..NUM_AXES {
        for r in 0..IMAGE_SIZE {
            for cc in 0..IMAGE_SIZE {
                let mut acc = 0.0;
                for dr in -1i32..=1 {
                    for dc in -1i32..=1 {
                        acc += kernel[((dr + 1) * 3 + dc + 1) as usize]
                            * image.get(c, reflect(r as i32 + dr), reflect(cc as i32 + dc));
                    }
                }
                out.set(c, r, cc, acc);
            }
        }
    }
    out
}

/// Crops a `side` x `side` square at (top, left) and resizes it back to
/// 16x16 with bilinear interpolation (corner-aligned, so side 16 is exact
/// identity).
pub(crate) fn resized_crop(
    image: &TactileImage,
    top: usize,
    left: usize,
    side: usize,
) -> TactileImage {
    let mut out = TactileImage::zeros();
    let scale = if IMAGE_SIZE > 1 {
        (side - 1) as f64 / (IMAGE_SIZE - 1) as f64
    } else {
        0.0
    };
    for c in 0..NUM_AXES {
        for r in 0..IMAGE_SIZE {
            let src_r = r as f64 * scale;
            let r0 = src_r.floor() as usize;
            let r1 = (r0 + 1).min(side - 1);
            let fr = src_r - r0 as f64;
            for cc in 0..IMAGE_SIZE {
                let src_c = cc as f64 * scale;
                let c0 = src_c.floor() as usize;
                let c1 = (c0 + 1).min(side - 1);
                let fc = src_c - c0 as f64;
                let v00 = image.get(c, top + r0, left + c0);
                let v01 = image.get(c, top + r0, left + c1);
                let v10 = image.get(c, top + r1, left + c0);
                let v11 = image.get(c, top + r1, left + c1);
                let v = v00 * (1.0 - fr) * (1.0 - fc)
                    + v01 * (1.0 - fr) * fc
                    + v10 * fr * (1.0 - fc)
                    + v11 * fr * fc;
                out.set(c, r, cc, v);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn noisy_image(seed: u64) -> TactileImage {
        use rand::Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut img = TactileImage::zeros();
        for c in 0..NUM_AXES {
            for r in 0..IMAGE_SIZE {
                for cc in 0..IMAGE_SIZE {
                    img.set(c, r, cc, rng.gen_range(0.0..1.0));
                }
            }
        }
        img
    }

    #[test]
    fn zero_probabilities_are_identity() {
        let img = noisy_image(0);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let out = augment(&img, &AugmentConfig::off(), &mut rng);
        assert_eq!(out, img);
    }

    #[test]
    fn blur_leaves_constant_image_unchanged() {
        let mut img = TactileImage::zeros();
        for c in 0..NUM_AXES {
            for r in 0..IMAGE_SIZE {
                for cc in 0..IMAGE_SIZE {
                    img.set(c, r, cc, 0.7);
                }
            }
        }
        let out = gaussian_blur_3x3(&img, 1.5);
        for (a, b) in out.pixels().iter().zip(img.pixels()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_preserves_mass_roughly() {
        let img = noisy_image(2);
        let out = gaussian_blur_3x3(&img, 1.0);
        let sum_in: f64 = img.pixels().iter().sum();
        let sum_out: f64 = out.pixels().iter().sum();
        // reflect padding keeps total mass nearly constant
        assert!((sum_in - sum_out).abs() / sum_in < 0.01);
    }

    #[test]
    fn full_scale_crop_is_identity() {
        let img = noisy_image(3);
        let out = resized_crop(&img, 0, 0, IMAGE_SIZE);
        assert_eq!(out, img);
    }

    #[test]
    fn crop_interpolates_within_range() {
        let img = noisy_image(4);
        let out = resized_crop(&img, 1, 0, 15);
        let lo = img.pixels().iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = img.pixels().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(out.pixels().iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
    }

    #[test]
    fn seeded_augment_is_deterministic() {
        let img = noisy_image(5);
        let cfg = AugmentConfig::default();
        let a = augment(&img, &cfg, &mut ChaCha12Rng::seed_from_u64(9));
        let b = augment(&img, &cfg, &mut ChaCha12Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn config_validation() {
        assert!(AugmentConfig::default().validate().is_ok());
        let bad = AugmentConfig {
            blur_prob: 1.5,
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AugmentConfig {
            crop_scale: (0.0, 1.0),
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
