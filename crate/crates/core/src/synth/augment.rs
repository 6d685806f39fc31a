//! Training augmentations and evaluation-time attacks.

use image::{GrayImage, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::TamperSample;
use crate::error::{Error, Result};
use crate::imageio;

/// A training augmentation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AugmentSpec {
    /// Horizontal mirror of image, mask, and boxes.
    Flip,
    /// JPEG re-encode at the given quality.
    Jpeg(u8),
    /// Additive i.i.d. Gaussian noise with this variance (squared pixel
    /// units), clamped to `[0, 255]`.
    GaussianNoise(f64),
}

impl AugmentSpec {
    pub fn parse(text: &str) -> Result<AugmentSpec> {
        if text == "flip" {
            return Ok(AugmentSpec::Flip);
        }
        if let Some(q) = text.strip_prefix("jpeg") {
            let q: u8 = q
                .parse()
                .map_err(|_| Error::invalid(format!("bad augmentation '{text}'")))?;
            return Ok(AugmentSpec::Jpeg(q));
        }
        if let Some(v) = text.strip_prefix("noise") {
            let v: f64 = v
                .parse()
                .map_err(|_| Error::invalid(format!("bad augmentation '{text}'")))?;
            return Ok(AugmentSpec::GaussianNoise(v));
        }
        Err(Error::invalid(format!("unknown augmentation '{text}'")))
    }
}

/// Apply one augmentation to a sample.
pub fn augment<R: Rng>(sample: &TamperSample, spec: AugmentSpec, rng: &mut R) -> Result<TamperSample> {
    let mut out = sample.clone();
    match spec {
        AugmentSpec::Flip => {
            let w = out.image.width() as i32;
            out.image = image::imageops::flip_horizontal(&out.image);
            if let Some(mask) = &out.mask {
                out.mask = Some(image::imageops::flip_horizontal(mask));
            }
            for b in &mut out.boxes {
                let (x1, x2) = (w - b.x2, w - b.x1);
                b.x1 = x1;
                b.x2 = x2;
            }
        }
        AugmentSpec::Jpeg(q) => {
            if !(1..=100).contains(&q) {
                return Err(Error::invalid(format!("jpeg quality {q} outside [1, 100]")));
            }
            out.image = imageio::jpeg_roundtrip(&out.image, q)?;
        }
        AugmentSpec::GaussianNoise(var) => {
            if var < 0.0 {
                return Err(Error::invalid("noise variance must be nonnegative"));
            }
            let normal = Normal::new(0.0, var.sqrt()).unwrap();
            for px in out.image.pixels_mut() {
                for c in 0..3 {
                    let v = px.0[c] as f64 + normal.sample(rng);
                    px.0[c] = v.round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    Ok(out)
}

/// A robustness attack applied to the image under evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AttackSpec {
    Jpeg(u8),
    Resize(f32),
}

impl AttackSpec {
    pub fn parse(text: &str) -> Result<AttackSpec> {
        if let Some(q) = text.strip_prefix("jpeg") {
            let q: u8 = q
                .parse()
                .map_err(|_| Error::invalid(format!("bad attack '{text}'")))?;
            if !(1..=100).contains(&q) {
                return Err(Error::invalid(format!("jpeg quality {q} outside [1, 100]")));
            }
            return Ok(AttackSpec::Jpeg(q));
        }
        if let Some(s) = text.strip_prefix("resize") {
            let s: f32 = s
                .parse()
                .map_err(|_| Error::invalid(format!("bad attack '{text}'")))?;
            if !(s > 0.0 && s <= 1.0) {
                return Err(Error::invalid(format!("resize scale {s} outside (0, 1]")));
            }
            return Ok(AttackSpec::Resize(s));
        }
        Err(Error::invalid(format!("unknown attack '{text}'")))
    }

    /// Report key: `jpeg70`, `resize0.7`, …
    pub fn name(&self) -> String {
        match self {
            AttackSpec::Jpeg(q) => format!("jpeg{q}"),
            AttackSpec::Resize(s) => format!("resize{s}"),
        }
    }
}

/// Attack an image. `resize(1.0)` is the identity, bit for bit.
pub fn attack(image: &RgbImage, spec: AttackSpec) -> Result<RgbImage> {
    match spec {
        AttackSpec::Jpeg(q) => imageio::jpeg_roundtrip(image, q),
        AttackSpec::Resize(s) => {
            if s == 1.0 {
                return Ok(image.clone());
            }
            let w = ((image.width() as f32 * s).round() as u32).max(1);
            let h = ((image.height() as f32 * s).round() as u32).max(1);
            Ok(imageio::resize_rgb(image, w, h))
        }
    }
}

/// Attack a ground-truth mask to match an attacked image's geometry
/// (nearest-neighbor for resize, unchanged otherwise).
pub fn attack_mask(mask: &GrayImage, spec: AttackSpec) -> GrayImage {
    match spec {
        AttackSpec::Resize(s) if s != 1.0 => {
            let w = ((mask.width() as f32 * s).round() as u32).max(1);
            let h = ((mask.height() as f32 * s).round() as u32).max(1);
            imageio::resize_mask(mask, w, h)
        }
        _ => mask.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{LabeledBox, Provenance, Technique};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(side: u32) -> TamperSample {
        let mut img = RgbImage::new(side, side);
        for (x, y, px) in img.enumerate_pixels_mut() {
            px.0 = [(x % 256) as u8, (y % 256) as u8, ((x + y) % 256) as u8];
        }
        let mut mask = GrayImage::new(side, side);
        for y in 0..10 {
            for x in 10..20 {
                mask.put_pixel(x, y, image::Luma([255]));
            }
        }
        TamperSample {
            image: img,
            mask: Some(mask),
            boxes: vec![LabeledBox {
                x1: 10,
                y1: 0,
                x2: 20,
                y2: 10,
                class: "splice".into(),
            }],
            technique: Technique::Splice,
            provenance: Provenance {
                object_id: Some("o".into()),
                background_id: "b".into(),
            },
        }
    }

    #[test]
    fn flip_twice_is_identity() {
        let s = sample(100);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let once = augment(&s, AugmentSpec::Flip, &mut rng).unwrap();
        let twice = augment(&once, AugmentSpec::Flip, &mut rng).unwrap();
        assert_eq!(twice.image, s.image);
        assert_eq!(twice.mask, s.mask);
        assert_eq!(twice.boxes, s.boxes);
    }

    #[test]
    fn flip_box_arithmetic() {
        let s = sample(100);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let flipped = augment(&s, AugmentSpec::Flip, &mut rng).unwrap();
        let b = &flipped.boxes[0];
        assert_eq!((b.x1, b.y1, b.x2, b.y2), (80, 0, 90, 10));
    }

    #[test]
    fn gaussian_noise_has_requested_std() {
        let mut s = sample(256);
        // Mid-gray keeps clamping out of play.
        for px in s.image.pixels_mut() {
            px.0 = [128, 128, 128];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noised = augment(&s, AugmentSpec::GaussianNoise(5.0), &mut rng).unwrap();
        let mut sum = 0f64;
        let mut sum2 = 0f64;
        let mut n = 0f64;
        for (a, b) in noised.image.pixels().zip(s.image.pixels()) {
            for c in 0..3 {
                let d = a.0[c] as f64 - b.0[c] as f64;
                sum += d;
                sum2 += d * d;
                n += 1.0;
            }
        }
        let var = sum2 / n - (sum / n).powi(2);
        let std = var.sqrt();
        let want = 5f64.sqrt();
        assert!(
            (std - want).abs() / want < 0.05,
            "std {std} vs {want} (rounding included)"
        );
    }

    #[test]
    fn invalid_jpeg_quality_rejected() {
        let s = sample(32);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(augment(&s, AugmentSpec::Jpeg(0), &mut rng).is_err());
        assert!(AttackSpec::parse("jpeg101").is_err());
    }

    #[test]
    fn resize_identity_and_halving() {
        let s = sample(128);
        let same = attack(&s.image, AttackSpec::Resize(1.0)).unwrap();
        assert_eq!(same, s.image);
        let half = attack(&s.image, AttackSpec::Resize(0.5)).unwrap();
        assert_eq!(half.dimensions(), (64, 64));
    }

    #[test]
    fn jpeg100_is_high_fidelity() {
        // PSNR of a quality-100 re-encode against the original.
        let dir = std::env::temp_dir().join("tamperlab_aug_test");
        let _ = std::fs::remove_dir_all(&dir);
        let corpus = crate::synth::corpus::generate_corpus(
            &dir,
            1,
            3,
            &crate::synth::corpus::SynthCorpusOptions::default(),
        )
        .unwrap();
        let img = corpus.load_image(&corpus.instances[0]).unwrap();
        let enc = attack(&img, AttackSpec::Jpeg(100)).unwrap();
        let mut mse = 0f64;
        let mut n = 0f64;
        for (a, b) in enc.pixels().zip(img.pixels()) {
            for c in 0..3 {
                let d = a.0[c] as f64 - b.0[c] as f64;
                mse += d * d;
                n += 1.0;
            }
        }
        mse /= n;
        let psnr = 10.0 * (255.0f64 * 255.0 / mse.max(1e-12)).log10();
        assert!(psnr >= 40.0, "psnr {psnr}");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn attack_spec_parsing() {
        assert_eq!(AttackSpec::parse("jpeg70").unwrap(), AttackSpec::Jpeg(70));
        assert_eq!(
            AttackSpec::parse("resize0.7").unwrap(),
            AttackSpec::Resize(0.7)
        );
        assert!(AttackSpec::parse("blur3").is_err());
        assert_eq!(AttackSpec::Resize(0.7).name(), "resize0.7");
    }
}
