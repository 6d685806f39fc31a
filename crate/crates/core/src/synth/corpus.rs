//! Source corpora: a directory of images plus a JSON index of object
//! instances, and a procedural corpus generator for self-contained runs.

use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::mask::rasterize_polygon;
use crate::error::{Error, Result};
use crate::imageio;

/// Either a mask image path (relative to the corpus root) or a polygon.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MaskSpec {
    Png(String),
    Polygon(Vec<[f32; 2]>),
}

/// One object instance in the corpus index.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorpusInstance {
    pub image: String,
    pub background_id: String,
    pub object_id: String,
    pub mask: MaskSpec,
}

/// A corpus rooted at a directory with an `index.json` instance list.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub root: PathBuf,
    pub instances: Vec<CorpusInstance>,
}

impl Corpus {
    pub fn load(root: &Path) -> Result<Corpus> {
        let index_path = root.join("index.json");
        let text = std::fs::read_to_string(&index_path)?;
        let instances: Vec<CorpusInstance> = serde_json::from_str(&text)
            .map_err(|e| Error::invalid(format!("{}: {e}", index_path.display())))?;
        if instances.is_empty() {
            return Err(Error::invalid(format!(
                "{}: corpus index is empty",
                index_path.display()
            )));
        }
        Ok(Corpus {
            root: root.to_path_buf(),
            instances,
        })
    }

    pub fn load_image(&self, inst: &CorpusInstance) -> Result<RgbImage> {
        imageio::load_rgb(&self.root.join(&inst.image))
    }

    /// Decode or rasterize the instance's mask at the image's size.
    pub fn load_mask(&self, inst: &CorpusInstance, image: &RgbImage) -> Result<GrayImage> {
        match &inst.mask {
            MaskSpec::Png(rel) => {
                let m = imageio::load_gray(&self.root.join(rel))?;
                if m.dimensions() != image.dimensions() {
                    return Err(Error::invalid(format!(
                        "mask {} is {:?}, image is {:?}",
                        rel,
                        m.dimensions(),
                        image.dimensions()
                    )));
                }
                Ok(m)
            }
            MaskSpec::Polygon(points) => {
                Ok(rasterize_polygon(image.width(), image.height(), points))
            }
        }
    }
}

/// Knobs for the procedural corpus generator.
#[derive(Clone, Debug)]
pub struct SynthCorpusOptions {
    pub side: u32,
    pub objects_per_image: (usize, usize),
    /// Per-image sensor noise σ drawn uniformly from this range.
    pub noise_sigma: (f64, f64),
    /// Object ellipse radii in pixels.
    pub radius: (f32, f32),
}

impl Default for SynthCorpusOptions {
    fn default() -> Self {
        SynthCorpusOptions {
            side: 128,
            objects_per_image: (2, 4),
            noise_sigma: (0.0, 2.0),
            radius: (12.0, 26.0),
        }
    }
}

fn smooth_background<R: Rng>(side: u32, rng: &mut R) -> RgbImage {
    let mut base = [0f32; 3];
    let mut gx = [0f32; 3];
    let mut gy = [0f32; 3];
    for c in 0..3 {
        base[c] = rng.gen_range(60.0..190.0);
        gx[c] = rng.gen_range(-0.4..0.4);
        gy[c] = rng.gen_range(-0.4..0.4);
    }
    // A few wide radial bumps for low-frequency texture.
    let n_bumps = rng.gen_range(2..5);
    let bumps: Vec<(f32, f32, f32, [f32; 3])> = (0..n_bumps)
        .map(|_| {
            let cx = rng.gen_range(0.0..side as f32);
            let cy = rng.gen_range(0.0..side as f32);
            let r = rng.gen_range(side as f32 * 0.3..side as f32 * 0.9);
            let mut amp = [0f32; 3];
            for a in amp.iter_mut() {
                *a = rng.gen_range(-25.0..25.0);
            }
            (cx, cy, r, amp)
        })
        .collect();
    let mut img = RgbImage::new(side, side);
    for (x, y, px) in img.enumerate_pixels_mut() {
        for c in 0..3 {
            let mut v = base[c] + gx[c] * x as f32 + gy[c] * y as f32;
            for (cx, cy, r, amp) in &bumps {
                let d2 = (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2);
                v += amp[c] * (-d2 / (r * r)).exp();
            }
            px.0[c] = v.clamp(0.0, 255.0) as u8;
        }
    }
    img
}

fn add_sensor_noise<R: Rng>(img: &mut RgbImage, sigma: f64, rng: &mut R) {
    if sigma <= 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).unwrap();
    for px in img.pixels_mut() {
        for c in 0..3 {
            let v = px.0[c] as f64 + normal.sample(rng);
            px.0[c] = v.clamp(0.0, 255.0) as u8;
        }
    }
}

fn ellipse_mask(side: u32, cx: f32, cy: f32, rx: f32, ry: f32, rot: f32) -> GrayImage {
    let (sin, cos) = rot.sin_cos();
    let mut mask = GrayImage::new(side, side);
    for y in 0..side {
        for x in 0..side {
            let dx = x as f32 + 0.5 - cx;
            let dy = y as f32 + 0.5 - cy;
            let u = (dx * cos + dy * sin) / rx;
            let v = (-dx * sin + dy * cos) / ry;
            if u * u + v * v <= 1.0 {
                mask.put_pixel(x, y, image::Luma([255]));
            }
        }
    }
    mask
}

/// Generate `n_images` textured images with labelled ellipse objects into
/// `dir` (images/, masks/, index.json). Deterministic for a given seed.
pub fn generate_corpus(
    dir: &Path,
    n_images: usize,
    seed: u64,
    opts: &SynthCorpusOptions,
) -> Result<Corpus> {
    std::fs::create_dir_all(dir.join("images"))?;
    std::fs::create_dir_all(dir.join("masks"))?;
    let side = opts.side;
    let mut instances: Vec<CorpusInstance> = Vec::new();
    for i in 0..n_images {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        let mut img = smooth_background(side, &mut rng);
        let n_objects = rng.gen_range(opts.objects_per_image.0..=opts.objects_per_image.1);
        let image_rel = format!("images/img_{i:04}.png");
        let bg_id = format!("bg_{i:04}");
        for o in 0..n_objects {
            let rx = rng.gen_range(opts.radius.0..opts.radius.1);
            let ry = rng.gen_range(opts.radius.0..opts.radius.1);
            let margin = rx.max(ry) + 3.0;
            let cx = rng.gen_range(margin..side as f32 - margin);
            let cy = rng.gen_range(margin..side as f32 - margin);
            let rot = rng.gen_range(0.0..std::f32::consts::PI);
            let mask = ellipse_mask(side, cx, cy, rx, ry, rot);
            // Flat-ish object color with a soft radial shade.
            let mut color = [0f32; 3];
            for c in color.iter_mut() {
                *c = rng.gen_range(30.0..225.0);
            }
            for (x, y, px) in img.enumerate_pixels_mut() {
                if mask.get_pixel(x, y).0[0] > 0 {
                    let d = ((x as f32 - cx).powi(2) + (y as f32 - cy).powi(2)).sqrt();
                    let shade = 1.0 - 0.25 * d / rx.max(ry);
                    for c in 0..3 {
                        px.0[c] = (color[c] * shade).clamp(0.0, 255.0) as u8;
                    }
                }
            }
            let mask_rel = format!("masks/img_{i:04}_obj{o}.png");
            imageio::save_gray_png(&dir.join(&mask_rel), &mask)?;
            instances.push(CorpusInstance {
                image: image_rel.clone(),
                background_id: bg_id.clone(),
                object_id: format!("obj_{i:04}_{o}"),
                mask: MaskSpec::Png(mask_rel),
            });
        }
        let sigma = rng.gen_range(opts.noise_sigma.0..=opts.noise_sigma.1);
        add_sensor_noise(&mut img, sigma, &mut rng);
        imageio::save_png(&dir.join(&image_rel), &img)?;
    }
    let index = serde_json::to_string_pretty(&instances)
        .map_err(|e| Error::invalid(format!("index serialization: {e}")))?;
    std::fs::write(dir.join("index.json"), index)?;
    Ok(Corpus {
        root: dir.to_path_buf(),
        instances,
    })
}
