//! The three tampering operations: splice, copy-move, removal.

use image::{GrayImage, RgbImage};

use super::mask::{component_boxes, fits_inside, mask_area, overlap_area, translate_mask};
use super::{LabeledBox, Provenance, TamperSample, Technique};
use crate::error::{Error, Result};

/// Size/placement limits for generated tampers. Fractions are relative to
/// the target image area.
#[derive(Clone, Copy, Debug)]
pub struct TamperLimits {
    pub min_area_frac: f64,
    pub max_area_frac: f64,
    /// Copy-move: maximum fraction of the object overlapping its origin.
    pub max_copy_overlap: f64,
    /// Removal: maximum mask fraction of the image.
    pub max_removal_frac: f64,
    /// Blend one boundary pixel of pasted regions.
    pub feather: bool,
}

impl Default for TamperLimits {
    fn default() -> Self {
        TamperLimits {
            min_area_frac: 0.01,
            max_area_frac: 0.50,
            max_copy_overlap: 0.20,
            max_removal_frac: 0.30,
            feather: false,
        }
    }
}

fn boxes_from_mask(mask: &GrayImage, technique: Technique) -> Vec<LabeledBox> {
    component_boxes(mask)
        .into_iter()
        .map(|(x1, y1, x2, y2)| LabeledBox {
            x1: x1 as i32,
            y1: y1 as i32,
            x2: x2 as i32,
            y2: y2 as i32,
            class: technique.as_str().to_string(),
        })
        .collect()
}

/// True at set pixels that touch an unset 4-neighbor (or the canvas edge).
fn boundary_pixels(mask: &GrayImage) -> Vec<(u32, u32)> {
    let (w, h) = mask.dimensions();
    let mut out = Vec::new();
    for (x, y, p) in mask.enumerate_pixels() {
        if p.0[0] == 0 {
            continue;
        }
        let edge = x == 0 || y == 0 || x == w - 1 || y == h - 1;
        let open = edge
            || mask.get_pixel(x - 1, y).0[0] == 0
            || mask.get_pixel(x + 1, y).0[0] == 0
            || mask.get_pixel(x, y - 1).0[0] == 0
            || mask.get_pixel(x, y + 1).0[0] == 0;
        if open {
            out.push((x, y));
        }
    }
    out
}

fn feather_boundary(image: &mut RgbImage, original: &RgbImage, mask: &GrayImage) {
    for (x, y) in boundary_pixels(mask) {
        let pasted = image.get_pixel(x, y).0;
        let under = original.get_pixel(x, y).0;
        let mut blended = [0u8; 3];
        for c in 0..3 {
            blended[c] = ((pasted[c] as u16 + under[c] as u16) / 2) as u8;
        }
        image.put_pixel(x, y, image::Rgb(blended));
    }
}

/// Paste the masked object from a source image onto a target image at the
/// given translation. The mask after translation must stay fully inside the
/// target and occupy between `min_area_frac` and `max_area_frac` of it;
/// violations return the retry signal.
pub fn make_splice(
    source_image: &RgbImage,
    source_mask: &GrayImage,
    object_id: &str,
    target: &RgbImage,
    target_background_id: &str,
    translation: (i64, i64),
    limits: &TamperLimits,
) -> Result<TamperSample> {
    if source_image.dimensions() != source_mask.dimensions() {
        return Err(Error::invalid("make_splice: mask/image size mismatch"));
    }
    let area = mask_area(source_mask);
    let target_area = (target.width() * target.height()) as f64;
    let frac = area as f64 / target_area;
    if frac < limits.min_area_frac || frac > limits.max_area_frac {
        return Err(Error::Retry(format!(
            "splice object covers {:.3} of target, want [{}, {}]",
            frac, limits.min_area_frac, limits.max_area_frac
        )));
    }

    let (tw, th) = target.dimensions();
    let mut out = target.clone();
    let mut pasted_mask = GrayImage::new(tw, th);
    for (x, y, p) in source_mask.enumerate_pixels() {
        if p.0[0] == 0 {
            continue;
        }
        let nx = x as i64 + translation.0;
        let ny = y as i64 + translation.1;
        if nx < 0 || ny < 0 || nx as u32 >= tw || ny as u32 >= th {
            return Err(Error::Retry("splice placement leaves the target".into()));
        }
        out.put_pixel(nx as u32, ny as u32, *source_image.get_pixel(x, y));
        pasted_mask.put_pixel(nx as u32, ny as u32, image::Luma([255]));
    }
    if limits.feather {
        feather_boundary(&mut out, target, &pasted_mask);
    }
    let boxes = boxes_from_mask(&pasted_mask, Technique::Splice);
    Ok(TamperSample {
        image: out,
        mask: Some(pasted_mask),
        boxes,
        technique: Technique::Splice,
        provenance: Provenance {
            object_id: Some(object_id.to_string()),
            background_id: target_background_id.to_string(),
        },
    })
}

/// Duplicate the masked region within the same image at the given offset.
/// The pasted mask must stay inside the image and overlap its origin by
/// less than `max_copy_overlap` of the object area; the ground truth marks
/// the pasted region only.
pub fn make_copy_move(
    image: &RgbImage,
    object_mask: &GrayImage,
    object_id: &str,
    background_id: &str,
    offset: (i64, i64),
    limits: &TamperLimits,
) -> Result<TamperSample> {
    if offset == (0, 0) {
        return Err(Error::Retry("copy-move offset is zero".into()));
    }
    let area = mask_area(object_mask);
    if area == 0 {
        return Err(Error::Retry("copy-move object mask is empty".into()));
    }
    let image_area = (image.width() * image.height()) as f64;
    let frac = area as f64 / image_area;
    if frac < limits.min_area_frac || frac > limits.max_area_frac {
        return Err(Error::Retry(format!(
            "copy-move object covers {frac:.3} of image"
        )));
    }
    let translated = translate_mask(object_mask, offset.0, offset.1);
    if mask_area(&translated) != area || !fits_inside(&translated, 0) {
        return Err(Error::Retry("copy-move placement leaves the image".into()));
    }
    let overlap = overlap_area(object_mask, &translated) as f64 / area as f64;
    if overlap >= limits.max_copy_overlap {
        return Err(Error::Retry(format!(
            "copy-move overlap {overlap:.2} exceeds limit"
        )));
    }
    let mut out = image.clone();
    for (x, y, p) in object_mask.enumerate_pixels() {
        if p.0[0] > 0 {
            let nx = (x as i64 + offset.0) as u32;
            let ny = (y as i64 + offset.1) as u32;
            out.put_pixel(nx, ny, *image.get_pixel(x, y));
        }
    }
    if limits.feather {
        feather_boundary(&mut out, image, &translated);
    }
    let boxes = boxes_from_mask(&translated, Technique::CopyMove);
    Ok(TamperSample {
        image: out,
        mask: Some(translated),
        boxes,
        technique: Technique::CopyMove,
        provenance: Provenance {
            object_id: Some(object_id.to_string()),
            background_id: background_id.to_string(),
        },
    })
}

/// Erase the masked region and fill it by iterative neighbor diffusion:
/// Jacobi sweeps averaging known 4-neighbors until the hole is filled, then
/// a 3×3 box blur inside the mask.
pub fn make_removal(
    image: &RgbImage,
    object_mask: &GrayImage,
    object_id: &str,
    background_id: &str,
    limits: &TamperLimits,
) -> Result<TamperSample> {
    let (w, h) = image.dimensions();
    let area = mask_area(object_mask);
    if area == 0 {
        return Err(Error::Retry("removal mask is empty".into()));
    }
    let frac = area as f64 / (w * h) as f64;
    if frac > limits.max_removal_frac {
        return Err(Error::Retry(format!(
            "removal mask covers {frac:.3} of image, limit {}",
            limits.max_removal_frac
        )));
    }
    if area == (w * h) as usize {
        return Err(Error::invalid("removal mask covers the whole image"));
    }

    let filled = diffuse_fill(image, object_mask);
    let boxes = boxes_from_mask(object_mask, Technique::Removal);
    Ok(TamperSample {
        image: filled,
        mask: Some(object_mask.clone()),
        boxes,
        technique: Technique::Removal,
        provenance: Provenance {
            object_id: Some(object_id.to_string()),
            background_id: background_id.to_string(),
        },
    })
}

/// The diffusion fill itself, exposed for oracle comparison in tests.
pub fn diffuse_fill(image: &RgbImage, mask: &GrayImage) -> RgbImage {
    let (w, h) = image.dimensions();
    let (wi, hi) = (w as usize, h as usize);
    let mut values = vec![[0f32; 3]; wi * hi];
    let mut known = vec![false; wi * hi];
    for (x, y, p) in image.enumerate_pixels() {
        let i = y as usize * wi + x as usize;
        known[i] = mask.get_pixel(x, y).0[0] == 0;
        values[i] = [p.0[0] as f32, p.0[1] as f32, p.0[2] as f32];
    }

    // Jacobi onion peel: each sweep fills pixels adjacent to the previous
    // sweep's known set.
    loop {
        let mut updates: Vec<(usize, [f32; 3])> = Vec::new();
        for y in 0..hi {
            for x in 0..wi {
                let i = y * wi + x;
                if known[i] {
                    continue;
                }
                let mut acc = [0f32; 3];
                let mut n = 0u32;
                let mut consider = |j: usize| {
                    if known[j] {
                        for c in 0..3 {
                            acc[c] += values[j][c];
                        }
                        n += 1;
                    }
                };
                if x > 0 {
                    consider(i - 1);
                }
                if x + 1 < wi {
                    consider(i + 1);
                }
                if y > 0 {
                    consider(i - wi);
                }
                if y + 1 < hi {
                    consider(i + wi);
                }
                if n > 0 {
                    updates.push((i, [acc[0] / n as f32, acc[1] / n as f32, acc[2] / n as f32]));
                }
            }
        }
        if updates.is_empty() {
            break;
        }
        for (i, v) in updates {
            values[i] = v;
            known[i] = true;
        }
        if known.iter().all(|&k| k) {
            break;
        }
    }

    // 3×3 box blur inside the mask, reading the diffused field.
    let snapshot = values.clone();
    for y in 0..hi {
        for x in 0..wi {
            if mask.get_pixel(x as u32, y as u32).0[0] == 0 {
                continue;
            }
            let mut acc = [0f32; 3];
            let mut n = 0u32;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx as usize >= wi || ny as usize >= hi {
                        continue;
                    }
                    let j = ny as usize * wi + nx as usize;
                    for c in 0..3 {
                        acc[c] += snapshot[j][c];
                    }
                    n += 1;
                }
            }
            values[y * wi + x] = [acc[0] / n as f32, acc[1] / n as f32, acc[2] / n as f32];
        }
    }

    let mut out = image.clone();
    for (x, y, p) in out.enumerate_pixels_mut() {
        if mask.get_pixel(x, y).0[0] > 0 {
            let v = values[y as usize * wi + x as usize];
            p.0 = [
                v[0].round().clamp(0.0, 255.0) as u8,
                v[1].round().clamp(0.0, 255.0) as u8,
                v[2].round().clamp(0.0, 255.0) as u8,
            ];
        }
    }
    out
}
