//! Image loading/saving and conversions between images and tensors.

use std::path::Path;

use image::imageops::FilterType;
use image::{GrayImage, RgbImage};

use crate::error::Result;
use crate::tensor::Tensor;

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path)?.to_luma8())
}

pub fn save_png(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub fn save_gray_png(path: &Path, img: &GrayImage) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// `3×H×W` tensor of raw pixel values in `[0, 255]`.
pub fn rgb_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        let (x, y) = (x as usize, y as usize);
        for c in 0..3 {
            data[(c * h + y) * w + x] = px.0[c] as f32;
        }
    }
    Tensor::from_vec(&[3, h, w], data).unwrap()
}

/// Inverse of [`rgb_to_tensor`], clamping to `[0, 255]`.
pub fn tensor_to_rgb(t: &Tensor<f32>) -> RgbImage {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let mut img = RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let mut px = [0u8; 3];
            for (c, v) in px.iter_mut().enumerate() {
                *v = t.data()[(c * h + y) * w + x].round().clamp(0.0, 255.0) as u8;
            }
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img
}

/// Bilinear resize.
pub fn resize_rgb(img: &RgbImage, w: u32, h: u32) -> RgbImage {
    image::imageops::resize(img, w, h, FilterType::Triangle)
}

/// Nearest-neighbor resize, for binary masks.
pub fn resize_mask(img: &GrayImage, w: u32, h: u32) -> GrayImage {
    image::imageops::resize(img, w, h, FilterType::Nearest)
}

/// Re-encode as JPEG at the given quality and decode back.
pub fn jpeg_roundtrip(img: &RgbImage, quality: u8) -> Result<RgbImage> {
    let mut bytes = Vec::new();
    let encoder = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut bytes, quality);
    img.write_with_encoder(encoder)?;
    Ok(image::load_from_memory(&bytes)?.to_rgb8())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_roundtrip_preserves_pixels() {
        let mut img = RgbImage::new(4, 3);
        for (i, px) in img.pixels_mut().enumerate() {
            px.0 = [(i * 7 % 256) as u8, (i * 13 % 256) as u8, (i * 29 % 256) as u8];
        }
        let t = rgb_to_tensor(&img);
        assert_eq!(t.shape(), &[3, 3, 4]);
        let back = tensor_to_rgb(&t);
        assert_eq!(back, img);
    }
}
