//! Fixed high-pass residual filters ("SRM" filters) for the noise stream.
//!
//! Three 5×5 filter patterns, each a zero-sum second-order residual, are
//! applied to all three input channels (weight 1/3 each) to produce a
//! 3-channel local-noise map. Outputs are truncated to `[-T, T]`. The layer
//! is fixed: it never trains.

use image::RgbImage;

use crate::error::{Error, Result};
use crate::imageio;
use crate::tensor::{ops, Tensor};

/// Default truncation bound applied after filtering.
pub const DEFAULT_TRUNCATION: f32 = 3.0;

/// The 5×5 filter patterns, already divided by their normalizers.
///
/// Pattern 0: 3×3 second-order square residual (÷4), zero-framed to 5×5.
/// Pattern 1: full 5×5 second-order residual (÷12).
/// Pattern 2: horizontal second difference `[1 −2 1]` (÷2), centered.
pub fn srm_patterns() -> [[[f32; 5]; 5]; 3] {
    let mut p0 = [[0.0f32; 5]; 5];
    let square3 = [[-1.0, 2.0, -1.0], [2.0, -4.0, 2.0], [-1.0, 2.0, -1.0]];
    for y in 0..3 {
        for x in 0..3 {
            p0[y + 1][x + 1] = square3[y][x] / 4.0;
        }
    }

    let square5 = [
        [-1.0, 2.0, -2.0, 2.0, -1.0],
        [2.0, -6.0, 8.0, -6.0, 2.0],
        [-2.0, 8.0, -12.0, 8.0, -2.0],
        [2.0, -6.0, 8.0, -6.0, 2.0],
        [-1.0, 2.0, -2.0, 2.0, -1.0],
    ];
    let mut p1 = [[0.0f32; 5]; 5];
    for y in 0..5 {
        for x in 0..5 {
            p1[y][x] = square5[y][x] / 12.0;
        }
    }

    let mut p2 = [[0.0f32; 5]; 5];
    p2[2][1] = 1.0 / 2.0;
    p2[2][2] = -2.0 / 2.0;
    p2[2][3] = 1.0 / 2.0;

    [p0, p1, p2]
}

/// The three 5×5×3 residual kernels plus the truncation bound.
#[derive(Clone, Debug)]
pub struct SrmKernelBank {
    kernels: Tensor<f32>,
    pub truncation: f32,
}

/// The three fixed kernels: output channel `o` applies pattern `o` to each
/// input channel with weight 1/3 and sums.
pub fn srm_kernel_bank() -> SrmKernelBank {
    SrmKernelBank::with_truncation(DEFAULT_TRUNCATION)
}

impl SrmKernelBank {
    pub fn with_truncation(truncation: f32) -> Self {
        let patterns = srm_patterns();
        let mut data = vec![0f32; 3 * 3 * 5 * 5];
        for (o, pattern) in patterns.iter().enumerate() {
            for i in 0..3 {
                for y in 0..5 {
                    for x in 0..5 {
                        data[((o * 3 + i) * 5 + y) * 5 + x] = pattern[y][x] / 3.0;
                    }
                }
            }
        }
        SrmKernelBank {
            kernels: Tensor::from_vec(&[3, 3, 5, 5], data).unwrap(),
            truncation,
        }
    }

    /// The kernels as a `3×3×5×5` convolution weight tensor.
    pub fn kernels(&self) -> &Tensor<f32> {
        &self.kernels
    }
}

/// 3×H×W map of truncated local noise residuals, same spatial size as the
/// input image.
#[derive(Clone, Debug)]
pub struct NoiseMap {
    pub tensor: Tensor<f32>,
}

impl NoiseMap {
    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }
}

/// Filter an image tensor (`3×H×W`, values in `[0, 255]`) into a noise map:
/// stride-1 zero-padded convolution with the fixed bank, then clamp to
/// `[-T, T]`. Images smaller than the kernel are rejected.
pub fn apply_srm_tensor(image: &Tensor<f32>, bank: &SrmKernelBank) -> Result<NoiseMap> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::shape(
            "apply_srm",
            format!("expected 3×H×W image tensor, got {shape:?}"),
        ));
    }
    let (h, w) = (shape[1], shape[2]);
    if h < 5 || w < 5 {
        return Err(Error::invalid(format!(
            "apply_srm: image {h}×{w} is smaller than the 5×5 kernels"
        )));
    }
    let bias = Tensor::zeros(&[3]);
    let mut out = ops::conv2d_forward(image, &bank.kernels, &bias, 1, 2)?;
    let t = bank.truncation;
    for v in out.data_mut() {
        *v = v.clamp(-t, t);
    }
    Ok(NoiseMap { tensor: out })
}

/// Convenience wrapper over [`apply_srm_tensor`] for decoded images.
pub fn apply_srm(image: &RgbImage, bank: &SrmKernelBank) -> Result<NoiseMap> {
    apply_srm_tensor(&imageio::rgb_to_tensor(image), bank)
}

/// Render a noise map as an RGB image, mapping `[-T, T]` linearly to
/// `[0, 255]` per channel.
pub fn noise_map_to_image(map: &NoiseMap, truncation: f32) -> RgbImage {
    let (h, w) = (map.height(), map.width());
    let mut img = RgbImage::new(w as u32, h as u32);
    let data = map.tensor.data();
    for y in 0..h {
        for x in 0..w {
            let mut px = [0u8; 3];
            for (c, v) in px.iter_mut().enumerate() {
                let raw = data[(c * h + y) * w + x];
                *v = (((raw + truncation) / (2.0 * truncation)) * 255.0)
                    .round()
                    .clamp(0.0, 255.0) as u8;
            }
            img.put_pixel(x as u32, y as u32, image::Rgb(px));
        }
    }
    img
}

/// Mean absolute residual inside/outside a mask, skipping a border of
/// `margin` pixels around the image edge and around the mask boundary.
/// Returns `(inside_mean, outside_mean)`.
pub fn residual_energy_split(
    map: &NoiseMap,
    mask: &[bool],
    margin: usize,
) -> (f64, f64) {
    let (h, w) = (map.height(), map.width());
    debug_assert_eq!(mask.len(), h * w);
    // Distance-to-boundary test by brute scan over the margin window.
    let interior = |x: usize, y: usize, want: bool| -> bool {
        let x0 = x.saturating_sub(margin);
        let y0 = y.saturating_sub(margin);
        let x1 = (x + margin).min(w - 1);
        let y1 = (y + margin).min(h - 1);
        for yy in y0..=y1 {
            for xx in x0..=x1 {
                if mask[yy * w + xx] != want {
                    return false;
                }
            }
        }
        true
    };
    let data = map.tensor.data();
    let (mut in_sum, mut in_n, mut out_sum, mut out_n) = (0f64, 0usize, 0f64, 0usize);
    for y in margin..h - margin {
        for x in margin..w - margin {
            let inside = mask[y * w + x];
            if !interior(x, y, inside) {
                continue;
            }
            let mag: f64 = (0..3)
                .map(|c| data[(c * h + y) * w + x].abs() as f64)
                .sum::<f64>()
                / 3.0;
            if inside {
                in_sum += mag;
                in_n += 1;
            } else {
                out_sum += mag;
                out_n += 1;
            }
        }
    }
    (
        if in_n > 0 { in_sum / in_n as f64 } else { 0.0 },
        if out_n > 0 { out_sum / out_n as f64 } else { 0.0 },
    )
}
