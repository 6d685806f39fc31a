//! Forward/backward kernels behind the tape ops.
//!
//! These are pure functions so the fixed-filter layer and the inference path
//! can call them without recording. Per-output accumulation order is part of
//! the contract: bias first, then ascending (channel, ky, kx) — the
//! nested-loop reference in the tests reproduces it bitwise in `f64`.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Output spatial size of a convolution: `(dim + 2*pad - k)/stride + 1`.
/// Errors unless the division is exact.
pub fn conv_out_dim(dim: usize, k: usize, stride: usize, pad: usize) -> Result<usize> {
    let span = dim + 2 * pad;
    if span < k {
        return Err(Error::shape(
            "conv2d",
            format!("kernel size {k} exceeds padded input extent {span}"),
        ));
    }
    let num = span - k;
    if num % stride != 0 {
        return Err(Error::shape(
            "conv2d",
            format!("extent {span} with kernel {k} not divisible by stride {stride}"),
        ));
    }
    Ok(num / stride + 1)
}

fn check_conv_shapes<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<()> {
    if input.shape().len() != 3 {
        return Err(Error::shape(
            "conv2d",
            format!("input must be C×H×W, got rank {}", input.shape().len()),
        ));
    }
    if kernels.shape().len() != 4 {
        return Err(Error::shape(
            "conv2d",
            format!("kernels must be Cout×Cin×k×k, got rank {}", kernels.shape().len()),
        ));
    }
    let (c_in, kc_in) = (input.shape()[0], kernels.shape()[1]);
    if c_in != kc_in {
        return Err(Error::shape(
            "conv2d",
            format!("input channels {c_in} != kernel input channels {kc_in}"),
        ));
    }
    let (kh, kw) = (kernels.shape()[2], kernels.shape()[3]);
    if kh != kw {
        return Err(Error::shape("conv2d", format!("kernel must be square, got {kh}×{kw}")));
    }
    if kh % 2 == 0 {
        return Err(Error::shape("conv2d", format!("kernel size {kh} must be odd")));
    }
    if bias.shape() != [kernels.shape()[0]] {
        return Err(Error::shape(
            "conv2d",
            format!(
                "bias length {:?} != output channels {}",
                bias.shape(),
                kernels.shape()[0]
            ),
        ));
    }
    Ok(())
}

/// Zero-pad a C×H×W tensor by `pad` on each spatial side.
fn pad_input<T: Scalar>(input: &Tensor<T>, pad: usize) -> (Vec<T>, usize, usize) {
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);
    let mut out = vec![T::zero(); c * hp * wp];
    let src = input.data();
    for ci in 0..c {
        for y in 0..h {
            let dst_off = (ci * hp + y + pad) * wp + pad;
            let src_off = (ci * h + y) * w;
            out[dst_off..dst_off + w].copy_from_slice(&src[src_off..src_off + w]);
        }
    }
    (out, hp, wp)
}

/// Cross-correlation with zero padding. Input C×H×W, kernels Cout×Cin×k×k,
/// bias Cout; output Cout×H'×W'.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    check_conv_shapes(input, kernels, bias)?;
    if stride == 0 {
        return Err(Error::invalid("conv2d: stride must be positive"));
    }
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, k) = (kernels.shape()[0], kernels.shape()[2]);
    let h_out = conv_out_dim(h, k, stride, pad)?;
    let w_out = conv_out_dim(w, k, stride, pad)?;

    let (padded, _hp, wp) = pad_input(input, pad);
    let kdata = kernels.data();
    let bdata = bias.data();
    let mut out = vec![T::zero(); c_out * h_out * w_out];

    for co in 0..c_out {
        let plane = &mut out[co * h_out * w_out..(co + 1) * h_out * w_out];
        for v in plane.iter_mut() {
            *v = bdata[co];
        }
        for ci in 0..c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let kv = kdata[((co * c_in + ci) * k + ky) * k + kx];
                    if kv == T::zero() {
                        continue;
                    }
                    for y in 0..h_out {
                        let in_row = (ci * (h + 2 * pad) + y * stride + ky) * wp + kx;
                        let out_row = y * w_out;
                        if stride == 1 {
                            let src = &padded[in_row..in_row + w_out];
                            let dst = &mut plane[out_row..out_row + w_out];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += kv * *s;
                            }
                        } else {
                            for x in 0..w_out {
                                plane[out_row + x] += kv * padded[in_row + x * stride];
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::from_vec(&[c_out, h_out, w_out], out)
}

/// Gradients of [`conv2d_forward`] for input, kernels, and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    pad: usize,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (c_in, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (c_out, k) = (kernels.shape()[0], kernels.shape()[2]);
    let (h_out, w_out) = (grad_out.shape()[1], grad_out.shape()[2]);
    let (hp, wp) = (h + 2 * pad, w + 2 * pad);

    let (padded, _, _) = pad_input(input, pad);
    let kdata = kernels.data();
    let gout = grad_out.data();

    let mut g_bias = vec![T::zero(); c_out];
    let mut g_kernels = vec![T::zero(); kernels.numel()];
    let mut g_padded = vec![T::zero(); c_in * hp * wp];

    for co in 0..c_out {
        let gplane = &gout[co * h_out * w_out..(co + 1) * h_out * w_out];
        g_bias[co] = gplane.iter().copied().sum();
        for ci in 0..c_in {
            for ky in 0..k {
                for kx in 0..k {
                    let mut acc = T::zero();
                    let kv = kdata[((co * c_in + ci) * k + ky) * k + kx];
                    for y in 0..h_out {
                        let in_row = (ci * hp + y * stride + ky) * wp + kx;
                        let out_row = y * w_out;
                        if stride == 1 {
                            let src = &padded[in_row..in_row + w_out];
                            let gp = &gplane[out_row..out_row + w_out];
                            let gi = &mut g_padded[in_row..in_row + w_out];
                            for x in 0..w_out {
                                acc += gp[x] * src[x];
                                gi[x] += kv * gp[x];
                            }
                        } else {
                            for x in 0..w_out {
                                let g = gplane[out_row + x];
                                acc += g * padded[in_row + x * stride];
                                g_padded[in_row + x * stride] += kv * g;
                            }
                        }
                    }
                    g_kernels[((co * c_in + ci) * k + ky) * k + kx] += acc;
                }
            }
        }
    }

    // Strip padding from the input gradient.
    let mut g_input = vec![T::zero(); c_in * h * w];
    for ci in 0..c_in {
        for y in 0..h {
            let src = (ci * hp + y + pad) * wp + pad;
            let dst = (ci * h + y) * w;
            g_input[dst..dst + w].copy_from_slice(&g_padded[src..src + w]);
        }
    }

    (
        Tensor::from_vec(&[c_in, h, w], g_input).unwrap(),
        Tensor::from_vec(kernels.shape(), g_kernels).unwrap(),
        Tensor::from_vec(&[c_out], g_bias).unwrap(),
    )
}

/// 2×2 max pooling with stride 2. Returns the pooled map and the flat input
/// index of each window maximum (first occurrence in row-major scan order).
pub fn maxpool2_forward<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    if input.shape().len() != 3 {
        return Err(Error::shape(
            "maxpool2d",
            format!("input must be C×H×W, got rank {}", input.shape().len()),
        ));
    }
    let (c, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::shape(
            "maxpool2d",
            format!("spatial dims must be even, got {h}×{w}"),
        ));
    }
    let (ho, wo) = (h / 2, w / 2);
    let src = input.data();
    let mut out = vec![T::zero(); c * ho * wo];
    let mut argmax = vec![0usize; c * ho * wo];
    for ci in 0..c {
        for y in 0..ho {
            for x in 0..wo {
                let mut best_idx = (ci * h + 2 * y) * w + 2 * x;
                let mut best = src[best_idx];
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = (ci * h + 2 * y + dy) * w + 2 * x + dx;
                    if src[idx] > best {
                        best = src[idx];
                        best_idx = idx;
                    }
                }
                out[(ci * ho + y) * wo + x] = best;
                argmax[(ci * ho + y) * wo + x] = best_idx;
            }
        }
    }
    Ok((Tensor::from_vec(&[c, ho, wo], out)?, argmax))
}

/// `weight · input + bias`. Input may be a vector `[n]` or a row batch
/// `[B, n]`; weight is `[m, n]`, bias `[m]`.
pub fn linear_forward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    if weight.shape().len() != 2 {
        return Err(Error::shape(
            "linear",
            format!("weight must be m×n, got rank {}", weight.shape().len()),
        ));
    }
    let (m, n) = (weight.shape()[0], weight.shape()[1]);
    if bias.shape() != [m] {
        return Err(Error::shape(
            "linear",
            format!("bias length {:?} != output dim {m}", bias.shape()),
        ));
    }
    let (rows, in_dim, batched) = match input.shape() {
        [n_in] => (1, *n_in, false),
        [b, n_in] => (*b, *n_in, true),
        other => {
            return Err(Error::shape(
                "linear",
                format!("input must be [n] or [B,n], got {other:?}"),
            ))
        }
    };
    if in_dim != n {
        return Err(Error::shape(
            "linear",
            format!("input dim {in_dim} != weight input dim {n}"),
        ));
    }
    let x = input.data();
    let wdat = weight.data();
    let bdat = bias.data();
    let mut out = vec![T::zero(); rows * m];
    for r in 0..rows {
        let xr = &x[r * n..(r + 1) * n];
        for i in 0..m {
            let wr = &wdat[i * n..(i + 1) * n];
            let mut acc = bdat[i];
            for j in 0..n {
                acc += wr[j] * xr[j];
            }
            out[r * m + i] = acc;
        }
    }
    let shape: Vec<usize> = if batched { vec![rows, m] } else { vec![m] };
    Tensor::from_vec(&shape, out)
}

/// Gradients of [`linear_forward`] for input, weight, and bias.
pub fn linear_backward<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let (m, n) = (weight.shape()[0], weight.shape()[1]);
    let rows = input.numel() / n;
    let x = input.data();
    let wdat = weight.data();
    let g = grad_out.data();

    let mut g_in = vec![T::zero(); rows * n];
    let mut g_w = vec![T::zero(); m * n];
    let mut g_b = vec![T::zero(); m];
    for r in 0..rows {
        let xr = &x[r * n..(r + 1) * n];
        let gr = &g[r * m..(r + 1) * m];
        let gi = &mut g_in[r * n..(r + 1) * n];
        for i in 0..m {
            let go = gr[i];
            g_b[i] += go;
            let wr = &wdat[i * n..(i + 1) * n];
            let gw = &mut g_w[i * n..(i + 1) * n];
            for j in 0..n {
                gi[j] += wr[j] * go;
                gw[j] += go * xr[j];
            }
        }
    }
    (
        Tensor::from_vec(input.shape(), g_in).unwrap(),
        Tensor::from_vec(&[m, n], g_w).unwrap(),
        Tensor::from_vec(&[m], g_b).unwrap(),
    )
}

/// Mean negative log softmax probability of the labelled class, stabilized by
/// max subtraction. Returns the scalar loss and the softmax probabilities
/// (n×K) saved for the backward pass.
pub fn softmax_cross_entropy_forward<T: Scalar>(
    logits: &Tensor<T>,
    labels: &[usize],
) -> Result<(T, Vec<T>)> {
    if logits.shape().len() != 2 {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("logits must be n×K, got {:?}", logits.shape()),
        ));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_cross_entropy",
            format!("{} labels for {} rows", labels.len(), n),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::invalid(format!(
            "softmax_cross_entropy: label {bad} out of range for {k} classes"
        )));
    }
    let x = logits.data();
    let mut probs = vec![T::zero(); n * k];
    let mut loss = T::zero();
    for r in 0..n {
        let row = &x[r * k..(r + 1) * k];
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut denom = T::zero();
        for j in 0..k {
            let e = (row[j] - max).exp();
            probs[r * k + j] = e;
            denom += e;
        }
        for j in 0..k {
            probs[r * k + j] /= denom;
        }
        loss -= probs[r * k + labels[r]].ln();
    }
    Ok((loss / T::from_f64(n as f64), probs))
}

/// Elementwise smooth L1 (`0.5 x²` for `|x| < 1`, else `|x| - 0.5`), summed
/// over all coordinates.
pub fn smooth_l1_forward<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<T> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "smooth_l1",
            format!("pred {:?} vs target {:?}", pred.shape(), target.shape()),
        ));
    }
    let half = T::from_f64(0.5);
    let one = T::one();
    let mut total = T::zero();
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let x = p - t;
        let a = x.abs();
        total += if a < one { half * x * x } else { a - half };
    }
    Ok(total)
}

/// d(smooth L1)/d(pred): `x` inside the quadratic zone, `sign(x)` outside.
pub fn smooth_l1_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, upstream: T) -> Vec<T> {
    let one = T::one();
    pred.data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let x = p - t;
            upstream * if x > one { one } else if x < -one { -one } else { x }
        })
        .collect()
}

/// `sign(x)·sqrt(|x|)` elementwise, then L2 normalization. The zero vector
/// maps to the zero vector. Returns the output plus the pre-normalization
/// vector and its norm for the backward pass.
pub fn signed_sqrt_l2norm_forward<T: Scalar>(input: &Tensor<T>) -> (Tensor<T>, Vec<T>, T) {
    let y: Vec<T> = input
        .data()
        .iter()
        .map(|&x| {
            let r = x.abs().sqrt();
            if x < T::zero() {
                -r
            } else {
                r
            }
        })
        .collect();
    let norm = y.iter().map(|&v| v * v).sum::<T>().sqrt();
    let z: Vec<T> = if norm == T::zero() {
        vec![T::zero(); y.len()]
    } else {
        y.iter().map(|&v| v / norm).collect()
    };
    (
        Tensor::from_vec(input.shape(), z).unwrap(),
        y,
        norm,
    )
}

/// Backward of [`signed_sqrt_l2norm_forward`]; subgradient 0 at exact zeros.
pub fn signed_sqrt_l2norm_backward<T: Scalar>(
    input: &Tensor<T>,
    y: &[T],
    norm: T,
    grad_out: &[T],
) -> Vec<T> {
    let n = input.numel();
    if norm == T::zero() {
        return vec![T::zero(); n];
    }
    // z = y/‖y‖: dy = (g − z·(g·z))/‖y‖, with z = y/norm.
    let dot = grad_out
        .iter()
        .zip(y)
        .map(|(&g, &yv)| g * (yv / norm))
        .sum::<T>();
    let half = T::from_f64(0.5);
    input
        .data()
        .iter()
        .zip(y)
        .zip(grad_out)
        .map(|((&x, &yv), &g)| {
            if x == T::zero() {
                T::zero()
            } else {
                let dy = (g - (yv / norm) * dot) / norm;
                // y = sign(x)√|x| ⇒ dy/dx = 1/(2√|x|) = 1/(2|y|).
                dy * half / yv.abs()
            }
        })
        .collect()
}

/// `out[i][j] = Σ_p a[i][p] · b[j][p]` for `a: m×k`, `b: n×k`.
///
/// With RoI features laid out channel-major (`C×49`), this is the bilinear
/// form `f_aᵀ f_b` summed over the 49 spatial positions.
pub fn matmul_nt_forward<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let ([m, ka], [n, kb]) = (a.shape(), b.shape()) else {
        return Err(Error::shape(
            "matmul_nt",
            format!("need rank-2 inputs, got {:?} and {:?}", a.shape(), b.shape()),
        ));
    };
    let (m, ka, n, kb) = (*m, *ka, *n, *kb);
    if ka != kb {
        return Err(Error::shape(
            "matmul_nt",
            format!("inner dims differ: {ka} vs {kb}"),
        ));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let ar = &ad[i * ka..(i + 1) * ka];
        for j in 0..n {
            let br = &bd[j * ka..(j + 1) * ka];
            let mut acc = T::zero();
            for p in 0..ka {
                acc += ar[p] * br[p];
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// Gradients of [`matmul_nt_forward`].
pub fn matmul_nt_backward<T: Scalar>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[0];
    let (ad, bd, g) = (a.data(), b.data(), grad_out.data());
    let mut ga = vec![T::zero(); m * k];
    let mut gb = vec![T::zero(); n * k];
    for i in 0..m {
        for j in 0..n {
            let go = g[i * n + j];
            if go == T::zero() {
                continue;
            }
            let br = &bd[j * k..(j + 1) * k];
            let gar = &mut ga[i * k..(i + 1) * k];
            for p in 0..k {
                gar[p] += go * br[p];
            }
        }
    }
    for j in 0..n {
        let gbr = &mut gb[j * k..(j + 1) * k];
        for i in 0..m {
            let go = g[i * n + j];
            if go == T::zero() {
                continue;
            }
            let ar = &ad[i * k..(i + 1) * k];
            for p in 0..k {
                gbr[p] += go * ar[p];
            }
        }
    }
    (
        Tensor::from_vec(&[m, k], ga).unwrap(),
        Tensor::from_vec(&[n, k], gb).unwrap(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seeded(n: usize, seed: u64) -> Vec<f32> {
        // Small LCG; test-local so oracle data is independent of rand.
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 33) as f32 / (1u64 << 31) as f32) - 1.0
            })
            .collect()
    }

    /// Direct six-nested-loop convolution, independent of the production path.
    fn conv_oracle(
        input: &[f32],
        (ci_n, h, w): (usize, usize, usize),
        kernels: &[f32],
        (co_n, k): (usize, usize),
        bias: &[f32],
        stride: usize,
        pad: usize,
    ) -> Vec<f32> {
        let h_out = (h + 2 * pad - k) / stride + 1;
        let w_out = (w + 2 * pad - k) / stride + 1;
        let mut out = vec![0.0f32; co_n * h_out * w_out];
        for co in 0..co_n {
            for y in 0..h_out {
                for x in 0..w_out {
                    let mut acc = bias[co];
                    for ci in 0..ci_n {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (x * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += kernels[((co * ci_n + ci) * k + ky) * k + kx]
                                    * input[(ci * h + iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[(co * h_out + y) * w_out + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv2d_identity_kernel() {
        let input = Tensor::from_vec(&[1, 4, 4], seeded(16, 7)).unwrap();
        let kernels = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let bias = Tensor::zeros(&[1]);
        let out = conv2d_forward(&input, &kernels, &bias, 1, 0).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv2d_zero_input_gives_bias_planes() {
        let input = Tensor::<f32>::zeros(&[2, 6, 6]);
        let kernels = Tensor::from_vec(&[3, 2, 3, 3], seeded(54, 3)).unwrap();
        let bias = Tensor::from_vec(&[3], vec![0.5, -1.0, 2.0]).unwrap();
        let out = conv2d_forward(&input, &kernels, &bias, 1, 1).unwrap();
        for co in 0..3 {
            for v in &out.data()[co * 36..(co + 1) * 36] {
                assert_eq!(*v, bias.data()[co]);
            }
        }
    }

    #[test]
    fn conv2d_matches_nested_loop_oracle() {
        let kernels = Tensor::from_vec(&[4, 3, 3, 3], seeded(108, 13)).unwrap();
        let bias = Tensor::from_vec(&[4], seeded(4, 17)).unwrap();
        let input8 = Tensor::from_vec(&[3, 8, 8], seeded(192, 11)).unwrap();
        let input9 = Tensor::from_vec(&[3, 9, 9], seeded(243, 19)).unwrap();
        for (input, side, stride, pad) in [
            (&input8, 8, 1, 0),
            (&input8, 8, 1, 1),
            (&input8, 8, 1, 2),
            (&input9, 9, 2, 0),
            (&input9, 9, 2, 1),
        ] {
            let got = conv2d_forward(input, &kernels, &bias, stride, pad).unwrap();
            let want = conv_oracle(
                input.data(),
                (3, side, side),
                kernels.data(),
                (4, 3),
                bias.data(),
                stride,
                pad,
            );
            for (g, w) in got.data().iter().zip(&want) {
                let rel = (g - w).abs() / w.abs().max(1.0);
                assert!(rel <= 1e-5, "stride={stride} pad={pad}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn conv2d_rejects_bad_shapes() {
        let input = Tensor::<f32>::zeros(&[3, 8, 8]);
        let kernels = Tensor::<f32>::zeros(&[4, 2, 3, 3]);
        let bias = Tensor::<f32>::zeros(&[4]);
        let err = conv2d_forward(&input, &kernels, &bias, 1, 0).unwrap_err();
        assert!(err.to_string().contains("channels"), "{err}");

        let even = Tensor::<f32>::zeros(&[4, 3, 2, 2]);
        assert!(conv2d_forward(&input, &even, &bias, 1, 0).is_err());

        let k = Tensor::<f32>::zeros(&[4, 3, 3, 3]);
        // (8 - 3) not divisible by stride 2.
        assert!(conv2d_forward(&input, &k, &bias, 2, 0).is_err());
    }

    #[test]
    fn maxpool_constant_and_impulse() {
        let c = Tensor::filled(&[1, 4, 4], 3.25f32);
        let (out, _) = maxpool2_forward(&c).unwrap();
        assert!(out.data().iter().all(|&v| v == 3.25));

        let mut data = vec![0.0f32; 16];
        data[1 * 4 + 2] = 9.0; // window (0,1)
        let t = Tensor::from_vec(&[1, 4, 4], data).unwrap();
        let (out, arg) = maxpool2_forward(&t).unwrap();
        assert_eq!(out.data(), &[0.0, 9.0, 0.0, 0.0]);
        assert_eq!(arg[1], 6);
    }

    #[test]
    fn maxpool_matches_window_scan_oracle() {
        let input = Tensor::from_vec(&[2, 8, 8], seeded(128, 23)).unwrap();
        let (out, _) = maxpool2_forward(&input).unwrap();
        for ci in 0..2 {
            for y in 0..4 {
                for x in 0..4 {
                    let mut best = f32::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            best = best.max(input.data()[(ci * 8 + 2 * y + dy) * 8 + 2 * x + dx]);
                        }
                    }
                    assert_eq!(out.data()[(ci * 4 + y) * 4 + x], best);
                }
            }
        }
    }

    #[test]
    fn maxpool_rejects_odd_dims() {
        assert!(maxpool2_forward(&Tensor::<f32>::zeros(&[1, 5, 4])).is_err());
        assert!(maxpool2_forward(&Tensor::<f32>::zeros(&[1, 4, 7])).is_err());
    }

    #[test]
    fn linear_identity_and_bias_only() {
        let x = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]).unwrap();
        let mut w = vec![0.0f32; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let eye = Tensor::from_vec(&[3, 3], w).unwrap();
        let zero_b = Tensor::zeros(&[3]);
        assert_eq!(linear_forward(&x, &eye, &zero_b).unwrap().data(), x.data());

        let zero_w = Tensor::zeros(&[3, 3]);
        let b = Tensor::from_vec(&[3], vec![4.0, 5.0, 6.0]).unwrap();
        assert_eq!(linear_forward(&x, &zero_w, &b).unwrap().data(), b.data());
    }

    #[test]
    fn linear_matches_dot_product_oracle() {
        let x = Tensor::from_vec(&[16], seeded(16, 31)).unwrap();
        let w = Tensor::from_vec(&[8, 16], seeded(128, 37)).unwrap();
        let b = Tensor::from_vec(&[8], seeded(8, 41)).unwrap();
        let out = linear_forward(&x, &w, &b).unwrap();
        for i in 0..8 {
            let mut acc = b.data()[i];
            for j in 0..16 {
                acc += w.data()[i * 16 + j] * x.data()[j];
            }
            let rel = (out.data()[i] - acc).abs() / acc.abs().max(1.0);
            assert!(rel <= 1e-6);
        }
    }

    #[test]
    fn linear_rejects_dim_mismatch() {
        let x = Tensor::<f32>::zeros(&[5]);
        let w = Tensor::<f32>::zeros(&[8, 16]);
        let b = Tensor::<f32>::zeros(&[8]);
        assert!(linear_forward(&x, &w, &b).is_err());
    }

    #[test]
    fn cross_entropy_uniform_and_stability() {
        let logits = Tensor::from_vec(&[1, 2], vec![0.0f32, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy_forward(&logits, &[0]).unwrap();
        assert!((loss - std::f32::consts::LN_2).abs() < 1e-6);

        let big = Tensor::from_vec(&[1, 2], vec![1000.0f32, 0.0]).unwrap();
        let (loss, _) = softmax_cross_entropy_forward(&big, &[0]).unwrap();
        assert!(loss.is_finite());
        assert!(loss.abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_matches_f64_reference() {
        let data = seeded(15, 43);
        let logits = Tensor::from_vec(&[5, 3], data.clone()).unwrap();
        let labels = [0usize, 2, 1, 1, 0];
        let (loss, _) = softmax_cross_entropy_forward(&logits, &labels).unwrap();

        let mut want = 0.0f64;
        for r in 0..5 {
            let row: Vec<f64> = data[r * 3..(r + 1) * 3].iter().map(|&v| v as f64).collect();
            let denom: f64 = row.iter().map(|v| v.exp()).sum();
            want -= (row[labels[r]].exp() / denom).ln();
        }
        want /= 5.0;
        assert!(((loss as f64) - want).abs() < 1e-5, "{loss} vs {want}");
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = Tensor::from_vec(&[1, 3], vec![0.0f32; 3]).unwrap();
        assert!(softmax_cross_entropy_forward(&logits, &[3]).is_err());
    }

    #[test]
    fn smooth_l1_cases() {
        let t = Tensor::<f32>::zeros(&[1]);
        let half = Tensor::from_vec(&[1], vec![0.5f32]).unwrap();
        assert!((smooth_l1_forward(&half, &t).unwrap() - 0.125).abs() < 1e-7);
        let two = Tensor::from_vec(&[1], vec![2.0f32]).unwrap();
        assert!((smooth_l1_forward(&two, &t).unwrap() - 1.5).abs() < 1e-7);
        assert_eq!(smooth_l1_forward(&t, &t).unwrap(), 0.0);
        let bad = Tensor::<f32>::zeros(&[2]);
        assert!(smooth_l1_forward(&bad, &t).is_err());
    }

    #[test]
    fn signed_sqrt_l2norm_cases() {
        let t = Tensor::from_vec(&[2], vec![4.0f32, -4.0]).unwrap();
        let (out, _, _) = signed_sqrt_l2norm_forward(&t);
        assert!((out.data()[0] - 0.70710678).abs() < 1e-6);
        assert!((out.data()[1] + 0.70710678).abs() < 1e-6);

        let z = Tensor::<f32>::zeros(&[3]);
        let (out, _, _) = signed_sqrt_l2norm_forward(&z);
        assert!(out.data().iter().all(|&v| v == 0.0));

        let t = Tensor::from_vec(&[4], seeded(4, 47)).unwrap();
        let (out, _, _) = signed_sqrt_l2norm_forward(&t);
        let norm: f32 = out.data().iter().map(|v| v * v).sum::<f32>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }

    #[test]
    fn matmul_nt_small_case() {
        // a: 2×1, b: 2×1 — single spatial position outer product.
        let a = Tensor::from_vec(&[2, 1], vec![1.0f32, 0.0]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![0.0f32, 1.0]).unwrap();
        let out = matmul_nt_forward(&a, &b).unwrap();
        assert_eq!(out.data(), &[0.0, 1.0, 0.0, 0.0]);
    }
}
