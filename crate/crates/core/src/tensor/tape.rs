//! Reverse-mode differentiation over a linear operation tape.
//!
//! Leaves (inputs and parameters) are registered first; each recorded operation
//! appends its output, so the tape is topologically ordered by construction
//! and a single reverse sweep visits every operation exactly once. A tape is
//! confined to one thread; independent tapes may run concurrently.

use std::sync::Arc;

use super::ops;
use super::sketch::CountSketch;
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a tensor node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Integer rectangle in feature-map coordinates, fed to RoI pooling after
/// the caller divides by the backbone stride and rounds outward.
#[derive(Clone, Copy, Debug)]
pub struct FeatureRect {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
}

enum Op<T> {
    Conv2d {
        input: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Relu {
        input: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        probs: Vec<T>,
        labels: Vec<usize>,
    },
    SmoothL1 {
        pred: Var,
        target: Var,
    },
    SignedSqrtL2Norm {
        input: Var,
        y: Vec<T>,
        norm: T,
    },
    MatmulNt {
        a: Var,
        b: Var,
    },
    CompactBilinear {
        a: Var,
        b: Var,
        sketch: Arc<CountSketch>,
    },
    RoiPoolMax {
        input: Var,
        argmax: Vec<Option<usize>>,
    },
    Gather {
        input: Var,
        indices: Vec<usize>,
    },
    StackRows {
        inputs: Vec<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Sum {
        input: Var,
    },
    Reshape {
        input: Var,
    },
}

struct Record<T> {
    op: Op<T>,
    out: Var,
}

/// Ordered record of executed differentiable operations plus the value and
/// gradient arenas they reference.
pub struct Tape<T> {
    values: Vec<Tensor<T>>,
    grads: Vec<Option<Vec<T>>>,
    records: Vec<Record<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            values: Vec::new(),
            grads: Vec::new(),
            records: Vec::new(),
        }
    }

    /// Register a leaf tensor (input or parameter). The tape owns a copy.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Var {
        let id = self.values.len();
        self.values.push(tensor);
        self.grads.push(None);
        Var(id)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.values[v.0]
    }

    /// Gradient of a node, `None` if the loss did not reach it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of a node, zeros if the loss did not reach it.
    pub fn grad_or_zeros(&self, v: Var) -> Vec<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => vec![T::zero(); self.values[v.0].numel()],
        }
    }

    pub fn num_ops(&self) -> usize {
        self.records.len()
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>) -> Var {
        let out = self.leaf(value);
        self.records.push(Record { op, out });
        out
    }

    // ── Operations ──────────────────────────────────────────────────

    pub fn conv2d(
        &mut self,
        input: Var,
        kernels: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let out = ops::conv2d_forward(
            self.value(input),
            self.value(kernels),
            self.value(bias),
            stride,
            pad,
        )?;
        Ok(self.push(
            Op::Conv2d {
                input,
                kernels,
                bias,
                stride,
                pad,
            },
            out,
        ))
    }

    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let (out, argmax) = ops::maxpool2_forward(self.value(input))?;
        Ok(self.push(Op::MaxPool2 { input, argmax }, out))
    }

    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let out = ops::linear_forward(self.value(input), self.value(weight), self.value(bias))?;
        Ok(self.push(
            Op::Linear {
                input,
                weight,
                bias,
            },
            out,
        ))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let v = self.value(input);
        let out = Tensor::from_vec(
            v.shape(),
            v.data().iter().map(|&x| x.max(T::zero())).collect(),
        )
        .unwrap();
        self.push(Op::Relu { input }, out)
    }

    /// Mean cross entropy over rows of `logits` (n×K) against class indices.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (loss, probs) = ops::softmax_cross_entropy_forward(self.value(logits), labels)?;
        Ok(self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels: labels.to_vec(),
            },
            Tensor::scalar(loss),
        ))
    }

    pub fn smooth_l1(&mut self, pred: Var, target: Var) -> Result<Var> {
        let loss = ops::smooth_l1_forward(self.value(pred), self.value(target))?;
        Ok(self.push(Op::SmoothL1 { pred, target }, Tensor::scalar(loss)))
    }

    pub fn signed_sqrt_l2norm(&mut self, input: Var) -> Var {
        let (out, y, norm) = ops::signed_sqrt_l2norm_forward(self.value(input));
        self.push(Op::SignedSqrtL2Norm { input, y, norm }, out)
    }

    /// `a · bᵀ` for `a: m×k`, `b: n×k`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul_nt_forward(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatmulNt { a, b }, out))
    }

    /// Count-sketch bilinear fusion of two `C×P` feature blocks to a vector
    /// of the sketch dimension.
    pub fn compact_bilinear(&mut self, a: Var, b: Var, sketch: Arc<CountSketch>) -> Result<Var> {
        let out = sketch.fuse_forward(self.value(a), self.value(b))?;
        Ok(self.push(Op::CompactBilinear { a, b, sketch }, out))
    }

    /// Max-pool an integer feature-map region into an `out_size × out_size`
    /// grid, channelwise. Empty bins yield zero.
    pub fn roi_pool_max(&mut self, input: Var, rect: FeatureRect, out_size: usize) -> Result<Var> {
        let v = self.value(input);
        if v.shape().len() != 3 {
            return Err(Error::shape(
                "roi_pool",
                format!("features must be C×H×W, got {:?}", v.shape()),
            ));
        }
        let (c, h, w) = (v.shape()[0], v.shape()[1], v.shape()[2]);
        if rect.x2 > w || rect.y2 > h {
            return Err(Error::shape(
                "roi_pool",
                format!("region {rect:?} exceeds {h}×{w} feature map"),
            ));
        }
        let (rh, rw) = (rect.y2.saturating_sub(rect.y1), rect.x2.saturating_sub(rect.x1));
        let src = v.data();
        let s = out_size;
        let mut out = vec![T::zero(); c * s * s];
        let mut argmax: Vec<Option<usize>> = vec![None; c * s * s];
        for by in 0..s {
            let y0 = rect.y1 + by * rh / s;
            let y1 = rect.y1 + (by + 1) * rh / s;
            for bx in 0..s {
                let x0 = rect.x1 + bx * rw / s;
                let x1 = rect.x1 + (bx + 1) * rw / s;
                if y1 == y0 || x1 == x0 {
                    continue; // empty bin stays zero
                }
                for ci in 0..c {
                    let mut best_idx = (ci * h + y0) * w + x0;
                    let mut best = src[best_idx];
                    for y in y0..y1 {
                        for x in x0..x1 {
                            let idx = (ci * h + y) * w + x;
                            if src[idx] > best {
                                best = src[idx];
                                best_idx = idx;
                            }
                        }
                    }
                    out[(ci * s + by) * s + bx] = best;
                    argmax[(ci * s + by) * s + bx] = Some(best_idx);
                }
            }
        }
        let out = Tensor::from_vec(&[c, s, s], out)?;
        Ok(self.push(Op::RoiPoolMax { input, argmax }, out))
    }

    /// `out[i] = input.flat[indices[i]]`, viewed with `out_shape`. Covers both
    /// row selection and layout permutations; the backward pass scatter-adds.
    pub fn gather(&mut self, input: Var, indices: Vec<usize>, out_shape: &[usize]) -> Result<Var> {
        let v = self.value(input);
        let n: usize = out_shape.iter().product();
        if n != indices.len() {
            return Err(Error::shape(
                "gather",
                format!("{} indices for shape {:?}", indices.len(), out_shape),
            ));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= v.numel()) {
            return Err(Error::invalid(format!(
                "gather: index {bad} out of bounds for {} elements",
                v.numel()
            )));
        }
        let data: Vec<T> = indices.iter().map(|&i| v.data()[i]).collect();
        let out = Tensor::from_vec(out_shape, data)?;
        Ok(self.push(Op::Gather { input, indices }, out))
    }

    /// Stack equally sized vectors into an `n × D` matrix.
    pub fn stack_rows(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::invalid("stack_rows: no inputs"));
        }
        let d = self.value(inputs[0]).numel();
        let mut data = Vec::with_capacity(inputs.len() * d);
        for &v in inputs {
            if self.value(v).numel() != d {
                return Err(Error::shape(
                    "stack_rows",
                    format!("row size {} != {}", self.value(v).numel(), d),
                ));
            }
            data.extend_from_slice(self.value(v).data());
        }
        let out = Tensor::from_vec(&[inputs.len(), d], data)?;
        Ok(self.push(
            Op::StackRows {
                inputs: inputs.to_vec(),
            },
            out,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::shape(
                "add",
                format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            ));
        }
        let data: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::from_vec(self.value(a).shape(), data)?;
        Ok(self.push(Op::Add { a, b }, out))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let v = self.value(input);
        let out =
            Tensor::from_vec(v.shape(), v.data().iter().map(|&x| x * factor).collect()).unwrap();
        self.push(Op::Scale { input, factor }, out)
    }

    /// Sum of all elements, as a scalar node.
    pub fn sum(&mut self, input: Var) -> Var {
        let total = self.value(input).data().iter().copied().sum();
        self.push(Op::Sum { input }, Tensor::scalar(total))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(input).reshaped(shape)?;
        Ok(self.push(Op::Reshape { input }, out))
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Seed `d(loss) = 1` and accumulate gradients into every node the loss
    /// reaches, replaying the tape in reverse. Rejects non-scalar seeds.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.values[loss.0].is_scalar() {
            return Err(Error::invalid(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.values[loss.0].shape()
            )));
        }
        self.grads[loss.0] = Some(vec![T::one()]);

        for r in (0..self.records.len()).rev() {
            let out = self.records[r].out;
            let Some(gout) = self.grads[out.0].take() else {
                continue;
            };
            self.backprop_record(r, &gout);
            self.grads[out.0] = Some(gout);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contribution: Vec<T>) {
        match &mut self.grads[v.0] {
            Some(g) => {
                for (dst, src) in g.iter_mut().zip(&contribution) {
                    *dst += *src;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }

    fn backprop_record(&mut self, r: usize, gout: &[T]) {
        let out = self.records[r].out;
        match &self.records[r].op {
            Op::Conv2d {
                input,
                kernels,
                bias,
                stride,
                pad,
            } => {
                let (input, kernels, bias, stride, pad) = (*input, *kernels, *bias, *stride, *pad);
                let gshape = self.values[out.0].shape().to_vec();
                let gt = Tensor::from_vec(&gshape, gout.to_vec()).unwrap();
                let (gi, gk, gb) = ops::conv2d_backward(
                    &self.values[input.0],
                    &self.values[kernels.0],
                    stride,
                    pad,
                    &gt,
                );
                self.accumulate(input, gi.into_data());
                self.accumulate(kernels, gk.into_data());
                self.accumulate(bias, gb.into_data());
            }
            Op::MaxPool2 { input, argmax } => {
                let input = *input;
                let mut gi = vec![T::zero(); self.values[input.0].numel()];
                for (cell, &src) in argmax.iter().enumerate() {
                    gi[src] += gout[cell];
                }
                self.accumulate(input, gi);
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (input, weight, bias) = (*input, *weight, *bias);
                let gshape = self.values[out.0].shape().to_vec();
                let gt = Tensor::from_vec(&gshape, gout.to_vec()).unwrap();
                let (gi, gw, gb) =
                    ops::linear_backward(&self.values[input.0], &self.values[weight.0], &gt);
                self.accumulate(input, gi.into_data());
                self.accumulate(weight, gw.into_data());
                self.accumulate(bias, gb.into_data());
            }
            Op::Relu { input } => {
                let input = *input;
                let gi: Vec<T> = self.values[input.0]
                    .data()
                    .iter()
                    .zip(gout)
                    .map(|(&x, &g)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                self.accumulate(input, gi);
            }
            Op::SoftmaxCrossEntropy {
                logits,
                probs,
                labels,
            } => {
                let logits = *logits;
                let n = labels.len();
                let k = probs.len() / n;
                let scale = gout[0] / T::from_f64(n as f64);
                let mut gl = vec![T::zero(); probs.len()];
                for r in 0..n {
                    for j in 0..k {
                        let onehot = if labels[r] == j { T::one() } else { T::zero() };
                        gl[r * k + j] = (probs[r * k + j] - onehot) * scale;
                    }
                }
                self.accumulate(logits, gl);
            }
            Op::SmoothL1 { pred, target } => {
                let (pred, target) = (*pred, *target);
                let g = ops::smooth_l1_grad(&self.values[pred.0], &self.values[target.0], gout[0]);
                let neg: Vec<T> = g.iter().map(|&x| -x).collect();
                self.accumulate(pred, g);
                self.accumulate(target, neg);
            }
            Op::SignedSqrtL2Norm { input, y, norm } => {
                let input = *input;
                let gi =
                    ops::signed_sqrt_l2norm_backward(&self.values[input.0], y, *norm, gout);
                self.accumulate(input, gi);
            }
            Op::MatmulNt { a, b } => {
                let (a, b) = (*a, *b);
                let gshape = self.values[out.0].shape().to_vec();
                let gt = Tensor::from_vec(&gshape, gout.to_vec()).unwrap();
                let (ga, gb) = ops::matmul_nt_backward(&self.values[a.0], &self.values[b.0], &gt);
                self.accumulate(a, ga.into_data());
                self.accumulate(b, gb.into_data());
            }
            Op::CompactBilinear { a, b, sketch } => {
                let (a, b, sketch) = (*a, *b, Arc::clone(sketch));
                let (ga, gb) = sketch.fuse_backward(&self.values[a.0], &self.values[b.0], gout);
                self.accumulate(a, ga.into_data());
                self.accumulate(b, gb.into_data());
            }
            Op::RoiPoolMax { input, argmax } => {
                let input = *input;
                let mut gi = vec![T::zero(); self.values[input.0].numel()];
                for (cell, src) in argmax.iter().enumerate() {
                    if let Some(src) = src {
                        gi[*src] += gout[cell];
                    }
                }
                self.accumulate(input, gi);
            }
            Op::Gather { input, indices } => {
                let input = *input;
                let mut gi = vec![T::zero(); self.values[input.0].numel()];
                for (k, &src) in indices.iter().enumerate() {
                    gi[src] += gout[k];
                }
                self.accumulate(input, gi);
            }
            Op::StackRows { inputs } => {
                let inputs = inputs.clone();
                let d = gout.len() / inputs.len();
                for (r, v) in inputs.iter().enumerate() {
                    self.accumulate(*v, gout[r * d..(r + 1) * d].to_vec());
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                self.accumulate(a, gout.to_vec());
                self.accumulate(b, gout.to_vec());
            }
            Op::Scale { input, factor } => {
                let (input, factor) = (*input, *factor);
                let gi: Vec<T> = gout.iter().map(|&g| g * factor).collect();
                self.accumulate(input, gi);
            }
            Op::Sum { input } => {
                let input = *input;
                let gi = vec![gout[0]; self.values[input.0].numel()];
                self.accumulate(input, gi);
            }
            Op::Reshape { input } => {
                let input = *input;
                self.accumulate(input, gout.to_vec());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_of_sum_is_ones() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn gradient_accumulates_across_paths() {
        // loss = sum(x) + sum(2x) → grad = 3 everywhere.
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, -1.0]).unwrap());
        let a = tape.sum(x);
        let doubled = tape.scale(x, 2.0);
        let b = tape.sum(doubled);
        let loss = tape.add(a, b).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[3.0, 3.0]);
    }

    #[test]
    fn unused_parameter_gets_zero_gradient() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        let unused = tape.leaf(Tensor::from_vec(&[2], vec![5.0, 6.0]).unwrap());
        let s = tape.sum(x);
        tape.backward(s).unwrap();
        assert!(tape.grad(unused).is_none());
        assert_eq!(tape.grad_or_zeros(unused), vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_non_scalar_seed() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap());
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn relu_gradient_masks_negatives() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_vec(&[2], vec![-1.0, 2.0]).unwrap());
        let r = tape.relu(x);
        let s = tape.sum(r);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn roi_pool_identity_region() {
        let mut tape = Tape::<f32>::new();
        let data: Vec<f32> = (0..49).map(|i| i as f32).collect();
        let x = tape.leaf(Tensor::from_vec(&[1, 7, 7], data.clone()).unwrap());
        let rect = FeatureRect {
            x1: 0,
            y1: 0,
            x2: 7,
            y2: 7,
        };
        let out = tape.roi_pool_max(x, rect, 7).unwrap();
        assert_eq!(tape.value(out).data(), &data[..]);
    }

    #[test]
    fn roi_pool_constant_map() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::filled(&[2, 10, 12], 1.5));
        let rect = FeatureRect {
            x1: 2,
            y1: 1,
            x2: 11,
            y2: 9,
        };
        let out = tape.roi_pool_max(x, rect, 7).unwrap();
        assert!(tape.value(out).data().iter().all(|&v| v == 1.5));
    }

    #[test]
    fn gather_and_scatter_back() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::from_vec(&[4], vec![10.0, 20.0, 30.0, 40.0]).unwrap());
        let g = tape.gather(x, vec![2, 0, 2], &[3]).unwrap();
        assert_eq!(tape.value(g).data(), &[30.0, 10.0, 30.0]);
        let s = tape.sum(g);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap(), &[1.0, 0.0, 2.0, 0.0]);
    }
}
