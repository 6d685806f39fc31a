//! Tape-graph construction for the detector: backbones, proposal head,
//! RoI pooling, fusion, and the classification/regression heads.

use std::sync::Arc;

use super::boxes::BoxF;
use super::model::{ConvLayer, FusionKind, TwoStreamModel};
use crate::error::{Error, Result};
use crate::tensor::{FeatureRect, Scalar, Tape, Tensor, Var};

/// Variable handles for one conv layer's parameters.
#[derive(Clone, Copy, Debug)]
pub struct ConvVars {
    pub w: Var,
    pub b: Var,
}

/// Variable handles for every model parameter on a tape, in the same order
/// as `visit_params`.
pub struct ModelVars {
    pub rgb: Option<Vec<ConvVars>>,
    pub noise: Option<Vec<ConvVars>>,
    pub rpn_conv: ConvVars,
    pub rpn_cls: ConvVars,
    pub rpn_reg: ConvVars,
    pub cls_head: ConvVars,
    pub bbox_head: ConvVars,
    /// `(name, var)` in registration order, for gradient collection.
    pub ordered: Vec<(String, Var)>,
}

impl<T: Scalar> TwoStreamModel<T> {
    /// Copy all parameters onto a tape and hand back their variable handles.
    pub fn register_params(&self, tape: &mut Tape<T>) -> ModelVars {
        let mut ordered: Vec<(String, Var)> = Vec::new();
        self.visit_params(|name, t| {
            let var = tape.leaf(t.clone());
            ordered.push((name, var));
        });
        let mut cursor = 0usize;
        let mut next = |ordered: &[(String, Var)]| {
            let v = ordered[cursor].1;
            cursor += 1;
            v
        };
        let mut take_backbone = |layers: &Option<Vec<ConvLayer<T>>>, ordered: &[(String, Var)]| {
            layers.as_ref().map(|ls| {
                ls.iter()
                    .map(|_| ConvVars {
                        w: next(ordered),
                        b: next(ordered),
                    })
                    .collect::<Vec<_>>()
            })
        };
        let rgb = take_backbone(&self.rgb_backbone, &ordered);
        let noise = take_backbone(&self.noise_backbone, &ordered);
        let mut take_pair = |ordered: &[(String, Var)]| ConvVars {
            w: next(ordered),
            b: next(ordered),
        };
        let rpn_conv = take_pair(&ordered);
        let rpn_cls = take_pair(&ordered);
        let rpn_reg = take_pair(&ordered);
        let cls_head = take_pair(&ordered);
        let bbox_head = take_pair(&ordered);
        debug_assert_eq!(cursor, ordered.len());
        ModelVars {
            rgb,
            noise,
            rpn_conv,
            rpn_cls,
            rpn_reg,
            cls_head,
            bbox_head,
            ordered,
        }
    }

    /// Read gradients off the tape back into the parameter tensors
    /// (zeros where the loss never reached a parameter).
    pub fn collect_grads(&mut self, tape: &Tape<T>, vars: &ModelVars) {
        let mut i = 0usize;
        self.visit_params_mut(|name, t| {
            debug_assert_eq!(vars.ordered[i].0, name);
            t.set_grad(tape.grad_or_zeros(vars.ordered[i].1)).unwrap();
            i += 1;
        });
    }
}

/// Run one backbone: per stage 3×3 conv (pad 1) → ReLU, with 2×2 max pooling
/// between stages. Output stride is `2^(stages-1)`.
pub fn backbone_features<T: Scalar>(
    tape: &mut Tape<T>,
    layers: &[ConvVars],
    input: Var,
) -> Result<Var> {
    let mut x = input;
    for (i, layer) in layers.iter().enumerate() {
        x = tape.conv2d(x, layer.w, layer.b, 1, 1)?;
        x = tape.relu(x);
        if i + 1 < layers.len() {
            x = tape.maxpool2(x)?;
        }
    }
    Ok(x)
}

/// Proposal head forward: shared 3×3 conv trunk, then 1×1 objectness
/// (`2A×h×w`) and regression (`4A×h×w`) maps.
pub fn rpn_maps<T: Scalar>(
    tape: &mut Tape<T>,
    conv: ConvVars,
    cls: ConvVars,
    reg: ConvVars,
    features: Var,
) -> Result<(Var, Var)> {
    let trunk = tape.conv2d(features, conv.w, conv.b, 1, 1)?;
    let trunk = tape.relu(trunk);
    let cls_map = tape.conv2d(trunk, cls.w, cls.b, 1, 0)?;
    let reg_map = tape.conv2d(trunk, reg.w, reg.b, 1, 0)?;
    Ok((cls_map, reg_map))
}

/// Decompose an anchor index into `(y, x, slot)` for an `h×w×A` grid.
#[inline]
fn anchor_coords(id: usize, w: usize, a: usize) -> (usize, usize, usize) {
    let slot = id % a;
    let loc = id / a;
    (loc / w, loc % w, slot)
}

/// Gather the two objectness logits of each listed anchor into an `n×2`
/// matrix (rows ordered like `anchor_ids`).
pub fn gather_rpn_cls_rows<T: Scalar>(
    tape: &mut Tape<T>,
    cls_map: Var,
    (h, w, a): (usize, usize, usize),
    anchor_ids: &[usize],
) -> Result<Var> {
    let mut indices = Vec::with_capacity(anchor_ids.len() * 2);
    for &id in anchor_ids {
        let (y, x, slot) = anchor_coords(id, w, a);
        for c in 0..2 {
            indices.push(((slot * 2 + c) * h + y) * w + x);
        }
    }
    tape.gather(cls_map, indices, &[anchor_ids.len(), 2])
}

/// Gather the four regression outputs of each listed anchor into `n×4`.
pub fn gather_rpn_delta_rows<T: Scalar>(
    tape: &mut Tape<T>,
    reg_map: Var,
    (h, w, a): (usize, usize, usize),
    anchor_ids: &[usize],
) -> Result<Var> {
    let mut indices = Vec::with_capacity(anchor_ids.len() * 4);
    for &id in anchor_ids {
        let (y, x, slot) = anchor_coords(id, w, a);
        for k in 0..4 {
            indices.push(((slot * 4 + k) * h + y) * w + x);
        }
    }
    tape.gather(reg_map, indices, &[anchor_ids.len(), 4])
}

/// Objectness probability per anchor from the raw class map values:
/// `σ(l1 − l0)` for the (background, foreground) logit pair.
pub fn rpn_objectness<T: Scalar>(cls_map: &Tensor<T>, a: usize) -> Vec<f32> {
    let (h, w) = (cls_map.shape()[1], cls_map.shape()[2]);
    let d = cls_map.data();
    let mut probs = Vec::with_capacity(h * w * a);
    for y in 0..h {
        for x in 0..w {
            for slot in 0..a {
                let l0 = d[((slot * 2) * h + y) * w + x].to_f64();
                let l1 = d[((slot * 2 + 1) * h + y) * w + x].to_f64();
                probs.push((1.0 / (1.0 + (l0 - l1).exp())) as f32);
            }
        }
    }
    probs
}

/// Predicted box deltas per anchor from the raw regression map values.
pub fn rpn_deltas<T: Scalar>(reg_map: &Tensor<T>, a: usize) -> Vec<[f32; 4]> {
    let (h, w) = (reg_map.shape()[1], reg_map.shape()[2]);
    let d = reg_map.data();
    let mut out = Vec::with_capacity(h * w * a);
    for y in 0..h {
        for x in 0..w {
            for slot in 0..a {
                let mut delta = [0f32; 4];
                for (k, v) in delta.iter_mut().enumerate() {
                    *v = d[((slot * 4 + k) * h + y) * w + x].to_f64() as f32;
                }
                out.push(delta);
            }
        }
    }
    out
}

/// Map a box in input-pixel coordinates onto the feature grid: divide by the
/// stride and round outward, clamped to the map.
pub fn feature_rect(b: &BoxF, stride: usize, feature_h: usize, feature_w: usize) -> FeatureRect {
    let s = stride as f32;
    let x1 = (b.x1 / s).floor().max(0.0) as usize;
    let y1 = (b.y1 / s).floor().max(0.0) as usize;
    let x2 = ((b.x2 / s).ceil() as usize).min(feature_w);
    let y2 = ((b.y2 / s).ceil() as usize).min(feature_h);
    FeatureRect {
        x1: x1.min(x2),
        y1: y1.min(y2),
        x2,
        y2,
    }
}

/// RoI-pool one proposal from a feature map into `roi_size²` bins.
pub fn pooled_features<T: Scalar>(
    tape: &mut Tape<T>,
    features: Var,
    proposal: &BoxF,
    stride: usize,
    roi_size: usize,
) -> Result<Var> {
    let (fh, fw) = {
        let s = tape.value(features).shape();
        (s[1], s[2])
    };
    let rect = feature_rect(proposal, stride, fh, fw);
    tape.roi_pool_max(features, rect, roi_size)
}

/// Per-RoI features from both streams plus the proposal they came from.
pub struct RoiFeaturePair {
    pub f_rgb: Var,
    pub f_noise: Var,
    pub proposal: BoxF,
}

/// Fuse a pooled RGB/noise feature pair into the classification-head input:
/// the bilinear form over spatial positions (full or count-sketched),
/// followed by signed square root and L2 normalization.
pub fn fuse_pair<T: Scalar>(
    tape: &mut Tape<T>,
    pair: &RoiFeaturePair,
    fusion: FusionKind,
    sketch: Option<&Arc<crate::tensor::CountSketch>>,
) -> Result<Var> {
    let shape = tape.value(pair.f_rgb).shape().to_vec();
    let (c, s) = (shape[0], shape[1]);
    let spatial = s * shape[2];
    let a = tape.reshape(pair.f_rgb, &[c, spatial])?;
    let b = tape.reshape(pair.f_noise, &[c, spatial])?;
    let raw = match fusion {
        FusionKind::Full => {
            let m = tape.matmul_nt(a, b)?;
            tape.reshape(m, &[c * c])?
        }
        FusionKind::Compact => {
            let sk = sketch.ok_or_else(|| Error::invalid("compact fusion without sketch"))?;
            tape.compact_bilinear(a, b, Arc::clone(sk))?
        }
    };
    Ok(tape.signed_sqrt_l2norm(raw))
}

/// Head input for a single-stream model: the flattened pooled feature.
pub fn flatten_pooled<T: Scalar>(tape: &mut Tape<T>, pooled: Var) -> Result<Var> {
    let n = tape.value(pooled).numel();
    tape.reshape(pooled, &[n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::model::{ModelConfig, TwoStreamModel};
    use crate::tensor::Tape;

    #[test]
    fn registration_order_matches_visit_order() {
        let model = TwoStreamModel::<f32>::new(ModelConfig::default()).unwrap();
        let mut tape = Tape::new();
        let vars = model.register_params(&mut tape);
        let mut names = Vec::new();
        model.visit_params(|n, _| names.push(n));
        let registered: Vec<String> = vars.ordered.iter().map(|(n, _)| n.clone()).collect();
        assert_eq!(names, registered);
        assert!(vars.rgb.is_some() && vars.noise.is_some());
    }

    #[test]
    fn fresh_model_forward_is_finite_on_zero_image() {
        let cfg = ModelConfig {
            backbone: super::super::model::BackboneConfig {
                channels: vec![4, 8, 8],
                input_side: 32,
            },
            ..ModelConfig::default()
        };
        let model = TwoStreamModel::<f32>::new(cfg).unwrap();
        let mut tape = Tape::new();
        let vars = model.register_params(&mut tape);
        let img = tape.leaf(Tensor::zeros(&[3, 32, 32]));
        let feats = backbone_features(&mut tape, vars.rgb.as_ref().unwrap(), img).unwrap();
        assert_eq!(tape.value(feats).shape(), &[8, 8, 8]);
        let (cls, reg) =
            rpn_maps(&mut tape, vars.rpn_conv, vars.rpn_cls, vars.rpn_reg, feats).unwrap();
        assert!(tape.value(cls).data().iter().all(|v| v.is_finite()));
        assert!(tape.value(reg).data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn feature_rect_rounds_outward() {
        let b = BoxF::new(9.0, 15.9, 17.0, 24.1);
        let r = feature_rect(&b, 8, 16, 16);
        assert_eq!((r.x1, r.y1, r.x2, r.y2), (1, 1, 3, 4));
    }
}
