//! End-to-end inference: image in, scored class-labelled boxes out.

use image::RgbImage;

use super::anchors::generate_anchors;
use super::boxes::{decode_box_deltas, nms, BoxF, Detection};
use super::graph::{
    backbone_features, flatten_pooled, fuse_pair, pooled_features, rpn_deltas, rpn_maps,
    rpn_objectness, RoiFeaturePair,
};
use super::model::{RpnStream, StreamMode, TwoStreamModel};
use super::proposals::{propose_rois, ProposalConfig};
use crate::error::{Error, Result};
use crate::imageio;
use crate::srm::{self, SrmKernelBank};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Inference-time thresholds.
#[derive(Clone, Copy, Debug)]
pub struct DetectSettings {
    pub proposals: ProposalConfig,
    /// Final per-class suppression threshold.
    pub nms_threshold: f32,
    /// Minimum class score for an emitted detection.
    pub score_floor: f32,
}

impl Default for DetectSettings {
    fn default() -> Self {
        DetectSettings {
            proposals: ProposalConfig::test(),
            nms_threshold: 0.2,
            score_floor: 0.05,
        }
    }
}

/// Resize target: shorter side becomes `input_side`, the longer side scales
/// proportionally and rounds up to the next stride multiple.
pub fn resize_dims(w: u32, h: u32, input_side: usize, stride: usize) -> (u32, u32) {
    let (w, h) = (w as f64, h as f64);
    let side = input_side as f64;
    let round_up = |v: f64| -> u32 {
        let cells = (v / stride as f64).ceil().max(1.0);
        (cells as u32) * stride as u32
    };
    if w <= h {
        (input_side as u32, round_up(h * side / w))
    } else {
        (round_up(w * side / h), input_side as u32)
    }
}

/// Scale the RGB backbone input to `[-1, 1]`.
pub fn normalize_rgb_input<T: Scalar>(image: &Tensor<f32>) -> Tensor<T> {
    Tensor::from_vec(
        image.shape(),
        image
            .data()
            .iter()
            .map(|&v| T::from_f64((v as f64 - 127.5) / 127.5))
            .collect(),
    )
    .unwrap()
}

/// Scale the noise backbone input by the truncation bound to `[-1, 1]`.
pub fn normalize_noise_input<T: Scalar>(noise: &Tensor<f32>, truncation: f32) -> Tensor<T> {
    Tensor::from_vec(
        noise.shape(),
        noise
            .data()
            .iter()
            .map(|&v| T::from_f64(v as f64 / truncation as f64))
            .collect(),
    )
    .unwrap()
}

/// Stream feature maps and the proposal-head outputs for one image.
pub struct ForwardOutputs {
    pub rgb_features: Option<Var>,
    pub noise_features: Option<Var>,
    pub cls_map: Var,
    pub reg_map: Var,
    pub feature_h: usize,
    pub feature_w: usize,
}

/// Run both backbones and the proposal head on an already-resized image
/// tensor (`3×H×W`, raw `[0,255]` values).
pub fn forward_to_rpn<T: Scalar>(
    model: &TwoStreamModel<T>,
    tape: &mut Tape<T>,
    vars: &super::graph::ModelVars,
    image: &Tensor<f32>,
    bank: &SrmKernelBank,
) -> Result<ForwardOutputs> {
    let rgb_features = match &vars.rgb {
        Some(layers) => {
            let input = tape.leaf(normalize_rgb_input::<T>(image));
            Some(backbone_features(tape, layers, input)?)
        }
        None => None,
    };
    let noise_features = match &vars.noise {
        Some(layers) => {
            let noise = srm::apply_srm_tensor(image, bank)?;
            let input = tape.leaf(normalize_noise_input::<T>(&noise.tensor, bank.truncation));
            Some(backbone_features(tape, layers, input)?)
        }
        None => None,
    };

    let rpn_input = match (model.cfg.stream_mode, model.cfg.rpn_stream) {
        (StreamMode::NoiseOnly, _) => noise_features.expect("noise stream present"),
        (StreamMode::RgbOnly, _) => rgb_features.expect("rgb stream present"),
        (StreamMode::Fused, RpnStream::Rgb) => rgb_features.expect("rgb stream present"),
        (StreamMode::Fused, RpnStream::Noise) => noise_features.expect("noise stream present"),
    };
    let (cls_map, reg_map) = rpn_maps(tape, vars.rpn_conv, vars.rpn_cls, vars.rpn_reg, rpn_input)?;
    let shape = tape.value(cls_map).shape().to_vec();
    Ok(ForwardOutputs {
        rgb_features,
        noise_features,
        cls_map,
        reg_map,
        feature_h: shape[1],
        feature_w: shape[2],
    })
}

/// Build the classification-head input for one proposal according to the
/// model's stream/fusion configuration. Returns `(head_input, primary
/// pooled)` where the primary pooled feature feeds box regression.
pub fn head_inputs_for_proposal<T: Scalar>(
    model: &TwoStreamModel<T>,
    tape: &mut Tape<T>,
    outputs: &ForwardOutputs,
    proposal: &BoxF,
) -> Result<(Var, Var)> {
    let stride = model.cfg.backbone.stride();
    let roi = model.cfg.roi_size;
    match model.cfg.stream_mode {
        StreamMode::Fused => {
            let f_rgb = pooled_features(tape, outputs.rgb_features.unwrap(), proposal, stride, roi)?;
            let f_noise =
                pooled_features(tape, outputs.noise_features.unwrap(), proposal, stride, roi)?;
            let pair = RoiFeaturePair {
                f_rgb,
                f_noise,
                proposal: *proposal,
            };
            let fused = fuse_pair(tape, &pair, model.cfg.fusion, model.sketch.as_ref())?;
            Ok((fused, f_rgb))
        }
        StreamMode::RgbOnly => {
            let f = pooled_features(tape, outputs.rgb_features.unwrap(), proposal, stride, roi)?;
            Ok((flatten_pooled(tape, f)?, f))
        }
        StreamMode::NoiseOnly => {
            let f = pooled_features(tape, outputs.noise_features.unwrap(), proposal, stride, roi)?;
            Ok((flatten_pooled(tape, f)?, f))
        }
    }
}

/// Row-stable softmax over an `n×K` logit matrix.
pub fn softmax_rows<T: Scalar>(logits: &Tensor<T>) -> Vec<Vec<f64>> {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let mut out = Vec::with_capacity(n);
    for r in 0..n {
        let row: Vec<f64> = logits.data()[r * k..(r + 1) * k]
            .iter()
            .map(|&v| v.to_f64())
            .collect();
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        out.push(exps.iter().map(|e| e / denom).collect());
    }
    out
}

/// Full detection pipeline: resize, both streams, proposals, RoI fusion,
/// classification and box regression, then per-class suppression. Returned
/// boxes are in the original image's coordinates.
pub fn detect(
    model: &TwoStreamModel<f32>,
    image: &RgbImage,
    bank: &SrmKernelBank,
    settings: &DetectSettings,
) -> Result<Vec<Detection>> {
    let (ow, oh) = (image.width(), image.height());
    if ow == 0 || oh == 0 {
        return Err(Error::invalid("detect: empty image"));
    }
    let stride = model.cfg.backbone.stride();
    let (rw, rh) = resize_dims(ow, oh, model.cfg.backbone.input_side, stride);
    let resized = if (rw, rh) == (ow, oh) {
        image.clone()
    } else {
        imageio::resize_rgb(image, rw, rh)
    };
    let (sx, sy) = (rw as f32 / ow as f32, rh as f32 / oh as f32);
    let tensor = imageio::rgb_to_tensor(&resized);

    let mut tape: Tape<f32> = Tape::new();
    let vars = model.register_params(&mut tape);
    let outputs = forward_to_rpn(model, &mut tape, &vars, &tensor, bank)?;

    let anchors = generate_anchors(
        outputs.feature_h,
        outputs.feature_w,
        stride,
        &model.cfg.anchor_scales,
        &model.cfg.anchor_ratios,
    );
    let a = model.cfg.anchors_per_location();
    let objectness = rpn_objectness(tape.value(outputs.cls_map), a);
    let deltas = rpn_deltas(tape.value(outputs.reg_map), a);
    let proposals = propose_rois(
        &anchors,
        &objectness,
        &deltas,
        rw as f32,
        rh as f32,
        &settings.proposals,
    );
    if proposals.is_empty() {
        return Ok(Vec::new());
    }

    let mut head_rows = Vec::with_capacity(proposals.len());
    let mut bbox_rows = Vec::with_capacity(proposals.len());
    for p in &proposals {
        let (head, primary) = head_inputs_for_proposal(model, &mut tape, &outputs, p)?;
        head_rows.push(head);
        bbox_rows.push(flatten_pooled(&mut tape, primary)?);
    }
    let head_batch = tape.stack_rows(&head_rows)?;
    let logits = tape.linear(head_batch, vars.cls_head.w, vars.cls_head.b)?;
    let probs = softmax_rows(tape.value(logits));

    let bbox_batch = tape.stack_rows(&bbox_rows)?;
    let box_deltas = tape.linear(bbox_batch, vars.bbox_head.w, vars.bbox_head.b)?;
    let bd = tape.value(box_deltas).data();

    let k = model.cfg.class_mode.n_classes();
    let mut candidates: Vec<Detection> = Vec::new();
    for (i, p) in proposals.iter().enumerate() {
        let delta = [bd[i * 4], bd[i * 4 + 1], bd[i * 4 + 2], bd[i * 4 + 3]];
        let Ok(decoded) = decode_box_deltas(p, &delta) else {
            continue;
        };
        let clamped = decoded.clamped(rw as f32, rh as f32);
        if !clamped.is_valid() {
            continue;
        }
        let restored = clamped.scaled(1.0 / sx, 1.0 / sy);
        for class_id in 1..k {
            let score = probs[i][class_id] as f32;
            if score >= settings.score_floor {
                candidates.push(Detection {
                    bbox: restored,
                    class_id,
                    score,
                });
            }
        }
    }

    // Per-class suppression.
    let mut kept: Vec<Detection> = Vec::new();
    for class_id in 1..k {
        let class_dets: Vec<&Detection> =
            candidates.iter().filter(|d| d.class_id == class_id).collect();
        if class_dets.is_empty() {
            continue;
        }
        let boxes: Vec<BoxF> = class_dets.iter().map(|d| d.bbox).collect();
        let scores: Vec<f32> = class_dets.iter().map(|d| d.score).collect();
        for idx in nms(&boxes, &scores, settings.nms_threshold) {
            kept.push(class_dets[idx].clone());
        }
    }
    kept.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.class_id.cmp(&b.class_id))
    });
    Ok(kept)
}
