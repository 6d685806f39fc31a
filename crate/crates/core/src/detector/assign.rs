//! Training-time target assignment: anchor labels for the proposal head and
//! foreground/background sampling for the classification head.

use rand::seq::SliceRandom;
use rand::Rng;

use super::anchors::AnchorSet;
use super::boxes::{encode_box_deltas, iou, BoxF};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorLabel {
    Positive,
    Negative,
    Ignore,
}

/// Per-anchor labels and regression targets plus the sampled mini-batch.
#[derive(Clone, Debug)]
pub struct AnchorAssignment {
    pub labels: Vec<AnchorLabel>,
    /// Ground-truth index matched to each positive anchor.
    pub matched_gt: Vec<Option<usize>>,
    /// Encoded regression target for each positive anchor.
    pub deltas: Vec<Option<[f32; 4]>>,
    /// Sampled anchor indices, exactly the configured batch size, positives
    /// first.
    pub sampled: Vec<usize>,
}

/// IoU thresholds and batch size for anchor sampling.
#[derive(Clone, Copy, Debug)]
pub struct AssignConfig {
    pub iou_positive: f32,
    pub iou_negative: f32,
    pub batch_size: usize,
}

impl Default for AssignConfig {
    fn default() -> Self {
        AssignConfig {
            iou_positive: 0.7,
            iou_negative: 0.3,
            batch_size: 64,
        }
    }
}

/// Label anchors against ground truth.
///
/// Positives have IoU ≥ `iou_positive` with some ground-truth box or are a
/// ground-truth box's best-overlapping anchor; negatives have max IoU ≤
/// `iou_negative`; everything in between, and any anchor crossing the image
/// border, is ignored. The sampled batch holds at most half positives and is
/// padded with random negatives.
pub fn assign_anchor_labels<R: Rng>(
    anchors: &AnchorSet,
    gt_boxes: &[BoxF],
    image_w: f32,
    image_h: f32,
    cfg: &AssignConfig,
    rng: &mut R,
) -> Result<AnchorAssignment> {
    let n = anchors.len();
    let mut labels = vec![AnchorLabel::Ignore; n];
    let mut matched_gt: Vec<Option<usize>> = vec![None; n];
    let mut best_iou = vec![0f32; n];

    let valid: Vec<bool> = anchors
        .boxes
        .iter()
        .map(|b| b.inside(image_w, image_h))
        .collect();

    for (i, anchor) in anchors.boxes.iter().enumerate() {
        if !valid[i] {
            continue;
        }
        for (g, gt) in gt_boxes.iter().enumerate() {
            let v = iou(anchor, gt);
            if v > best_iou[i] {
                best_iou[i] = v;
                matched_gt[i] = Some(g);
            }
        }
        labels[i] = if best_iou[i] >= cfg.iou_positive {
            AnchorLabel::Positive
        } else if best_iou[i] <= cfg.iou_negative {
            AnchorLabel::Negative
        } else {
            AnchorLabel::Ignore
        };
    }

    // Rescue: each ground truth forces its best-overlapping in-border anchor
    // positive, so no ground truth goes unmatched.
    for (g, gt) in gt_boxes.iter().enumerate() {
        let mut best: Option<(usize, f32)> = None;
        for (i, anchor) in anchors.boxes.iter().enumerate() {
            if !valid[i] {
                continue;
            }
            let v = iou(anchor, gt);
            if v > 0.0 && best.map_or(true, |(_, bv)| v > bv) {
                best = Some((i, v));
            }
        }
        if let Some((i, v)) = best {
            labels[i] = AnchorLabel::Positive;
            if matched_gt[i].is_none() || v >= best_iou[i] {
                matched_gt[i] = Some(g);
                best_iou[i] = v;
            }
        }
    }

    let mut deltas: Vec<Option<[f32; 4]>> = vec![None; n];
    for i in 0..n {
        if labels[i] == AnchorLabel::Positive {
            let g = matched_gt[i].expect("positive anchor must have a match");
            deltas[i] = Some(encode_box_deltas(&anchors.boxes[i], &gt_boxes[g])?);
        }
    }

    let mut positives: Vec<usize> = (0..n).filter(|&i| labels[i] == AnchorLabel::Positive).collect();
    let mut negatives: Vec<usize> = (0..n).filter(|&i| labels[i] == AnchorLabel::Negative).collect();
    if negatives.is_empty() {
        return Err(Error::invalid(
            "assign_anchor_labels: no valid negative anchors (degenerate image)",
        ));
    }
    positives.shuffle(rng);
    negatives.shuffle(rng);
    positives.truncate(cfg.batch_size / 2);
    let mut sampled = positives;
    let need = cfg.batch_size - sampled.len();
    if negatives.len() >= need {
        sampled.extend_from_slice(&negatives[..need]);
    } else {
        // Degenerate tiny images: pad by resampling negatives so the batch
        // size stays fixed.
        for k in 0..need {
            sampled.push(negatives[k % negatives.len()]);
        }
    }

    Ok(AnchorAssignment {
        labels,
        matched_gt,
        deltas,
        sampled,
    })
}

/// A sampled second-stage RoI with its class label and, for foreground, the
/// encoded regression target.
#[derive(Clone, Debug)]
pub struct RoiSample {
    pub bbox: BoxF,
    /// 0 = background, otherwise the matched ground truth's class index.
    pub label: usize,
    pub target: Option<[f32; 4]>,
}

/// Configuration for second-stage RoI sampling.
#[derive(Clone, Copy, Debug)]
pub struct RoiSampleConfig {
    pub fg_iou: f32,
    /// Background boxes sampled per foreground box.
    pub bg_ratio: usize,
    pub max_rois: usize,
}

impl Default for RoiSampleConfig {
    fn default() -> Self {
        RoiSampleConfig {
            fg_iou: 0.5,
            bg_ratio: 3,
            max_rois: 64,
        }
    }
}

/// Match proposals to ground truth (IoU ≥ `fg_iou` makes foreground) and
/// draw a class-balanced sample.
pub fn match_and_sample_rois<R: Rng>(
    proposals: &[BoxF],
    gt: &[(BoxF, usize)],
    cfg: &RoiSampleConfig,
    rng: &mut R,
) -> Vec<RoiSample> {
    let mut fg: Vec<RoiSample> = Vec::new();
    let mut bg: Vec<RoiSample> = Vec::new();
    for p in proposals {
        if !p.is_valid() {
            continue;
        }
        let mut best: Option<(usize, f32)> = None;
        for (g, (gbox, _)) in gt.iter().enumerate() {
            let v = iou(p, gbox);
            if best.map_or(true, |(_, bv)| v > bv) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, v)) if v >= cfg.fg_iou => fg.push(RoiSample {
                bbox: *p,
                label: gt[g].1,
                target: encode_box_deltas(p, &gt[g].0).ok(),
            }),
            _ => bg.push(RoiSample {
                bbox: *p,
                label: 0,
                target: None,
            }),
        }
    }
    fg.shuffle(rng);
    bg.shuffle(rng);
    let max_fg = (cfg.max_rois / (cfg.bg_ratio + 1)).max(1);
    fg.truncate(max_fg);
    let n_bg = bg
        .len()
        .min(cfg.max_rois - fg.len())
        .min((cfg.bg_ratio * fg.len()).max(cfg.max_rois / (cfg.bg_ratio + 1)));
    bg.truncate(n_bg);
    fg.extend(bg);
    fg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::anchors::generate_anchors;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn anchors_16() -> AnchorSet {
        generate_anchors(16, 16, 8, &[8.0, 16.0, 32.0, 64.0], &[0.5, 1.0, 2.0])
    }

    #[test]
    fn exact_match_is_positive() {
        let anchors = anchors_16();
        // Pick an in-border anchor and use it verbatim as ground truth.
        let idx = anchors
            .boxes
            .iter()
            .position(|b| b.inside(128.0, 128.0))
            .unwrap();
        let gt = vec![anchors.boxes[idx]];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out =
            assign_anchor_labels(&anchors, &gt, 128.0, 128.0, &AssignConfig::default(), &mut rng)
                .unwrap();
        assert_eq!(out.labels[idx], AnchorLabel::Positive);
        assert_eq!(out.matched_gt[idx], Some(0));
        assert_eq!(out.deltas[idx], Some([0.0, 0.0, 0.0, 0.0]));
        assert_eq!(out.sampled.len(), 64);
    }

    #[test]
    fn disjoint_anchor_is_negative() {
        let anchors = anchors_16();
        let gt = vec![BoxF::new(100.0, 100.0, 120.0, 120.0)];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out =
            assign_anchor_labels(&anchors, &gt, 128.0, 128.0, &AssignConfig::default(), &mut rng)
                .unwrap();
        // An in-border anchor far from the ground truth.
        let idx = anchors
            .boxes
            .iter()
            .position(|b| b.inside(128.0, 128.0) && iou(b, &gt[0]) == 0.0)
            .unwrap();
        assert_eq!(out.labels[idx], AnchorLabel::Negative);
    }

    #[test]
    fn threshold_band_is_ignored_unless_argmax() {
        // One location, two anchors. GT overlaps anchor A with IoU ≈ 0.5 and
        // anchor B higher, so A sits in the ignore band and is not rescued.
        let a = BoxF::new(0.0, 0.0, 10.0, 10.0);
        let b = BoxF::new(0.0, 0.0, 10.0, 16.0);
        let anchors = AnchorSet {
            boxes: vec![a, b],
            feature_h: 1,
            feature_w: 1,
            per_location: 2,
        };
        // GT chosen so iou(gt, a) lands strictly between 0.3 and 0.7.
        let gt = BoxF::new(0.0, 0.0, 10.0, 15.0);
        assert!(iou(&a, &gt) > 0.3 && iou(&a, &gt) < 0.7);
        assert!(iou(&b, &gt) > iou(&a, &gt));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = AssignConfig {
            batch_size: 2,
            ..AssignConfig::default()
        };
        let err = assign_anchor_labels(&anchors, &[gt], 20.0, 20.0, &cfg, &mut rng);
        // No negatives exist in this two-anchor world: rejected as degenerate.
        assert!(err.is_err());

        // Add a disjoint negative anchor so sampling can proceed.
        let neg = BoxF::new(15.0, 15.0, 19.0, 19.0);
        let anchors = AnchorSet {
            boxes: vec![a, b, neg],
            feature_h: 1,
            feature_w: 1,
            per_location: 3,
        };
        let out = assign_anchor_labels(&anchors, &[gt], 20.0, 20.0, &cfg, &mut rng).unwrap();
        assert_eq!(out.labels[0], AnchorLabel::Ignore);
        assert_eq!(out.labels[1], AnchorLabel::Positive);
        assert_eq!(out.labels[2], AnchorLabel::Negative);
    }

    #[test]
    fn authentic_image_samples_all_negatives() {
        let anchors = anchors_16();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out =
            assign_anchor_labels(&anchors, &[], 128.0, 128.0, &AssignConfig::default(), &mut rng)
                .unwrap();
        assert_eq!(out.sampled.len(), 64);
        assert!(out
            .sampled
            .iter()
            .all(|&i| out.labels[i] == AnchorLabel::Negative));
    }

    #[test]
    fn roi_sampling_balances_foreground() {
        let gt = vec![(BoxF::new(20.0, 20.0, 60.0, 60.0), 1usize)];
        let mut proposals = vec![gt[0].0; 30];
        for i in 0..30 {
            proposals.push(BoxF::new(
                70.0 + (i % 5) as f32,
                70.0,
                120.0,
                120.0 - (i % 7) as f32,
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let picked = match_and_sample_rois(&proposals, &gt, &RoiSampleConfig::default(), &mut rng);
        let n_fg = picked.iter().filter(|r| r.label != 0).count();
        let n_bg = picked.len() - n_fg;
        assert_eq!(n_fg, 16);
        assert!(n_bg <= 48);
        assert!(picked.iter().all(|r| (r.label != 0) == r.target.is_some()));
    }
}
