//! Region proposals from raw proposal-head outputs.

use super::anchors::AnchorSet;
use super::boxes::{decode_box_deltas, nms, BoxF};

/// Proposal filtering knobs.
#[derive(Clone, Copy, Debug)]
pub struct ProposalConfig {
    /// IoU threshold for suppressing overlapping proposals.
    pub nms_threshold: f32,
    /// Minimum box side in input pixels after decoding.
    pub min_size: f32,
    /// Kept proposals: 64 for training, 300 at test time.
    pub max_proposals: usize,
}

impl ProposalConfig {
    pub fn train() -> Self {
        ProposalConfig {
            nms_threshold: 0.7,
            min_size: 8.0,
            max_proposals: 64,
        }
    }

    pub fn test() -> Self {
        ProposalConfig {
            nms_threshold: 0.7,
            min_size: 8.0,
            max_proposals: 300,
        }
    }
}

/// Decode every anchor with its predicted deltas, clamp to the image, drop
/// tiny boxes, suppress overlaps on objectness, and keep the top scorers.
/// Ties are deterministic (lower anchor index wins).
pub fn propose_rois(
    anchors: &AnchorSet,
    objectness: &[f32],
    deltas: &[[f32; 4]],
    image_w: f32,
    image_h: f32,
    cfg: &ProposalConfig,
) -> Vec<BoxF> {
    debug_assert_eq!(anchors.len(), objectness.len());
    debug_assert_eq!(anchors.len(), deltas.len());
    let mut boxes: Vec<BoxF> = Vec::new();
    let mut scores: Vec<f32> = Vec::new();
    for (i, anchor) in anchors.boxes.iter().enumerate() {
        let Ok(decoded) = decode_box_deltas(anchor, &deltas[i]) else {
            continue;
        };
        let clamped = decoded.clamped(image_w, image_h);
        if clamped.width() < cfg.min_size || clamped.height() < cfg.min_size {
            continue;
        }
        boxes.push(clamped);
        scores.push(objectness[i]);
    }
    let kept = nms(&boxes, &scores, cfg.nms_threshold);
    kept.into_iter()
        .take(cfg.max_proposals)
        .map(|i| boxes[i])
        .collect()
}
