//! Box geometry: IoU, delta encoding, non-maximum suppression.
//!
//! Boxes are `(x1, y1, x2, y2)` corner coordinates in continuous pixels;
//! width is `x2 - x1` with no +1 convention anywhere.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoxF {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
}

impl BoxF {
    pub fn new(x1: f32, y1: f32, x2: f32, y2: f32) -> Self {
        BoxF { x1, y1, x2, y2 }
    }

    pub fn width(&self) -> f32 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f32 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f32 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn center(&self) -> (f32, f32) {
        ((self.x1 + self.x2) * 0.5, (self.y1 + self.y2) * 0.5)
    }

    pub fn is_valid(&self) -> bool {
        self.x2 > self.x1 && self.y2 > self.y1
    }

    pub fn clamped(&self, w: f32, h: f32) -> BoxF {
        BoxF {
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
            x2: self.x2.clamp(0.0, w),
            y2: self.y2.clamp(0.0, h),
        }
    }

    pub fn inside(&self, w: f32, h: f32) -> bool {
        self.x1 >= 0.0 && self.y1 >= 0.0 && self.x2 <= w && self.y2 <= h
    }

    /// Per-axis rescale (for mapping between resized and original images).
    pub fn scaled(&self, sx: f32, sy: f32) -> BoxF {
        BoxF {
            x1: self.x1 * sx,
            y1: self.y1 * sy,
            x2: self.x2 * sx,
            y2: self.y2 * sy,
        }
    }
}

/// Intersection area over union area; 0 for disjoint or degenerate boxes.
pub fn iou(a: &BoxF, b: &BoxF) -> f32 {
    let ix = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let iy = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Box regression targets: `((cx*−cx)/w, (cy*−cy)/h, ln(w*/w), ln(h*/h))`.
pub fn encode_box_deltas(proposal: &BoxF, gt: &BoxF) -> Result<[f32; 4]> {
    if !proposal.is_valid() || !gt.is_valid() {
        return Err(Error::invalid(format!(
            "encode_box_deltas: nonpositive box size ({proposal:?} / {gt:?})"
        )));
    }
    let (pcx, pcy) = proposal.center();
    let (gcx, gcy) = gt.center();
    let (pw, ph) = (proposal.width(), proposal.height());
    Ok([
        (gcx - pcx) / pw,
        (gcy - pcy) / ph,
        (gt.width() / pw).ln(),
        (gt.height() / ph).ln(),
    ])
}

/// Exact inverse of [`encode_box_deltas`], unclamped. Callers clamp to the
/// image with [`BoxF::clamped`].
pub fn decode_box_deltas(proposal: &BoxF, deltas: &[f32; 4]) -> Result<BoxF> {
    if !proposal.is_valid() {
        return Err(Error::invalid(format!(
            "decode_box_deltas: nonpositive proposal size {proposal:?}"
        )));
    }
    let (pcx, pcy) = proposal.center();
    let (pw, ph) = (proposal.width(), proposal.height());
    let cx = pcx + deltas[0] * pw;
    let cy = pcy + deltas[1] * ph;
    let w = pw * deltas[2].exp();
    let h = ph * deltas[3].exp();
    Ok(BoxF {
        x1: cx - w * 0.5,
        y1: cy - h * 0.5,
        x2: cx + w * 0.5,
        y2: cy + h * 0.5,
    })
}

/// Grow a box outward by `pad` on every side, clamped to the image bounds.
pub fn enlarge_box(b: &BoxF, pad: f32, image_w: f32, image_h: f32) -> BoxF {
    BoxF {
        x1: b.x1 - pad,
        y1: b.y1 - pad,
        x2: b.x2 + pad,
        y2: b.y2 + pad,
    }
    .clamped(image_w, image_h)
}

/// Greedy non-maximum suppression. Returns indices of kept boxes in
/// descending score order; the highest score is kept first and anything with
/// IoU strictly above `iou_threshold` to a kept box is suppressed. Score
/// ties break toward the lower box index.
pub fn nms(boxes: &[BoxF], scores: &[f32], iou_threshold: f32) -> Vec<usize> {
    debug_assert_eq!(boxes.len(), scores.len());
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    'next: for &i in &order {
        for &k in &kept {
            if iou(&boxes[i], &boxes[k]) > iou_threshold {
                continue 'next;
            }
        }
        kept.push(i);
    }
    kept
}

/// A final scored detection in image coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BoxF,
    /// Class index in the model's class set (0 is background and never
    /// emitted).
    pub class_id: usize,
    pub score: f32,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn iou_identical_disjoint_partial() {
        let a = BoxF::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        let b = BoxF::new(20.0, 20.0, 30.0, 30.0);
        assert_eq!(iou(&a, &b), 0.0);
        let c = BoxF::new(5.0, 5.0, 15.0, 15.0);
        let got = iou(&a, &c);
        assert!((got - 25.0 / 175.0).abs() < 1e-6, "{got}");
    }

    #[test]
    fn iou_matches_integer_grid_counting() {
        // For integer-cornered boxes, IoU equals unit-cell counting.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let rand_box = |rng: &mut ChaCha8Rng| {
                let x1 = rng.gen_range(0..20);
                let y1 = rng.gen_range(0..20);
                let x2 = rng.gen_range(x1 + 1..24);
                let y2 = rng.gen_range(y1 + 1..24);
                BoxF::new(x1 as f32, y1 as f32, x2 as f32, y2 as f32)
            };
            let a = rand_box(&mut rng);
            let b = rand_box(&mut rng);
            let mut inter = 0usize;
            let mut union = 0usize;
            for y in 0..24 {
                for x in 0..24 {
                    let (cx, cy) = (x as f32 + 0.5, y as f32 + 0.5);
                    let in_a = cx > a.x1 && cx < a.x2 && cy > a.y1 && cy < a.y2;
                    let in_b = cx > b.x1 && cx < b.x2 && cy > b.y1 && cy < b.y2;
                    inter += (in_a && in_b) as usize;
                    union += (in_a || in_b) as usize;
                }
            }
            let want = inter as f32 / union as f32;
            assert!((iou(&a, &b) - want).abs() < 1e-6);
        }
    }

    #[test]
    fn iou_degenerate_is_zero() {
        let a = BoxF::new(3.0, 3.0, 3.0, 8.0);
        let b = BoxF::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn deltas_zero_for_identical_boxes() {
        let b = BoxF::new(2.0, 3.0, 9.0, 11.0);
        assert_eq!(encode_box_deltas(&b, &b).unwrap(), [0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn deltas_hand_case() {
        let p = BoxF::new(0.0, 0.0, 10.0, 10.0);
        let g = BoxF::new(5.0, 5.0, 15.0, 15.0);
        let d = encode_box_deltas(&p, &g).unwrap();
        assert!((d[0] - 0.5).abs() < 1e-6);
        assert!((d[1] - 0.5).abs() < 1e-6);
        assert!(d[2].abs() < 1e-6);
        assert!(d[3].abs() < 1e-6);
    }

    #[test]
    fn decode_inverts_encode() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let rand_box = |rng: &mut ChaCha8Rng| {
                let x1: f32 = rng.gen_range(0.0..100.0);
                let y1: f32 = rng.gen_range(0.0..100.0);
                BoxF::new(
                    x1,
                    y1,
                    x1 + rng.gen_range(1.0..60.0),
                    y1 + rng.gen_range(1.0..60.0),
                )
            };
            let p = rand_box(&mut rng);
            let g = rand_box(&mut rng);
            let d = encode_box_deltas(&p, &g).unwrap();
            let back = decode_box_deltas(&p, &d).unwrap();
            for (got, want) in [
                (back.x1, g.x1),
                (back.y1, g.y1),
                (back.x2, g.x2),
                (back.y2, g.y2),
            ] {
                assert!(
                    (got - want).abs() / want.abs().max(1.0) < 1e-5,
                    "{got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn encode_rejects_degenerate() {
        let flat = BoxF::new(0.0, 0.0, 0.0, 10.0);
        let ok = BoxF::new(0.0, 0.0, 10.0, 10.0);
        assert!(encode_box_deltas(&flat, &ok).is_err());
        assert!(encode_box_deltas(&ok, &flat).is_err());
    }

    #[test]
    fn enlarge_cases() {
        let b = BoxF::new(30.0, 30.0, 60.0, 60.0);
        assert_eq!(
            enlarge_box(&b, 20.0, 100.0, 100.0),
            BoxF::new(10.0, 10.0, 80.0, 80.0)
        );
        let near_edge = BoxF::new(5.0, 5.0, 30.0, 30.0);
        assert_eq!(
            enlarge_box(&near_edge, 20.0, 100.0, 100.0),
            BoxF::new(0.0, 0.0, 50.0, 50.0)
        );
        assert_eq!(enlarge_box(&b, 0.0, 100.0, 100.0), b);
    }

    #[test]
    fn nms_single_and_duplicate() {
        let b = BoxF::new(0.0, 0.0, 10.0, 10.0);
        assert_eq!(nms(&[b], &[0.7], 0.2), vec![0]);
        assert_eq!(nms(&[b, b], &[0.9, 0.8], 0.2), vec![0]);
        assert_eq!(nms(&[b, b], &[0.8, 0.9], 0.2), vec![1]);
    }

    #[test]
    fn nms_matches_quadratic_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut boxes = Vec::new();
        let mut scores = Vec::new();
        for _ in 0..50 {
            let x1: f32 = rng.gen_range(0.0..80.0);
            let y1: f32 = rng.gen_range(0.0..80.0);
            boxes.push(BoxF::new(
                x1,
                y1,
                x1 + rng.gen_range(5.0..40.0),
                y1 + rng.gen_range(5.0..40.0),
            ));
            scores.push(rng.gen_range(0.0..1.0));
        }
        // Exhaustive reference: repeatedly scan for the best unsuppressed box.
        let mut suppressed = vec![false; boxes.len()];
        let mut want = Vec::new();
        loop {
            let mut best: Option<usize> = None;
            for i in 0..boxes.len() {
                if suppressed[i] || want.contains(&i) {
                    continue;
                }
                best = match best {
                    None => Some(i),
                    Some(b) if scores[i] > scores[b] => Some(i),
                    other => other,
                };
            }
            let Some(b) = best else { break };
            want.push(b);
            for i in 0..boxes.len() {
                if i != b && !suppressed[i] && iou(&boxes[i], &boxes[b]) > 0.3 {
                    suppressed[i] = true;
                }
            }
        }
        assert_eq!(nms(&boxes, &scores, 0.3), want);
    }

    #[test]
    fn nms_kept_boxes_pairwise_below_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let boxes: Vec<BoxF> = (0..40)
            .map(|_| {
                let x1: f32 = rng.gen_range(0.0..50.0);
                let y1: f32 = rng.gen_range(0.0..50.0);
                BoxF::new(x1, y1, x1 + 20.0, y1 + 20.0)
            })
            .collect();
        let scores: Vec<f32> = (0..40).map(|_| rng.gen_range(0.0..1.0)).collect();
        let kept = nms(&boxes, &scores, 0.4);
        for (i, &a) in kept.iter().enumerate() {
            for &b in &kept[i + 1..] {
                assert!(iou(&boxes[a], &boxes[b]) <= 0.4);
            }
        }
    }
}
