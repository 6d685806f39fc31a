//! Anchor grids for the region proposal head.

use super::boxes::BoxF;

/// Candidate boxes tiled over a feature map. Anchor `((y·W + x)·A + a)`
/// sits at feature location `(y, x)`; within a location the order is scale
/// major, ratio minor.
#[derive(Clone, Debug)]
pub struct AnchorSet {
    pub boxes: Vec<BoxF>,
    pub feature_h: usize,
    pub feature_w: usize,
    /// Anchors per location: `scales.len() * ratios.len()`.
    pub per_location: usize,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

/// Anchors centered at `((x+0.5)·stride, (y+0.5)·stride)`. For scale `s` and
/// aspect ratio `r = h:w`, sides are `h = s·√r`, `w = s/√r`, preserving area
/// `s²`. Boxes are not clamped to the image.
pub fn generate_anchors(
    feature_h: usize,
    feature_w: usize,
    stride: usize,
    scales: &[f32],
    ratios: &[f32],
) -> AnchorSet {
    let per_location = scales.len() * ratios.len();
    let mut boxes = Vec::with_capacity(feature_h * feature_w * per_location);
    for y in 0..feature_h {
        for x in 0..feature_w {
            let cx = (x as f32 + 0.5) * stride as f32;
            let cy = (y as f32 + 0.5) * stride as f32;
            for &s in scales {
                for &r in ratios {
                    let h = s * r.sqrt();
                    let w = s / r.sqrt();
                    boxes.push(BoxF::new(
                        cx - w * 0.5,
                        cy - h * 0.5,
                        cx + w * 0.5,
                        cy + h * 0.5,
                    ));
                }
            }
        }
    }
    AnchorSet {
        boxes,
        feature_h,
        feature_w,
        per_location,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn count_for_8x8_map() {
        let set = generate_anchors(8, 8, 8, &[8.0, 16.0, 32.0, 64.0], &[0.5, 1.0, 2.0]);
        assert_eq!(set.len(), 768);
        assert_eq!(set.per_location, 12);
    }

    #[test]
    fn first_location_unit_ratio_box() {
        let set = generate_anchors(8, 8, 8, &[16.0], &[1.0]);
        let b = set.boxes[0];
        assert_eq!((b.x1, b.y1, b.x2, b.y2), (-4.0, -4.0, 12.0, 12.0));
    }

    #[test]
    fn ratios_preserve_area() {
        let set = generate_anchors(1, 1, 8, &[8.0, 16.0, 32.0, 64.0], &[0.5, 1.0, 2.0]);
        for chunk in set.boxes.chunks(3) {
            let base = chunk[1].area();
            for b in chunk {
                assert!((b.area() - base).abs() / base < 1e-4);
            }
        }
    }
}
