//! Binary mask utilities: polygon rasterization, connected components,
//! tight bounding boxes.

use image::GrayImage;

/// Pixels with value > 0 count as set.
pub fn mask_area(mask: &GrayImage) -> usize {
    mask.pixels().filter(|p| p.0[0] > 0).count()
}

pub fn is_set(mask: &GrayImage, x: u32, y: u32) -> bool {
    mask.get_pixel(x, y).0[0] > 0
}

/// Translate a mask by `(dx, dy)`; pixels leaving the canvas are dropped.
pub fn translate_mask(mask: &GrayImage, dx: i64, dy: i64) -> GrayImage {
    let (w, h) = mask.dimensions();
    let mut out = GrayImage::new(w, h);
    for (x, y, p) in mask.enumerate_pixels() {
        if p.0[0] > 0 {
            let nx = x as i64 + dx;
            let ny = y as i64 + dy;
            if nx >= 0 && ny >= 0 && (nx as u32) < w && (ny as u32) < h {
                out.put_pixel(nx as u32, ny as u32, image::Luma([255]));
            }
        }
    }
    out
}

/// Number of set pixels shared by two same-sized masks.
pub fn overlap_area(a: &GrayImage, b: &GrayImage) -> usize {
    a.pixels()
        .zip(b.pixels())
        .filter(|(pa, pb)| pa.0[0] > 0 && pb.0[0] > 0)
        .count()
}

/// True when every set pixel keeps a margin of `border` pixels from the
/// canvas edge.
pub fn fits_inside(mask: &GrayImage, border: u32) -> bool {
    let (w, h) = mask.dimensions();
    for (x, y, p) in mask.enumerate_pixels() {
        if p.0[0] > 0 && (x < border || y < border || x >= w - border || y >= h - border) {
            return false;
        }
    }
    true
}

/// Tight integer bounds of each 4-connected component, as
/// `(x1, y1, x2, y2)` with exclusive upper corners.
pub fn component_boxes(mask: &GrayImage) -> Vec<(u32, u32, u32, u32)> {
    let (w, h) = mask.dimensions();
    let mut visited = vec![false; (w * h) as usize];
    let mut boxes = Vec::new();
    let idx = |x: u32, y: u32| (y * w + x) as usize;
    let mut stack: Vec<(u32, u32)> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if visited[idx(x, y)] || !is_set(mask, x, y) {
                continue;
            }
            let (mut x1, mut y1, mut x2, mut y2) = (x, y, x, y);
            stack.push((x, y));
            visited[idx(x, y)] = true;
            while let Some((cx, cy)) = stack.pop() {
                x1 = x1.min(cx);
                y1 = y1.min(cy);
                x2 = x2.max(cx);
                y2 = y2.max(cy);
                let mut push = |nx: u32, ny: u32| {
                    if !visited[idx(nx, ny)] && is_set(mask, nx, ny) {
                        visited[idx(nx, ny)] = true;
                        stack.push((nx, ny));
                    }
                };
                if cx > 0 {
                    push(cx - 1, cy);
                }
                if cx + 1 < w {
                    push(cx + 1, cy);
                }
                if cy > 0 {
                    push(cx, cy - 1);
                }
                if cy + 1 < h {
                    push(cx, cy + 1);
                }
            }
            boxes.push((x1, y1, x2 + 1, y2 + 1));
        }
    }
    boxes
}

/// Rasterize a polygon into a mask with even-odd scanline filling. Vertices
/// are in pixel coordinates; the polygon closes itself.
pub fn rasterize_polygon(w: u32, h: u32, points: &[[f32; 2]]) -> GrayImage {
    let mut out = GrayImage::new(w, h);
    if points.len() < 3 {
        return out;
    }
    for y in 0..h {
        let yc = y as f32 + 0.5;
        let mut crossings: Vec<f32> = Vec::new();
        for i in 0..points.len() {
            let a = points[i];
            let b = points[(i + 1) % points.len()];
            if (a[1] <= yc && b[1] > yc) || (b[1] <= yc && a[1] > yc) {
                let t = (yc - a[1]) / (b[1] - a[1]);
                crossings.push(a[0] + t * (b[0] - a[0]));
            }
        }
        crossings.sort_by(|p, q| p.partial_cmp(q).unwrap());
        for pair in crossings.chunks(2) {
            if pair.len() < 2 {
                continue;
            }
            let x0 = pair[0].max(0.0).ceil() as u32;
            let x1 = pair[1].min(w as f32).floor() as u32;
            for x in x0..x1.min(w) {
                if (x as f32 + 0.5) > pair[0] && (x as f32 + 0.5) < pair[1] {
                    out.put_pixel(x, y, image::Luma([255]));
                }
            }
        }
    }
    out
}
