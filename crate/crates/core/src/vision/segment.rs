//! Candidate UI element boxes from an anchor crop.
//!
//! Pipeline: Sobel gradient magnitude, Otsu binarization, 8-connected
//! components, size filtering, suppression of boxes nested in other boxes,
//! IoU merging. An empty result falls back to the whole image.

use crate::imaging::{otsu_threshold, GrayF};
use crate::vision::BoundingBox;

/// Crops at or below this size in either dimension are treated as a single
/// element.
pub const SEGMENTATION_TRIGGER_PX: u32 = 100;
const MIN_SIDE_PX: u32 = 12;
const MAX_AREA_FRACTION: f64 = 0.9;
const MERGE_IOU: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub boxes: Vec<BoundingBox>,
    /// True when segmentation ran and produced no element, so `boxes` holds
    /// only the whole-image fallback.
    pub fell_back: bool,
}

pub fn segment_elements(image: &GrayF) -> Vec<BoundingBox> {
    segment_with_trigger(image, SEGMENTATION_TRIGGER_PX).boxes
}

pub fn segment_with_trigger(image: &GrayF, trigger_px: u32) -> Segmentation {
    let (w, h) = (image.width() as u32, image.height() as u32);
    let whole = BoundingBox { x: 0, y: 0, w: w.max(1), h: h.max(1) };
    if image.is_empty() || w <= trigger_px || h <= trigger_px {
        return Segmentation { boxes: vec![whole], fell_back: false };
    }

    let magnitude = image.gradient_magnitude();
    let threshold = otsu_threshold(magnitude.pixels());
    let mask: Vec<bool> = if threshold <= 0.0 {
        vec![false; magnitude.pixels().len()]
    } else {
        magnitude.pixels().iter().map(|&m| m > threshold).collect()
    };

    let image_area = f64::from(w) * f64::from(h);
    let mut boxes: Vec<BoundingBox> = connected_component_boxes(&mask, w as usize, h as usize)
        .into_iter()
        .map(|b| inset_sobel_halo(b, w, h))
        .filter(|b| b.w >= MIN_SIDE_PX && b.h >= MIN_SIDE_PX)
        .filter(|b| (b.area() as f64) <= MAX_AREA_FRACTION * image_area)
        .collect();
    boxes = drop_nested(boxes);
    boxes = merge_overlapping(boxes);
    boxes.sort_by_key(|b| (b.y, b.x, b.h, b.w));

    if boxes.is_empty() {
        Segmentation { boxes: vec![whole], fell_back: true }
    } else {
        Segmentation { boxes, fell_back: false }
    }
}

/// The 3x3 Sobel response spreads one pixel outside a step edge, so a box
/// around the thresholded gradient is one pixel too large on each side that
/// is not on the image border.
fn inset_sobel_halo(b: BoundingBox, w: u32, h: u32) -> BoundingBox {
    if b.w <= 2 || b.h <= 2 {
        return b;
    }
    let left = u32::from(b.x > 0);
    let top = u32::from(b.y > 0);
    let right = u32::from(b.right() < u64::from(w));
    let bottom = u32::from(b.bottom() < u64::from(h));
    BoundingBox { x: b.x + left, y: b.y + top, w: b.w - left - right, h: b.h - top - bottom }
}

fn connected_component_boxes(mask: &[bool], w: usize, h: usize) -> Vec<BoundingBox> {
    let mut seen = vec![false; mask.len()];
    let mut boxes = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(idx) = stack.pop() {
            let (x, y) = (idx % w, idx / w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let n = ny as usize * w + nx as usize;
                    if mask[n] && !seen[n] {
                        seen[n] = true;
                        stack.push(n);
                    }
                }
            }
        }
        boxes.push(BoundingBox {
            x: x0 as u32,
            y: y0 as u32,
            w: (x1 - x0 + 1) as u32,
            h: (y1 - y0 + 1) as u32,
        });
    }
    boxes
}

fn drop_nested(boxes: Vec<BoundingBox>) -> Vec<BoundingBox> {
    boxes
        .iter()
        .enumerate()
        .filter(|(i, b)| {
            !boxes
                .iter()
                .enumerate()
                .any(|(j, other)| j != *i && other.contains(b) && (other != *b || j < *i))
        })
        .map(|(_, b)| *b)
        .collect()
}

fn merge_overlapping(mut boxes: Vec<BoundingBox>) -> Vec<BoundingBox> {
    loop {
        let mut merged = false;
        'outer: for i in 0..boxes.len() {
            for j in i + 1..boxes.len() {
                if boxes[i].iou(&boxes[j]) > MERGE_IOU {
                    let union = boxes[i].union(&boxes[j]);
                    boxes.swap_remove(j);
                    boxes[i] = union;
                    merged = true;
                    break 'outer;
                }
            }
        }
        if !merged {
            return boxes;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{toolbar, IconGenerator};

    #[test]
    fn small_crop_is_one_box() {
        let img = GrayF::from_image(&IconGenerator::new(1).icon(64));
        assert_eq!(segment_elements(&img), vec![BoundingBox { x: 0, y: 0, w: 64, h: 64 }]);
    }

    #[test]
    fn exactly_at_threshold_is_one_box() {
        let img = GrayF::filled(100, 300, 0.5);
        assert_eq!(segment_elements(&img).len(), 1);
    }

    #[test]
    fn uniform_large_crop_falls_back() {
        let seg = segment_with_trigger(&GrayF::filled(101, 101, 0.2), SEGMENTATION_TRIGGER_PX);
        assert!(seg.fell_back);
        assert_eq!(seg.boxes, vec![BoundingBox { x: 0, y: 0, w: 101, h: 101 }]);
    }

    #[test]
    fn toolbar_yields_one_box_per_icon() {
        let mut gen = IconGenerator::new(77);
        let icons: Vec<_> = (0..4).map(|_| gen.icon(48)).collect();
        let (bar, origins) = toolbar(&icons, 300, 120, 20, 8);
        let boxes = segment_elements(&GrayF::from_image(&bar));
        assert_eq!(boxes.len(), 4, "{boxes:?}");
        for (b, (ox, oy)) in boxes.iter().zip(origins) {
            let (cx, cy) = (ox + 24, oy + 24);
            assert!(b.x <= cx && cx < b.x + b.w && b.y <= cy && cy < b.y + b.h);
            assert!(b.x + b.w <= 300 && b.y + b.h <= 120);
            assert_eq!((b.x, b.y, b.w, b.h), (ox, oy, 48, 48));
        }
    }

    #[test]
    fn nested_boxes_are_dropped() {
        let outer = BoundingBox { x: 0, y: 0, w: 50, h: 50 };
        let inner = BoundingBox { x: 10, y: 10, w: 20, h: 20 };
        assert_eq!(drop_nested(vec![inner, outer]), vec![outer]);
        assert_eq!(drop_nested(vec![outer, outer]), vec![outer]);
    }

    #[test]
    fn high_overlap_boxes_merge() {
        let a = BoundingBox { x: 0, y: 0, w: 20, h: 20 };
        let b = BoundingBox { x: 2, y: 0, w: 20, h: 20 };
        assert_eq!(merge_overlapping(vec![a, b]), vec![BoundingBox { x: 0, y: 0, w: 22, h: 20 }]);
    }
}
