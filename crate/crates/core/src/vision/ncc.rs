use crate::imaging::GrayF;
use crate::vision::VisionError;

/// Side length both inputs are resampled to when their sizes differ.
pub const COMPARISON_SIZE: usize = 64;

/// Normalized cross-correlation coefficient of two images.
///
/// Same-size inputs are compared pixel for pixel; otherwise both are
/// bilinearly resampled to 64×64 first. Returns 0 when either side has no
/// variance.
pub fn ncc_score(a: &GrayF, b: &GrayF) -> Result<f64, VisionError> {
    if a.is_empty() || b.is_empty() {
        return Err(VisionError::EmptyImage);
    }
    if a.width() == b.width() && a.height() == b.height() {
        return Ok(pearson(a.pixels(), b.pixels()));
    }
    let ra = a.resize_bilinear(COMPARISON_SIZE, COMPARISON_SIZE);
    let rb = b.resize_bilinear(COMPARISON_SIZE, COMPARISON_SIZE);
    Ok(pearson(ra.pixels(), rb.pixels()))
}

pub(crate) fn pearson(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut cross, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - mean_a, y - mean_b);
        cross += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    // Relative cutoff: a flat image can pick up rounding residue in its mean.
    if var_a <= 1e-18 * n || var_b <= 1e-18 * n {
        return 0.0;
    }
    (cross / (var_a * var_b).sqrt()).clamp(-1.0, 1.0)
}

/// Best same-size NCC of `template` over every `stride`-aligned window of
/// `image`. Returns `(score, x, y)` or `None` when the template does not fit.
pub fn sliding_ncc(image: &GrayF, template: &GrayF, stride: usize) -> Option<(f64, usize, usize)> {
    let (tw, th) = (template.width(), template.height());
    if tw == 0 || th == 0 || tw > image.width() || th > image.height() {
        return None;
    }
    let stride = stride.max(1);
    let mut best: Option<(f64, usize, usize)> = None;
    let mut y = 0;
    while y + th <= image.height() {
        let mut x = 0;
        while x + tw <= image.width() {
            let window = image.crop(x, y, tw, th);
            let score = pearson(window.pixels(), template.pixels());
            if best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, x, y));
            }
            x += stride;
        }
        y += stride;
    }
    best
}
