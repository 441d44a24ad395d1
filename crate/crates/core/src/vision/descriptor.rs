//! Dense global descriptor used to shortlist icon candidates before NCC.
//!
//! Layout: 256 mean-subtracted intensities of a 16×16 area-averaged
//! grayscale thumbnail, followed by an 8-bin gradient-orientation histogram
//! over the same thumbnail. Each block is normalized on its own before the
//! concatenation is normalized, so neither block dominates the cosine.

use std::f64::consts::PI;

use crate::imaging::GrayF;
use crate::vision::VisionError;

const GRID: usize = 16;
const ORIENTATION_BINS: usize = 8;

/// Total descriptor length shared by every manifest.
pub const DESCRIPTOR_DIM: usize = GRID * GRID + ORIENTATION_BINS;

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    pub values: Vec<f64>,
    /// Set when the image has no intensity variation and no gradients; the
    /// vector is then all zeros and matches nothing.
    pub degenerate: bool,
}

pub fn compute_descriptor(image: &GrayF) -> Result<Descriptor, VisionError> {
    if image.is_empty() {
        return Err(VisionError::EmptyImage);
    }
    let thumb = image.resize_area(GRID, GRID);

    let mean = thumb.pixels().iter().sum::<f64>() / (GRID * GRID) as f64;
    let mut intensities: Vec<f64> = thumb.pixels().iter().map(|v| v - mean).collect();
    normalize_in_place(&mut intensities);

    let (gx, gy) = thumb.sobel();
    let mut hist = vec![0.0; ORIENTATION_BINS];
    for (dx, dy) in gx.pixels().iter().zip(gy.pixels()) {
        let magnitude = dx.hypot(*dy);
        if magnitude <= 1e-12 {
            continue;
        }
        let angle = dy.atan2(*dx).rem_euclid(2.0 * PI);
        let bin = ((angle / (2.0 * PI)) * ORIENTATION_BINS as f64) as usize % ORIENTATION_BINS;
        hist[bin] += magnitude;
    }
    normalize_in_place(&mut hist);

    let mut values = intensities;
    values.extend(hist);
    let norm = normalize_in_place(&mut values);
    Ok(Descriptor { values, degenerate: norm == 0.0 })
}

/// Normalizes to unit L2 norm unless the vector is (numerically) zero, in
/// which case it is zeroed. Returns the original norm.
pub(crate) fn normalize_in_place(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 1e-12 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return 0.0;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    norm
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::IconGenerator;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn unit_norm_and_fixed_dim() {
        let mut gen = IconGenerator::new(3);
        for _ in 0..20 {
            let d = compute_descriptor(&GrayF::from_image(&gen.icon(32))).unwrap();
            assert_eq!(d.values.len(), DESCRIPTOR_DIM);
            assert!((norm(&d.values) - 1.0).abs() < 1e-9);
            assert!(!d.degenerate);
        }
    }

    #[test]
    fn self_similarity_is_one() {
        let icon = GrayF::from_image(&IconGenerator::new(9).icon(24));
        let d = compute_descriptor(&icon).unwrap();
        assert!((cosine(&d.values, &d.values) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_image_is_degenerate() {
        let d = compute_descriptor(&GrayF::filled(40, 40, 1.0)).unwrap();
        assert!(d.degenerate);
        assert!(d.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_image_is_rejected() {
        assert!(matches!(
            compute_descriptor(&GrayF::new(0, 0, Vec::new())),
            Err(VisionError::EmptyImage)
        ));
    }

    #[test]
    fn upscale_keeps_descriptor_close() {
        // Minimum over 20 synthetic icons, measured: see the assertion bound.
        let mut gen = IconGenerator::new(2024);
        let mut worst = f64::INFINITY;
        for _ in 0..20 {
            let icon = GrayF::from_image(&gen.icon(32));
            let up = icon.resize_bilinear(64, 64);
            let a = compute_descriptor(&icon).unwrap();
            let b = compute_descriptor(&up).unwrap();
            worst = worst.min(cosine(&a.values, &b.values));
        }
        assert!(worst >= 0.95, "minimum cosine {worst}");
    }
}
