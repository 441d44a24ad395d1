//! Grayscale float rasters and the small set of image operations the
//! recognizer needs: conversion, resampling, Sobel gradients and Otsu.

use image::{DynamicImage, GenericImageView, Rgb, RgbImage};
use sha2::{Digest, Sha256};

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayF {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayF {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(width * height, data.len(), "pixel buffer does not match dimensions");
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    /// Converts through 8-bit luma so that hashing, descriptors and NCC all
    /// see the same intensities.
    pub fn from_image(img: &DynamicImage) -> Self {
        let luma = img.to_luma8();
        let (w, h) = luma.dimensions();
        let data = luma.as_raw().iter().map(|&v| f64::from(v) / 255.0).collect();
        Self::new(w as usize, h as usize, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> GrayF {
        assert!(x + w <= self.width && y + h <= self.height, "crop out of bounds");
        let mut data = Vec::with_capacity(w * h);
        for row in y..y + h {
            data.extend_from_slice(&self.data[row * self.width + x..row * self.width + x + w]);
        }
        GrayF::new(w, h, data)
    }

    /// Bilinear resampling with pixel-center alignment and edge clamping.
    pub fn resize_bilinear(&self, new_w: usize, new_h: usize) -> GrayF {
        if new_w == self.width && new_h == self.height {
            return self.clone();
        }
        let sx = self.width as f64 / new_w as f64;
        let sy = self.height as f64 / new_h as f64;
        let mut data = Vec::with_capacity(new_w * new_h);
        for oy in 0..new_h {
            let fy = (oy as f64 + 0.5) * sy - 0.5;
            let y0 = fy.floor();
            let ty = fy - y0;
            let y0 = y0 as isize;
            for ox in 0..new_w {
                let fx = (ox as f64 + 0.5) * sx - 0.5;
                let x0 = fx.floor();
                let tx = fx - x0;
                let x0 = x0 as isize;
                let top = self.get_clamped(x0, y0) * (1.0 - tx) + self.get_clamped(x0 + 1, y0) * tx;
                let bottom =
                    self.get_clamped(x0, y0 + 1) * (1.0 - tx) + self.get_clamped(x0 + 1, y0 + 1) * tx;
                data.push(top * (1.0 - ty) + bottom * ty);
            }
        }
        GrayF::new(new_w, new_h, data)
    }

    /// Area-averaging resampling: every output pixel is the coverage-weighted
    /// mean of the source pixels under it. Used for descriptors, where
    /// averaging makes the result stable across source resolutions.
    pub fn resize_area(&self, new_w: usize, new_h: usize) -> GrayF {
        let xs = coverage(self.width, new_w);
        let ys = coverage(self.height, new_h);
        let mut data = Vec::with_capacity(new_w * new_h);
        for yw in &ys {
            for xw in &xs {
                let mut acc = 0.0;
                let mut total = 0.0;
                for &(y, wy) in yw {
                    for &(x, wx) in xw {
                        acc += self.get(x, y) * wx * wy;
                        total += wx * wy;
                    }
                }
                data.push(acc / total);
            }
        }
        GrayF::new(new_w, new_h, data)
    }

    /// 3×3 Sobel derivatives with replicated borders.
    pub fn sobel(&self) -> (GrayF, GrayF) {
        let (w, h) = (self.width, self.height);
        let mut gx = Vec::with_capacity(w * h);
        let mut gy = Vec::with_capacity(w * h);
        for y in 0..h as isize {
            for x in 0..w as isize {
                let p = |dx: isize, dy: isize| self.get_clamped(x + dx, y + dy);
                gx.push(
                    (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1)),
                );
                gy.push(
                    (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1)),
                );
            }
        }
        (GrayF::new(w, h, gx), GrayF::new(w, h, gy))
    }

    pub fn gradient_magnitude(&self) -> GrayF {
        let (gx, gy) = self.sobel();
        let data = gx.data.iter().zip(&gy.data).map(|(a, b)| a.hypot(*b)).collect();
        GrayF::new(self.width, self.height, data)
    }

    pub fn to_rgb_image(&self) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = (self.get(x as usize, y as usize).clamp(0.0, 1.0) * 255.0).round() as u8;
            Rgb([v, v, v])
        })
    }
}

/// For each output cell, the source indices it covers and their overlap.
fn coverage(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let start = o as f64 * scale;
            let end = start + scale;
            let mut cells = Vec::new();
            let mut i = start.floor() as usize;
            while (i as f64) < end && i < src {
                let lo = start.max(i as f64);
                let hi = end.min(i as f64 + 1.0);
                if hi > lo {
                    cells.push((i, hi - lo));
                }
                i += 1;
            }
            cells
        })
        .collect()
}

/// Otsu threshold over values in `[0, max]` using a 256-bin histogram.
/// Returns the bin's upper edge in the original value scale.
pub fn otsu_threshold(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(0.0_f64, f64::max);
    if max <= 0.0 || values.is_empty() {
        return 0.0;
    }
    let mut hist = [0u64; 256];
    for &v in values {
        let bin = ((v / max) * 255.0).round().clamp(0.0, 255.0) as usize;
        hist[bin] += 1;
    }
    let total = values.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w_bg, mut sum_bg) = (0.0, 0.0);
    let (mut best_t, mut best_var) = (0usize, -1.0);
    for (t, &count) in hist.iter().enumerate() {
        w_bg += count as f64;
        if w_bg == 0.0 {
            continue;
        }
        let w_fg = total - w_bg;
        if w_fg == 0.0 {
            break;
        }
        sum_bg += t as f64 * count as f64;
        let mean_bg = sum_bg / w_bg;
        let mean_fg = (sum_all - sum_bg) / w_fg;
        let between = w_bg * w_fg * (mean_bg - mean_fg).powi(2);
        if between > best_var {
            best_var = between;
            best_t = t;
        }
    }
    (best_t as f64 + 0.5) / 255.0 * max
}

/// Drops alpha by compositing over white; keeps grayscale sources as 8-bit
/// luma and everything else as 8-bit RGB.
pub fn normalize_color(img: DynamicImage) -> DynamicImage {
    let color = img.color();
    if !color.has_alpha() {
        return if color.has_color() {
            DynamicImage::ImageRgb8(img.to_rgb8())
        } else {
            DynamicImage::ImageLuma8(img.to_luma8())
        };
    }
    let rgba = img.to_rgba8();
    let (w, h) = img.dimensions();
    let flat = RgbImage::from_fn(w, h, |x, y| {
        let p = rgba.get_pixel(x, y).0;
        let a = u32::from(p[3]);
        let blend = |c: u8| ((u32::from(c) * a + 255 * (255 - a) + 127) / 255) as u8;
        Rgb([blend(p[0]), blend(p[1]), blend(p[2])])
    });
    if color.has_color() {
        DynamicImage::ImageRgb8(flat)
    } else {
        DynamicImage::ImageLuma8(DynamicImage::ImageRgb8(flat).to_luma8())
    }
}

/// SHA-256 over the 8-bit grayscale pixels and dimensions. Identical pixel
/// data always yields the same hash, regardless of the source encoding.
pub fn content_hash(img: &DynamicImage) -> String {
    let luma = img.to_luma8();
    let mut hasher = Sha256::new();
    hasher.update(luma.width().to_le_bytes());
    hasher.update(luma.height().to_le_bytes());
    hasher.update(luma.as_raw());
    hex::encode(hasher.finalize())
}
