//! Seeded generators for synthetic UI imagery: icons, toolbars, workspace
//! scenes and noise patches. Used by tests, benchmarks and demo fixtures.

use image::{DynamicImage, Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub struct IconGenerator {
    rng: ChaCha8Rng,
}

impl IconGenerator {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn color(&mut self, lo: u8, hi: u8) -> Rgb<u8> {
        Rgb([
            self.rng.random_range(lo..=hi),
            self.rng.random_range(lo..=hi),
            self.rng.random_range(lo..=hi),
        ])
    }

    /// A square icon: light fill, one-pixel dark frame and a handful of
    /// random filled shapes inside.
    pub fn icon(&mut self, size: u32) -> DynamicImage {
        let bg = self.color(200, 245);
        let frame = self.color(10, 60);
        let mut img = RgbImage::from_pixel(size, size, bg);
        let shapes = self.rng.random_range(3..=5);
        for _ in 0..shapes {
            let fill = self.color(0, 180);
            let x0 = self.rng.random_range(2..size - 6);
            let y0 = self.rng.random_range(2..size - 6);
            let w = self.rng.random_range(3..=(size - 2 - x0).max(4));
            let h = self.rng.random_range(3..=(size - 2 - y0).max(4));
            let ellipse = self.rng.random_bool(0.5);
            for y in y0..(y0 + h).min(size - 1) {
                for x in x0..(x0 + w).min(size - 1) {
                    let inside = if ellipse {
                        let cx = x0 as f64 + w as f64 / 2.0;
                        let cy = y0 as f64 + h as f64 / 2.0;
                        let nx = (x as f64 + 0.5 - cx) / (w as f64 / 2.0);
                        let ny = (y as f64 + 0.5 - cy) / (h as f64 / 2.0);
                        nx * nx + ny * ny <= 1.0
                    } else {
                        true
                    };
                    if inside {
                        img.put_pixel(x, y, fill);
                    }
                }
            }
        }
        for i in 0..size {
            img.put_pixel(i, 0, frame);
            img.put_pixel(i, size - 1, frame);
            img.put_pixel(0, i, frame);
            img.put_pixel(size - 1, i, frame);
        }
        DynamicImage::ImageRgb8(img)
    }

    /// Uniform noise, unrelated to any icon.
    pub fn noise(&mut self, width: u32, height: u32) -> DynamicImage {
        let img = RgbImage::from_fn(width, height, |_, _| {
            let v = self.rng.random::<u8>();
            Rgb([v, v, v])
        });
        DynamicImage::ImageRgb8(img)
    }

    /// Adds zero-mean Gaussian noise with standard deviation `sigma` (in
    /// 0..1 intensity units) to every channel.
    pub fn add_gaussian_noise(&mut self, img: &DynamicImage, sigma: f64) -> DynamicImage {
        let normal = Normal::new(0.0, sigma * 255.0).expect("finite sigma");
        let mut out = img.to_rgb8();
        for p in out.pixels_mut() {
            for c in p.0.iter_mut() {
                let v = f64::from(*c) + normal.sample(&mut self.rng);
                *c = v.round().clamp(0.0, 255.0) as u8;
            }
        }
        DynamicImage::ImageRgb8(out)
    }

    /// A smooth shaded scene with soft blobs and no hard edges, standing in
    /// for a 3D workspace viewport.
    pub fn workspace(&mut self, width: u32, height: u32) -> DynamicImage {
        let blobs: Vec<(f64, f64, f64, f64)> = (0..4)
            .map(|_| {
                (
                    self.rng.random_range(0.0..width as f64),
                    self.rng.random_range(0.0..height as f64),
                    self.rng.random_range(30.0..80.0),
                    self.rng.random_range(-60.0..60.0),
                )
            })
            .collect();
        let img = RgbImage::from_fn(width, height, |x, y| {
            let mut v = 150.0 + 40.0 * (y as f64 / height as f64);
            for &(cx, cy, r, amp) in &blobs {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                v += amp * (-d2 / (2.0 * r * r)).exp();
            }
            let v = v.round().clamp(0.0, 255.0) as u8;
            Rgb([v, v, (v as f64 * 0.95) as u8])
        });
        DynamicImage::ImageRgb8(img)
    }
}

/// Places `icons` left to right on a white canvas, `gap` pixels apart,
/// vertically centered. Returns the canvas and each icon's top-left corner.
pub fn toolbar(
    icons: &[DynamicImage],
    width: u32,
    height: u32,
    left: u32,
    gap: u32,
) -> (DynamicImage, Vec<(u32, u32)>) {
    let mut canvas = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let mut x = left;
    let mut origins = Vec::with_capacity(icons.len());
    for icon in icons {
        let rgb = icon.to_rgb8();
        let y = (height - rgb.height()) / 2;
        image::imageops::overlay(&mut canvas, &rgb, i64::from(x), i64::from(y));
        origins.push((x, y));
        x += rgb.width() + gap;
    }
    (DynamicImage::ImageRgb8(canvas), origins)
}

/// Shifts an image by (dx, dy) pixels, replicating edge pixels.
pub fn translate(img: &DynamicImage, dx: i32, dy: i32) -> DynamicImage {
    let src = img.to_rgb8();
    let (w, h) = src.dimensions();
    let out = RgbImage::from_fn(w, h, |x, y| {
        let sx = (x as i32 - dx).clamp(0, w as i32 - 1) as u32;
        let sy = (y as i32 - dy).clamp(0, h as i32 - 1) as u32;
        *src.get_pixel(sx, sy)
    });
    DynamicImage::ImageRgb8(out)
}

pub fn negative(img: &DynamicImage) -> DynamicImage {
    let mut out = img.clone();
    out.invert();
    out
}
