//! Procedural clean scenes standing in for natural images.
//!
//! A scene is a smooth illumination field overlaid with random soft-edged
//! discs, rectangles and stripe patches, plus fine filtered-noise texture, so
//! every crop carries edges and gradients at several scales.

use crate::error::Result;
use crate::filter::{convolve_valid, gaussian_kernel, upsample_field};
use crate::image::Image;
use crate::rng::Rng;

/// Default full scene side, before cropping.
pub const SCENE_SIZE: usize = 592;

fn filtered_noise(w: usize, h: usize, sigma: f64, rng: &mut Rng) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = k.len() / 2;
    let (pw, ph) = (w + 2 * r, h + 2 * r);
    let mut noise = vec![0.0; pw * ph];
    rng.fill_standard_normal(&mut noise);
    let mut f = convolve_valid(&noise, pw, ph, &k);
    let std = (f.iter().map(|v| v * v).sum::<f64>() / f.len() as f64).sqrt();
    if std > 0.0 {
        for v in &mut f {
            *v /= std;
        }
    }
    f
}

/// Smooth step of half-width `soft` around zero, from 1 (inside) to 0.
fn edge(signed_dist: f64, soft: f64) -> f64 {
    (0.5 - signed_dist / (2.0 * soft)).clamp(0.0, 1.0)
}

enum Shape {
    Disc {
        cx: f64,
        cy: f64,
        r: f64,
    },
    Rect {
        cx: f64,
        cy: f64,
        hw: f64,
        hh: f64,
        cos: f64,
        sin: f64,
    },
    Stripes {
        cx: f64,
        cy: f64,
        r: f64,
        period: f64,
        cos: f64,
        sin: f64,
    },
}

impl Shape {
    /// Pixel box `[x0, x1) x [y0, y1)` outside which coverage is zero.
    fn bounds(&self, size: usize) -> (usize, usize, usize, usize) {
        let (cx, cy, r) = match *self {
            Shape::Disc { cx, cy, r } => (cx, cy, r),
            Shape::Rect { cx, cy, hw, hh, .. } => (cx, cy, (hw * hw + hh * hh).sqrt()),
            Shape::Stripes { cx, cy, r, .. } => (cx, cy, r),
        };
        let r = r + 2.0;
        let lo = |c: f64| (c - r).floor().clamp(0.0, size as f64) as usize;
        let hi = |c: f64| (c + r).ceil().clamp(0.0, size as f64) as usize;
        (lo(cx), lo(cy), hi(cx), hi(cy))
    }

    fn random(size: f64, rng: &mut Rng) -> Shape {
        let cx = rng.uniform() * size;
        let cy = rng.uniform() * size;
        let ang = rng.uniform() * std::f64::consts::PI;
        let (sin, cos) = ang.sin_cos();
        match rng.below(3) {
            0 => Shape::Disc {
                cx,
                cy,
                r: 4.0 + 26.0 * rng.uniform(),
            },
            1 => Shape::Rect {
                cx,
                cy,
                hw: 4.0 + 30.0 * rng.uniform(),
                hh: 4.0 + 30.0 * rng.uniform(),
                cos,
                sin,
            },
            _ => Shape::Stripes {
                cx,
                cy,
                r: 12.0 + 30.0 * rng.uniform(),
                period: 5.0 + 10.0 * rng.uniform(),
                cos,
                sin,
            },
        }
    }

    /// Coverage in `[0, 1]` and an intensity modulation in `[-1, 1]` (zero for solid shapes).
    fn eval(&self, x: f64, y: f64) -> (f64, f64) {
        match *self {
            Shape::Disc { cx, cy, r } => {
                let d = ((x - cx).powi(2) + (y - cy).powi(2)).sqrt() - r;
                (edge(d, 0.75), 0.0)
            }
            Shape::Rect {
                cx,
                cy,
                hw,
                hh,
                cos,
                sin,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                let (lx, ly) = (cos * dx + sin * dy, -sin * dx + cos * dy);
                let d = (lx.abs() - hw).max(ly.abs() - hh);
                (edge(d, 0.75), 0.0)
            }
            Shape::Stripes {
                cx,
                cy,
                r,
                period,
                cos,
                sin,
            } => {
                let (dx, dy) = (x - cx, y - cy);
                let d = (dx * dx + dy * dy).sqrt() - r;
                let phase = (cos * dx + sin * dy) * std::f64::consts::TAU / period;
                (edge(d, 0.75), phase.sin())
            }
        }
    }
}

/// A single-channel scene with values in `[0.05, 0.95]`.
pub fn synthetic_scene(size: usize, seed: u64) -> Result<Image> {
    let mut rng = Rng::new(seed, 0x5CE0E);
    // Low-frequency illumination drawn on a coarse grid and upsampled.
    let coarse = (size / 8).max(4);
    let base_small = filtered_noise(coarse, coarse, coarse as f64 / 12.0, &mut rng);
    let base = upsample_field(&base_small, coarse, coarse, size, size, 1.0);
    let fine = filtered_noise(size, size, 1.5, &mut rng);
    let mut v: Vec<f64> = base.iter().map(|b| 0.5 + 0.15 * b).collect();
    for _ in 0..(size * size) / 1200 {
        let shape = Shape::random(size as f64, &mut rng);
        let level = 0.1 + 0.8 * rng.uniform();
        let (x0, y0, x1, y1) = shape.bounds(size);
        for y in y0..y1 {
            for x in x0..x1 {
                let (cov, modulation) = shape.eval(x as f64 + 0.5, y as f64 + 0.5);
                if cov > 0.0 {
                    let target = level + 0.8 * level.min(1.0 - level) * modulation;
                    let p = &mut v[y * size + x];
                    *p = *p * (1.0 - cov) + target * cov;
                }
            }
        }
    }
    let data = v
        .iter()
        .zip(&fine)
        .map(|(p, f)| (p + 0.04 * f).clamp(0.05, 0.95))
        .collect();
    Image::new(size, size, 1, data)
}

/// `count` scenes rendered at `size` and center-cropped to `crop`.
pub fn scene_suite(count: usize, seed: u64, size: usize, crop: usize) -> Result<Vec<Image>> {
    (0..count as u64)
        .map(|k| synthetic_scene(size, seed.wrapping_add(k))?.center_crop(crop, crop))
        .collect()
}
