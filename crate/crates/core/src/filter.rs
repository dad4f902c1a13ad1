//! Small dense-image kernels shared by the simulator and the solver.
//!
//! Planes are row-major `f64` slices with explicit width and height. Row work
//! is spread over the rayon pool; every output sample is computed by exactly
//! one task, so results do not depend on the thread count.

use rayon::prelude::*;

/// Normalized 1-D Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
/// `sigma <= 0` yields the identity kernel `[1.0]`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-r..=r)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

#[inline]
fn clamp_idx(i: i64, n: usize) -> usize {
    i.clamp(0, n as i64 - 1) as usize
}

/// Separable convolution with border clamping.
pub fn convolve_separable(src: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; width * height];
    tmp.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let line = &src[y * width..(y + 1) * width];
        for (x, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, k) in kernel.iter().enumerate() {
                acc += k * line[clamp_idx(x as i64 + j as i64 - r, width)];
            }
            *out = acc;
        }
    });
    let mut dst = vec![0.0; width * height];
    dst.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        for (j, k) in kernel.iter().enumerate() {
            let sy = clamp_idx(y as i64 + j as i64 - r, height);
            let line = &tmp[sy * width..(sy + 1) * width];
            for (out, v) in row.iter_mut().zip(line) {
                *out += k * v;
            }
        }
    });
    dst
}

/// Separable convolution keeping only fully supported outputs: the result is
/// `(width - 2r) x (height - 2r)`.
pub fn convolve_valid(src: &[f64], width: usize, height: usize, kernel: &[f64]) -> Vec<f64> {
    let taps = kernel.len();
    let ow = width + 1 - taps;
    let oh = height + 1 - taps;
    let mut tmp = vec![0.0; ow * height];
    tmp.par_chunks_mut(ow).enumerate().for_each(|(y, row)| {
        let line = &src[y * width..(y + 1) * width];
        for (x, out) in row.iter_mut().enumerate() {
            *out = kernel
                .iter()
                .zip(&line[x..x + taps])
                .map(|(k, v)| k * v)
                .sum();
        }
    });
    let mut dst = vec![0.0; ow * oh];
    dst.par_chunks_mut(ow).enumerate().for_each(|(y, row)| {
        for (j, k) in kernel.iter().enumerate() {
            let line = &tmp[(y + j) * ow..(y + j + 1) * ow];
            for (out, v) in row.iter_mut().zip(line) {
                *out += k * v;
            }
        }
    });
    dst
}

/// Bilinear sample at real coordinates, clamped to the border.
#[inline]
pub fn sample_bilinear(src: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = src[y0 * width + x0] * (1.0 - fx) + src[y0 * width + x1] * fx;
    let bot = src[y1 * width + x0] * (1.0 - fx) + src[y1 * width + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// 2x2 box downsampling; odd trailing rows/columns are folded into the last cell.
pub fn downsample2(src: &[f64], width: usize, height: usize) -> (Vec<f64>, usize, usize) {
    let ow = (width / 2).max(1);
    let oh = (height / 2).max(1);
    let mut dst = vec![0.0; ow * oh];
    dst.par_chunks_mut(ow).enumerate().for_each(|(y, row)| {
        let ys = 2 * y..if y + 1 == oh { height } else { 2 * y + 2 };
        for (x, out) in row.iter_mut().enumerate() {
            let xs = 2 * x..if x + 1 == ow { width } else { 2 * x + 2 };
            let mut acc = 0.0;
            let mut n = 0usize;
            for sy in ys.clone() {
                for sx in xs.clone() {
                    acc += src[sy * width + sx];
                    n += 1;
                }
            }
            *out = acc / n as f64;
        }
    });
    (dst, ow, oh)
}

/// Bilinear resize of a flow component to `(width, height)`, scaling values by `gain`.
pub fn upsample_field(
    src: &[f64],
    sw: usize,
    sh: usize,
    width: usize,
    height: usize,
    gain: f64,
) -> Vec<f64> {
    let fx = sw as f64 / width as f64;
    let fy = sh as f64 / height as f64;
    let mut dst = vec![0.0; width * height];
    dst.par_chunks_mut(width).enumerate().for_each(|(y, row)| {
        let sy = (y as f64 + 0.5) * fy - 0.5;
        for (x, out) in row.iter_mut().enumerate() {
            let sx = (x as f64 + 0.5) * fx - 0.5;
            *out = gain * sample_bilinear(src, sw, sh, sx, sy);
        }
    });
    dst
}

/// Central-difference gradients (one-sided at the border).
pub fn gradients(src: &[f64], width: usize, height: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; width * height];
    let mut gy = vec![0.0; width * height];
    gx.par_chunks_mut(width)
        .zip(gy.par_chunks_mut(width))
        .enumerate()
        .for_each(|(y, (rx, ry))| {
            let up = y.saturating_sub(1);
            let dn = (y + 1).min(height - 1);
            let dy = (dn - up).max(1) as f64;
            for x in 0..width {
                let l = x.saturating_sub(1);
                let r = (x + 1).min(width - 1);
                let dx = (r - l).max(1) as f64;
                rx[x] = (src[y * width + r] - src[y * width + l]) / dx;
                ry[x] = (src[dn * width + x] - src[up * width + x]) / dy;
            }
        });
    (gx, gy)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_normalized_and_symmetric() {
        let k = gaussian_kernel(2.0);
        assert_eq!(k.len(), 13);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..6 {
            assert_eq!(k[i], k[12 - i]);
        }
        assert_eq!(gaussian_kernel(0.0), vec![1.0]);
    }

    #[test]
    fn convolution_preserves_constants() {
        let src = vec![0.25; 7 * 5];
        let out = convolve_separable(&src, 7, 5, &gaussian_kernel(1.3));
        assert!(out.iter().all(|v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn valid_convolution_shape() {
        let src: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let k = gaussian_kernel(1.0); // 7 taps
        let out = convolve_valid(&src, 10, 10, &k);
        assert_eq!(out.len(), 16);
        // Linear ramps are reproduced exactly by symmetric normalized kernels.
        assert!((out[0] - 33.0).abs() < 1e-9);
    }

    #[test]
    fn bilinear_interpolates_ramp() {
        let src: Vec<f64> = (0..4).map(|i| i as f64).collect();
        assert!((sample_bilinear(&src, 4, 1, 1.25, 0.0) - 1.25).abs() < 1e-15);
        assert_eq!(sample_bilinear(&src, 4, 1, -3.0, 0.0), 0.0);
        assert_eq!(sample_bilinear(&src, 4, 1, 9.0, 0.0), 3.0);
    }

    #[test]
    fn downsample_averages_blocks() {
        let src = vec![1.0, 3.0, 5.0, 7.0];
        let (d, w, h) = downsample2(&src, 2, 2);
        assert_eq!((w, h), (1, 1));
        assert_eq!(d, vec![4.0]);
    }
}
