//! Turbulent image synthesis: random tilt fields, spatially varying blur,
//! latent frame sequences and their long-exposure average.
//!
//! Tilt components are independent Gaussian random fields obtained by
//! filtering white noise. A kernel of standard deviation `rho / sqrt(2)` gives
//! the field an autocorrelation `exp(-d^2 / (2 rho^2))`, so `rho` is the
//! correlation length in pixels. Over time the fields follow an AR(1) process.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, validation, Result};
use crate::filter::{convolve_valid, gaussian_kernel, sample_bilinear};
use crate::image::{FrameSequence, Image};
use crate::rng::Rng;

/// Per-pixel displacement field; warping samples the source at `(x + u, y + v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltFlow {
    width: usize,
    height: usize,
    u: Vec<f64>,
    v: Vec<f64>,
}

impl TiltFlow {
    pub fn new(width: usize, height: usize, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != width * height || v.len() != width * height {
            return Err(validation(
                "flow component length does not match dimensions",
            ));
        }
        if u.iter().chain(&v).any(|x| !x.is_finite()) {
            return Err(validation("flow contains non-finite displacement"));
        }
        Ok(TiltFlow {
            width,
            height,
            u,
            v,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        TiltFlow {
            width,
            height,
            u: vec![0.0; width * height],
            v: vec![0.0; width * height],
        }
    }

    pub fn constant(width: usize, height: usize, u: f64, v: f64) -> Self {
        TiltFlow {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn negated(&self) -> TiltFlow {
        TiltFlow {
            width: self.width,
            height: self.height,
            u: self.u.iter().map(|x| -x).collect(),
            v: self.v.iter().map(|x| -x).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.u
            .iter()
            .chain(&self.v)
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn mean(&self) -> (f64, f64) {
        let n = self.u.len() as f64;
        (
            self.u.iter().sum::<f64>() / n,
            self.v.iter().sum::<f64>() / n,
        )
    }

    /// Mean Euclidean distance between corresponding vectors.
    pub fn endpoint_error(&self, other: &TiltFlow) -> Result<f64> {
        if self.dims() != other.dims() {
            return Err(argument("endpoint error: flow dimensions differ"));
        }
        let total: f64 = self
            .u
            .iter()
            .zip(&self.v)
            .zip(other.u.iter().zip(&other.v))
            .map(|((a, b), (c, d))| ((a - c).powi(2) + (b - d).powi(2)).sqrt())
            .sum();
        Ok(total / self.u.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TurbulenceParams {
    /// Marginal standard deviation of each tilt component, pixels.
    pub sigma_tilt: f64,
    /// Spatial correlation length, pixels.
    pub rho: f64,
    /// Lag-one temporal correlation between consecutive latent tilts.
    pub tau_corr: f64,
    /// Blur applied to every latent frame, pixels.
    pub sigma_blur0: f64,
    /// Additive Gaussian noise on the long exposure.
    pub sigma_noise: f64,
    pub n_latents: usize,
    pub fps_latent: f64,
    /// Remove the per-pixel temporal mean so tilts average to zero.
    pub zero_mean_tilt: bool,
    pub seed: u64,
}

impl Default for TurbulenceParams {
    fn default() -> Self {
        TurbulenceParams {
            sigma_tilt: 1.5,
            rho: 16.0,
            tau_corr: 0.8,
            sigma_blur0: 0.5,
            sigma_noise: 0.005,
            n_latents: 12,
            fps_latent: 120.0,
            zero_mean_tilt: true,
            seed: 0,
        }
    }
}

impl TurbulenceParams {
    /// No tilt, no blur, no noise.
    pub fn degenerate() -> Self {
        TurbulenceParams {
            sigma_tilt: 0.0,
            sigma_blur0: 0.0,
            sigma_noise: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_tilt >= 0.0
            && self.rho > 0.0
            && (0.0..1.0).contains(&self.tau_corr)
            && self.sigma_blur0 >= 0.0
            && self.sigma_noise >= 0.0
            && self.fps_latent > 0.0
            && [
                self.sigma_tilt,
                self.rho,
                self.sigma_blur0,
                self.sigma_noise,
                self.fps_latent,
            ]
            .iter()
            .all(|v| v.is_finite());
        if !ok {
            return Err(argument(format!("invalid turbulence parameters: {self:?}")));
        }
        if self.n_latents < 2 {
            return Err(argument(format!(
                "n_latents must be >= 2, got {}",
                self.n_latents
            )));
        }
        Ok(())
    }

    /// Index of the latent whose tilt the sharp-but-tilted reference carries.
    pub fn reference_index(&self) -> usize {
        self.n_latents / 2
    }
}

/// Independent Gaussian random fields for `u` and `v`.
pub fn gen_tilt_field(
    width: usize,
    height: usize,
    sigma_tilt: f64,
    rho: f64,
    rng: &mut Rng,
) -> Result<TiltFlow> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(argument(format!("rho must be positive, got {rho}")));
    }
    if !(sigma_tilt >= 0.0) {
        return Err(argument(format!(
            "sigma_tilt must be >= 0, got {sigma_tilt}"
        )));
    }
    if sigma_tilt == 0.0 {
        return Ok(TiltFlow::zeros(width, height));
    }
    let kernel = gaussian_kernel(rho / std::f64::consts::SQRT_2);
    let r = kernel.len() / 2;
    // Marginal std of white noise filtered by k (x) k is sum(k^2).
    let gain = sigma_tilt / kernel.iter().map(|k| k * k).sum::<f64>();
    let (pw, ph) = (width + 2 * r, height + 2 * r);
    let mut component = || {
        let mut noise = vec![0.0; pw * ph];
        rng.fill_standard_normal(&mut noise);
        let mut f = convolve_valid(&noise, pw, ph, &kernel);
        for v in &mut f {
            *v *= gain;
        }
        f
    };
    let u = component();
    let v = component();
    Ok(TiltFlow {
        width,
        height,
        u,
        v,
    })
}

/// AR(1) sequence of tilt fields, optionally made zero-mean per pixel.
pub fn gen_tilt_sequence(
    params: &TurbulenceParams,
    width: usize,
    height: usize,
    rng: &Rng,
) -> Result<Vec<TiltFlow>> {
    params.validate()?;
    let n = params.n_latents;
    let fresh: Vec<TiltFlow> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut r = rng.substream(k as u64);
            gen_tilt_field(width, height, params.sigma_tilt, params.rho, &mut r)
        })
        .collect::<Result<_>>()?;

    let a = params.tau_corr;
    let b = (1.0 - a * a).sqrt();
    let mut seq: Vec<TiltFlow> = Vec::with_capacity(n);
    for (k, f) in fresh.into_iter().enumerate() {
        if k == 0 {
            seq.push(f);
            continue;
        }
        let prev = &seq[k - 1];
        let blend = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(p, q)| a * p + b * q).collect();
        let next = TiltFlow {
            width,
            height,
            u: blend(&prev.u, &f.u),
            v: blend(&prev.v, &f.v),
        };
        seq.push(next);
    }

    if params.zero_mean_tilt {
        let inv = 1.0 / n as f64;
        let mut mu = vec![0.0; width * height];
        let mut mv = vec![0.0; width * height];
        for f in &seq {
            for i in 0..mu.len() {
                mu[i] += f.u[i];
                mv[i] += f.v[i];
            }
        }
        for f in &mut seq {
            for i in 0..mu.len() {
                f.u[i] -= mu[i] * inv;
                f.v[i] -= mv[i] * inv;
            }
        }
    }
    Ok(seq)
}

/// Backward bilinear warp with border clamping: `out(x, y) = in(x + u, y + v)`.
pub fn apply_tilt(image: &Image, flow: &TiltFlow) -> Result<Image> {
    if image.dims() != flow.dims() {
        return Err(argument(format!(
            "apply_tilt: image {}x{} vs flow {}x{}",
            image.width(),
            image.height(),
            flow.width,
            flow.height
        )));
    }
    let (w, h) = image.dims();
    image.map_planes(|plane| {
        let src = plane.data();
        let mut out = vec![0.0; w * h];
        out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, o) in row.iter_mut().enumerate() {
                let i = y * w + x;
                *o = sample_bilinear(src, w, h, x as f64 + flow.u[i], y as f64 + flow.v[i]);
            }
        });
        Ok(Image::gray_unchecked(w, h, out))
    })
}

/// Gaussian blur whose standard deviation varies per pixel.
///
/// Each output pixel gathers a normalized square kernel of radius
/// `ceil(3 sigma(x, y))` with clamped borders; `sigma = 0` passes through.
pub fn apply_blur(image: &Image, sigma_field: &Image) -> Result<Image> {
    if sigma_field.channels() != 1 {
        return Err(argument("sigma field must be single-channel"));
    }
    image.require_same_dims(sigma_field, "apply_blur")?;
    if let Some(s) = sigma_field.data().iter().find(|s| **s < 0.0) {
        return Err(validation(format!("negative blur sigma {s}")));
    }
    let (w, h) = image.dims();
    let sig = sigma_field.data();
    image.map_planes(|plane| {
        let src = plane.data();
        let mut out = vec![0.0; w * h];
        out.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            let mut taps = Vec::new();
            for (x, o) in row.iter_mut().enumerate() {
                let s = sig[y * w + x];
                if s == 0.0 {
                    *o = src[y * w + x];
                    continue;
                }
                taps.clear();
                taps.extend(gaussian_kernel(s));
                let r = (taps.len() / 2) as i64;
                let mut acc = 0.0;
                for (jy, ky) in taps.iter().enumerate() {
                    let sy = (y as i64 + jy as i64 - r).clamp(0, h as i64 - 1) as usize;
                    let line = &src[sy * w..(sy + 1) * w];
                    let mut racc = 0.0;
                    for (jx, kx) in taps.iter().enumerate() {
                        let sx = (x as i64 + jx as i64 - r).clamp(0, w as i64 - 1) as usize;
                        racc += kx * line[sx];
                    }
                    acc += ky * racc;
                }
                *o = acc;
            }
        });
        Ok(Image::gray_unchecked(w, h, out))
    })
}

#[derive(Debug, Clone)]
pub struct RenderedTurbulence {
    /// Long-exposure observation, clamped to `[0, 1]`.
    pub turbulent: Image,
    /// Single-channel latents (luminance for color input) with timestamps.
    pub latents: FrameSequence,
    /// Tilt carried by the reference latent.
    pub tilt_ref: TiltFlow,
    pub tilts: Vec<TiltFlow>,
    pub reference_index: usize,
    pub sigma_noise_used: f64,
}

impl RenderedTurbulence {
    pub fn reference_time(&self) -> i64 {
        self.latents.timestamps()[self.reference_index]
    }
}

/// Latents `blur(tilt(clean, tau_k))`, averaged and corrupted by Gaussian noise.
pub fn render_turbulent(
    clean: &Image,
    params: &TurbulenceParams,
    rng: &Rng,
) -> Result<RenderedTurbulence> {
    params.validate()?;
    let (w, h) = clean.dims();
    let tilts = gen_tilt_sequence(params, w, h, &rng.substream(1))?;
    let sigma = Image::constant(w, h, 1, params.sigma_blur0)?;
    let latent_of = |img: &Image, tilt: &TiltFlow| -> Result<Image> {
        let warped = apply_tilt(img, tilt)?;
        if params.sigma_blur0 > 0.0 {
            apply_blur(&warped, &sigma)
        } else {
            Ok(warped)
        }
    };

    let n = params.n_latents;
    let luma = clean.luminance();
    let color: Vec<Image> = tilts
        .iter()
        .map(|t| latent_of(clean, t))
        .collect::<Result<_>>()?;
    let gray: Vec<Image> = if clean.channels() == 1 {
        color.clone()
    } else {
        tilts
            .iter()
            .map(|t| latent_of(&luma, t))
            .collect::<Result<_>>()?
    };

    // Mean as first latent plus averaged deviations: exact when latents coincide.
    let first = color[0].data();
    let mut dev = vec![0.0; first.len()];
    for l in &color[1..] {
        for ((d, v), f) in dev.iter_mut().zip(l.data()).zip(first) {
            *d += v - f;
        }
    }
    let mut acc: Vec<f64> = first
        .iter()
        .zip(&dev)
        .map(|(f, d)| f + d / n as f64)
        .collect();
    let mut noise_rng = rng.substream(2);
    for a in &mut acc {
        if params.sigma_noise > 0.0 {
            *a += params.sigma_noise * noise_rng.standard_normal();
        }
        *a = a.clamp(0.0, 1.0);
    }
    let turbulent = Image::new(w, h, clean.channels(), acc)?;
    let latents = FrameSequence::uniform(gray, params.fps_latent, 0)?;
    let reference_index = params.reference_index();
    Ok(RenderedTurbulence {
        turbulent,
        latents,
        tilt_ref: tilts[reference_index].clone(),
        tilts,
        reference_index,
        sigma_noise_used: params.sigma_noise,
    })
}
