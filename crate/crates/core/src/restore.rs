//! Two-step restoration: event-based deblurring followed by tilt removal.
//!
//! The deblurred ("coarse") image is sharp but still carries the tilt of the
//! reference instant. A geometrically centered reference is built by
//! averaging latents reconstructed across the exposure, and a coarse-to-fine
//! Gauss-Newton solver estimates the flow that registers the coarse image to
//! it. Data terms are down-weighted where the variance map reports high
//! turbulence activity, so those pixels lean on the smoothness prior.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::event::EventStream;
use crate::filter::{downsample2, gradients, sample_bilinear, upsample_field};
use crate::formation::{
    blur_map, event_integral, scale_by_exp, variance_map, Contrast, Exposure, FormationConfig,
    Quadrature, VarianceMap, BLUR_EPS,
};
use crate::image::Image;
use crate::turbsim::{apply_tilt, TiltFlow};

/// Upper clamp of deblurred intensities; leaves headroom for highlights.
pub const DEBLUR_MAX: f64 = 1.5;

/// Jacobi sweeps per Gauss-Newton step for the coupled smoothness system.
const JACOBI_SWEEPS: usize = 30;

const MAX_HALVINGS: usize = 5;

/// The `restore` config block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RestoreConfig {
    pub lambda: f64,
    pub m_latents: usize,
    pub levels: usize,
    pub iters_per_level: usize,
    pub alpha: f64,
    pub kappa: f64,
}

impl Default for RestoreConfig {
    fn default() -> Self {
        RestoreConfig {
            lambda: 1e-3,
            m_latents: 16,
            levels: 3,
            iters_per_level: 10,
            alpha: 0.1,
            kappa: 4.0,
        }
    }
}

impl RestoreConfig {
    pub fn solver_params(&self) -> FlowSolverParams {
        FlowSolverParams {
            levels: self.levels,
            iters_per_level: self.iters_per_level,
            alpha: self.alpha,
            kappa: self.kappa,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSolverParams {
    pub levels: usize,
    pub iters_per_level: usize,
    /// Weight of the first-order smoothness prior on each flow component.
    pub alpha: f64,
    /// Data weight is `1 / (1 + kappa V)`.
    pub kappa: f64,
    /// Coarsest pyramid level keeps at least this many pixels per side.
    pub min_level_size: usize,
}

impl Default for FlowSolverParams {
    fn default() -> Self {
        FlowSolverParams {
            levels: 3,
            iters_per_level: 10,
            alpha: 0.1,
            kappa: 4.0,
            min_level_size: 8,
        }
    }
}

impl FlowSolverParams {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 || self.iters_per_level < 1 {
            return Err(argument(
                "flow solver needs levels >= 1 and iters_per_level >= 1",
            ));
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(argument(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.kappa >= 0.0) || !self.kappa.is_finite() {
            return Err(argument(format!("kappa must be >= 0, got {}", self.kappa)));
        }
        if self.min_level_size < 2 {
            return Err(argument("min_level_size must be at least 2"));
        }
        Ok(())
    }
}

/// Everything the restoration stages need besides the observation itself.
#[derive(Debug, Clone)]
pub struct RestoreSetup {
    pub exposure: Exposure,
    pub contrast: Contrast,
    pub t_ref: i64,
    pub formation: FormationConfig,
    pub restore: RestoreConfig,
}

impl RestoreSetup {
    /// Scalar threshold from the formation block, reference time resolved in `exposure`.
    pub fn new(exposure: Exposure, formation: FormationConfig, restore: RestoreConfig) -> Self {
        RestoreSetup {
            exposure,
            contrast: Contrast::Scalar(formation.c),
            t_ref: formation.t_ref.resolve(exposure),
            formation,
            restore,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub deblur_ms: f64,
    pub variance_ms: f64,
    pub reference_ms: f64,
    pub flow_ms: f64,
    pub warp_ms: f64,
}

#[derive(Debug, Clone)]
pub struct RestorationReport {
    pub coarse: Image,
    pub reference: Image,
    pub variance: VarianceMap,
    pub flow: TiltFlow,
    pub refined: Image,
    /// Weighted data residual per pyramid level (coarsest first): the value
    /// before the first iteration followed by one entry per iteration.
    pub residuals: Vec<Vec<f64>>,
    pub timings: StageTimings,
}

fn check_dims(image: &Image, stream: &EventStream) -> Result<()> {
    if image.dims() != (stream.width(), stream.height()) {
        return Err(argument(format!(
            "image {}x{} does not match sensor {}x{}",
            image.width(),
            image.height(),
            stream.width(),
            stream.height()
        )));
    }
    Ok(())
}

/// Least-squares deblur `argmin |I~ - X E|^2 + lambda |X - I~|^2`, i.e.
/// `X = I~ (E + lambda) / (E^2 + lambda)`, with `E` floored at [`BLUR_EPS`]
/// and the result clamped to `[0, DEBLUR_MAX]`.
///
/// Regularizing toward the observation (rather than toward zero) leaves
/// pixels without events (`E = 1`) exactly unchanged.
pub fn deblur(turbulent: &Image, events: &EventStream, setup: &RestoreSetup) -> Result<Image> {
    check_dims(turbulent, events)?;
    let lambda = setup.restore.lambda;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(argument(format!("lambda must be >= 0, got {lambda}")));
    }
    let e = blur_map(
        events,
        &setup.contrast,
        setup.exposure,
        setup.t_ref,
        Quadrature::Exact,
    )?
    .clamped(BLUR_EPS);
    let ch = turbulent.channels();
    let data = turbulent
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let e = e.e()[i / ch];
            let gain = (e + lambda) / (e * e + lambda);
            (v * gain).clamp(0.0, DEBLUR_MAX)
        })
        .collect();
    Image::new(turbulent.width(), turbulent.height(), ch, data)
}

/// Sample times at the midpoints of `m` equal slices of the exposure.
pub fn latent_times(exposure: Exposure, m: usize) -> Vec<i64> {
    let span = exposure.end - exposure.start;
    (0..m as i64)
        .map(|j| exposure.start + (2 * j + 1) * span / (2 * m as i64))
        .collect()
}

/// Temporal mean of `m_latents` reconstructed latents spread over the exposure.
pub fn reference_frame(
    turbulent: &Image,
    events: &EventStream,
    setup: &RestoreSetup,
) -> Result<Image> {
    let coarse = deblur(turbulent, events, setup)?;
    reference_from_coarse(&coarse, events, setup)
}

fn reference_from_coarse(
    coarse: &Image,
    events: &EventStream,
    setup: &RestoreSetup,
) -> Result<Image> {
    let m = setup.restore.m_latents;
    if m == 0 {
        return Err(argument("m_latents must be >= 1"));
    }
    let latents: Vec<Image> = latent_times(setup.exposure, m)
        .into_iter()
        .map(|t| {
            let s = event_integral(events, &setup.contrast, setup.t_ref, t)?;
            scale_by_exp(coarse, &s)
        })
        .collect::<Result<_>>()?;
    // First latent plus mean deviation, so identical latents average exactly.
    let first = latents[0].data();
    let mut dev = vec![0.0; first.len()];
    for l in &latents[1..] {
        for ((d, v), f) in dev.iter_mut().zip(l.data()).zip(first) {
            *d += v - f;
        }
    }
    let data = first
        .iter()
        .zip(&dev)
        .map(|(f, d)| f + d / m as f64)
        .collect();
    Image::new(coarse.width(), coarse.height(), coarse.channels(), data)
}

/// Backward warp of the coarse image by the estimated flow.
pub fn warp_refine(coarse: &Image, flow: &TiltFlow) -> Result<Image> {
    apply_tilt(coarse, flow)
}

struct Level {
    w: usize,
    h: usize,
    moving: Vec<f64>,
    fixed: Vec<f64>,
    weight: Vec<f64>,
}

fn build_pyramid(
    moving: Vec<f64>,
    fixed: Vec<f64>,
    weight: Vec<f64>,
    w: usize,
    h: usize,
    params: &FlowSolverParams,
) -> Vec<Level> {
    let mut levels = vec![Level {
        w,
        h,
        moving,
        fixed,
        weight,
    }];
    while levels.len() < params.levels {
        let last = levels.last().unwrap();
        if last.w / 2 < params.min_level_size || last.h / 2 < params.min_level_size {
            break;
        }
        let (m, nw, nh) = downsample2(&last.moving, last.w, last.h);
        let (f, _, _) = downsample2(&last.fixed, last.w, last.h);
        let (wt, _, _) = downsample2(&last.weight, last.w, last.h);
        levels.push(Level {
            w: nw,
            h: nh,
            moving: m,
            fixed: f,
            weight: wt,
        });
    }
    levels.reverse();
    levels
}

/// Warped moving image and its bilinearly interpolated gradients at `x + u`.
struct Linearization {
    residual: Vec<f64>,
    gx: Vec<f64>,
    gy: Vec<f64>,
}

fn linearize(level: &Level, gx0: &[f64], gy0: &[f64], u: &[f64], v: &[f64]) -> Linearization {
    let (w, h) = (level.w, level.h);
    let n = w * h;
    let mut residual = vec![0.0; n];
    let mut gx = vec![0.0; n];
    let mut gy = vec![0.0; n];
    residual
        .par_chunks_mut(w)
        .zip(gx.par_chunks_mut(w))
        .zip(gy.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, ((r, ax), ay))| {
            for x in 0..w {
                let i = y * w + x;
                let (sx, sy) = (x as f64 + u[i], y as f64 + v[i]);
                r[x] = sample_bilinear(&level.moving, w, h, sx, sy) - level.fixed[i];
                ax[x] = sample_bilinear(gx0, w, h, sx, sy);
                ay[x] = sample_bilinear(gy0, w, h, sx, sy);
            }
        });
    Linearization { residual, gx, gy }
}

fn data_residual(level: &Level, u: &[f64], v: &[f64]) -> f64 {
    let (w, h) = (level.w, level.h);
    let rows: Vec<f64> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut acc = 0.0;
            for x in 0..w {
                let i = y * w + x;
                let r = sample_bilinear(&level.moving, w, h, x as f64 + u[i], y as f64 + v[i])
                    - level.fixed[i];
                acc += level.weight[i] * r * r;
            }
            acc
        })
        .collect();
    rows.iter().sum::<f64>() / (w * h) as f64
}

fn neighbor_mean(f: &[f64], w: usize, h: usize, x: usize, y: usize) -> f64 {
    let l = f[y * w + x.saturating_sub(1)];
    let r = f[y * w + (x + 1).min(w - 1)];
    let t = f[y.saturating_sub(1) * w + x];
    let b = f[(y + 1).min(h - 1) * w + x];
    0.25 * (l + r + t + b)
}

/// Proposed full flow after one Gauss-Newton step linearized at `(u, v)`.
fn gauss_newton_step(
    level: &Level,
    lin: &Linearization,
    u: &[f64],
    v: &[f64],
    alpha: f64,
) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (level.w, level.h);
    let a = 4.0 * alpha;
    // Linearized residual: b + gx U + gy V with U, V the full flow.
    let b: Vec<f64> = (0..w * h)
        .map(|i| lin.residual[i] - lin.gx[i] * u[i] - lin.gy[i] * v[i])
        .collect();
    let mut cu = u.to_vec();
    let mut cv = v.to_vec();
    let mut nu = vec![0.0; w * h];
    let mut nv = vec![0.0; w * h];
    for _ in 0..JACOBI_SWEEPS {
        nu.par_chunks_mut(w)
            .zip(nv.par_chunks_mut(w))
            .enumerate()
            .for_each(|(y, (ru, rv))| {
                for x in 0..w {
                    let i = y * w + x;
                    let wt = level.weight[i];
                    let (gx, gy) = (lin.gx[i], lin.gy[i]);
                    let ub = neighbor_mean(&cu, w, h, x, y);
                    let vb = neighbor_mean(&cv, w, h, x, y);
                    let a11 = wt * gx * gx + a;
                    let a12 = wt * gx * gy;
                    let a22 = wt * gy * gy + a;
                    let r1 = a * ub - wt * gx * b[i];
                    let r2 = a * vb - wt * gy * b[i];
                    let det = a11 * a22 - a12 * a12;
                    ru[x] = (a22 * r1 - a12 * r2) / det;
                    rv[x] = (a11 * r2 - a12 * r1) / det;
                }
            });
        std::mem::swap(&mut cu, &mut nu);
        std::mem::swap(&mut cv, &mut nv);
    }
    (cu, cv)
}

fn numeric(level: usize, iter: usize, message: &str) -> Error {
    Error::Numeric {
        context: format!("flow level {level}, iteration {iter}"),
        message: message.to_string(),
    }
}

/// Flow plus the residual trace of every level (coarsest first).
pub fn estimate_tilt_flow_traced(
    coarse: &Image,
    reference: &Image,
    vmap: &VarianceMap,
    params: &FlowSolverParams,
) -> Result<(TiltFlow, Vec<Vec<f64>>)> {
    params.validate()?;
    let (w, h) = coarse.dims();
    if reference.dims() != (w, h) || vmap.dims() != (w, h) {
        return Err(argument("estimate_tilt_flow: input dimensions differ"));
    }
    if vmap.v().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(argument("variance map must lie in [0, 1]"));
    }
    let moving = coarse.luminance().into_data();
    let fixed = reference.luminance().into_data();
    // Normalizing by the reference mean makes the solve invariant to global gain.
    let mean = fixed.iter().sum::<f64>() / fixed.len() as f64;
    let scale = if mean > 0.0 { 1.0 / mean } else { 1.0 };
    let moving: Vec<f64> = moving.iter().map(|v| v * scale).collect();
    let fixed: Vec<f64> = fixed.iter().map(|v| v * scale).collect();
    let weight: Vec<f64> = vmap
        .v()
        .iter()
        .map(|v| 1.0 / (1.0 + params.kappa * v))
        .collect();

    let pyramid = build_pyramid(moving, fixed, weight, w, h, params);
    let mut u = vec![0.0; pyramid[0].w * pyramid[0].h];
    let mut v = u.clone();
    let mut traces = Vec::with_capacity(pyramid.len());
    let mut prev_dims: Option<(usize, usize)> = None;
    for (li, level) in pyramid.iter().enumerate() {
        if let Some((pw, ph)) = prev_dims {
            u = upsample_field(&u, pw, ph, level.w, level.h, level.w as f64 / pw as f64);
            v = upsample_field(&v, pw, ph, level.w, level.h, level.h as f64 / ph as f64);
        }
        prev_dims = Some((level.w, level.h));
        let (gx0, gy0) = gradients(&level.moving, level.w, level.h);
        let mut current = data_residual(level, &u, &v);
        let mut trace = vec![current];
        for it in 0..params.iters_per_level {
            let lin = linearize(level, &gx0, &gy0, &u, &v);
            let (pu, pv) = gauss_newton_step(level, &lin, &u, &v, params.alpha);
            if pu.iter().chain(&pv).any(|x| !x.is_finite()) {
                return Err(numeric(li, it, "non-finite flow update"));
            }
            let mut step = 1.0;
            let mut accepted = None;
            for _ in 0..=MAX_HALVINGS {
                let cu: Vec<f64> = u.iter().zip(&pu).map(|(a, b)| a + step * (b - a)).collect();
                let cv: Vec<f64> = v.iter().zip(&pv).map(|(a, b)| a + step * (b - a)).collect();
                let r = data_residual(level, &cu, &cv);
                if !r.is_finite() {
                    return Err(numeric(li, it, "non-finite data residual"));
                }
                if r <= current {
                    accepted = Some((cu, cv, r));
                    break;
                }
                step *= 0.5;
            }
            // A step that still increases the residual after all halvings is dropped.
            if let Some((cu, cv, r)) = accepted {
                u = cu;
                v = cv;
                current = r;
            }
            trace.push(current);
        }
        traces.push(trace);
    }
    if let Some((pw, ph)) = prev_dims {
        if (pw, ph) != (w, h) {
            u = upsample_field(&u, pw, ph, w, h, w as f64 / pw as f64);
            v = upsample_field(&v, pw, ph, w, h, h as f64 / ph as f64);
        }
    }
    Ok((TiltFlow::new(w, h, u, v)?, traces))
}

/// Flow `M` such that `apply_tilt(coarse, M)` matches `reference`.
pub fn estimate_tilt_flow(
    coarse: &Image,
    reference: &Image,
    vmap: &VarianceMap,
    params: &FlowSolverParams,
) -> Result<TiltFlow> {
    estimate_tilt_flow_traced(coarse, reference, vmap, params).map(|(f, _)| f)
}

fn elapsed_ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub fn restore_pipeline(
    turbulent: &Image,
    events: &EventStream,
    setup: &RestoreSetup,
) -> Result<RestorationReport> {
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let coarse = deblur(turbulent, events, setup).map_err(|e| e.in_stage("deblur"))?;
    timings.deblur_ms = elapsed_ms(t);

    let t = Instant::now();
    let variance = variance_map(events, &setup.contrast, setup.formation.accum_mode)
        .map_err(|e| e.in_stage("variance"))?;
    timings.variance_ms = elapsed_ms(t);

    let t = Instant::now();
    let reference =
        reference_from_coarse(&coarse, events, setup).map_err(|e| e.in_stage("reference"))?;
    timings.reference_ms = elapsed_ms(t);

    let t = Instant::now();
    let (flow, residuals) = estimate_tilt_flow_traced(
        &coarse,
        &reference,
        &variance,
        &setup.restore.solver_params(),
    )
    .map_err(|e| e.in_stage("flow"))?;
    timings.flow_ms = elapsed_ms(t);

    let t = Instant::now();
    let refined = warp_refine(&coarse, &flow).map_err(|e| e.in_stage("warp"))?;
    timings.warp_ms = elapsed_ms(t);

    Ok(RestorationReport {
        coarse,
        reference,
        variance,
        flow,
        refined,
        residuals,
        timings,
    })
}
