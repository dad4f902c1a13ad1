//! Event-side image formation: event integrals, the blur factor `E` as the
//! exposure-averaged exponential of the running integral, event-based double
//! integral (EDI) reconstruction, and the accumulated-event variance map.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::event::{EventStream, PixelEvents, Polarity};
use crate::image::Image;

/// Lower clamp for blur factors before unregularized division.
pub const BLUR_EPS: f64 = 1e-3;

/// A real-valued plane with no sign constraint.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn zeros(width: usize, height: usize) -> Self {
        Plane {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

/// Contrast threshold used to convert polarities to log-intensity steps.
#[derive(Debug, Clone, PartialEq)]
pub enum Contrast {
    Scalar(f64),
    PerPixel(Image),
}

impl Contrast {
    fn check(&self, width: usize, height: usize) -> Result<()> {
        match self {
            Contrast::Scalar(c) if *c > 0.0 && c.is_finite() => Ok(()),
            Contrast::Scalar(c) => Err(argument(format!(
                "contrast threshold must be positive, got {c}"
            ))),
            Contrast::PerPixel(img) => {
                if img.dims() != (width, height) || img.channels() != 1 {
                    return Err(argument(
                        "per-pixel threshold map does not match the sensor",
                    ));
                }
                if img.data().iter().any(|c| *c <= 0.0) {
                    return Err(argument("per-pixel threshold map has non-positive entries"));
                }
                Ok(())
            }
        }
    }

    #[inline]
    fn at(&self, idx: usize) -> f64 {
        match self {
            Contrast::Scalar(c) => *c,
            Contrast::PerPixel(img) => img.data()[idx],
        }
    }
}

impl From<f64> for Contrast {
    fn from(c: f64) -> Self {
        Contrast::Scalar(c)
    }
}

/// Exposure window `[start, end)` in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exposure {
    pub start: i64,
    pub end: i64,
}

impl Exposure {
    pub fn new(start: i64, end: i64) -> Result<Self> {
        if end <= start {
            return Err(argument(format!("empty exposure window [{start}, {end})")));
        }
        Ok(Exposure { start, end })
    }

    pub fn duration(&self) -> f64 {
        (self.end - self.start) as f64
    }

    pub fn mid(&self) -> i64 {
        self.start + (self.end - self.start) / 2
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Per-pixel `sum c p` over events in `[min(t_ref, t), max(t_ref, t))`,
/// negated when `t < t_ref`. `exp` of the result maps intensity at `t_ref` to `t`.
pub fn event_integral(stream: &EventStream, c: &Contrast, t_ref: i64, t: i64) -> Result<Plane> {
    let (w, h) = (stream.width(), stream.height());
    c.check(w, h)?;
    let mut out = Plane::zeros(w, h);
    let (lo, hi, sign) = if t >= t_ref {
        (t_ref, t, 1.0)
    } else {
        (t, t_ref, -1.0)
    };
    let events = &stream.events()[stream.index_range(lo, hi)];
    match c {
        Contrast::Scalar(c) => {
            let step = sign * c;
            for e in events {
                let i = e.y as usize * w + e.x as usize;
                out.data[i] += match e.p {
                    Polarity::Positive => step,
                    Polarity::Negative => -step,
                };
            }
        }
        Contrast::PerPixel(_) => {
            for e in events {
                let i = e.y as usize * w + e.x as usize;
                out.data[i] += sign * c.at(i) * e.p.sign();
            }
        }
    }
    Ok(out)
}

/// Per-pixel blur factor `E`, strictly positive.
#[derive(Debug, Clone, PartialEq)]
pub struct BlurMap(Plane);

impl BlurMap {
    pub fn ones(width: usize, height: usize) -> Self {
        BlurMap(Plane {
            width,
            height,
            data: vec![1.0; width * height],
        })
    }

    pub fn from_plane(plane: Plane) -> Result<Self> {
        if plane.data.iter().any(|e| !(*e > 0.0) || !e.is_finite()) {
            return Err(Error::Validation(
                "blur factors must be positive and finite".into(),
            ));
        }
        Ok(BlurMap(plane))
    }

    pub fn plane(&self) -> &Plane {
        &self.0
    }

    pub fn e(&self) -> &[f64] {
        &self.0.data
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    /// Copy with every factor raised to at least `eps`.
    pub fn clamped(&self, eps: f64) -> BlurMap {
        BlurMap(Plane {
            width: self.0.width,
            height: self.0.height,
            data: self.0.data.iter().map(|e| e.max(eps)).collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Quadrature {
    /// Piecewise-constant integration with breakpoints at event times.
    Exact,
    /// Midpoint rule on `n` uniform samples; kept for cross-checking.
    Grid(usize),
}

/// Blur factor `E = (1/T) ∫_T exp(S(t)) dt` with `S` the event integral from `t_ref`.
pub fn blur_map(
    stream: &EventStream,
    c: &Contrast,
    exposure: Exposure,
    t_ref: i64,
    quadrature: Quadrature,
) -> Result<BlurMap> {
    let (w, h) = (stream.width(), stream.height());
    c.check(w, h)?;
    if exposure.end <= exposure.start {
        return Err(argument("empty exposure window"));
    }
    if !exposure.contains(t_ref) {
        return Err(argument(format!(
            "t_ref {t_ref} outside exposure [{}, {}]",
            exposure.start, exposure.end
        )));
    }
    if let Quadrature::Grid(n) = quadrature {
        if n < 2 {
            return Err(argument("grid quadrature needs at least 2 samples"));
        }
    }
    let window = stream.slice(exposure.start, exposure.end)?;
    let by_px = window.by_pixel();
    let mut data = vec![0.0; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let idx = y * w + x;
            let evs = by_px.pixel(idx);
            let cc = c.at(idx);
            *out = match quadrature {
                Quadrature::Exact => exact_average(evs, cc, exposure, t_ref),
                Quadrature::Grid(n) => grid_average(evs, cc, exposure, t_ref, n),
            };
        }
    });
    Ok(BlurMap(Plane {
        width: w,
        height: h,
        data,
    }))
}

fn start_level(evs: &[(i64, Polarity)], c: f64, t_ref: i64) -> f64 {
    -evs.iter()
        .take_while(|e| e.0 < t_ref)
        .map(|e| c * e.1.sign())
        .sum::<f64>()
}

fn exact_average(evs: &[(i64, Polarity)], c: f64, exposure: Exposure, t_ref: i64) -> f64 {
    if evs.is_empty() {
        return 1.0;
    }
    let mut level = start_level(evs, c, t_ref);
    let mut prev = exposure.start;
    let mut acc = 0.0;
    for &(t, p) in evs {
        acc += (t - prev) as f64 * level.exp();
        level += c * p.sign();
        prev = t;
    }
    acc += (exposure.end - prev) as f64 * level.exp();
    acc / exposure.duration()
}

fn grid_average(evs: &[(i64, Polarity)], c: f64, exposure: Exposure, t_ref: i64, n: usize) -> f64 {
    let mut level = start_level(evs, c, t_ref);
    let mut next = 0;
    let mut acc = 0.0;
    let step = exposure.duration() / n as f64;
    for i in 0..n {
        let t = exposure.start as f64 + (i as f64 + 0.5) * step;
        while next < evs.len() && (evs[next].0 as f64) < t {
            level += c * evs[next].1.sign();
            next += 1;
        }
        acc += level.exp();
    }
    acc / n as f64
}

/// Ridge solution of `min |I~ - X E|^2 + lambda |X|^2` per pixel: `X = I~ E / (E^2 + lambda)`.
/// Color images share `E` across channels.
pub fn edi_with_map(turbulent: &Image, blur: &BlurMap, lambda: f64) -> Result<Image> {
    if !(lambda >= 0.0) {
        return Err(argument(format!("lambda must be >= 0, got {lambda}")));
    }
    if turbulent.dims() != blur.dims() {
        return Err(argument("EDI: image and blur map dimensions differ"));
    }
    if lambda == 0.0 {
        let count = blur.e().iter().filter(|e| **e < BLUR_EPS).count();
        if count > 0 {
            return Err(Error::Singularity {
                count,
                eps: BLUR_EPS,
            });
        }
    }
    let ch = turbulent.channels();
    let data = turbulent
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let e = blur.e()[i / ch];
            v * e / (e * e + lambda)
        })
        .collect();
    Image::new(turbulent.width(), turbulent.height(), ch, data)
}

pub fn edi_reconstruct(
    turbulent: &Image,
    stream: &EventStream,
    c: &Contrast,
    exposure: Exposure,
    t_ref: i64,
    lambda: f64,
) -> Result<Image> {
    check_sensor(turbulent, stream)?;
    let e = blur_map(stream, c, exposure, t_ref, Quadrature::Exact)?;
    edi_with_map(turbulent, &e, lambda)
}

/// Multiply every channel by `exp(log_ratio)`.
pub fn scale_by_exp(image: &Image, log_ratio: &Plane) -> Result<Image> {
    if image.dims() != log_ratio.dims() {
        return Err(argument("log-ratio map does not match image"));
    }
    let ch = image.channels();
    let data = image
        .data()
        .iter()
        .enumerate()
        .map(|(i, v)| v * log_ratio.data[i / ch].exp())
        .collect();
    Image::new(image.width(), image.height(), ch, data)
}

/// Latent frame at `t`: the EDI reference at `t_ref` carried forward by the event integral.
#[allow(clippy::too_many_arguments)]
pub fn latent_at(
    turbulent: &Image,
    stream: &EventStream,
    c: &Contrast,
    exposure: Exposure,
    t_ref: i64,
    t: i64,
    lambda: f64,
) -> Result<Image> {
    let reference = edi_reconstruct(turbulent, stream, c, exposure, t_ref, lambda)?;
    scale_by_exp(&reference, &event_integral(stream, c, t_ref, t)?)
}

fn check_sensor(image: &Image, stream: &EventStream) -> Result<()> {
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

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccumMode {
    /// `E_i = sum_{k<=i} exp(c_k p_k)`.
    #[default]
    LiteralSum,
    /// `E_i = exp(sum_{k<=i} c_k p_k)`.
    CumulativeProduct,
}

/// Per-pixel accumulated-event sequences, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumSequence {
    pub width: usize,
    pub height: usize,
    pub mode: AccumMode,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl AccumSequence {
    pub fn pixel(&self, idx: usize) -> &[f64] {
        &self.values[self.offsets[idx]..self.offsets[idx + 1]]
    }

    pub fn at(&self, x: usize, y: usize) -> &[f64] {
        self.pixel(y * self.width + x)
    }
}

pub fn accumulate(stream: &EventStream, c: &Contrast, mode: AccumMode) -> Result<AccumSequence> {
    let (w, h) = (stream.width(), stream.height());
    c.check(w, h)?;
    let by_px = stream.by_pixel();
    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut values = Vec::with_capacity(stream.len());
    offsets.push(0);
    for idx in 0..w * h {
        let cc = c.at(idx);
        let mut acc = 0.0;
        for &(_, p) in by_px.pixel(idx) {
            match mode {
                AccumMode::LiteralSum => acc += (cc * p.sign()).exp(),
                AccumMode::CumulativeProduct => acc += cc * p.sign(),
            }
            values.push(match mode {
                AccumMode::LiteralSum => acc,
                AccumMode::CumulativeProduct => acc.exp(),
            });
        }
        offsets.push(values.len());
    }
    Ok(AccumSequence {
        width: w,
        height: h,
        mode,
        offsets,
        values,
    })
}

/// Normalized per-pixel variance of the accumulated-event sequence, in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceMap(Plane);

impl VarianceMap {
    pub fn zeros(width: usize, height: usize) -> Self {
        VarianceMap(Plane::zeros(width, height))
    }

    pub fn from_plane(plane: Plane) -> Result<Self> {
        if plane.data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Validation(
                "variance map values must lie in [0, 1]".into(),
            ));
        }
        Ok(VarianceMap(plane))
    }

    pub fn v(&self) -> &[f64] {
        &self.0.data
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn to_image(&self) -> Image {
        Image::gray_unchecked(self.0.width, self.0.height, self.0.data.clone())
    }
}

/// Population variance of each pixel's accumulator values; 0 with fewer than two.
pub fn raw_variance(stream: &EventStream, c: &Contrast, mode: AccumMode) -> Result<Plane> {
    let acc = accumulate(stream, c, mode)?;
    let (w, h) = (acc.width, acc.height);
    let data = (0..w * h)
        .map(|i| {
            let s = acc.pixel(i);
            if s.len() <= 1 {
                return 0.0;
            }
            let n = s.len() as f64;
            let mean = s.iter().sum::<f64>() / n;
            s.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
        })
        .collect();
    Ok(Plane {
        width: w,
        height: h,
        data,
    })
}

pub fn variance_map(stream: &EventStream, c: &Contrast, mode: AccumMode) -> Result<VarianceMap> {
    Ok(normalize_robust(&raw_variance(stream, c, mode)?))
}

/// Min-max normalization between the 1st and 99th percentiles, clamped to `[0, 1]`.
///
/// When the upper percentile collapses onto the lower one (fewer than 1% of
/// pixels active) the maximum is used as the upper bound instead; a constant
/// input maps to zero.
pub fn normalize_robust(raw: &Plane) -> VarianceMap {
    let mut sorted = raw.data.clone();
    sorted.sort_by(f64::total_cmp);
    let lo = percentile(&sorted, 0.01);
    let mut hi = percentile(&sorted, 0.99);
    if !(hi > lo) {
        hi = *sorted.last().unwrap_or(&lo);
    }
    let data = if hi > lo {
        let span = hi - lo;
        raw.data
            .iter()
            .map(|v| ((v - lo) / span).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; raw.data.len()]
    };
    VarianceMap(Plane {
        width: raw.width,
        height: raw.height,
        data,
    })
}

/// Linear-interpolated percentile of sorted data, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let i = pos.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    let f = pos - i as f64;
    sorted[i] * (1.0 - f) + sorted[j] * f
}

/// Per-pixel event groups, exposed for callers that sweep many times.
pub fn group_events(stream: &EventStream) -> PixelEvents {
    stream.by_pixel()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeRef {
    Micros(i64),
    Named(NamedTime),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedTime {
    Mid,
}

impl Default for TimeRef {
    fn default() -> Self {
        TimeRef::Named(NamedTime::Mid)
    }
}

impl TimeRef {
    pub fn resolve(&self, exposure: Exposure) -> i64 {
        match self {
            TimeRef::Micros(t) => *t,
            TimeRef::Named(NamedTime::Mid) => exposure.mid(),
        }
    }
}

/// The `formation` config block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FormationConfig {
    pub c: f64,
    pub lambda: f64,
    pub t_ref: TimeRef,
    pub accum_mode: AccumMode,
    pub n_samples: usize,
}

impl Default for FormationConfig {
    fn default() -> Self {
        FormationConfig {
            c: 0.2,
            lambda: 1e-3,
            t_ref: TimeRef::default(),
            accum_mode: AccumMode::LiteralSum,
            n_samples: 64,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Event;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn ev(x: u16, y: u16, t: i64, p: i8) -> Event {
        Event::new(x, y, t, Polarity::from_i8(p).unwrap())
    }

    fn c(v: f64) -> Contrast {
        Contrast::Scalar(v)
    }

    #[test]
    fn integral_basics() {
        let empty = EventStream::empty(3, 2);
        assert!(event_integral(&empty, &c(0.2), 0, 100)
            .unwrap()
            .data
            .iter()
            .all(|v| *v == 0.0));

        let s = EventStream::new(
            3,
            2,
            vec![ev(1, 1, 10, 1), ev(1, 1, 20, 1), ev(1, 1, 30, -1)],
        )
        .unwrap();
        let m = event_integral(&s, &c(0.2), 0, 100).unwrap();
        assert!((m.data[4] - 0.2).abs() < 1e-15);
        assert_eq!(m.data.iter().filter(|v| **v != 0.0).count(), 1);

        let back = event_integral(&s, &c(0.2), 100, 0).unwrap();
        assert!((back.data[4] + 0.2).abs() < 1e-15);
        assert!(event_integral(&s, &c(0.2), 50, 50)
            .unwrap()
            .data
            .iter()
            .all(|v| *v == 0.0));
        assert!(event_integral(&s, &c(0.0), 0, 1).is_err());
    }

    #[test]
    fn blur_map_hand_values() {
        let exposure = Exposure::new(0, 2).unwrap();
        let empty = EventStream::empty(2, 2);
        let e = blur_map(&empty, &c(0.2), exposure, 0, Quadrature::Exact).unwrap();
        assert!(e.e().iter().all(|v| *v == 1.0));

        let s = EventStream::new(1, 1, vec![ev(0, 0, 1, 1)]).unwrap();
        let e = blur_map(&s, &c(0.2), exposure, 0, Quadrature::Exact).unwrap();
        assert!((e.e()[0] - 1.110701).abs() < 1e-6, "{}", e.e()[0]);
        assert!((e.e()[0] - (1.0 + 0.2f64.exp()) / 2.0).abs() < 1e-15);

        // Reference at the end of the window flips the sign of the pieces.
        let e_end = blur_map(&s, &c(0.2), exposure, 2, Quadrature::Exact).unwrap();
        assert!((e_end.e()[0] - ((-0.2f64).exp() + 1.0) / 2.0).abs() < 1e-15);

        assert!(blur_map(&s, &c(0.2), exposure, 5, Quadrature::Exact).is_err());
        assert!(Exposure::new(3, 3).is_err());
    }

    #[test]
    fn edi_hand_values() {
        let t = Image::constant(1, 1, 1, 0.5).unwrap();
        let two = BlurMap::from_plane(Plane {
            width: 1,
            height: 1,
            data: vec![2.0],
        })
        .unwrap();
        assert_eq!(edi_with_map(&t, &two, 0.0).unwrap().data(), &[0.25]);
        let ridge = edi_with_map(&t, &two, 0.01).unwrap().data()[0];
        assert!((ridge - 0.2493766).abs() < 1e-7, "{ridge}");

        let tiny = BlurMap::from_plane(Plane {
            width: 1,
            height: 1,
            data: vec![1e-4],
        })
        .unwrap();
        assert!(matches!(
            edi_with_map(&t, &tiny, 0.0),
            Err(Error::Singularity { count: 1, .. })
        ));
        assert!(edi_with_map(&t, &tiny, 1e-3).is_ok());

        let none = EventStream::empty(1, 1);
        let exposure = Exposure::new(0, 10).unwrap();
        assert_eq!(
            edi_reconstruct(&t, &none, &c(0.2), exposure, 5, 0.0).unwrap(),
            t
        );
    }

    #[test]
    fn latent_at_reference_and_locality() {
        let img = Image::from_fn(3, 3, |x, y| 0.1 + 0.1 * (x + y) as f64).unwrap();
        let s =
            EventStream::new(3, 3, vec![ev(2, 0, 3, 1), ev(2, 0, 6, 1), ev(2, 0, 8, -1)]).unwrap();
        let exposure = Exposure::new(0, 10).unwrap();
        let r = edi_reconstruct(&img, &s, &c(0.2), exposure, 5, 1e-3).unwrap();
        let same = latent_at(&img, &s, &c(0.2), exposure, 5, 5, 1e-3).unwrap();
        assert_eq!(same, r);
        let later = latent_at(&img, &s, &c(0.2), exposure, 5, 9, 1e-3).unwrap();
        for i in 0..9 {
            if i != 2 {
                assert_eq!(later.data()[i], r.data()[i]);
            }
        }
        assert!((later.data()[2] - r.data()[2]).abs() < 1e-12);
    }

    #[test]
    fn accumulate_modes() {
        let s = EventStream::new(2, 1, vec![ev(0, 0, 1, 1), ev(0, 0, 2, -1)]).unwrap();
        let lit = accumulate(&s, &c(0.2), AccumMode::LiteralSum).unwrap();
        assert!(lit.at(1, 0).is_empty());
        let v = lit.at(0, 0);
        assert!((v[0] - 1.2214028).abs() < 1e-7 && (v[1] - 2.0401335).abs() < 1e-7);
        let cp = accumulate(&s, &c(0.2), AccumMode::CumulativeProduct).unwrap();
        let v = cp.at(0, 0);
        assert!((v[0] - 1.2214028).abs() < 1e-7 && (v[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn variance_contracts() {
        let empty = EventStream::empty(4, 4);
        let v = variance_map(&empty, &c(0.2), AccumMode::LiteralSum).unwrap();
        assert!(v.v().iter().all(|x| *x == 0.0));

        let s = EventStream::new(2, 1, vec![ev(0, 0, 1, 1), ev(0, 0, 2, -1)]).unwrap();
        let raw = raw_variance(&s, &c(0.2), AccumMode::LiteralSum).unwrap();
        assert!((raw.data[0] - 0.1675797).abs() < 1e-6, "{}", raw.data[0]);
        let oracle =
            ((1.2214028f64 - 1.6307681).powi(2) + (2.0401335f64 - 1.6307681).powi(2)) / 2.0;
        assert!((raw.data[0] - oracle).abs() < 1e-6);

        let flat = Plane {
            width: 3,
            height: 3,
            data: vec![0.7; 9],
        };
        assert!(normalize_robust(&flat).v().iter().all(|x| *x == 0.0));
    }

    fn random_stream(seed: u64, w: usize, h: usize, n: usize, t_max: i64) -> EventStream {
        let mut rng = Rng::new(seed, 3);
        let events = (0..n)
            .map(|_| {
                ev(
                    rng.below(w as u64) as u16,
                    rng.below(h as u64) as u16,
                    rng.below(t_max as u64) as i64,
                    if rng.uniform() < 0.5 { 1 } else { -1 },
                )
            })
            .collect();
        EventStream::new(w, h, events).unwrap()
    }

    #[test]
    fn reblur_identity() {
        let s = random_stream(5, 8, 8, 400, 1000);
        let exposure = Exposure::new(0, 1000).unwrap();
        let e = blur_map(&s, &c(0.2), exposure, 500, Quadrature::Exact)
            .unwrap()
            .clamped(BLUR_EPS);
        let t = Image::from_fn(8, 8, |x, y| 0.05 + 0.01 * (x * 8 + y) as f64).unwrap();
        let x = edi_with_map(&t, &e, 0.0).unwrap();
        for i in 0..64 {
            assert!((x.data()[i] * e.e()[i] - t.data()[i]).abs() <= 1e-9);
        }
    }

    #[test]
    fn grid_converges_to_exact() {
        let s = random_stream(8, 6, 6, 200, 10_000);
        let exposure = Exposure::new(0, 10_000).unwrap();
        let exact = blur_map(&s, &c(0.2), exposure, 5000, Quadrature::Exact).unwrap();
        let by_px = s.by_pixel();
        let mut prev_err = f64::INFINITY;
        for n in [16, 64, 256, 1024, 4096] {
            let grid = blur_map(&s, &c(0.2), exposure, 5000, Quadrature::Grid(n)).unwrap();
            let mut worst = 0.0f64;
            for i in 0..36 {
                let err = (grid.e()[i] - exact.e()[i]).abs();
                let k = by_px.pixel(i).len() as f64;
                assert!(
                    err <= 0.2 * k / n as f64 + 1e-12,
                    "n={n} px={i} err={err} k={k}"
                );
                worst = worst.max(err);
            }
            assert!(worst <= prev_err);
            prev_err = worst;
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn variance_in_unit_interval(seed in 0u64..10_000, n in 0usize..300, cumulative in prop::bool::ANY) {
            let s = random_stream(seed, 7, 5, n, 500);
            let mode = if cumulative { AccumMode::CumulativeProduct } else { AccumMode::LiteralSum };
            let v = variance_map(&s, &c(0.2), mode).unwrap();
            prop_assert!(v.v().iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert_eq!(v, variance_map(&s, &c(0.2), mode).unwrap());
        }

        #[test]
        fn exact_map_positive_and_literal_sum_increasing(seed in 0u64..10_000) {
            let s = random_stream(seed, 4, 4, 60, 1000);
            let exposure = Exposure::new(0, 1000).unwrap();
            let a = blur_map(&s, &c(0.2), exposure, 300, Quadrature::Exact).unwrap();
            prop_assert!(a.e().iter().all(|e| *e > 0.0));
            let lit = accumulate(&s, &c(0.2), AccumMode::LiteralSum).unwrap();
            for i in 0..16 {
                prop_assert!(lit.pixel(i).windows(2).all(|w| w[1] > w[0]));
            }
        }
    }
}
