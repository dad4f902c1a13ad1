//! Event emission from latent frames under a logarithmic contrast-threshold model.
//!
//! Each pixel keeps a reference log level. Between consecutive frames the log
//! intensity is interpolated linearly in time, and an event fires whenever the
//! interpolant moves at least one (possibly jittered) threshold away from the
//! reference. Firing moves the reference by the pixel's base threshold in the
//! direction of the change.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{argument, Result};
use crate::event::{Event, EventStream, Polarity};
use crate::image::{FrameSequence, Image, LOG_EPS};
use crate::rng::Rng;

/// Contrast-threshold model. Serialized as the `event_sim` config block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThresholdModel {
    pub c_mean: f64,
    pub c_std: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub temporal_jitter_std: f64,
    pub seed: u64,
    /// Minimum spacing between events at one pixel; 0 disables.
    pub refractory_us: i64,
    /// Background-activity rate per pixel; 0 disables.
    pub noise_rate_hz: f64,
}

impl Default for ThresholdModel {
    fn default() -> Self {
        ThresholdModel {
            c_mean: 0.2,
            c_std: 0.03,
            c_min: 0.05,
            c_max: 0.5,
            temporal_jitter_std: 0.01,
            seed: 0,
            refractory_us: 0,
            noise_rate_hz: 0.0,
        }
    }
}

impl ThresholdModel {
    /// Spatially and temporally constant threshold `c`.
    pub fn constant(c: f64) -> Self {
        ThresholdModel {
            c_mean: c,
            c_std: 0.0,
            c_min: c,
            c_max: c,
            temporal_jitter_std: 0.0,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.c_min > 0.0
            && self.c_min <= self.c_mean
            && self.c_mean <= self.c_max
            && self.c_std >= 0.0
            && self.temporal_jitter_std >= 0.0
            && self.refractory_us >= 0
            && self.noise_rate_hz >= 0.0
            && self.c_max.is_finite();
        if ok {
            Ok(())
        } else {
            Err(argument(format!("invalid threshold model: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationMetadata {
    pub c_mean: f64,
    pub c_std: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SimulatedEvents {
    pub stream: EventStream,
    /// Base threshold per pixel, within `[c_min, c_max]`.
    pub threshold_map: Image,
    pub metadata: SimulationMetadata,
}

/// Per-pixel base thresholds: `N(c_mean, c_std)` clamped, drawn row-major.
pub fn sample_threshold_map(width: usize, height: usize, model: &ThresholdModel) -> Image {
    let mut rng = Rng::new(model.seed, 0);
    let data = (0..width * height)
        .map(|_| {
            if model.c_std > 0.0 {
                rng.normal(model.c_mean, model.c_std)
                    .clamp(model.c_min, model.c_max)
            } else {
                model.c_mean
            }
        })
        .collect();
    Image::gray_unchecked(width, height, data)
}

pub fn simulate_events(latents: &FrameSequence, model: &ThresholdModel) -> Result<SimulatedEvents> {
    model.validate()?;
    if latents.len() < 2 {
        return Err(argument(format!(
            "event simulation needs at least 2 frames, got {}",
            latents.len()
        )));
    }
    let (w, h) = latents.dims();
    crate::event::check_dims(w, h)?;
    let thresholds = sample_threshold_map(w, h, model);
    let logs: Vec<Vec<f64>> = latents
        .frames()
        .iter()
        .map(|f| f.data().iter().map(|v| v.max(LOG_EPS).ln()).collect())
        .collect();
    let times: Vec<f64> = latents.timestamps().iter().map(|&t| t as f64).collect();
    let window = (latents.exposure_start(), latents.exposure_end());

    let rows: Vec<Vec<Event>> = (0..h)
        .into_par_iter()
        .map(|y| {
            let mut out = Vec::new();
            let mut samples = vec![0.0; logs.len()];
            for x in 0..w {
                let idx = y * w + x;
                for (s, l) in samples.iter_mut().zip(&logs) {
                    *s = l[idx];
                }
                let mut pixel = PixelSim::new(model, thresholds.data()[idx], idx as u64);
                pixel.run(&samples, &times, |t, p| {
                    out.push(Event::new(x as u16, y as u16, t, p))
                });
                if model.noise_rate_hz > 0.0 {
                    pixel.background(window, |t, p| {
                        out.push(Event::new(x as u16, y as u16, t, p))
                    });
                }
            }
            out
        })
        .collect();

    let events: Vec<Event> = rows.into_iter().flatten().collect();
    let stream = EventStream::new(w, h, events)?;
    Ok(SimulatedEvents {
        stream,
        threshold_map: thresholds,
        metadata: SimulationMetadata {
            c_mean: model.c_mean,
            c_std: model.c_std,
            seed: model.seed,
        },
    })
}

struct PixelSim<'a> {
    model: &'a ThresholdModel,
    base_c: f64,
    rng: Option<Rng>,
    stream_id: u64,
    pending_c: f64,
    ready_at: f64,
}

impl<'a> PixelSim<'a> {
    fn new(model: &'a ThresholdModel, base_c: f64, pixel: u64) -> Self {
        let stream_id = pixel + 1;
        let rng = (model.temporal_jitter_std > 0.0).then(|| Rng::new(model.seed, stream_id));
        let mut s = PixelSim {
            model,
            base_c,
            rng,
            stream_id,
            pending_c: base_c,
            ready_at: f64::NEG_INFINITY,
        };
        s.draw_threshold();
        s
    }

    fn draw_threshold(&mut self) {
        self.pending_c = match &mut self.rng {
            Some(r) => (self.base_c + self.model.temporal_jitter_std * r.standard_normal())
                .clamp(self.model.c_min, self.model.c_max),
            None => self.base_c,
        };
    }

    fn run(&mut self, logs: &[f64], times: &[f64], mut emit: impl FnMut(i64, Polarity)) {
        let mut level = logs[0];
        for k in 0..logs.len() - 1 {
            let (t0, t1) = (times[k], times[k + 1]);
            let (l0, l1) = (logs[k], logs[k + 1]);
            let slope = (l1 - l0) / (t1 - t0);
            let mut cursor = t0;
            loop {
                let earliest = cursor.max(self.ready_at);
                if earliest > t1 {
                    break;
                }
                let up =
                    first_time_at_or_above(l0, slope, t0, t1, level + self.pending_c, earliest);
                let down =
                    first_time_at_or_below(l0, slope, t0, t1, level - self.pending_c, earliest);
                let (t, p) = match (up, down) {
                    (Some(a), Some(b)) if b < a => (b, Polarity::Negative),
                    (Some(a), _) => (a, Polarity::Positive),
                    (None, Some(b)) => (b, Polarity::Negative),
                    (None, None) => break,
                };
                let stamp = t.ceil() as i64;
                emit(stamp, p);
                level += p.sign() * self.base_c;
                cursor = t;
                if self.model.refractory_us > 0 {
                    self.ready_at = (stamp + self.model.refractory_us) as f64;
                }
                self.draw_threshold();
            }
        }
    }

    /// Poisson background events with random polarity over the exposure window.
    fn background(&mut self, window: (i64, i64), mut emit: impl FnMut(i64, Polarity)) {
        let mut rng = Rng::new(self.model.seed ^ 0xBAC6_0000_0000_0000, self.stream_id);
        let rate_per_us = self.model.noise_rate_hz * 1e-6;
        let mut t = window.0 as f64;
        loop {
            t += -(1.0 - rng.uniform()).ln() / rate_per_us;
            if t >= window.1 as f64 {
                break;
            }
            let p = if rng.uniform() < 0.5 {
                Polarity::Negative
            } else {
                Polarity::Positive
            };
            emit(t.floor() as i64, p);
        }
    }
}

/// Earliest `t` in `[from, t1]` with `l0 + slope (t - t0) >= target`.
fn first_time_at_or_above(
    l0: f64,
    slope: f64,
    t0: f64,
    t1: f64,
    target: f64,
    from: f64,
) -> Option<f64> {
    let at = |t: f64| l0 + slope * (t - t0);
    if at(from) >= target {
        return Some(from);
    }
    if slope <= 0.0 {
        return None;
    }
    let t = t0 + (target - l0) / slope;
    (t <= t1).then_some(t.max(from))
}

fn first_time_at_or_below(
    l0: f64,
    slope: f64,
    t0: f64,
    t1: f64,
    target: f64,
    from: f64,
) -> Option<f64> {
    first_time_at_or_above(-l0, -slope, t0, t1, -target, from)
}

/// Upper bound on signal events: `sum_pixels sum_steps ceil(|dlog I| / c_min)`.
///
/// Exact for constant thresholds. With per-crossing jitter the bound holds as
/// long as the jitter stays well below `c_mean - c_min`.
pub fn event_count_bound(latents: &FrameSequence, c_min: f64) -> Result<u64> {
    if !(c_min > 0.0) {
        return Err(argument(format!("c_min must be positive, got {c_min}")));
    }
    let frames = latents.frames();
    let mut total = 0u64;
    for pair in frames.windows(2) {
        for (a, b) in pair[0].data().iter().zip(pair[1].data()) {
            let d = (b.max(LOG_EPS).ln() - a.max(LOG_EPS).ln()).abs();
            total += (d / c_min).ceil() as u64;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn two_frames(a: f64, b: f64) -> FrameSequence {
        FrameSequence::new(
            vec![
                Image::constant(1, 1, 1, a).unwrap(),
                Image::constant(1, 1, 1, b).unwrap(),
            ],
            vec![0, 1000],
            0,
            1000,
        )
        .unwrap()
    }

    #[test]
    fn constant_latents_emit_nothing() {
        let seq = two_frames(0.3, 0.3);
        let sim = simulate_events(&seq, &ThresholdModel::default()).unwrap();
        assert!(sim.stream.is_empty());
        assert_eq!(event_count_bound(&seq, 0.05).unwrap(), 0);
    }

    #[test]
    fn analytic_crossing_counts() {
        let up = two_frames(0.1, 0.1 * 0.45f64.exp());
        let sim = simulate_events(&up, &ThresholdModel::constant(0.2)).unwrap();
        let ps: Vec<i8> = sim.stream.events().iter().map(|e| e.p.as_i8()).collect();
        assert_eq!(ps, vec![1, 1]);
        // Crossings at 0.2/0.45 and 0.4/0.45 of the interval, rounded up.
        let ts: Vec<i64> = sim.stream.events().iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![445, 889]);
        assert_eq!(event_count_bound(&up, 0.2).unwrap(), 3);

        let down = two_frames(0.1, 0.1 * (-0.45f64).exp());
        let sim = simulate_events(&down, &ThresholdModel::constant(0.2)).unwrap();
        let ps: Vec<i8> = sim.stream.events().iter().map(|e| e.p.as_i8()).collect();
        assert_eq!(ps, vec![-1, -1]);
    }

    #[test]
    fn needs_two_frames() {
        let one = FrameSequence::new(vec![Image::constant(1, 1, 1, 0.1).unwrap()], vec![0], 0, 1)
            .unwrap();
        assert!(matches!(
            simulate_events(&one, &ThresholdModel::default()),
            Err(crate::Error::Argument(_))
        ));
    }

    #[test]
    fn threshold_map_respects_clamp() {
        let m = ThresholdModel {
            c_std: 0.5,
            ..Default::default()
        };
        let map = sample_threshold_map(32, 32, &m);
        assert!(map.data().iter().all(|c| (m.c_min..=m.c_max).contains(c)));
    }

    #[test]
    fn refractory_spaces_events() {
        let seq = two_frames(0.1, 0.1 * 2.0f64.exp());
        let m = ThresholdModel {
            refractory_us: 300,
            ..ThresholdModel::constant(0.2)
        };
        let sim = simulate_events(&seq, &m).unwrap();
        let ts: Vec<i64> = sim.stream.events().iter().map(|e| e.t).collect();
        assert!(ts.windows(2).all(|w| w[1] - w[0] >= 300), "{ts:?}");
        assert!(ts.len() < 10);
    }

    #[test]
    fn background_noise_is_deterministic() {
        let seq = two_frames(0.3, 0.3);
        let m = ThresholdModel {
            noise_rate_hz: 5000.0,
            ..Default::default()
        };
        let a = simulate_events(&seq, &m).unwrap();
        let b = simulate_events(&seq, &m).unwrap();
        assert!(!a.stream.is_empty());
        assert_eq!(a.stream, b.stream);
    }

    fn random_sequence(seed: u64, w: usize, h: usize, n: usize, monotone: bool) -> FrameSequence {
        let mut rng = Rng::new(seed, 99);
        let base: Vec<f64> = (0..w * h).map(|_| 0.05 + 0.9 * rng.uniform()).collect();
        let mut frames = Vec::new();
        let mut cur = base.clone();
        for _ in 0..n {
            frames.push(Image::new(w, h, 1, cur.clone()).unwrap());
            for v in &mut cur {
                let step = if monotone {
                    1.0 + 0.3 * rng.uniform()
                } else {
                    (0.6 * rng.standard_normal()).exp()
                };
                *v = (*v * step).min(50.0);
            }
        }
        FrameSequence::uniform(frames, 120.0, 0).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn quantization_never_drifts(seed in 0u64..1000) {
            let seq = random_sequence(seed, 6, 5, 6, false);
            let c = 0.2;
            let sim = simulate_events(&seq, &ThresholdModel::constant(c)).unwrap();
            let by_px = sim.stream.by_pixel();
            for (k, (frame, &t)) in seq.frames().iter().zip(seq.timestamps()).enumerate() {
                for i in 0..30 {
                    let l0 = seq.frames()[0].data()[i].max(LOG_EPS).ln();
                    let lt = frame.data()[i].max(LOG_EPS).ln();
                    // Timestamps are rounded up, so a crossing just before `t` is stamped `t`.
                    let sum: f64 = by_px.pixel(i).iter().filter(|e| e.0 <= t).map(|e| e.1.sign()).sum();
                    let err = (lt - (l0 + c * sum)).abs();
                    prop_assert!(err <= c + 1e-9, "frame {k} px {i}: err {err}");
                }
            }
        }

        #[test]
        fn monotone_pixels_only_increase(seed in 0u64..1000) {
            let seq = random_sequence(seed, 4, 4, 5, true);
            let sim = simulate_events(&seq, &ThresholdModel::default()).unwrap();
            prop_assert!(sim.stream.events().iter().all(|e| e.p == Polarity::Positive));
        }

        #[test]
        fn count_within_bound(seed in 0u64..1000, jitter in prop::bool::ANY) {
            let seq = random_sequence(seed, 5, 5, 6, false);
            let m = if jitter { ThresholdModel { seed, ..Default::default() } } else { ThresholdModel::constant(0.2) };
            let sim = simulate_events(&seq, &m).unwrap();
            let bound = event_count_bound(&seq, m.c_min).unwrap();
            prop_assert!(sim.stream.len() as u64 <= bound);
            let again = simulate_events(&seq, &m).unwrap();
            prop_assert_eq!(sim.stream, again.stream);
        }
    }
}
