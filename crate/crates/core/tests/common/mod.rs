#![allow(dead_code)]

use turbev_core::bench::scene_suite;
use turbev_core::evsim::{simulate_events, ThresholdModel};
use turbev_core::formation::{Exposure, FormationConfig};
use turbev_core::restore::{RestoreConfig, RestoreSetup};
use turbev_core::turbsim::{render_turbulent, RenderedTurbulence, TurbulenceParams};
use turbev_core::{EventStream, Image, Rng};

pub const SUITE_SIZE: usize = 20;
pub const SUITE_SEED: u64 = 1000;

/// One rendered scene with its events.
pub struct Case {
    pub clean: Image,
    pub render: RenderedTurbulence,
    pub events: EventStream,
    pub exposure: Exposure,
}

impl Case {
    pub fn setup(&self, restore: RestoreConfig) -> RestoreSetup {
        RestoreSetup::new(self.exposure, FormationConfig::default(), restore)
    }
}

pub fn render_case(clean: Image, turb: TurbulenceParams, model: ThresholdModel) -> Case {
    let render = render_turbulent(&clean, &turb, &Rng::new(turb.seed, 0)).unwrap();
    let events = simulate_events(&render.latents, &model).unwrap().stream;
    let exposure = Exposure::new(
        render.latents.exposure_start(),
        render.latents.exposure_end(),
    )
    .unwrap();
    Case {
        clean,
        render,
        events,
        exposure,
    }
}

/// The 20-image synthetic suite: 592 px scenes center-cropped to 128 px,
/// default turbulence (sigma_tilt 1.5, rho 16, zero-mean tilt) and events.
pub fn suite(noise: f64, noise_rate_hz: f64) -> Vec<Case> {
    scene_suite(SUITE_SIZE, SUITE_SEED, 592, 128)
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, clean)| {
            let turb = TurbulenceParams {
                seed: i as u64,
                sigma_noise: noise,
                ..Default::default()
            };
            let model = ThresholdModel {
                seed: i as u64,
                noise_rate_hz,
                ..Default::default()
            };
            render_case(clean, turb, model)
        })
        .collect()
}

pub fn texture(w: usize, h: usize) -> Image {
    Image::from_fn(w, h, |x, y| {
        let (x, y) = (x as f64, y as f64);
        0.5 + 0.2 * (x * 0.31).sin() * (y * 0.17).cos() + 0.1 * ((x + 2.0 * y) * 0.11).sin()
    })
    .unwrap()
}
