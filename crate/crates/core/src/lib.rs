//! Event-guided atmospheric turbulence toolkit.
//!
//! The crate simulates turbulent long exposures together with the event
//! stream a co-located event camera would record, and restores sharp,
//! geometrically correct images in two steps:
//!
//! 1. **Deblur.** The blur of a long exposure is modelled as a per-pixel
//!    factor `E`, the exposure average of the exponentiated event integral.
//!    Dividing it out (ridge-regularized) yields a sharp but tilted image.
//! 2. **Detilt.** A variance map built from accumulated events weights a
//!    coarse-to-fine Gauss-Newton flow solver that registers the sharp image
//!    to a geometrically centered reference; warping by the flow removes tilt.
//!
//! Modules:
//!
//! - [`event`], [`image`], [`io`], [`rng`]: domain types, formats, randomness
//! - [`turbsim`]: tilt fields, spatially varying blur, turbulent rendering
//! - [`evsim`]: event emission under a log-intensity threshold model
//! - [`formation`]: event integrals, blur map, EDI reconstruction, variance map
//! - [`restore`]: deblur, reference frame, flow estimation, full pipeline
//! - [`bench`]: metrics, synthetic datasets, evaluation

// Negated float comparisons reject NaN along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod error;
pub mod event;
pub mod evsim;
pub mod filter;
pub mod formation;
pub mod image;
pub mod io;
pub mod restore;
pub mod rng;
pub mod turbsim;

pub use config::Config;
pub use error::{Error, Result};
pub use event::{Event, EventStream, Polarity};
pub use evsim::{simulate_events, SimulatedEvents, ThresholdModel};
pub use formation::{AccumMode, BlurMap, Contrast, Exposure, Plane, VarianceMap};
pub use image::{FrameSequence, Image};
pub use restore::{
    restore_pipeline, FlowSolverParams, RestorationReport, RestoreConfig, RestoreSetup,
};
pub use rng::Rng;
pub use turbsim::{TiltFlow, TurbulenceParams};
