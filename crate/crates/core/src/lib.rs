//! Particle flow Gaussian sum particle filtering.
//!
//! The crate provides a bank-of-filters Gaussian sum particle filter whose
//! components use an invertible particle flow as their proposal, together with
//! the baseline filters it is compared against (EDH/LEDH flows, flow-based
//! particle filters, Gaussian and Gaussian sum particle filters, a Kalman
//! filter and a bootstrap particle filter), benchmark scenarios, and
//! evaluation metrics.
//!
//! All numerical code is generic over [`Scalar`] (`f32` or `f64`); the
//! `*64` aliases below fix the precision used by the experiment harness.
//!
//! ```no_run
//! use pfgspf_core::filters::{Filter, FilterConfig, FilterKind};
//! use pfgspf_core::rng::stream;
//! use pfgspf_core::scenarios::{ScenarioConfig, SensorNetConfig};
//! use pfgspf_core::StateSpaceModel;
//!
//! # fn main() -> pfgspf_core::Result<()> {
//! let model = ScenarioConfig::SensorNet(SensorNetConfig::default()).build::<f64>()?;
//! let truth = model.simulate(30, &mut stream(1, &[]));
//! let config = FilterConfig { seed: 7, ..FilterConfig::new(FilterKind::Pfgspf, 4, 200) };
//! let mut filter = Filter::new(&model, model.initial_law(), config)?;
//! for z in &truth.observations {
//!     let state = filter.step(z)?;
//!     println!("estimate[0] = {:.3}, G_eff = {:.2}", state.estimate()[0], state.geff());
//! }
//! # Ok(())
//! # }
//! ```

pub mod error;
pub mod filters;
pub mod flow;
pub mod gaussmix;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod scalar;
pub mod scenarios;
pub mod ssm;

pub use error::{Error, Result};
pub use filters::{FilterConfig, FilterKind, FilterState};
pub use flow::{FlowResult, FlowSchedule, FlowStepParams};
pub use gaussmix::{Gaussian, GaussianMixture, ParticleCloud, Particles};
pub use metrics::TrialRecord;
pub use scalar::Scalar;
pub use ssm::{LinearStructure, StateSpaceModel, TransitionMoments};

pub type Gaussian64 = Gaussian<f64>;
pub type Gaussian32 = Gaussian<f32>;
pub type GaussianMixture64 = GaussianMixture<f64>;
pub type GaussianMixture32 = GaussianMixture<f32>;
pub type ParticleCloud64 = ParticleCloud<f64>;
pub type FilterState64 = FilterState<f64>;
pub type FilterState32 = FilterState<f32>;
pub type FlowSchedule64 = FlowSchedule<f64>;
pub type TrialRecord64 = TrialRecord<f64>;
pub type Vector64 = nalgebra::DVector<f64>;
pub type Matrix64 = nalgebra::DMatrix<f64>;
