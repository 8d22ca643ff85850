//! The filter family.
//!
//! Every filter advances a [`FilterState`] by one observation. Gaussian-type
//! filters (GPF, GSPF, PFGPF, PFGSPF, Kalman) carry only a Gaussian mixture
//! posterior; particle-carrying filters (EDH, LEDH, PFPF, bootstrap) also keep
//! their cloud between steps and summarize it as a single Gaussian.

mod flow_pf;
mod gaussian_sum;
mod oracle;

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::flow::ScheduleConfig;
use crate::gaussmix::{Gaussian, GaussianMixture, ParticleCloud};
use crate::rng::{stream, StreamRng};
use crate::scalar::Scalar;
use crate::ssm::StateSpaceModel;

pub use flow_pf::{edh_step, ledh_step, pfpf_step, FlowVariant};
pub use gaussian_sum::{
    gaussian_sum_step_with_streams, gpf_step, gspf_step, pfgpf_step, pfgspf_step, ComponentProposal,
};
pub use oracle::{bootstrap_pf_step, kalman_step, kalman_update, resample_systematic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterKind {
    Edh,
    Ledh,
    PfpfEdh,
    PfpfLedh,
    Gpf,
    Gspf,
    Pfgpf,
    Pfgspf,
    #[serde(alias = "kf_oracle")]
    Kalman,
    #[serde(alias = "bootstrap")]
    BootstrapPf,
}

impl FilterKind {
    pub const ALL: [FilterKind; 10] = [
        FilterKind::Edh,
        FilterKind::Ledh,
        FilterKind::PfpfEdh,
        FilterKind::PfpfLedh,
        FilterKind::Gpf,
        FilterKind::Gspf,
        FilterKind::Pfgpf,
        FilterKind::Pfgspf,
        FilterKind::Kalman,
        FilterKind::BootstrapPf,
    ];

    /// Filters whose posterior is a bank of `G` Gaussians.
    pub fn is_mixture(self) -> bool {
        matches!(self, FilterKind::Gspf | FilterKind::Pfgspf)
    }

    /// Filters that keep a particle cloud between steps.
    pub fn carries_cloud(self) -> bool {
        matches!(
            self,
            FilterKind::Edh | FilterKind::Ledh | FilterKind::PfpfEdh | FilterKind::PfpfLedh | FilterKind::BootstrapPf
        )
    }

    pub fn label(self) -> &'static str {
        match self {
            FilterKind::Edh => "EDH",
            FilterKind::Ledh => "LEDH",
            FilterKind::PfpfEdh => "PFPF (EDH)",
            FilterKind::PfpfLedh => "PFPF (LEDH)",
            FilterKind::Gpf => "GPF",
            FilterKind::Gspf => "GSPF",
            FilterKind::Pfgpf => "PFGPF",
            FilterKind::Pfgspf => "PFGSPF",
            FilterKind::Kalman => "KF",
            FilterKind::BootstrapPf => "BPF",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub const DEFAULT_RESAMPLE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub kind: FilterKind,
    /// Number of mixture components `G`.
    #[serde(default = "one")]
    pub n_components: usize,
    /// Particles per component `N*_p`; the total budget is `G · N*_p`.
    pub particles_per_component: usize,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    /// Resample when the effective sample size drops below this fraction of N.
    #[serde(default = "default_threshold")]
    pub resample_threshold: f64,
    /// Displacement of the initial component means, in prior standard deviations.
    #[serde(default)]
    pub init_spread: f64,
    /// Seed of the filter's own random stream (see [`Filter`]).
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_threshold() -> f64 {
    DEFAULT_RESAMPLE_THRESHOLD
}

impl FilterConfig {
    pub fn new(kind: FilterKind, n_components: usize, particles_per_component: usize) -> Self {
        Self {
            kind,
            n_components,
            particles_per_component,
            schedule: ScheduleConfig::default(),
            resample_threshold: DEFAULT_RESAMPLE_THRESHOLD,
            init_spread: 0.0,
            seed: 0,
        }
    }

    /// Total particle budget `N_p = G · N*_p`.
    pub fn total_particles(&self) -> usize {
        self.n_components * self.particles_per_component
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_components == 0 {
            return Err(invalid("the number of components G must be at least 1"));
        }
        if !self.kind.is_mixture() && self.n_components != 1 {
            return Err(invalid(format!("{} supports exactly one component", self.kind)));
        }
        let min_particles = match self.kind {
            FilterKind::Kalman => 0,
            FilterKind::BootstrapPf => 1,
            _ => 2,
        };
        if self.particles_per_component < min_particles {
            return Err(invalid(format!(
                "{} needs at least {min_particles} particles per component",
                self.kind
            )));
        }
        if !(0.0..=1.0).contains(&self.resample_threshold) {
            return Err(invalid("resample threshold must lie in [0, 1]"));
        }
        if !(self.init_spread.is_finite() && self.init_spread >= 0.0) {
            return Err(invalid("initial component spread must be finite and non-negative"));
        }
        self.schedule.build::<f64>().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics<T: Scalar> {
    /// Effective number of Gaussians of the posterior mixture.
    pub geff: T,
    /// Effective sample size of each component's normalized weights.
    pub component_ess: Vec<T>,
    /// Components whose weights all underflowed this step.
    pub degenerate_components: Vec<usize>,
    /// Largest `|ln N(η₁) − ln N(η₀)|` over the flowed particles.
    pub max_abs_log_ratio: Option<T>,
    /// Particles dropped after their localized flow broke down numerically.
    pub diverged_particles: usize,
    pub resampled: bool,
}

impl<T: Scalar> StepDiagnostics<T> {
    fn initial(components: usize) -> Self {
        Self {
            geff: T::from_usize_lossy(components),
            component_ess: Vec::new(),
            degenerate_components: Vec::new(),
            max_abs_log_ratio: None,
            diverged_particles: 0,
            resampled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState<T: Scalar> {
    pub posterior: GaussianMixture<T>,
    pub cloud: Option<ParticleCloud<T>>,
    /// Extended-Kalman covariance that sets the flow's `P` in the particle
    /// flow particle filter.
    pub ekf_cov: Option<DMatrix<T>>,
    pub time_index: usize,
    pub diagnostics: StepDiagnostics<T>,
}

impl<T: Scalar> FilterState<T> {
    pub fn estimate(&self) -> DVector<T> {
        self.posterior.state_estimate()
    }

    pub fn geff(&self) -> T {
        self.posterior.effective_components()
    }
}

/// Initial state drawn from the prior `N(μ₀, Σ₀)`.
///
/// Mixture filters start with `G` equally weighted copies of the prior; with
/// a positive `init_spread` the means of components `1..G` are displaced by
/// `init_spread · L n` with `n` standard normal (component 0 stays at `μ₀`).
pub fn initialize<T: Scalar>(
    prior: &Gaussian<T>,
    config: &FilterConfig,
    rng: &mut dyn RngCore,
) -> Result<FilterState<T>> {
    config.validate()?;
    let g = config.n_components;
    let mut components = Vec::with_capacity(g);
    components.push(prior.clone());
    let spread = T::lit(config.init_spread);
    for _ in 1..g {
        if config.init_spread > 0.0 {
            let offset = prior.draw(rng) - prior.mean();
            components.push(Gaussian::new(prior.mean() + offset * spread, prior.cov().clone())?);
        } else {
            components.push(prior.clone());
        }
    }
    let posterior = GaussianMixture::uniform(components)?;
    let cloud = config
        .kind
        .carries_cloud()
        .then(|| ParticleCloud::uniform(prior.sample(config.total_particles(), rng)));
    let ekf_cov = matches!(config.kind, FilterKind::PfpfEdh | FilterKind::PfpfLedh).then(|| prior.cov().clone());
    Ok(FilterState { posterior, cloud, ekf_cov, time_index: 0, diagnostics: StepDiagnostics::initial(g) })
}

/// Advances `state` by one observation with the filter selected in `config`.
pub fn step<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    state: &FilterState<T>,
    model: &M,
    z: &DVector<T>,
    config: &FilterConfig,
    rng: &mut dyn RngCore,
) -> Result<FilterState<T>> {
    match config.kind {
        FilterKind::Pfgspf => pfgspf_step(state, model, z, config, rng),
        FilterKind::Pfgpf => pfgpf_step(state, model, z, config, rng),
        FilterKind::Gspf => gspf_step(state, model, z, config, rng),
        FilterKind::Gpf => gpf_step(state, model, z, config, rng),
        FilterKind::PfpfEdh => pfpf_step(state, model, z, config, FlowVariant::Edh, rng),
        FilterKind::PfpfLedh => pfpf_step(state, model, z, config, FlowVariant::Ledh, rng),
        FilterKind::Edh => edh_step(state, model, z, config, rng),
        FilterKind::Ledh => ledh_step(state, model, z, config, rng),
        FilterKind::Kalman => kalman_step(state, model, z),
        FilterKind::BootstrapPf => bootstrap_pf_step(state, model, z, rng),
    }
}

/// A filter bound to a model, owning its state and random stream.
pub struct Filter<'m, T: Scalar, M: StateSpaceModel<T> + ?Sized> {
    model: &'m M,
    config: FilterConfig,
    state: FilterState<T>,
    rng: StreamRng,
}

impl<'m, T: Scalar, M: StateSpaceModel<T> + ?Sized> Filter<'m, T, M> {
    /// Starts from `prior`; all randomness comes from `config.seed`.
    pub fn new(model: &'m M, prior: &Gaussian<T>, config: FilterConfig) -> Result<Self> {
        if prior.dim() != model.dim_x() {
            return Err(invalid("prior dimension does not match the model"));
        }
        let mut rng = stream(config.seed, &[]);
        let state = initialize(prior, &config, &mut rng)?;
        Ok(Self { model, config, state, rng })
    }

    pub fn step(&mut self, z: &DVector<T>) -> Result<&FilterState<T>> {
        self.state = step(&self.state, self.model, z, &self.config, &mut self.rng)?;
        Ok(&self.state)
    }

    pub fn state(&self) -> &FilterState<T> {
        &self.state
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn estimate(&self) -> DVector<T> {
        self.state.estimate()
    }
}

pub(crate) fn check_observation<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    state: &FilterState<T>,
    model: &M,
    z: &DVector<T>,
) -> Result<()> {
    if z.len() != model.dim_z() {
        return Err(invalid(format!(
            "observation has length {} but the model produces {}",
            z.len(),
            model.dim_z()
        )));
    }
    if state.posterior.dim() != model.dim_x() {
        return Err(invalid("filter state dimension does not match the model"));
    }
    Ok(())
}
