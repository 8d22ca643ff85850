//! Gaussian sum particle filters: a bank of per-component Gaussian particle
//! filters whose mixing proportions are reweighted by each component's share
//! of the total importance weight.
//!
//! For every component `j` the step draws `N*_p` particles from
//! `N(μʲ, Σʲ)`, propagates them through the dynamics, fits the predictive
//! Gaussian `N(μ̄ʲ, Σ̄ʲ)` by (1/N) moments, weights the particles and refits
//! the posterior component by weighted moments. With the flow proposal the
//! propagated particles are migrated by the localized flow and weighted by
//!
//! ```text
//! w ∝ N(η₁; μ̄, Σ̄) p(z | η₁) |det ∂η₁/∂η₀| / N(η₀; μ̄, Σ̄)
//! ```
//!
//! otherwise the propagated particles are used directly with `w ∝ p(z | η₀)`.

use nalgebra::DVector;
use rand::RngCore;
use rayon::prelude::*;

use super::{check_observation, FilterConfig, FilterKind, FilterState, StepDiagnostics};
use crate::error::{invalid, Result};
use crate::flow::{ledh_flow, FlowSchedule};
use crate::gaussmix::{
    effective_sample_size, empirical_moments, update_mixture_log_weights, weighted_moments_of,
    Gaussian, GaussianMixture,
};
use crate::rng::{derive_seed, stream};
use crate::scalar::{log_sum_exp, Scalar};
use crate::ssm::StateSpaceModel;

/// How a component's propagated particles are turned into a posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ComponentProposal {
    /// Sample from the dynamics, weight by the likelihood.
    Prior,
    /// Migrate with the localized invertible flow, weight with the Jacobian correction.
    Flow,
}

struct ComponentOutcome<T: Scalar> {
    posterior: Gaussian<T>,
    log_weight_sum: T,
    ess: T,
    degenerate: bool,
    max_abs_log_ratio: Option<T>,
    diverged: usize,
}

fn update_component<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    component: &Gaussian<T>,
    model: &M,
    z: &DVector<T>,
    n_star: usize,
    schedule: Option<&FlowSchedule<T>>,
    seed: u64,
) -> Result<ComponentOutcome<T>> {
    let mut rng = stream(seed, &[]);
    let prev = component.sample(n_star, &mut rng);
    let eta0: Vec<DVector<T>> = prev.iter().map(|x| model.transition(x, &mut rng)).collect();
    let pred = empirical_moments(&eta0)?;

    let (particles, log_w, max_ratio, diverged) = match schedule {
        None => {
            let lw: Vec<T> = eta0.iter().map(|x| model.log_likelihood(z, x)).collect();
            (eta0, lw, None, 0)
        }
        Some(schedule) => {
            let flow = ledh_flow(model, &eta0, &pred, z, schedule, false)?;
            let mut max_ratio = T::zero();
            let lw: Vec<T> = flow
                .eta1
                .iter()
                .zip(&eta0)
                .zip(&flow.log_jac_det)
                .map(|((e1, e0), &ld)| {
                    if ld == T::NEG_INFINITY {
                        return ld;
                    }
                    let ratio = pred.log_density(e1) - pred.log_density(e0);
                    if ratio.abs() > max_ratio {
                        max_ratio = ratio.abs();
                    }
                    ratio + model.log_likelihood(z, e1) + ld
                })
                .collect();
            (flow.eta1, lw, Some(max_ratio), flow.diverged.len())
        }
    };

    let lse = log_sum_exp(&log_w);
    if !lse.finite() {
        // Every weight underflowed: keep the predictive Gaussian and give the
        // component the smallest positive weight mass.
        return Ok(ComponentOutcome {
            posterior: pred,
            log_weight_sum: T::TINY.ln(),
            ess: T::zero(),
            degenerate: true,
            max_abs_log_ratio: max_ratio,
            diverged,
        });
    }
    Ok(ComponentOutcome {
        posterior: weighted_moments_of(&particles, &log_w)?,
        log_weight_sum: lse,
        ess: effective_sample_size(&log_w),
        degenerate: false,
        max_abs_log_ratio: max_ratio,
        diverged,
    })
}

/// One Gaussian sum step with an explicit random stream per component.
///
/// Component `j` draws all its randomness from `streams[j]`, so permuting the
/// components together with their streams permutes the output.
pub fn gaussian_sum_step_with_streams<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    state: &FilterState<T>,
    model: &M,
    z: &DVector<T>,
    config: &FilterConfig,
    proposal: ComponentProposal,
    streams: &[u64],
) -> Result<FilterState<T>> {
    check_observation(state, model, z)?;
    let g = state.posterior.len();
    if streams.len() != g {
        return Err(invalid(format!("{g} components but {} random streams", streams.len())));
    }
    if config.particles_per_component < 2 {
        return Err(invalid("Gaussian sum filters need at least 2 particles per component"));
    }
    let schedule = match proposal {
        ComponentProposal::Flow => Some(config.schedule.build::<T>()?),
        ComponentProposal::Prior => None,
    };
    let n_star = config.particles_per_component;
    let run = |(c, &seed): (&Gaussian<T>, &u64)| {
        update_component(c, model, z, n_star, schedule.as_ref(), seed)
    };
    let comps = state.posterior.components();
    let outcomes: Vec<ComponentOutcome<T>> = if g > 1 {
        comps.par_iter().zip(streams.par_iter()).map(run).collect::<Result<_>>()?
    } else {
        comps.iter().zip(streams.iter()).map(run).collect::<Result<_>>()?
    };

    let log_sums: Vec<T> = outcomes.iter().map(|o| o.log_weight_sum).collect();
    let weights = match update_mixture_log_weights(state.posterior.weights(), &log_sums) {
        Ok(w) => w,
        Err(_) => state.posterior.weights().to_vec(),
    };
    let max_abs_log_ratio = outcomes
        .iter()
        .filter_map(|o| o.max_abs_log_ratio)
        .fold(None, |acc: Option<T>, r| Some(acc.map_or(r, |a| if r > a { r } else { a })));
    let degenerate_components =
        outcomes.iter().enumerate().filter(|(_, o)| o.degenerate).map(|(j, _)| j).collect();
    let component_ess = outcomes.iter().map(|o| o.ess).collect();
    let diverged_particles = outcomes.iter().map(|o| o.diverged).sum();
    let posterior =
        GaussianMixture::new(outcomes.into_iter().map(|o| o.posterior).collect(), weights)?;
    let diagnostics = StepDiagnostics {
        geff: posterior.effective_components(),
        component_ess,
        degenerate_components,
        max_abs_log_ratio,
        diverged_particles,
        resampled: false,
    };
    Ok(FilterState { posterior, cloud: None, ekf_cov: None, time_index: state.time_index + 1, diagnostics })
}

fn component_streams(g: usize, rng: &mut dyn RngCore) -> Vec<u64> {
    let base = rng.next_u64();
    (0..g as u64).map(|j| derive_seed(base, &[j])).collect()
}

fn gaussian_sum_step<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    state: &FilterState<T>,
    model: &M,
    z: &DVector<T>,
    config: &FilterConfig,
    proposal: ComponentProposal,
    rng: &mut dyn RngCore,
) -> Result<FilterState<T>> {
    let streams = component_streams(state.posterior.len(), rng);
    gaussian_sum_step_with_streams(state, model, z, config, proposal, &streams)
}

fn require_single<T: Scalar>(state: &FilterState<T>, kind: FilterKind) -> Result<()> {
    if state.posterior.len() != 1 {
        return Err(invalid(format!(
            "{kind} expects a single Gaussian, got {} components",
            state.posterior.len()
        )));
    }
    Ok(())
}

/// Particle flow Gaussian sum particle filter step.
pub fn pfgspf_step<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    state: &FilterState<T>,
    model: &M,
    z: &DVector<T>,
    config: &FilterConfig,
    rng: &mut dyn RngCore,
) -> Result<FilterState<T>> {
    gaussian_sum_step(state, model, z, config, ComponentProposal::Flow, rng)
}

/// Particle flow Gaussian particle filter step: the single-component PFGSPF.
pub fn pfgpf_step<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    state: &FilterState<T>,
    model: &M,
    z: &DVector<T>,
    config: &FilterConfig,
    rng: &mut dyn RngCore,
) -> Result<FilterState<T>> {
    require_single(state, FilterKind::Pfgpf)?;
    gaussian_sum_step(state, model, z, config, ComponentProposal::Flow, rng)
}

/// Gaussian sum particle filter step with the dynamics as proposal.
pub fn gspf_step<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    state: &FilterState<T>,
    model: &M,
    z: &DVector<T>,
    config: &FilterConfig,
    rng: &mut dyn RngCore,
) -> Result<FilterState<T>> {
    gaussian_sum_step(state, model, z, config, ComponentProposal::Prior, rng)
}

/// Gaussian particle filter step: the single-component GSPF.
pub fn gpf_step<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    state: &FilterState<T>,
    model: &M,
    z: &DVector<T>,
    config: &FilterConfig,
    rng: &mut dyn RngCore,
) -> Result<FilterState<T>> {
    require_single(state, FilterKind::Gpf)?;
    gaussian_sum_step(state, model, z, config, ComponentProposal::Prior, rng)
}
