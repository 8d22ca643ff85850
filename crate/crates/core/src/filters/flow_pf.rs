//! Flow-based particle filters: raw EDH/LEDH filters (flow only, no
//! weights) and the particle flow particle filter, which uses the invertible
//! flow as an importance proposal and resamples systematically.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use super::oracle::{kalman_update, resample_systematic};
use super::{check_observation, FilterConfig, FilterState, StepDiagnostics};
use crate::error::{invalid, Result};
use crate::flow::{edh_flow, ledh_flow, FlowResult, FlowSchedule};
use crate::gaussmix::{
    effective_sample_size, empirical_moments, weighted_moments_of, Gaussian, GaussianMixture,
    ParticleCloud,
};
use crate::scalar::{log_sum_exp, Scalar};
use crate::linalg::symmetrize;
use crate::ssm::{linearize, StateSpaceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowVariant {
    /// One linearization per step at the flowed predictive mean.
    Edh,
    /// Per-particle linearization.
    Ledh,
}

fn run_flow<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    variant: FlowVariant,
    model: &M,
    eta0: &[DVector<T>],
    pred: &Gaussian<T>,
    z: &DVector<T>,
    schedule: &FlowSchedule<T>,
) -> Result<FlowResult<T>> {
    match variant {
        FlowVariant::Edh => edh_flow(model, eta0, pred, z, schedule, false),
        FlowVariant::Ledh => ledh_flow(model, eta0, pred, z, schedule, false),
    }
}

fn cloud_of<T: Scalar>(state: &FilterState<T>) -> Result<&ParticleCloud<T>> {
    match &state.cloud {
        Some(c) if !c.is_empty() => Ok(c),
        _ => Err(invalid("this filter needs a particle cloud in its state")),
    }
}

/// Flow-only filter: particles are propagated and migrated, no importance weights.
fn raw_flow_step<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    state: &FilterState<T>,
    model: &M,
    z: &DVector<T>,
    config: &FilterConfig,
    variant: FlowVariant,
    rng: &mut dyn RngCore,
) -> Result<FilterState<T>> {
    check_observation(state, model, z)?;
    let cloud = cloud_of(state)?;
    let schedule = config.schedule.build::<T>()?;
    let eta0: Vec<DVector<T>> = cloud.particles.iter().map(|x| model.transition(x, rng)).collect();
    let pred = empirical_moments(&eta0)?;
    let flow = run_flow(variant, model, &eta0, &pred, z, &schedule)?;
    let diverged = flow.diverged.len();
    let mut eta1 = flow.eta1;
    if diverged > 0 {
        // Unweighted cloud: refill diverged slots with copies of survivors.
        let survivors: Vec<usize> = (0..eta1.len()).filter(|i| flow.diverged.binary_search(i).is_err()).collect();
        for (k, &i) in flow.diverged.iter().enumerate() {
            eta1[i] = eta1[survivors[k % survivors.len()]].clone();
        }
    }
    let posterior = empirical_moments(&eta1)?;
    let n = eta1.len();
    Ok(FilterState {
        posterior: GaussianMixture::single(posterior),
        cloud: Some(ParticleCloud::uniform(eta1)),
        ekf_cov: None,
        time_index: state.time_index + 1,
        diagnostics: StepDiagnostics {
            geff: T::one(),
            component_ess: vec![T::from_usize_lossy(n)],
            degenerate_components: Vec::new(),
            max_abs_log_ratio: None,
            diverged_particles: diverged,
            resampled: false,
        },
    })
}

pub fn edh_step<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    state: &FilterState<T>,
    model: &M,
    z: &DVector<T>,
    config: &FilterConfig,
    rng: &mut dyn RngCore,
) -> Result<FilterState<T>> {
    raw_flow_step(state, model, z, config, FlowVariant::Edh, rng)
}

pub fn ledh_step<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    state: &FilterState<T>,
    model: &M,
    z: &DVector<T>,
    config: &FilterConfig,
    rng: &mut dyn RngCore,
) -> Result<FilterState<T>> {
    raw_flow_step(state, model, z, config, FlowVariant::Ledh, rng)
}

/// Flow prior `N(η̄₀, P)` of the particle flow particle filter.
///
/// With closed-form transition moments this is the extended-Kalman prediction
/// from the previous estimate and the tracked covariance. Otherwise it falls
/// back to the weighted moments of the propagated particles, which collapse
/// to the process noise once resampling has concentrated the cloud.
fn flow_prior<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    state: &FilterState<T>,
    model: &M,
    eta0: &[DVector<T>],
    log_weights: &[T],
) -> Result<(Gaussian<T>, bool)> {
    if let Some(p) = &state.ekf_cov {
        if let Some(m) = model.transition_moments(&state.estimate()) {
            let mut cov = &m.jacobian * p * m.jacobian.transpose() + &m.cov;
            symmetrize(&mut cov);
            return Ok((Gaussian::new(m.mean, cov)?, true));
        }
    }
    Ok((weighted_moments_of(eta0, log_weights)?, false))
}

/// Extended-Kalman covariance update, linearized at the predicted mean.
fn ekf_update<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    model: &M,
    pred: &Gaussian<T>,
    z: &DVector<T>,
) -> Result<DMatrix<T>> {
    let lin = linearize(model, pred.mean())?;
    let r = model.observation_cov(pred.mean());
    let (post, _) = kalman_update(pred, &lin.jacobian, &r, &(z - &lin.offset))?;
    Ok(post.cov().clone())
}

/// `ln p(η₁ | x) − ln p(η₀ | x)`. Without a closed-form density the
/// transition is replaced by the Gaussian with its conditional moments, and
/// without those by the flow prior.
struct TransitionRatio<T: Scalar> {
    noise: Option<Gaussian<T>>,
}

impl<T: Scalar> TransitionRatio<T> {
    fn eval<M: StateSpaceModel<T> + ?Sized>(
        &mut self,
        model: &M,
        x_prev: &DVector<T>,
        e0: &DVector<T>,
        e1: &DVector<T>,
        prior: &Gaussian<T>,
    ) -> Result<T> {
        if let (Some(a), Some(b)) =
            (model.transition_log_density(x_prev, e1), model.transition_log_density(x_prev, e0))
        {
            return Ok(a - b);
        }
        let Some(m) = model.transition_moments(x_prev) else {
            return Ok(prior.log_density(e1) - prior.log_density(e0));
        };
        // Covariances rarely depend on the state; refactor only when they change.
        if self.noise.as_ref().is_none_or(|g| g.cov() != &m.cov) {
            self.noise = Some(Gaussian::new(DVector::zeros(m.mean.len()), m.cov)?);
        }
        let g = self.noise.as_ref().expect("set above");
        Ok(g.log_density(&(e1 - &m.mean)) - g.log_density(&(e0 - &m.mean)))
    }
}

/// Particle flow particle filter step.
///
/// The proposal maps `η₀ ~ p(x_t | x_{t-1})` through the flow, so
///
/// ```text
/// w_t ∝ w_{t-1} p(η₁ | x_{t-1}) p(z | η₁) |det ∂η₁/∂η₀| / p(η₀ | x_{t-1})
/// ```
///
/// The flow's `P` and `η̄₀` come from an extended Kalman filter run alongside
/// the particles (see [`flow_prior`]); both variants share them, and LEDH
/// differs from EDH only in linearizing at every particle.
pub fn pfpf_step<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    state: &FilterState<T>,
    model: &M,
    z: &DVector<T>,
    config: &FilterConfig,
    variant: FlowVariant,
    rng: &mut dyn RngCore,
) -> Result<FilterState<T>> {
    check_observation(state, model, z)?;
    let cloud = cloud_of(state)?;
    let schedule = config.schedule.build::<T>()?;
    let n = cloud.len();
    if n < 2 {
        return Err(invalid("the particle flow particle filter needs at least 2 particles"));
    }
    let eta0: Vec<DVector<T>> = cloud.particles.iter().map(|x| model.transition(x, rng)).collect();
    let (pred, tracked) = flow_prior(state, model, &eta0, &cloud.log_weights)?;
    let flow = run_flow(variant, model, &eta0, &pred, z, &schedule)?;

    let mut ratio_of = TransitionRatio { noise: None };
    let mut max_ratio = T::zero();
    let mut log_w: Vec<T> = Vec::with_capacity(n);
    for i in 0..n {
        if flow.log_jac_det[i] == T::NEG_INFINITY {
            log_w.push(T::NEG_INFINITY);
            continue;
        }
        let (e0, e1) = (&eta0[i], &flow.eta1[i]);
        let ratio = ratio_of.eval(model, &cloud.particles[i], e0, e1, &pred)?;
        if ratio.abs() > max_ratio {
            max_ratio = ratio.abs();
        }
        log_w.push(cloud.log_weights[i] + ratio + model.log_likelihood(z, e1) + flow.log_jac_det[i]);
    }

    let lse = log_sum_exp(&log_w);
    let degenerate = !lse.finite();
    if degenerate {
        // Keep the migrated particles with uniform weights rather than abort.
        let u = -T::from_usize_lossy(n - flow.diverged.len()).ln();
        for (i, w) in log_w.iter_mut().enumerate() {
            *w = if flow.log_jac_det[i] == T::NEG_INFINITY { T::NEG_INFINITY } else { u };
        }
    } else {
        log_w.iter_mut().for_each(|w| *w -= lse);
    }
    let ess = effective_sample_size(&log_w);
    let posterior = weighted_moments_of(&flow.eta1, &log_w)?;
    let mut next = ParticleCloud { particles: flow.eta1, log_weights: log_w, component_ids: vec![0; n] };
    let resampled = ess < T::lit(config.resample_threshold) * T::from_usize_lossy(n);
    if resampled {
        next = resample_systematic(&next, rng);
    }
    Ok(FilterState {
        posterior: GaussianMixture::single(posterior),
        cloud: Some(next),
        ekf_cov: if tracked { Some(ekf_update(model, &pred, z)?) } else { None },
        time_index: state.time_index + 1,
        diagnostics: StepDiagnostics {
            geff: T::one(),
            component_ess: vec![ess],
            degenerate_components: if degenerate { vec![0] } else { Vec::new() },
            max_abs_log_ratio: Some(max_ratio),
            diverged_particles: flow.diverged.len(),
            resampled,
        },
    })
}
