//! Reference filters used as test oracles: the Kalman filter (exact on
//! linear-Gaussian models) and the bootstrap particle filter.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use super::{check_observation, FilterState, StepDiagnostics};
use crate::error::{invalid, Result};
use crate::gaussmix::{effective_sample_size, weighted_moments_of, Gaussian, GaussianMixture, ParticleCloud};
use crate::linalg::cholesky_jittered;
use crate::scalar::{log_sum_exp, Scalar};
use crate::ssm::StateSpaceModel;

/// Measurement update of `N(mean, cov)`; returns the posterior and the gain.
pub fn kalman_update<T: Scalar>(
    prior: &Gaussian<T>,
    c: &DMatrix<T>,
    r: &DMatrix<T>,
    z: &DVector<T>,
) -> Result<(Gaussian<T>, DMatrix<T>)> {
    let p = prior.cov();
    let pct = p * c.transpose();
    let s = c * &pct + r;
    let s_chol = cholesky_jittered(&s)?;
    // K = P Cᵀ S⁻¹, i.e. Kᵀ = S⁻¹ C P.
    let gain = s_chol.chol.solve(&pct.transpose()).transpose();
    let mean = prior.mean() + &gain * (z - c * prior.mean());
    let n = p.nrows();
    let i_kc = DMatrix::identity(n, n) - &gain * c;
    // Joseph form keeps the covariance symmetric positive semi-definite.
    let cov = &i_kc * p * i_kc.transpose() + &gain * r * gain.transpose();
    Ok((Gaussian::new(mean, cov)?, gain))
}

/// Kalman filter step; rejects models without a linear-Gaussian structure.
pub fn kalman_step<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    state: &FilterState<T>,
    model: &M,
    z: &DVector<T>,
) -> Result<FilterState<T>> {
    check_observation(state, model, z)?;
    let lin = model
        .linear_structure()
        .ok_or_else(|| invalid("the Kalman oracle requires a linear-Gaussian model"))?;
    if state.posterior.len() != 1 {
        return Err(invalid("the Kalman oracle expects a single Gaussian state"));
    }
    let prev = &state.posterior.components()[0];
    let f = &lin.transition;
    let pred = Gaussian::new(f * prev.mean(), f * prev.cov() * f.transpose() + &lin.process_cov)?;
    let (post, _) = kalman_update(&pred, &lin.observation, &lin.observation_cov, z)?;
    Ok(FilterState {
        posterior: GaussianMixture::single(post),
        cloud: None,
        ekf_cov: None,
        time_index: state.time_index + 1,
        diagnostics: StepDiagnostics::initial(1),
    })
}

/// Systematic resampling to equal weights.
pub fn resample_systematic<T: Scalar>(cloud: &ParticleCloud<T>, rng: &mut dyn RngCore) -> ParticleCloud<T> {
    let n = cloud.len();
    if n == 0 {
        return cloud.clone();
    }
    let lse = log_sum_exp(&cloud.log_weights);
    let nf = T::from_usize_lossy(n);
    let u0 = T::uniform(rng) / nf;
    let mut out_particles = Vec::with_capacity(n);
    let mut out_ids = Vec::with_capacity(n);
    let mut cumulative = T::zero();
    let mut j = 0usize;
    for i in 0..n {
        cumulative += (cloud.log_weights[i] - lse).exp();
        // Last particle absorbs rounding in the cumulative sum.
        let bound = if i + 1 == n { T::lit(f64::INFINITY) } else { cumulative };
        while j < n && u0 + T::from_usize_lossy(j) / nf < bound {
            out_particles.push(cloud.particles[i].clone());
            out_ids.push(cloud.component_ids[i]);
            j += 1;
        }
    }
    let lw = -nf.ln();
    ParticleCloud { particles: out_particles, log_weights: vec![lw; n], component_ids: out_ids }
}

/// Bootstrap particle filter step: propagate, weight by the likelihood,
/// estimate, then resample systematically.
pub fn bootstrap_pf_step<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    state: &FilterState<T>,
    model: &M,
    z: &DVector<T>,
    rng: &mut dyn RngCore,
) -> Result<FilterState<T>> {
    check_observation(state, model, z)?;
    let cloud = state
        .cloud
        .as_ref()
        .filter(|c| !c.is_empty())
        .ok_or_else(|| invalid("the bootstrap filter needs a particle cloud in its state"))?;
    let particles: Vec<DVector<T>> = cloud.particles.iter().map(|x| model.transition(x, rng)).collect();
    let mut log_w: Vec<T> = particles
        .iter()
        .zip(&cloud.log_weights)
        .map(|(x, &lw)| lw + model.log_likelihood(z, x))
        .collect();
    let lse = log_sum_exp(&log_w);
    let degenerate = !lse.finite();
    let n = particles.len();
    if degenerate {
        let u = -T::from_usize_lossy(n).ln();
        log_w.iter_mut().for_each(|w| *w = u);
    } else {
        log_w.iter_mut().for_each(|w| *w -= lse);
    }
    let ess = effective_sample_size(&log_w);
    let posterior = weighted_moments_of(&particles, &log_w)?;
    let weighted = ParticleCloud { particles, log_weights: log_w, component_ids: vec![0; n] };
    Ok(FilterState {
        posterior: GaussianMixture::single(posterior),
        cloud: Some(resample_systematic(&weighted, rng)),
        ekf_cov: None,
        time_index: state.time_index + 1,
        diagnostics: StepDiagnostics {
            geff: T::one(),
            component_ess: vec![ess],
            degenerate_components: if degenerate { vec![0] } else { Vec::new() },
            max_abs_log_ratio: None,
            diverged_particles: 0,
            resampled: true,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn first_gain_from_prior_variance_two() {
        let prior = Gaussian::<f64>::isotropic(DVector::from_element(1, 0.0), 2.0).unwrap();
        let one = DMatrix::identity(1, 1);
        let (post, gain) = kalman_update(&prior, &one, &one, &DVector::from_element(1, 3.0)).unwrap();
        assert!((gain[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
        assert!((post.mean()[0] - 2.0).abs() < 1e-15);
        assert!((post.cov()[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn systematic_resampling_preserves_count_and_follows_weights() {
        let particles: Vec<DVector<f64>> = (0..4).map(|i| DVector::from_element(1, i as f64)).collect();
        let cloud = ParticleCloud {
            particles,
            log_weights: vec![0.5f64.ln(), 0.5f64.ln(), f64::NEG_INFINITY, f64::NEG_INFINITY],
            component_ids: vec![0, 1, 2, 3],
        };
        let out = resample_systematic(&cloud, &mut stream(4, &[]));
        assert_eq!(out.len(), 4);
        let zeros = out.particles.iter().filter(|p| p[0] == 0.0).count();
        let ones = out.particles.iter().filter(|p| p[0] == 1.0).count();
        assert_eq!((zeros, ones), (2, 2));
        assert!(out.component_ids.iter().all(|&c| c < 2));
    }

    #[test]
    fn systematic_resampling_single_particle() {
        let cloud = ParticleCloud::uniform(vec![DVector::from_element(2, 7.0)]);
        let out = resample_systematic(&cloud, &mut stream(0, &[]));
        assert_eq!(out.particles, cloud.particles);
    }
}
