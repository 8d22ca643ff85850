//! Nonlinear state-space model abstraction.
//!
//! ```text
//! x_0 ~ p_0(x)
//! x_t = g(x_{t-1}, v_t)
//! z_t = h(x_t, w_t)
//! ```
//!
//! The flow filters only need the noise-free observation `h(x, 0)`, its
//! Jacobian and a (possibly state dependent) Gaussian observation covariance;
//! importance weights use the exact likelihood `p(z | x)`.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::error::{invalid, numerical, Result};
use crate::gaussmix::Gaussian;
use crate::scalar::Scalar;

/// Matrices of a linear-Gaussian model, used by the Kalman oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStructure<T: Scalar> {
    pub transition: DMatrix<T>,
    pub process_cov: DMatrix<T>,
    pub observation: DMatrix<T>,
    pub observation_cov: DMatrix<T>,
}

/// First two conditional moments of `x_t` given `x_{t-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMoments<T: Scalar> {
    /// `E[x_t | x_{t-1}]`.
    pub mean: DVector<T>,
    /// Jacobian of the conditional mean with respect to `x_{t-1}`.
    pub jacobian: DMatrix<T>,
    /// `Cov(x_t | x_{t-1})`.
    pub cov: DMatrix<T>,
}

pub trait StateSpaceModel<T: Scalar>: Send + Sync {
    fn dim_x(&self) -> usize;

    fn dim_z(&self) -> usize;

    /// `p_0`; simulators draw the true initial state from it.
    fn initial_law(&self) -> &Gaussian<T>;

    /// `g(x, v)` with a fresh process-noise draw.
    fn transition(&self, x: &DVector<T>, rng: &mut dyn RngCore) -> DVector<T>;

    /// `ln p(x_t | x_{t-1})`, when the transition density has a closed form.
    fn transition_log_density(&self, _prev: &DVector<T>, _next: &DVector<T>) -> Option<T> {
        None
    }

    /// Process-noise covariance `V`, when the noise is Gaussian.
    fn process_cov(&self) -> Option<&DMatrix<T>> {
        None
    }

    /// Conditional moments of the transition at `x`, when available in
    /// closed form; used for extended-Kalman covariance prediction.
    fn transition_moments(&self, _x: &DVector<T>) -> Option<TransitionMoments<T>> {
        None
    }

    /// `h(x, w)` with a fresh observation-noise draw.
    fn observe(&self, x: &DVector<T>, rng: &mut dyn RngCore) -> DVector<T>;

    /// `h(x, 0)`.
    fn observation_mean(&self, x: &DVector<T>) -> DVector<T>;

    /// `∂h(η, 0)/∂η` at `x`, `dim_z × dim_x`.
    fn observation_jacobian(&self, x: &DVector<T>) -> DMatrix<T>;

    /// Gaussian observation covariance `R(x)` used by the flow.
    fn observation_cov(&self, x: &DVector<T>) -> DMatrix<T>;

    /// Exact `ln p(z | x)`.
    fn log_likelihood(&self, z: &DVector<T>, x: &DVector<T>) -> T;

    /// Matrices of the model when it is linear-Gaussian.
    fn linear_structure(&self) -> Option<LinearStructure<T>> {
        None
    }
}

/// First-order expansion `h(x, 0) ≈ H x + e` around `eta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization<T: Scalar> {
    pub jacobian: DMatrix<T>,
    pub offset: DVector<T>,
}

/// Linearizes the observation function at `eta`: `H = ∂h/∂η`, `e = h(η, 0) − H η`.
pub fn linearize<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    model: &M,
    eta: &DVector<T>,
) -> Result<Linearization<T>> {
    if eta.len() != model.dim_x() {
        return Err(invalid(format!(
            "state has length {} but the model expects {}",
            eta.len(),
            model.dim_x()
        )));
    }
    if eta.iter().any(|v| !v.finite()) {
        return Err(invalid(format!("cannot linearize at non-finite state {:?}", eta.as_slice())));
    }
    let jacobian = model.observation_jacobian(eta);
    if jacobian.shape() != (model.dim_z(), model.dim_x()) {
        return Err(invalid(format!(
            "observation Jacobian has shape {:?}, expected ({}, {})",
            jacobian.shape(),
            model.dim_z(),
            model.dim_x()
        )));
    }
    if jacobian.iter().any(|v| !v.finite()) {
        return Err(numerical(format!(
            "non-finite observation Jacobian at state {:?}",
            eta.as_slice()
        )));
    }
    let offset = model.observation_mean(eta) - &jacobian * eta;
    Ok(Linearization { jacobian, offset })
}

/// Central finite-difference Jacobian of `h(·, 0)`.
pub fn finite_difference_jacobian<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    model: &M,
    x: &DVector<T>,
    step: T,
) -> DMatrix<T> {
    let mut jac = DMatrix::zeros(model.dim_z(), model.dim_x());
    let two = T::lit(2.0);
    for k in 0..model.dim_x() {
        let h = step * (T::one() + x[k].abs());
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[k] += h;
        minus[k] -= h;
        let d = (model.observation_mean(&plus) - model.observation_mean(&minus)) / (two * h);
        jac.set_column(k, &d);
    }
    jac
}

/// Largest relative discrepancy between the analytic and finite-difference
/// Jacobians at `x`, measured entrywise against `max(|J|∞, 1)`.
pub fn jacobian_discrepancy<M: StateSpaceModel<f64> + ?Sized>(model: &M, x: &DVector<f64>) -> f64 {
    let analytic = model.observation_jacobian(x);
    let fd = finite_difference_jacobian(model, x, 1e-6);
    let scale = analytic.amax().max(1.0);
    (analytic - fd).amax() / scale
}
