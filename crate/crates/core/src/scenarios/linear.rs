//! Linear-Gaussian models `x_t = F x_{t-1} + v`, `z_t = C x_t + w`.
//!
//! * `dim = 1`: scalar random walk observed directly.
//! * `dim = 4`: constant-velocity target `[x, y, ẋ, ẏ]` observed in position.
//! * otherwise: `F = I`, `C = I`.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{constant_velocity, isotropic_log_likelihood};
use crate::error::{invalid, Result};
use crate::gaussmix::Gaussian;
use crate::scalar::Scalar;
use crate::ssm::{LinearStructure, StateSpaceModel, TransitionMoments};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearConfig {
    pub dim: usize,
    pub horizon: usize,
    /// Process noise variance per state dimension.
    pub process_var: f64,
    /// Measurement noise variance per observed dimension.
    pub obs_var: f64,
    /// Prior `N(0, prior_var · I)`.
    pub prior_var: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        Self { dim: 1, horizon: 10, process_var: 1.0, obs_var: 1.0, prior_var: 1.0 }
    }
}

#[derive(Debug, Clone)]
pub struct LinearGaussianModel<T: Scalar> {
    f: DMatrix<T>,
    c: DMatrix<T>,
    noise: Gaussian<T>,
    q: DMatrix<T>,
    r: DMatrix<T>,
    obs_var: T,
    prior: Gaussian<T>,
}

impl<T: Scalar> LinearGaussianModel<T> {
    pub fn new(config: &LinearConfig) -> Result<Self> {
        let n = config.dim;
        if n == 0 {
            return Err(invalid("linear model dimension must be positive"));
        }
        for (name, v) in [
            ("process_var", config.process_var),
            ("obs_var", config.obs_var),
            ("prior_var", config.prior_var),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        let (f, c) = match n {
            4 => {
                let mut c = DMatrix::zeros(2, 4);
                c[(0, 0)] = T::one();
                c[(1, 1)] = T::one();
                (constant_velocity::<T>(1.0), c)
            }
            _ => (DMatrix::identity(n, n), DMatrix::identity(n, n)),
        };
        let q = DMatrix::identity(n, n) * T::lit(config.process_var);
        let m = c.nrows();
        let r = DMatrix::identity(m, m) * T::lit(config.obs_var);
        Ok(Self {
            noise: Gaussian::new(DVector::zeros(n), q.clone())?,
            prior: Gaussian::isotropic(DVector::zeros(n), T::lit(config.prior_var))?,
            f,
            c,
            q,
            r,
            obs_var: T::lit(config.obs_var),
        })
    }
}

impl<T: Scalar> StateSpaceModel<T> for LinearGaussianModel<T> {
    fn dim_x(&self) -> usize {
        self.f.nrows()
    }

    fn dim_z(&self) -> usize {
        self.c.nrows()
    }

    fn initial_law(&self) -> &Gaussian<T> {
        &self.prior
    }

    fn transition(&self, x: &DVector<T>, rng: &mut dyn RngCore) -> DVector<T> {
        &self.f * x + self.noise.draw(rng)
    }

    fn transition_log_density(&self, prev: &DVector<T>, next: &DVector<T>) -> Option<T> {
        Some(self.noise.log_density(&(next - &self.f * prev)))
    }

    fn process_cov(&self) -> Option<&DMatrix<T>> {
        Some(&self.q)
    }

    fn transition_moments(&self, x: &DVector<T>) -> Option<TransitionMoments<T>> {
        Some(TransitionMoments { mean: &self.f * x, jacobian: self.f.clone(), cov: self.q.clone() })
    }

    fn observe(&self, x: &DVector<T>, rng: &mut dyn RngCore) -> DVector<T> {
        let sd = self.obs_var.sqrt();
        let mut z = &self.c * x;
        z.iter_mut().for_each(|v| *v += sd * T::standard_normal(rng));
        z
    }

    fn observation_mean(&self, x: &DVector<T>) -> DVector<T> {
        &self.c * x
    }

    fn observation_jacobian(&self, _x: &DVector<T>) -> DMatrix<T> {
        self.c.clone()
    }

    fn observation_cov(&self, _x: &DVector<T>) -> DMatrix<T> {
        self.r.clone()
    }

    fn log_likelihood(&self, z: &DVector<T>, x: &DVector<T>) -> T {
        isotropic_log_likelihood(z, &(&self.c * x), self.obs_var)
    }

    fn linear_structure(&self) -> Option<LinearStructure<T>> {
        Some(LinearStructure {
            transition: self.f.clone(),
            process_cov: self.q.clone(),
            observation: self.c.clone(),
            observation_cov: self.r.clone(),
        })
    }
}
