//! Large spatial sensor network with skewed-t dynamics and count measurements.
//!
//! One state component per node of a `side × side` grid:
//!
//! ```text
//! x_t = α x_{t-1} + u_t,   u = γ W + √W · L n,   W ~ InvGamma(ν/2, ν/2)
//! z^s_t ~ Poisson(m₁ exp(m₂ x^s_t))
//! ```
//!
//! `L` is the Cholesky factor of the exponential spatial kernel
//! `σ²_k exp(−d/β) + nugget · δ`. The flow uses the Gaussian surrogate with
//! mean `h(x) = m₁ exp(m₂ x)`, its diagonal Jacobian and
//! `R(x) = diag(max(h(x), r_min))`; importance weights use the exact Poisson
//! likelihood.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};
use crate::gaussmix::Gaussian;
use crate::scalar::Scalar;
use crate::ssm::{StateSpaceModel, TransitionMoments};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SensorNetConfig {
    pub grid_side: usize,
    /// Dynamics coefficient `α`.
    pub alpha: f64,
    /// Degrees of freedom `ν` (> 2).
    pub nu: f64,
    /// Skewness, the same for every node.
    pub gamma: f64,
    /// Count link `m₁ exp(m₂ x)`.
    pub m1: f64,
    pub m2: f64,
    /// Kernel length scale `β` in grid units.
    pub length_scale: f64,
    pub kernel_var: f64,
    pub nugget: f64,
    /// Floor of the surrogate observation variance.
    pub r_min: f64,
    pub horizon: usize,
    /// Initial law `N(0, prior_var · I)`.
    pub prior_var: f64,
}

impl Default for SensorNetConfig {
    fn default() -> Self {
        Self {
            grid_side: 12,
            alpha: 0.9,
            nu: 5.0,
            gamma: 0.3,
            m1: 1.0,
            m2: 1.0 / 3.0,
            length_scale: 3.0,
            kernel_var: 1.0,
            nugget: 0.01,
            r_min: 0.1,
            horizon: 30,
            prior_var: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SensorNetModel<T: Scalar> {
    dim: usize,
    alpha: T,
    gamma: T,
    mixing: Gamma<f64>,
    chol: DMatrix<T>,
    m1: T,
    m2: T,
    r_min: T,
    prior: Gaussian<T>,
    /// `E[u]` per node.
    innovation_mean: T,
    /// `Cov(u)`; the mixing variance is infinite for `ν ≤ 4`.
    innovation_cov: Option<DMatrix<T>>,
}

impl<T: Scalar> SensorNetModel<T> {
    pub fn new(c: &SensorNetConfig) -> Result<Self> {
        if c.grid_side < 2 {
            return Err(invalid("grid side must be at least 2"));
        }
        if !(c.nu.is_finite() && c.nu > 2.0) {
            return Err(invalid(format!("degrees of freedom must exceed 2, got {}", c.nu)));
        }
        for (name, v) in [
            ("m1", c.m1),
            ("length_scale", c.length_scale),
            ("kernel_var", c.kernel_var),
            ("r_min", c.r_min),
            ("prior_var", c.prior_var),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(c.nugget.is_finite() && c.nugget >= 0.0) {
            return Err(invalid("nugget must be non-negative"));
        }
        for (name, v) in [("alpha", c.alpha), ("gamma", c.gamma), ("m2", c.m2)] {
            if !v.is_finite() {
                return Err(invalid(format!("{name} must be finite")));
            }
        }
        let side = c.grid_side;
        let dim = side * side;
        let kernel = DMatrix::from_fn(dim, dim, |i, j| {
            let (di, dj) = ((i / side) as f64 - (j / side) as f64, (i % side) as f64 - (j % side) as f64);
            let d = (di * di + dj * dj).sqrt();
            let nug = if i == j { c.nugget } else { 0.0 };
            T::lit(c.kernel_var * (-d / c.length_scale).exp() + nug)
        });
        let chol = kernel
            .cholesky()
            .ok_or_else(|| invalid("spatial kernel covariance is not positive definite"))?
            .l();
        let mixing = Gamma::new(c.nu / 2.0, 2.0 / c.nu)
            .map_err(|e| invalid(format!("invalid mixing distribution: {e}")))?;
        // W ~ InvGamma(a, a) with a = ν/2: E[W] = a/(a−1), Var[W] = a²/((a−1)²(a−2)).
        let a = c.nu / 2.0;
        let w_mean = a / (a - 1.0);
        let innovation_cov = (a > 2.0).then(|| {
            let w_var = a * a / ((a - 1.0) * (a - 1.0) * (a - 2.0));
            let skew = T::lit(c.gamma * c.gamma * w_var);
            (&chol * chol.transpose()) * T::lit(w_mean) + DMatrix::from_element(dim, dim, skew)
        });
        Ok(Self {
            dim,
            alpha: T::lit(c.alpha),
            gamma: T::lit(c.gamma),
            mixing,
            chol,
            m1: T::lit(c.m1),
            m2: T::lit(c.m2),
            r_min: T::lit(c.r_min),
            prior: Gaussian::isotropic(DVector::zeros(dim), T::lit(c.prior_var))?,
            innovation_mean: T::lit(c.gamma * w_mean),
            innovation_cov,
        })
    }

    /// One draw of the skewed-t innovation `γW + √W L n`.
    pub fn draw_innovation(&self, rng: &mut dyn RngCore) -> DVector<T> {
        // W = 1/G with G ~ Gamma(ν/2, rate ν/2) is InvGamma(ν/2, ν/2).
        let w = T::lit(1.0 / self.mixing.sample(rng));
        let n = DVector::from_fn(self.dim, |_, _| T::standard_normal(rng));
        let mut u = &self.chol * n * w.sqrt();
        u.iter_mut().for_each(|v| *v += self.gamma * w);
        u
    }

    fn rates(&self, x: &DVector<T>) -> DVector<T> {
        x.map(|v| self.m1 * (self.m2 * v).exp())
    }
}

impl<T: Scalar> StateSpaceModel<T> for SensorNetModel<T> {
    fn dim_x(&self) -> usize {
        self.dim
    }

    fn dim_z(&self) -> usize {
        self.dim
    }

    fn initial_law(&self) -> &Gaussian<T> {
        &self.prior
    }

    fn transition(&self, x: &DVector<T>, rng: &mut dyn RngCore) -> DVector<T> {
        x * self.alpha + self.draw_innovation(rng)
    }

    fn transition_moments(&self, x: &DVector<T>) -> Option<TransitionMoments<T>> {
        Some(TransitionMoments {
            mean: x.map(|v| self.alpha * v + self.innovation_mean),
            jacobian: DMatrix::from_diagonal_element(self.dim, self.dim, self.alpha),
            cov: self.innovation_cov.clone()?,
        })
    }

    fn observe(&self, x: &DVector<T>, rng: &mut dyn RngCore) -> DVector<T> {
        self.rates(x).map(|rate| {
            let r = rate.as_f64();
            let count = match Poisson::new(r) {
                Ok(p) => p.sample(rng),
                // Only reachable for a zero or non-finite rate.
                Err(_) => 0.0,
            };
            T::lit(count)
        })
    }

    fn observation_mean(&self, x: &DVector<T>) -> DVector<T> {
        self.rates(x)
    }

    fn observation_jacobian(&self, x: &DVector<T>) -> DMatrix<T> {
        DMatrix::from_diagonal(&self.rates(x).map(|h| self.m2 * h))
    }

    fn observation_cov(&self, x: &DVector<T>) -> DMatrix<T> {
        DMatrix::from_diagonal(&self.rates(x).map(|h| if h > self.r_min { h } else { self.r_min }))
    }

    /// Exact Poisson log-pmf `Σ z ln λ − λ − ln Γ(z + 1)`.
    fn log_likelihood(&self, z: &DVector<T>, x: &DVector<T>) -> T {
        z.iter().zip(x.iter()).fold(T::zero(), |acc, (&zs, &xs)| {
            let log_rate = self.m1.ln() + self.m2 * xs;
            acc + zs * log_rate - log_rate.exp() - T::lit(ln_gamma(zs.as_f64() + 1.0))
        })
    }
}
