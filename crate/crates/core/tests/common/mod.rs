//! Small hand-written models shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use pfgspf_core::{Gaussian, StateSpaceModel};
use rand::RngCore;

pub fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

/// 2-D random walk observed through a smooth nonlinearity:
/// `h(x) = [x₀ + 0.1 x₁², sin(x₁) + 0.5 x₀]`.
pub struct Bent {
    pub init: Gaussian<f64>,
    pub q: f64,
    pub r: f64,
}

impl Bent {
    pub fn new() -> Self {
        Self { init: Gaussian::isotropic(v(&[0.5, -0.3]), 1.0).unwrap(), q: 0.1, r: 0.2 }
    }
}

impl StateSpaceModel<f64> for Bent {
    fn dim_x(&self) -> usize {
        2
    }
    fn dim_z(&self) -> usize {
        2
    }
    fn initial_law(&self) -> &Gaussian<f64> {
        &self.init
    }
    fn transition(&self, x: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
        x.map(|c| c + self.q.sqrt() * <f64 as pfgspf_core::Scalar>::standard_normal(rng))
    }
    fn observe(&self, x: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
        self.observation_mean(x).map(|c| c + self.r.sqrt() * <f64 as pfgspf_core::Scalar>::standard_normal(rng))
    }
    fn observation_mean(&self, x: &DVector<f64>) -> DVector<f64> {
        v(&[x[0] + 0.1 * x[1] * x[1], x[1].sin() + 0.5 * x[0]])
    }
    fn observation_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, 0.2 * x[1], 0.5, x[1].cos()])
    }
    fn observation_cov(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(2, 2) * self.r
    }
    fn log_likelihood(&self, z: &DVector<f64>, x: &DVector<f64>) -> f64 {
        let d = z - self.observation_mean(x);
        -0.5 * (d.norm_squared() / self.r + 2.0 * (std::f64::consts::TAU * self.r).ln())
    }
}

/// A model whose observation function carries no information about the
/// state (`H = 0`), so every flow is the identity. With a positive
/// `like_scale` the likelihood used for weighting still depends on `x₀`,
/// which exercises the weight formula on its own.
pub struct Silent {
    pub init: Gaussian<f64>,
    pub like_scale: f64,
}

impl Silent {
    pub fn new(dim: usize) -> Self {
        Self { init: Gaussian::isotropic(DVector::zeros(dim), 1.0).unwrap(), like_scale: 0.0 }
    }
}

impl StateSpaceModel<f64> for Silent {
    fn dim_x(&self) -> usize {
        self.init.dim()
    }
    fn dim_z(&self) -> usize {
        1
    }
    fn initial_law(&self) -> &Gaussian<f64> {
        &self.init
    }
    fn transition(&self, x: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
        x.map(|c| c + <f64 as pfgspf_core::Scalar>::standard_normal(rng))
    }
    fn transition_log_density(&self, prev: &DVector<f64>, next: &DVector<f64>) -> Option<f64> {
        let n = prev.len() as f64;
        Some(-0.5 * ((next - prev).norm_squared() + n * std::f64::consts::TAU.ln()))
    }
    fn observe(&self, _x: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
        v(&[<f64 as pfgspf_core::Scalar>::standard_normal(rng)])
    }
    fn observation_mean(&self, _x: &DVector<f64>) -> DVector<f64> {
        v(&[0.0])
    }
    fn observation_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(1, x.len())
    }
    fn observation_cov(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
    fn log_likelihood(&self, z: &DVector<f64>, x: &DVector<f64>) -> f64 {
        let d = z[0] - self.like_scale * x[0];
        -0.5 * (d * d + std::f64::consts::TAU.ln())
    }
}

/// Scalar random walk observed through `z = x² + w`; the likelihood is
/// symmetric under `x ↦ −x`.
pub struct Square {
    pub init: Gaussian<f64>,
    pub q: f64,
    pub r: f64,
}

impl Square {
    pub fn new() -> Self {
        Self { init: Gaussian::isotropic(v(&[0.0]), 4.0).unwrap(), q: 0.05, r: 0.5 }
    }
}

impl StateSpaceModel<f64> for Square {
    fn dim_x(&self) -> usize {
        1
    }
    fn dim_z(&self) -> usize {
        1
    }
    fn initial_law(&self) -> &Gaussian<f64> {
        &self.init
    }
    fn transition(&self, x: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
        x.map(|c| c + self.q.sqrt() * <f64 as pfgspf_core::Scalar>::standard_normal(rng))
    }
    fn observe(&self, x: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
        v(&[x[0] * x[0] + self.r.sqrt() * <f64 as pfgspf_core::Scalar>::standard_normal(rng)])
    }
    fn observation_mean(&self, x: &DVector<f64>) -> DVector<f64> {
        v(&[x[0] * x[0]])
    }
    fn observation_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, 2.0 * x[0])
    }
    fn observation_cov(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, self.r)
    }
    fn log_likelihood(&self, z: &DVector<f64>, x: &DVector<f64>) -> f64 {
        let d = z[0] - x[0] * x[0];
        -0.5 * (d * d / self.r + (std::f64::consts::TAU * self.r).ln())
    }
}

/// Central finite-difference Jacobian of `f` at `x`.
pub fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let m = f(x).len();
    let mut j = DMatrix::zeros(m, n);
    for k in 0..n {
        let mut p = x.clone();
        let mut q = x.clone();
        p[k] += h;
        q[k] -= h;
        j.set_column(k, &((f(&p) - f(&q)) / (2.0 * h)));
    }
    j
}

pub fn log_abs_det(m: &DMatrix<f64>) -> f64 {
    m.clone().lu().determinant().abs().ln()
}

/// Scalar random walk observed through `z = eˣ + w`. The Jacobian overflows
/// for `x` above about 709.
pub struct Exponential {
    pub init: Gaussian<f64>,
}

impl Exponential {
    pub fn new() -> Self {
        Self { init: Gaussian::isotropic(v(&[0.0]), 1.0).unwrap() }
    }
}

impl StateSpaceModel<f64> for Exponential {
    fn dim_x(&self) -> usize {
        1
    }
    fn dim_z(&self) -> usize {
        1
    }
    fn initial_law(&self) -> &Gaussian<f64> {
        &self.init
    }
    fn transition(&self, x: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
        x.map(|c| c + <f64 as pfgspf_core::Scalar>::standard_normal(rng))
    }
    fn observe(&self, x: &DVector<f64>, rng: &mut dyn RngCore) -> DVector<f64> {
        v(&[x[0].exp() + <f64 as pfgspf_core::Scalar>::standard_normal(rng)])
    }
    fn observation_mean(&self, x: &DVector<f64>) -> DVector<f64> {
        v(&[x[0].exp()])
    }
    fn observation_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x[0].exp())
    }
    fn observation_cov(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
    fn log_likelihood(&self, z: &DVector<f64>, x: &DVector<f64>) -> f64 {
        let d = z[0] - x[0].exp();
        -0.5 * (d * d + std::f64::consts::TAU.ln())
    }
}
