//! Invertible particle flow (exact Daum–Huang flow and its localized variant).
//!
//! Particles migrate from the predictive density (λ = 0) to the posterior
//! (λ = 1) through explicit Euler steps of an affine drift:
//!
//! ```text
//! η_l = η_{l-1} + ε_l (A(λ_l) η_{l-1} + b(λ_l))
//! A(λ) = -½ P Hᵀ (λ H P Hᵀ + R)⁻¹ H
//! b(λ) = (I + 2λA) [(I + λA) P Hᵀ R⁻¹ (z − e) + A η̄₀]
//! ```
//!
//! Each step is an invertible affine map, so the composed map has an exact
//! log-Jacobian: the sum of `ln det(I + ε_l A(λ_l))`. By the determinant lemma
//!
//! ```text
//! det(I + εA) = det((λ − ε/2) H P Hᵀ + R) / det(λ H P Hᵀ + R)
//! ```
//!
//! which is positive whenever `λ ≥ ε/2`, always true on a schedule starting
//! at zero. Both determinants come from Cholesky factors of observation-space
//! matrices.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, numerical, Error, Result};
use crate::gaussmix::{Gaussian, Particles};
use crate::linalg::{cholesky_jittered, is_diagonal, sparse_left_mul, symmetrize, Factor};
use crate::scalar::Scalar;
use crate::ssm::{linearize, Linearization, StateSpaceModel};

pub const DEFAULT_FLOW_STEPS: usize = 29;
pub const DEFAULT_FLOW_RATIO: f64 = 1.2;

/// Flow discretization settings as they appear in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_steps")]
    pub n_steps: usize,
    #[serde(default = "default_ratio")]
    pub ratio: f64,
}

fn default_steps() -> usize {
    DEFAULT_FLOW_STEPS
}

fn default_ratio() -> f64 {
    DEFAULT_FLOW_RATIO
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { n_steps: DEFAULT_FLOW_STEPS, ratio: DEFAULT_FLOW_RATIO }
    }
}

impl ScheduleConfig {
    pub fn build<T: Scalar>(&self) -> Result<FlowSchedule<T>> {
        make_schedule(self.n_steps, self.ratio)
    }
}

/// Pseudo-time grid `0 < λ_1 < … < λ_N = 1` with steps `ε_l = λ_l − λ_{l−1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSchedule<T: Scalar> {
    lambdas: Vec<T>,
    epsilons: Vec<T>,
}

impl<T: Scalar> FlowSchedule<T> {
    pub fn lambdas(&self) -> &[T] {
        &self.lambdas
    }

    pub fn epsilons(&self) -> &[T] {
        &self.epsilons
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// `(λ_l, ε_l)` pairs in flow order.
    pub fn steps(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.lambdas.iter().copied().zip(self.epsilons.iter().copied())
    }

    /// Schedule from an explicit strictly increasing grid ending at 1.
    pub fn from_lambdas(lambdas: Vec<T>) -> Result<Self> {
        let Some(&last) = lambdas.last() else {
            return Err(invalid("flow schedule needs at least one step"));
        };
        if last != T::one() {
            return Err(invalid("flow schedule must end at λ = 1"));
        }
        let mut prev = T::zero();
        let mut epsilons = Vec::with_capacity(lambdas.len());
        for &l in &lambdas {
            if !(l > prev) {
                return Err(invalid("flow schedule must be strictly increasing in (0, 1]"));
            }
            epsilons.push(l - prev);
            prev = l;
        }
        Ok(Self { lambdas, epsilons })
    }

    /// The same grid with every step split in two.
    pub fn refined(&self) -> Self {
        let mut lambdas = Vec::with_capacity(2 * self.len());
        let mut prev = T::zero();
        for &l in &self.lambdas {
            lambdas.push((prev + l) * T::lit(0.5));
            lambdas.push(l);
            prev = l;
        }
        Self::from_lambdas(lambdas).expect("midpoints of a valid grid form a valid grid")
    }
}

/// Geometric schedule with `ε_l ∝ ratioˡ`, normalized so the steps sum to one.
pub fn make_schedule<T: Scalar>(n_steps: usize, ratio: f64) -> Result<FlowSchedule<T>> {
    if n_steps == 0 {
        return Err(invalid("flow schedule needs at least one step"));
    }
    if !(ratio.is_finite() && ratio > 0.0) {
        return Err(invalid(format!("flow step ratio must be positive, got {ratio}")));
    }
    let raw: Vec<f64> = (1..=n_steps).map(|l| ratio.powi(l as i32)).collect();
    let total: f64 = raw.iter().sum();
    if !total.is_finite() {
        return Err(invalid(format!("flow step ratio {ratio} overflows over {n_steps} steps")));
    }
    let mut lambdas = Vec::with_capacity(n_steps);
    let mut acc = 0.0;
    for r in &raw {
        acc += r / total;
        lambdas.push(acc);
    }
    lambdas[n_steps - 1] = 1.0;
    let mut epsilons = Vec::with_capacity(n_steps);
    let mut prev = 0.0;
    for &l in &lambdas {
        epsilons.push(T::lit(l - prev));
        prev = l;
    }
    Ok(FlowSchedule { lambdas: lambdas.into_iter().map(T::lit).collect(), epsilons })
}

/// Affine drift `(A, b)` of one pseudo-time step.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowStepParams<T: Scalar> {
    pub a: DMatrix<T>,
    pub b: DVector<T>,
}

impl<T: Scalar> FlowStepParams<T> {
    /// `η + ε (A η + b)`.
    pub fn apply(&self, eta: &DVector<T>, eps: T) -> DVector<T> {
        eta + (&self.a * eta + &self.b) * eps
    }

    /// Inverse of [`apply`](Self::apply): `(I + εA)⁻¹ (η − ε b)`.
    pub fn invert(&self, eta: &DVector<T>, eps: T) -> Result<DVector<T>> {
        let n = eta.len();
        let m = DMatrix::identity(n, n) + &self.a * eps;
        m.lu()
            .solve(&(eta - &self.b * eps))
            .ok_or_else(|| numerical("flow step matrix is singular"))
    }
}

/// `ln |det(I + εA)|` by LU factorization. Returns `None` for a non-positive determinant.
pub fn log_det_step_lu<T: Scalar>(a: &DMatrix<T>, eps: T) -> Option<T> {
    let n = a.nrows();
    let det = (DMatrix::identity(n, n) + a * eps).lu().determinant();
    (det > T::zero()).then(|| det.ln())
}

/// Step parameters retained for inversion and Jacobian checks.
#[derive(Debug, Clone, PartialEq)]
pub enum RetainedSteps<T: Scalar> {
    /// One map per step shared by all particles.
    Shared(Vec<FlowStepParams<T>>),
    /// `steps[i][l]` is particle `i`'s map at step `l`.
    PerParticle(Vec<Vec<FlowStepParams<T>>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult<T: Scalar> {
    pub eta1: Particles<T>,
    /// Accumulated `ln |det ∂η₁/∂η₀|` per particle.
    pub log_jac_det: Vec<T>,
    /// Particles whose localized flow broke down numerically. They stop at
    /// their last finite position with `log_jac_det = −∞`, so importance
    /// weighting discards them, and their retained steps are truncated.
    pub diverged: Vec<usize>,
    pub steps: Option<RetainedSteps<T>>,
    epsilons: Vec<T>,
}

impl<T: Scalar> FlowResult<T> {
    fn steps_of(&self, i: usize) -> Option<&[FlowStepParams<T>]> {
        match self.steps.as_ref()? {
            RetainedSteps::Shared(s) => Some(s),
            RetainedSteps::PerParticle(s) => s.get(i).map(Vec::as_slice),
        }
    }

    /// Applies the retained steps of particle `i` to an arbitrary starting point.
    pub fn forward(&self, i: usize, eta0: &DVector<T>) -> Option<DVector<T>> {
        let steps = self.steps_of(i)?;
        Some(
            steps
                .iter()
                .zip(&self.epsilons)
                .fold(eta0.clone(), |eta, (p, &eps)| p.apply(&eta, eps)),
        )
    }

    /// Recovers particle `i`'s pre-flow position by running its steps backwards.
    pub fn invert(&self, i: usize) -> Option<Result<DVector<T>>> {
        let steps = self.steps_of(i)?;
        let mut eta = self.eta1.get(i)?.clone();
        for (p, &eps) in steps.iter().zip(&self.epsilons).rev() {
            eta = match p.invert(&eta, eps) {
                Ok(e) => e,
                Err(e) => return Some(Err(e)),
            };
        }
        Some(Ok(eta))
    }
}

/// Everything needed to apply one step's drift at a fixed linearization.
struct StepOperator<T: Scalar> {
    h: DMatrix<T>,
    pht: DMatrix<T>,
    hph: DMatrix<T>,
    r: DMatrix<T>,
    s: Factor<T>,
    log_det_s: T,
    b: DVector<T>,
    lambda: T,
}

impl<T: Scalar> StepOperator<T> {
    fn build(
        lin: &Linearization<T>,
        r: &DMatrix<T>,
        p: &DMatrix<T>,
        z: &DVector<T>,
        eta_bar: &DVector<T>,
        lambda: T,
    ) -> Result<Self> {
        let h = &lin.jacobian;
        // P is symmetric, so P Hᵀ = (H P)ᵀ.
        let pht = sparse_left_mul(h, p).transpose();
        let mut hph = sparse_left_mul(h, &pht);
        symmetrize(&mut hph);
        let s = cholesky_jittered(&(&hph * lambda + r))?;
        let log_det_s = s.log_det();

        let innov = z - &lin.offset;
        let r_inv_innov = if is_diagonal(r) {
            DVector::from_fn(innov.len(), |k, _| innov[k] / r[(k, k)])
        } else {
            cholesky_jittered(r)?.solve(&innov)
        };
        let mut op = Self { h: h.clone(), pht, hph, r: r.clone(), s, log_det_s, b: DVector::zeros(0), lambda };
        let u = &op.pht * r_inv_innov;
        let y = &u + op.apply_a(&u) * lambda + op.apply_a(eta_bar);
        let two_lambda = lambda + lambda;
        op.b = &y + op.apply_a(&y) * two_lambda;
        Ok(op)
    }

    fn apply_a(&self, v: &DVector<T>) -> DVector<T> {
        let hv = &self.h * v;
        &self.pht * self.s.solve(&hv) * T::lit(-0.5)
    }

    fn a_matrix(&self) -> DMatrix<T> {
        &self.pht * self.s.chol.solve(&self.h) * T::lit(-0.5)
    }

    /// `ln det(I + εA)` through the observation-space determinant ratio.
    fn log_det_step(&self, eps: T) -> Result<T> {
        let shrink = self.lambda - eps * T::lit(0.5);
        let s2 = cholesky_jittered(&(&self.hph * shrink + &self.r)).map_err(|_| {
            numerical("flow step matrix I + εA has a non-positive determinant")
        })?;
        Ok(s2.log_det() - self.log_det_s)
    }

    fn params(&self) -> FlowStepParams<T> {
        FlowStepParams { a: self.a_matrix(), b: self.b.clone() }
    }
}

fn check_shapes<T: Scalar>(
    h: &DMatrix<T>,
    e: &DVector<T>,
    p: &DMatrix<T>,
    r: &DMatrix<T>,
    z: &DVector<T>,
    eta_bar: &DVector<T>,
) -> Result<()> {
    let (m, n) = h.shape();
    let ok = e.len() == m
        && p.shape() == (n, n)
        && r.shape() == (m, m)
        && z.len() == m
        && eta_bar.len() == n;
    if ok {
        Ok(())
    } else {
        Err(invalid(format!(
            "inconsistent flow shapes: H {:?}, e {}, P {:?}, R {:?}, z {}, η̄₀ {}",
            h.shape(),
            e.len(),
            p.shape(),
            r.shape(),
            z.len(),
            eta_bar.len()
        )))
    }
}

/// Flow drift parameters `(A, b)` at pseudo-time `lambda`.
pub fn flow_params<T: Scalar>(
    h: &DMatrix<T>,
    e: &DVector<T>,
    p: &DMatrix<T>,
    r: &DMatrix<T>,
    z: &DVector<T>,
    eta0_bar: &DVector<T>,
    lambda: T,
) -> Result<FlowStepParams<T>> {
    check_shapes(h, e, p, r, z, eta0_bar)?;
    if lambda < T::zero() || lambda > T::one() {
        return Err(invalid(format!("pseudo-time {} outside [0, 1]", lambda.as_f64())));
    }
    let lin = Linearization { jacobian: h.clone(), offset: e.clone() };
    Ok(StepOperator::build(&lin, r, p, z, eta0_bar, lambda)?.params())
}

fn annotate(e: Error, particle: Option<usize>, step: usize) -> Error {
    let who = match particle {
        Some(i) => format!("particle {i}, flow step {step}"),
        None => format!("mean trajectory, flow step {step}"),
    };
    match e {
        Error::NumericalFailure(m) => Error::NumericalFailure(format!("{who}: {m}")),
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{who}: {m}")),
        other => other,
    }
}

fn check_inputs<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    model: &M,
    eta0: &[DVector<T>],
    pred: &Gaussian<T>,
    z: &DVector<T>,
) -> Result<()> {
    if pred.dim() != model.dim_x() || z.len() != model.dim_z() {
        return Err(invalid("predictive Gaussian or observation does not match the model"));
    }
    for (i, p) in eta0.iter().enumerate() {
        if p.len() != model.dim_x() || p.iter().any(|v| !v.finite()) {
            return Err(invalid(format!("particle {i} is malformed or non-finite")));
        }
    }
    Ok(())
}

/// Localized flow: every particle is relinearized at its own current position
/// before each step. `P` and `η̄₀` come from `pred`.
///
/// Particles sharing an identical linearization at a step (always the case for
/// a linear observation model) reuse one factorization.
pub fn ledh_flow<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    model: &M,
    eta0: &[DVector<T>],
    pred: &Gaussian<T>,
    z: &DVector<T>,
    schedule: &FlowSchedule<T>,
    retain_steps: bool,
) -> Result<FlowResult<T>> {
    check_inputs(model, eta0, pred, z)?;
    let n = eta0.len();
    let mut eta: Particles<T> = eta0.to_vec();
    let mut log_jac = vec![T::zero(); n];
    let mut retained: Vec<Vec<FlowStepParams<T>>> =
        if retain_steps { vec![Vec::with_capacity(schedule.len()); n] } else { Vec::new() };

    let mut alive = vec![true; n];
    let mut last_error = None;

    for (l, (lambda, eps)) in schedule.steps().enumerate() {
        // (linearization, R, operator, ln det, retained params)
        let mut cache: Option<(Linearization<T>, DMatrix<T>, StepOperator<T>, T, Option<FlowStepParams<T>>)> =
            None;
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            let attempt = (|| -> Result<()> {
                let lin = linearize(model, &eta[i])?;
                let r = model.observation_cov(&eta[i]);
                let hit = matches!(&cache, Some((cl, cr, ..)) if *cl == lin && *cr == r);
                if !hit {
                    let op = StepOperator::build(&lin, &r, pred.cov(), z, pred.mean(), lambda)?;
                    let ld = op.log_det_step(eps)?;
                    let params = retain_steps.then(|| op.params());
                    cache = Some((lin, r, op, ld, params));
                }
                let (_, _, op, ld, params) = cache.as_ref().expect("cache filled above");
                let mut next = eta[i].clone();
                next.axpy(eps, &(op.apply_a(&eta[i]) + &op.b), T::one());
                let next_log_jac = log_jac[i] + *ld;
                if next.iter().any(|v| !v.finite()) || !next_log_jac.finite() {
                    return Err(numerical("non-finite particle or log-Jacobian"));
                }
                eta[i] = next;
                log_jac[i] = next_log_jac;
                if let Some(p) = params {
                    retained[i].push(p.clone());
                }
                Ok(())
            })();
            match attempt {
                Ok(()) => {}
                // A far outlier can make the local linearization so
                // ill-conditioned that one Euler step throws it out of range.
                Err(e @ Error::NumericalFailure(_)) => {
                    alive[i] = false;
                    log_jac[i] = T::NEG_INFINITY;
                    last_error = Some(annotate(e, Some(i), l));
                }
                Err(e) => return Err(annotate(e, Some(i), l)),
            }
        }
    }
    let diverged: Vec<usize> = (0..n).filter(|&i| !alive[i]).collect();
    if n > 0 && diverged.len() == n {
        return Err(last_error.expect("a diverged particle records its error"));
    }
    Ok(FlowResult {
        eta1: eta,
        log_jac_det: log_jac,
        diverged,
        steps: retain_steps.then_some(RetainedSteps::PerParticle(retained)),
        epsilons: schedule.epsilons().to_vec(),
    })
}

/// Exact Daum–Huang flow: one linearization per step at the flowed predictive
/// mean, applied to every particle.
pub fn edh_flow<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    model: &M,
    eta0: &[DVector<T>],
    pred: &Gaussian<T>,
    z: &DVector<T>,
    schedule: &FlowSchedule<T>,
    retain_steps: bool,
) -> Result<FlowResult<T>> {
    check_inputs(model, eta0, pred, z)?;
    let mut eta: Particles<T> = eta0.to_vec();
    let mut mean_path = pred.mean().clone();
    let mut total_log_det = T::zero();
    let mut shared = Vec::new();
    for (l, (lambda, eps)) in schedule.steps().enumerate() {
        let lin = linearize(model, &mean_path).map_err(|e| annotate(e, None, l))?;
        let r = model.observation_cov(&mean_path);
        let op = StepOperator::build(&lin, &r, pred.cov(), z, pred.mean(), lambda)
            .map_err(|e| annotate(e, None, l))?;
        total_log_det += op.log_det_step(eps).map_err(|e| annotate(e, None, l))?;
        let params = op.params();
        for p in eta.iter_mut() {
            *p = params.apply(p, eps);
        }
        mean_path = params.apply(&mean_path, eps);
        if !total_log_det.finite() || mean_path.iter().any(|v| !v.finite()) {
            return Err(numerical(format!("mean trajectory, flow step {l}: non-finite flow")));
        }
        if retain_steps {
            shared.push(params);
        }
    }
    if let Some(i) = eta.iter().position(|p| p.iter().any(|v| !v.finite())) {
        return Err(numerical(format!("particle {i}: non-finite after flow")));
    }
    let n = eta.len();
    Ok(FlowResult {
        eta1: eta,
        log_jac_det: vec![total_log_det; n],
        diverged: Vec::new(),
        steps: retain_steps.then_some(RetainedSteps::Shared(shared)),
        epsilons: schedule.epsilons().to_vec(),
    })
}
