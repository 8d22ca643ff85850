//! Gaussians, Gaussian mixtures and weighted particle clouds.
//!
//! All importance weights live in the log domain and are normalized by
//! max subtraction; in a few hundred dimensions the raw likelihood ratios
//! underflow long before they become meaningless.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::error::{invalid, numerical, Error, Result};
use crate::linalg::{cholesky_jittered, symmetrize};
use crate::scalar::{log_sum_exp, Scalar};

/// Particle set; element `i` is particle `i`.
pub type Particles<T> = Vec<DVector<T>>;

/// Multivariate normal with a cached lower Cholesky factor.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian<T: Scalar> {
    mean: DVector<T>,
    cov: DMatrix<T>,
    chol: DMatrix<T>,
    log_det: T,
    jitter: T,
}

impl<T: Scalar> Gaussian<T> {
    /// Builds `N(mean, cov)`. The covariance is symmetrized and, if it does not
    /// factor, regularized with diagonal jitter (kept in the stored covariance).
    pub fn new(mean: DVector<T>, mut cov: DMatrix<T>) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(invalid("Gaussian dimension must be positive"));
        }
        if cov.shape() != (n, n) {
            return Err(invalid(format!(
                "covariance shape {:?} does not match mean length {n}",
                cov.shape()
            )));
        }
        if mean.iter().any(|v| !v.finite()) {
            return Err(numerical("Gaussian mean has non-finite entries"));
        }
        symmetrize(&mut cov);
        let factor = cholesky_jittered(&cov)?;
        if factor.jitter > T::zero() {
            for i in 0..n {
                cov[(i, i)] += factor.jitter;
            }
        }
        let log_det = factor.log_det();
        Ok(Self { mean, cov, chol: factor.lower(), log_det, jitter: factor.jitter })
    }

    pub fn isotropic(mean: DVector<T>, variance: T) -> Result<Self> {
        let n = mean.len();
        Self::new(mean, DMatrix::identity(n, n) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<T> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<T> {
        &self.cov
    }

    /// Lower-triangular `L` with `L Lᵀ = cov`.
    pub fn chol(&self) -> &DMatrix<T> {
        &self.chol
    }

    pub fn log_det(&self) -> T {
        self.log_det
    }

    /// Diagonal jitter added during construction (zero when none was needed).
    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn was_jittered(&self) -> bool {
        self.jitter > T::zero()
    }

    /// Squared Mahalanobis distance of `x` from the mean.
    pub fn mahalanobis_sq(&self, x: &DVector<T>) -> T {
        let d = x - &self.mean;
        let y = self
            .chol
            .solve_lower_triangular(&d)
            .expect("Cholesky factor has a positive diagonal");
        y.norm_squared()
    }

    pub fn log_density(&self, x: &DVector<T>) -> T {
        let n = T::from_usize_lossy(self.dim());
        let half = T::lit(0.5);
        -half * (n * T::two_pi().ln() + self.log_det + self.mahalanobis_sq(x))
    }

    pub fn draw(&self, rng: &mut dyn RngCore) -> DVector<T> {
        let z = DVector::from_fn(self.dim(), |_, _| T::standard_normal(rng));
        &self.mean + &self.chol * z
    }

    pub fn sample(&self, n: usize, rng: &mut dyn RngCore) -> Particles<T> {
        (0..n).map(|_| self.draw(rng)).collect()
    }
}

/// Weighted sum of Gaussians with weights on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture<T: Scalar> {
    components: Vec<Gaussian<T>>,
    weights: Vec<T>,
}

impl<T: Scalar> GaussianMixture<T> {
    /// Normalizes `weights`; they must be non-negative with a positive sum.
    pub fn new(components: Vec<Gaussian<T>>, weights: Vec<T>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("a mixture needs at least one component"));
        }
        if components.len() != weights.len() {
            return Err(invalid(format!(
                "{} components but {} weights",
                components.len(),
                weights.len()
            )));
        }
        let dim = components[0].dim();
        if components.iter().any(|c| c.dim() != dim) {
            return Err(invalid("mixture components differ in dimension"));
        }
        if weights.iter().any(|w| !w.finite() || *w < T::zero()) {
            return Err(invalid("mixture weights must be finite and non-negative"));
        }
        let total = weights.iter().fold(T::zero(), |a, &w| a + w);
        if total <= T::zero() {
            return Err(invalid("mixture weights sum to zero"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { components, weights })
    }

    pub fn single(component: Gaussian<T>) -> Self {
        Self { components: vec![component], weights: vec![T::one()] }
    }

    pub fn uniform(components: Vec<Gaussian<T>>) -> Result<Self> {
        let w = vec![T::one(); components.len()];
        Self::new(components, w)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn components(&self) -> &[Gaussian<T>] {
        &self.components
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn state_estimate(&self) -> DVector<T> {
        state_estimate(self)
    }

    pub fn effective_components(&self) -> T {
        effective_num_gaussians(&self.weights)
    }

    pub fn log_density(&self, x: &DVector<T>) -> T {
        let terms: Vec<T> = self
            .components
            .iter()
            .zip(&self.weights)
            .map(|(c, &w)| w.ln() + c.log_density(x))
            .collect();
        log_sum_exp(&terms)
    }

    /// Draws exactly `per_component` particles from every component, in
    /// component order. Returns the particles and their component indices.
    pub fn sample(&self, per_component: usize, rng: &mut dyn RngCore) -> (Particles<T>, Vec<usize>) {
        let mut particles = Vec::with_capacity(per_component * self.len());
        let mut ids = Vec::with_capacity(per_component * self.len());
        for (j, c) in self.components.iter().enumerate() {
            for _ in 0..per_component {
                particles.push(c.draw(rng));
                ids.push(j);
            }
        }
        (particles, ids)
    }

    /// Covariance of the full mixture (law of total covariance).
    pub fn total_cov(&self) -> DMatrix<T> {
        let mu = self.state_estimate();
        let n = self.dim();
        let mut cov = DMatrix::zeros(n, n);
        for (c, &w) in self.components.iter().zip(&self.weights) {
            let d = c.mean() - &mu;
            cov += (c.cov() + &d * d.transpose()) * w;
        }
        cov
    }
}

/// Weighted particle set tagged by mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud<T: Scalar> {
    pub particles: Particles<T>,
    pub log_weights: Vec<T>,
    pub component_ids: Vec<usize>,
}

impl<T: Scalar> ParticleCloud<T> {
    /// Equally weighted cloud, all particles in component 0.
    pub fn uniform(particles: Particles<T>) -> Self {
        let n = particles.len();
        let lw = -T::from_usize_lossy(n.max(1)).ln();
        Self { particles, log_weights: vec![lw; n], component_ids: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Shifts the log-weights so that `exp(log_weights)` sums to one and
    /// returns the log of the previous total.
    pub fn normalize(&mut self) -> Result<T> {
        let lse = log_sum_exp(&self.log_weights);
        if !lse.finite() {
            return Err(Error::DegenerateWeights { component: 0 });
        }
        for lw in &mut self.log_weights {
            *lw -= lse;
        }
        Ok(lse)
    }

    fn members(&self, component: usize) -> (Vec<&DVector<T>>, Vec<T>) {
        self.particles
            .iter()
            .zip(&self.log_weights)
            .zip(&self.component_ids)
            .filter(|(_, &id)| id == component)
            .map(|((p, &lw), _)| (p, lw))
            .unzip()
    }

    /// Effective sample size `1 / Σ w²` of one component's normalized weights.
    pub fn ess(&self, component: usize) -> T {
        let (_, lw) = self.members(component);
        effective_sample_size(&lw)
    }

    pub fn weighted_moments(&self, component: usize) -> Result<Gaussian<T>> {
        let (particles, lw) = self.members(component);
        weighted_moments_of(&particles, &lw).map_err(|e| match e {
            Error::DegenerateWeights { .. } => Error::DegenerateWeights { component },
            other => other,
        })
    }
}

/// `1 / Σ w̲²` for log-weights normalized internally; zero if all are `-inf`.
pub fn effective_sample_size<T: Scalar>(log_weights: &[T]) -> T {
    let lse = log_sum_exp(log_weights);
    if !lse.finite() {
        return T::zero();
    }
    let s = log_weights
        .iter()
        .filter(|v| !v.as_f64().is_nan())
        .fold(T::zero(), |a, &lw| {
            let w = (lw - lse).exp();
            a + w * w
        });
    T::one() / s
}

/// Mean and `1/N`-normalized covariance of an unweighted particle set.
pub fn empirical_moments<T: Scalar>(particles: &[DVector<T>]) -> Result<Gaussian<T>> {
    let n = particles.len();
    if n < 2 {
        return Err(invalid(format!("empirical moments need at least 2 particles, got {n}")));
    }
    let dim = particles[0].len();
    if particles.iter().any(|p| p.len() != dim) {
        return Err(invalid("particles differ in dimension"));
    }
    if particles.iter().any(|p| p.iter().any(|v| !v.finite())) {
        return Err(numerical("non-finite particle in empirical moments"));
    }
    let inv_n = T::one() / T::from_usize_lossy(n);
    let mut mean = DVector::zeros(dim);
    for p in particles {
        mean += p;
    }
    mean *= inv_n;
    let mut cov = DMatrix::zeros(dim, dim);
    for p in particles {
        let d = p - &mean;
        cov.ger(inv_n, &d, &d, T::one());
    }
    Gaussian::new(mean, cov)
}

/// Moments under normalized weights `exp(log_weights - logsumexp)`.
///
/// Entries whose log-weight is NaN are treated as zero weight.
pub fn weighted_moments_of<P, T>(particles: &[P], log_weights: &[T]) -> Result<Gaussian<T>>
where
    P: std::borrow::Borrow<DVector<T>>,
    T: Scalar,
{
    if particles.len() != log_weights.len() {
        return Err(invalid("particle and weight counts differ"));
    }
    let lse = log_sum_exp(log_weights);
    if particles.is_empty() || !lse.finite() {
        return Err(Error::DegenerateWeights { component: 0 });
    }
    let dim = particles[0].borrow().len();
    let weights: Vec<T> = log_weights
        .iter()
        .map(|&lw| if lw.as_f64().is_nan() { T::zero() } else { (lw - lse).exp() })
        .collect();
    let mut mean = DVector::zeros(dim);
    for (p, &w) in particles.iter().zip(&weights) {
        if w > T::zero() {
            mean.axpy(w, p.borrow(), T::one());
        }
    }
    let mut cov = DMatrix::zeros(dim, dim);
    for (p, &w) in particles.iter().zip(&weights) {
        if w > T::zero() {
            let d = p.borrow() - &mean;
            cov.ger(w, &d, &d, T::one());
        }
    }
    Gaussian::new(mean, cov)
}

/// Mixing-proportion update: `α̃ʲ ∝ αʲ · Σᵢ wⁱʲ`, normalized.
///
/// The global normalizer `Σⱼ Σᵢ wⁱʲ` cancels in the final normalization, so a
/// single normalized pass gives the same result.
pub fn update_mixture_weights<T: Scalar>(prev: &[T], component_weight_sums: &[T]) -> Result<Vec<T>> {
    if component_weight_sums.iter().any(|s| *s < T::zero() || s.as_f64().is_nan()) {
        return Err(invalid("component weight sums must be non-negative"));
    }
    let logs: Vec<T> = component_weight_sums.iter().map(|s| s.ln()).collect();
    update_mixture_log_weights(prev, &logs)
}

/// Log-domain form of [`update_mixture_weights`]; `log_sums[j] = ln Σᵢ wⁱʲ`.
pub fn update_mixture_log_weights<T: Scalar>(prev: &[T], log_sums: &[T]) -> Result<Vec<T>> {
    if prev.len() != log_sums.len() || prev.is_empty() {
        return Err(invalid(format!(
            "{} previous weights but {} component sums",
            prev.len(),
            log_sums.len()
        )));
    }
    let log_unnorm: Vec<T> = prev.iter().zip(log_sums).map(|(&a, &s)| a.ln() + s).collect();
    let lse = log_sum_exp(&log_unnorm);
    if !lse.finite() {
        return Err(Error::DegenerateWeights {
            component: log_sums
                .iter()
                .position(|s| !s.finite())
                .unwrap_or(0),
        });
    }
    Ok(log_unnorm.iter().map(|&l| (l - lse).exp()).collect())
}

/// Effective number of Gaussians, `1 / Σ αʲ²`.
///
/// Evaluated as `(Σ r)² / Σ r²` with `r = α / max α`, which is the same
/// quantity for normalized weights but exact for uniform weights, where the
/// direct form rounds `G · (1/G)²`.
pub fn effective_num_gaussians<T: Scalar>(weights: &[T]) -> T {
    let max = weights.iter().fold(T::zero(), |m, &w| if w > m { w } else { m });
    if max <= T::zero() {
        return T::zero();
    }
    let (s1, s2) = weights.iter().fold((T::zero(), T::zero()), |(a, b), &w| {
        let r = w / max;
        (a + r, b + r * r)
    });
    s1 * s1 / s2
}

/// Posterior point estimate `Σ αʲ μʲ`.
pub fn state_estimate<T: Scalar>(mixture: &GaussianMixture<T>) -> DVector<T> {
    let mut est = DVector::zeros(mixture.dim());
    for (c, &w) in mixture.components.iter().zip(&mixture.weights) {
        est.axpy(w, c.mean(), T::one());
    }
    est
}
