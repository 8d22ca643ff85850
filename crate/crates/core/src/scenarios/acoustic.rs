//! Multi-target acoustic tracking.
//!
//! `M` targets move independently under a constant-velocity model with
//! Gaussian process noise. Each of `N_s` sensors on a regular grid records the
//! superposition of the emitted amplitudes,
//!
//! ```text
//! z̄ˢ(x) = Σ_m ψ / (‖p_m − rˢ‖ + d₀)
//! ```
//!
//! plus `N(0, σ²_w)` noise. The joint `4M`-dimensional state is filtered
//! directly, so no data association is involved.

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::{block_diag, constant_velocity, isotropic_log_likelihood, simulate_from, Trajectory};
use crate::error::{invalid, Result};
use crate::gaussmix::Gaussian;
use crate::scalar::Scalar;
use crate::ssm::{StateSpaceModel, TransitionMoments};

/// Attempts at drawing a trajectory that stays inside the region.
const MAX_TRAJECTORY_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AcousticConfig {
    pub n_targets: usize,
    /// Sensor count; sensors sit on a square grid, so this must be a perfect square.
    pub n_sensors: usize,
    /// Emitted amplitude `ψ`.
    pub amplitude: f64,
    /// Distance offset `d₀`.
    pub d0: f64,
    /// Measurement noise variance `σ²_w`.
    pub obs_var: f64,
    pub dt: f64,
    /// Per-target process noise covariance `V` (4×4, row-major).
    pub process_cov: [[f64; 4]; 4],
    pub horizon: usize,
    /// Square region `[lo, hi]²` containing the sensors and the true tracks.
    pub region: [f64; 2],
    /// Nominal initial state `[x, y, ẋ, ẏ]` of each target.
    pub initial_states: Vec<[f64; 4]>,
    /// Prior standard deviation per target component.
    pub prior_sd: [f64; 4],
    /// Scale of the random prior-mean offset (in prior standard deviations)
    /// drawn independently for every filter run.
    pub prior_mean_jitter: f64,
    /// Reject simulated trajectories that leave the region.
    pub keep_in_region: bool,
}

impl Default for AcousticConfig {
    fn default() -> Self {
        Self {
            n_targets: 4,
            n_sensors: 25,
            amplitude: 10.0,
            d0: 0.1,
            obs_var: 0.01,
            dt: 1.0,
            process_cov: [
                [0.01, 0.0, 0.0, 0.0],
                [0.0, 0.01, 0.0, 0.0],
                [0.0, 0.0, 0.05, 0.0],
                [0.0, 0.0, 0.0, 0.05],
            ],
            horizon: 40,
            region: [0.0, 40.0],
            initial_states: vec![
                [12.0, 6.0, 0.001, 0.001],
                [32.0, 32.0, -0.001, -0.005],
                [20.0, 13.0, -0.1, 0.01],
                [15.0, 35.0, 0.002, 0.002],
            ],
            prior_sd: [10f64.sqrt(), 10f64.sqrt(), 1.0, 1.0],
            prior_mean_jitter: 1.0,
            keep_in_region: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AcousticModel<T: Scalar> {
    n_targets: usize,
    sensors: Vec<[T; 2]>,
    amplitude: T,
    d0: T,
    obs_var: T,
    f: DMatrix<T>,
    q: DMatrix<T>,
    noise: Gaussian<T>,
    prior: Gaussian<T>,
    prior_sd: DVector<T>,
    prior_mean_jitter: T,
    region: [T; 2],
    keep_in_region: bool,
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("{name} must be positive, got {v}")))
    }
}

impl<T: Scalar> AcousticModel<T> {
    pub fn new(c: &AcousticConfig) -> Result<Self> {
        if c.n_targets == 0 {
            return Err(invalid("at least one target is required"));
        }
        if c.initial_states.len() != c.n_targets {
            return Err(invalid(format!(
                "{} initial states given for {} targets",
                c.initial_states.len(),
                c.n_targets
            )));
        }
        let side = (c.n_sensors as f64).sqrt().round() as usize;
        if side < 1 || side * side != c.n_sensors {
            return Err(invalid(format!("sensor count {} is not a perfect square", c.n_sensors)));
        }
        positive("amplitude", c.amplitude)?;
        positive("d0", c.d0)?;
        positive("obs_var", c.obs_var)?;
        positive("dt", c.dt)?;
        let [lo, hi] = c.region;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid(format!("invalid region [{lo}, {hi}]")));
        }
        for (k, &sd) in c.prior_sd.iter().enumerate() {
            positive(&format!("prior_sd[{k}]"), sd)?;
        }
        if !(c.prior_mean_jitter.is_finite() && c.prior_mean_jitter >= 0.0) {
            return Err(invalid("prior_mean_jitter must be non-negative"));
        }

        // Sensors at the cell centres of a side × side grid over the region.
        let cell = (hi - lo) / side as f64;
        let mut sensors = Vec::with_capacity(c.n_sensors);
        for i in 0..side {
            for j in 0..side {
                sensors.push([T::lit(lo + (i as f64 + 0.5) * cell), T::lit(lo + (j as f64 + 0.5) * cell)]);
            }
        }

        let v = DMatrix::from_fn(4, 4, |i, j| T::lit(c.process_cov[i][j]));
        if Gaussian::new(DVector::zeros(4), v.clone())?.was_jittered() {
            return Err(invalid("process_cov is not positive definite"));
        }
        let q = block_diag(&v, c.n_targets);
        let f = block_diag(&constant_velocity::<T>(c.dt), c.n_targets);
        let n = 4 * c.n_targets;
        let mean = DVector::from_iterator(n, c.initial_states.iter().flatten().map(|&v| T::lit(v)));
        let prior_sd = DVector::from_fn(n, |i, _| T::lit(c.prior_sd[i % 4]));
        let prior = Gaussian::new(mean, DMatrix::from_diagonal(&prior_sd.map(|s| s * s)))?;
        Ok(Self {
            n_targets: c.n_targets,
            sensors,
            amplitude: T::lit(c.amplitude),
            d0: T::lit(c.d0),
            obs_var: T::lit(c.obs_var),
            f,
            noise: Gaussian::new(DVector::zeros(n), q.clone())?,
            q,
            prior,
            prior_sd,
            prior_mean_jitter: T::lit(c.prior_mean_jitter),
            region: [T::lit(lo), T::lit(hi)],
            keep_in_region: c.keep_in_region,
        })
    }

    pub fn n_targets(&self) -> usize {
        self.n_targets
    }

    pub fn sensors(&self) -> &[[T; 2]] {
        &self.sensors
    }

    fn inside(&self, x: &DVector<T>) -> bool {
        (0..self.n_targets).all(|m| {
            let (px, py) = (x[4 * m], x[4 * m + 1]);
            px >= self.region[0] && px <= self.region[1] && py >= self.region[0] && py <= self.region[1]
        })
    }

    /// Simulates a trajectory from the nominal initial states. With
    /// `keep_in_region`, trajectories that leave the region are redrawn.
    pub fn simulate(&self, horizon: usize, rng: &mut dyn RngCore) -> Trajectory<T> {
        let x0 = self.prior.mean().clone();
        let mut traj = simulate_from(self, x0.clone(), horizon, rng);
        if self.keep_in_region {
            for _ in 1..MAX_TRAJECTORY_ATTEMPTS {
                if traj.states.iter().all(|x| self.inside(x)) {
                    break;
                }
                traj = simulate_from(self, x0.clone(), horizon, rng);
            }
        }
        traj
    }

    /// `N(x0 + jitter · sd ⊙ n, diag(sd²))` with `n` standard normal.
    pub fn filter_prior(&self, x0: &DVector<T>, rng: &mut dyn RngCore) -> Result<Gaussian<T>> {
        if x0.len() != self.dim_x() {
            return Err(invalid("initial state has the wrong dimension"));
        }
        let mean = DVector::from_fn(x0.len(), |i, _| {
            x0[i] + self.prior_mean_jitter * self.prior_sd[i] * T::standard_normal(rng)
        });
        Gaussian::new(mean, self.prior.cov().clone())
    }
}

impl<T: Scalar> StateSpaceModel<T> for AcousticModel<T> {
    fn dim_x(&self) -> usize {
        4 * self.n_targets
    }

    fn dim_z(&self) -> usize {
        self.sensors.len()
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
        let mut z = self.observation_mean(x);
        z.iter_mut().for_each(|v| *v += sd * T::standard_normal(rng));
        z
    }

    fn observation_mean(&self, x: &DVector<T>) -> DVector<T> {
        DVector::from_iterator(
            self.sensors.len(),
            self.sensors.iter().map(|r| {
                (0..self.n_targets).fold(T::zero(), |acc, m| {
                    let dx = x[4 * m] - r[0];
                    let dy = x[4 * m + 1] - r[1];
                    acc + self.amplitude / ((dx * dx + dy * dy).sqrt() + self.d0)
                })
            }),
        )
    }

    /// `∂z̄ˢ/∂p_m = −ψ (p_m − rˢ) / (d (d + d₀)²)` with `d = ‖p_m − rˢ‖`;
    /// zero at `d = 0` and for velocity components.
    fn observation_jacobian(&self, x: &DVector<T>) -> DMatrix<T> {
        let mut h = DMatrix::zeros(self.sensors.len(), self.dim_x());
        for (s, r) in self.sensors.iter().enumerate() {
            for m in 0..self.n_targets {
                let dx = x[4 * m] - r[0];
                let dy = x[4 * m + 1] - r[1];
                let d = (dx * dx + dy * dy).sqrt();
                if d > T::zero() {
                    let k = -self.amplitude / (d * (d + self.d0) * (d + self.d0));
                    h[(s, 4 * m)] = k * dx;
                    h[(s, 4 * m + 1)] = k * dy;
                }
            }
        }
        h
    }

    fn observation_cov(&self, _x: &DVector<T>) -> DMatrix<T> {
        let n = self.sensors.len();
        DMatrix::identity(n, n) * self.obs_var
    }

    fn log_likelihood(&self, z: &DVector<T>, x: &DVector<T>) -> T {
        isotropic_log_likelihood(z, &self.observation_mean(x), self.obs_var)
    }
}
