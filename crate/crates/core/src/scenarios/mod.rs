//! Benchmark models: multi-target acoustic tracking, a large spatial sensor
//! network with heavy-tailed dynamics and count measurements, and small
//! linear-Gaussian models with a Kalman oracle.
//!
//! Every scenario is built from a serializable config into a [`Scenario`],
//! which implements [`StateSpaceModel`] and simulates ground truth.

mod acoustic;
mod linear;
mod sensor_net;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::gaussmix::Gaussian;
use crate::scalar::Scalar;
use crate::ssm::{LinearStructure, StateSpaceModel, TransitionMoments};

pub use acoustic::{AcousticConfig, AcousticModel};
pub use linear::{LinearConfig, LinearGaussianModel};
pub use sensor_net::{SensorNetConfig, SensorNetModel};

/// A simulated ground-truth run: `states[t]` and `observations[t]` for
/// `t = 1..=horizon`, started from `initial`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T: Scalar> {
    pub initial: DVector<T>,
    pub states: Vec<DVector<T>>,
    pub observations: Vec<DVector<T>>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    /// Writes one CSV row per step: `t,x_0,..,x_{n-1},z_0,..,z_{m-1}`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let nx = self.initial.len();
        let nz = self.observations.first().map_or(0, |z| z.len());
        let mut header = vec!["t".to_string()];
        header.extend((0..nx).map(|i| format!("x_{i}")));
        header.extend((0..nz).map(|i| format!("z_{i}")));
        writeln!(out, "{}", header.join(","))?;
        for (t, (x, z)) in self.states.iter().zip(&self.observations).enumerate() {
            let mut row = vec![(t + 1).to_string()];
            row.extend(x.iter().map(|v| format!("{}", v.as_f64())));
            row.extend(z.iter().map(|v| format!("{}", v.as_f64())));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Simulates `horizon` steps of `model` from `x0`.
pub fn simulate_from<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    model: &M,
    x0: DVector<T>,
    horizon: usize,
    rng: &mut dyn RngCore,
) -> Trajectory<T> {
    let mut states = Vec::with_capacity(horizon);
    let mut observations = Vec::with_capacity(horizon);
    let mut x = x0.clone();
    for _ in 0..horizon {
        x = model.transition(&x, rng);
        observations.push(model.observe(&x, rng));
        states.push(x.clone());
    }
    Trajectory { initial: x0, states, observations }
}

/// Simulates `horizon` steps with the initial state drawn from the model's initial law.
pub fn simulate<T: Scalar, M: StateSpaceModel<T> + ?Sized>(
    model: &M,
    horizon: usize,
    rng: &mut dyn RngCore,
) -> Trajectory<T> {
    let x0 = model.initial_law().draw(rng);
    simulate_from(model, x0, horizon, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioConfig {
    Acoustic(AcousticConfig),
    SensorNet(SensorNetConfig),
    Linear(LinearConfig),
}

impl ScenarioConfig {
    pub fn build<T: Scalar>(&self) -> crate::Result<Scenario<T>> {
        Ok(match self {
            ScenarioConfig::Acoustic(c) => Scenario::Acoustic(AcousticModel::new(c)?),
            ScenarioConfig::SensorNet(c) => Scenario::SensorNet(SensorNetModel::new(c)?),
            ScenarioConfig::Linear(c) => Scenario::Linear(LinearGaussianModel::new(c)?),
        })
    }

    pub fn horizon(&self) -> usize {
        match self {
            ScenarioConfig::Acoustic(c) => c.horizon,
            ScenarioConfig::SensorNet(c) => c.horizon,
            ScenarioConfig::Linear(c) => c.horizon,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ScenarioConfig::Acoustic(_) => "acoustic",
            ScenarioConfig::SensorNet(_) => "sensor_net",
            ScenarioConfig::Linear(_) => "linear",
        }
    }
}

/// A built benchmark model.
#[derive(Debug, Clone)]
pub enum Scenario<T: Scalar> {
    Acoustic(AcousticModel<T>),
    SensorNet(SensorNetModel<T>),
    Linear(LinearGaussianModel<T>),
}

impl<T: Scalar> Scenario<T> {
    fn model(&self) -> &dyn StateSpaceModel<T> {
        match self {
            Scenario::Acoustic(m) => m,
            Scenario::SensorNet(m) => m,
            Scenario::Linear(m) => m,
        }
    }

    /// Ground truth and measurements for one trajectory.
    pub fn simulate(&self, horizon: usize, rng: &mut dyn RngCore) -> Trajectory<T> {
        match self {
            Scenario::Acoustic(m) => m.simulate(horizon, rng),
            _ => simulate(self.model(), horizon, rng),
        }
    }

    /// The prior handed to a filter run whose truth starts at `x0`.
    ///
    /// Acoustic runs centre the prior on a random perturbation of the true
    /// initial state; the other scenarios use the model's initial law.
    pub fn filter_prior(&self, x0: &DVector<T>, rng: &mut dyn RngCore) -> crate::Result<Gaussian<T>> {
        match self {
            Scenario::Acoustic(m) => m.filter_prior(x0, rng),
            _ => Ok(self.initial_law().clone()),
        }
    }

    /// Number of point targets, for scenarios scored by OMAT.
    pub fn n_targets(&self) -> Option<usize> {
        match self {
            Scenario::Acoustic(m) => Some(m.n_targets()),
            _ => None,
        }
    }
}

impl<T: Scalar> StateSpaceModel<T> for Scenario<T> {
    fn dim_x(&self) -> usize {
        self.model().dim_x()
    }

    fn dim_z(&self) -> usize {
        self.model().dim_z()
    }

    fn initial_law(&self) -> &Gaussian<T> {
        self.model().initial_law()
    }

    fn transition(&self, x: &DVector<T>, rng: &mut dyn RngCore) -> DVector<T> {
        self.model().transition(x, rng)
    }

    fn transition_log_density(&self, prev: &DVector<T>, next: &DVector<T>) -> Option<T> {
        self.model().transition_log_density(prev, next)
    }

    fn process_cov(&self) -> Option<&DMatrix<T>> {
        self.model().process_cov()
    }

    fn transition_moments(&self, x: &DVector<T>) -> Option<TransitionMoments<T>> {
        self.model().transition_moments(x)
    }

    fn observe(&self, x: &DVector<T>, rng: &mut dyn RngCore) -> DVector<T> {
        self.model().observe(x, rng)
    }

    fn observation_mean(&self, x: &DVector<T>) -> DVector<T> {
        self.model().observation_mean(x)
    }

    fn observation_jacobian(&self, x: &DVector<T>) -> DMatrix<T> {
        self.model().observation_jacobian(x)
    }

    fn observation_cov(&self, x: &DVector<T>) -> DMatrix<T> {
        self.model().observation_cov(x)
    }

    fn log_likelihood(&self, z: &DVector<T>, x: &DVector<T>) -> T {
        self.model().log_likelihood(z, x)
    }

    fn linear_structure(&self) -> Option<LinearStructure<T>> {
        self.model().linear_structure()
    }
}

/// Block-diagonal matrix with `n` copies of `block`.
pub(crate) fn block_diag<T: Scalar>(block: &DMatrix<T>, n: usize) -> DMatrix<T> {
    let k = block.nrows();
    let mut out = DMatrix::zeros(k * n, k * n);
    for b in 0..n {
        out.view_mut((b * k, b * k), (k, k)).copy_from(block);
    }
    out
}

/// Constant-velocity transition for `[x, y, ẋ, ẏ]` with step `dt`.
pub(crate) fn constant_velocity<T: Scalar>(dt: f64) -> DMatrix<T> {
    let mut f = DMatrix::identity(4, 4);
    f[(0, 2)] = T::lit(dt);
    f[(1, 3)] = T::lit(dt);
    f
}

/// `ln N(z; mean, σ² I)` for a diagonal isotropic covariance.
pub(crate) fn isotropic_log_likelihood<T: Scalar>(z: &DVector<T>, mean: &DVector<T>, var: T) -> T {
    let n = T::from_usize_lossy(z.len());
    let half = T::lit(0.5);
    -half * ((z - mean).norm_squared() / var + n * (T::two_pi() * var).ln())
}
