//! Evaluation metrics: OMAT multi-target error, lost tracks, MSE and
//! aggregation across Monte Carlo trials.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::scalar::Scalar;

/// Trajectory-average OMAT above which a track counts as lost (meters).
pub const DEFAULT_LOST_THRESHOLD: f64 = 2.0;

/// One filter run against one ground-truth trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord<T: Scalar> {
    pub estimates: Vec<DVector<T>>,
    pub truths: Vec<DVector<T>>,
    /// Per-step error (OMAT for tracking scenarios, squared error otherwise).
    pub errors: Vec<T>,
    pub geff: Vec<T>,
    /// Seconds spent in filter steps, if measured.
    pub wall_time: Option<f64>,
    pub seed: u64,
    pub config_fingerprint: String,
}

impl<T: Scalar> TrialRecord<T> {
    pub fn horizon(&self) -> usize {
        self.errors.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.errors.len();
        if self.estimates.len() != n || self.truths.len() != n || self.geff.len() != n {
            return Err(invalid(format!(
                "trial series lengths differ: {} estimates, {} truths, {} errors, {} G_eff values",
                self.estimates.len(),
                self.truths.len(),
                n,
                self.geff.len()
            )));
        }
        Ok(())
    }

    /// Average of the per-step error series.
    pub fn mean_error(&self) -> T {
        mean(&self.errors)
    }
}

fn mean<T: Scalar>(xs: &[T]) -> T {
    if xs.is_empty() {
        return T::zero();
    }
    xs.iter().fold(T::zero(), |a, &x| a + x) / T::from_usize_lossy(xs.len())
}

/// Minimum-cost perfect assignment on a square cost matrix given row-major.
///
/// Returns `assignment[row] = column`. Runs the O(n³) shortest augmenting
/// path form of the Hungarian algorithm.
pub fn hungarian<T: Scalar>(cost: &[T], n: usize) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return Err(invalid(format!("cost matrix has {} entries, expected {n}²", cost.len())));
    }
    if cost.iter().any(|c| !c.finite()) {
        return Err(invalid("cost matrix contains non-finite entries"));
    }
    let inf = T::lit(f64::INFINITY);
    // 1-based potentials with a dummy column 0, following the classic layout.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        col_owner[0] = row;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[col_owner[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// Optimal mass transfer error of order `p` between two equal-size point sets:
/// `(min_σ (1/M) Σ_m ‖x_m − y_σ(m)‖^p)^(1/p)`.
pub fn omat<T: Scalar>(est: &[DVector<T>], truth: &[DVector<T>], p: T) -> Result<T> {
    let m = est.len();
    if m != truth.len() {
        return Err(invalid(format!("{m} estimated points but {} true points", truth.len())));
    }
    if m == 0 {
        return Err(invalid("OMAT needs at least one point"));
    }
    if !(p.finite() && p >= T::one()) {
        return Err(invalid("OMAT order must be finite and at least 1"));
    }
    let mut cost = Vec::with_capacity(m * m);
    for x in est {
        for y in truth {
            if x.len() != y.len() {
                return Err(invalid("OMAT points have different dimensions"));
            }
            cost.push((x - y).norm().powf(p));
        }
    }
    let assignment = hungarian(&cost, m)?;
    let total = assignment.iter().enumerate().fold(T::zero(), |acc, (i, &j)| acc + cost[i * m + j]);
    Ok((total / T::from_usize_lossy(m)).powf(T::one() / p))
}

/// Position blocks `[x, y]` of a joint state laid out as `M` stacked `[x, y, ẋ, ẏ]`.
pub fn target_positions<T: Scalar>(state: &DVector<T>, n_targets: usize) -> Result<Vec<DVector<T>>> {
    if state.len() != 4 * n_targets {
        return Err(invalid(format!(
            "state of length {} does not hold {n_targets} four-dimensional targets",
            state.len()
        )));
    }
    Ok((0..n_targets).map(|m| state.rows(4 * m, 2).into_owned()).collect())
}

/// OMAT between two joint multi-target states, on positions only.
pub fn omat_joint<T: Scalar>(est: &DVector<T>, truth: &DVector<T>, n_targets: usize, p: T) -> Result<T> {
    omat(&target_positions(est, n_targets)?, &target_positions(truth, n_targets)?, p)
}

/// Squared error averaged over dimensions.
pub fn squared_error<T: Scalar>(est: &DVector<T>, truth: &DVector<T>) -> T {
    (est - truth).norm_squared() / T::from_usize_lossy(est.len().max(1))
}

/// True iff the trajectory-average error strictly exceeds `threshold`.
pub fn lost_track<T: Scalar>(trial: &TrialRecord<T>, threshold: T) -> bool {
    trial.mean_error() > threshold
}

/// Squared estimation error averaged over steps and state dimensions.
pub fn mse<T: Scalar>(trial: &TrialRecord<T>) -> T {
    let per_step: Vec<T> =
        trial.estimates.iter().zip(&trial.truths).map(|(e, t)| squared_error(e, t)).collect();
    mean(&per_step)
}

/// Per-trial score used for aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialScore {
    /// Trajectory average of the recorded error series (OMAT).
    MeanError,
    /// Mean squared error of the estimates.
    Mse,
}

impl TrialScore {
    pub fn of<T: Scalar>(self, trial: &TrialRecord<T>) -> T {
        match self {
            TrialScore::MeanError => trial.mean_error(),
            TrialScore::Mse => mse(trial),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary<T: Scalar> {
    pub trials: usize,
    pub lost_tracks: usize,
    pub included: usize,
    /// Mean score over included trials (NaN if none).
    pub mean: T,
    /// Sample standard deviation (n − 1) over included trials; 0 for a single trial.
    pub sd: T,
    /// Per-step G_eff averaged over all trials.
    pub geff: Vec<T>,
}

impl<T: Scalar> Summary<T> {
    pub fn lost_rate(&self) -> T {
        if self.trials == 0 {
            return T::zero();
        }
        T::from_usize_lossy(self.lost_tracks) / T::from_usize_lossy(self.trials)
    }
}

/// Mean and sample standard deviation of `xs`, summed in the given order.
pub fn mean_sd<T: Scalar>(xs: &[T]) -> (T, T) {
    let n = xs.len();
    if n == 0 {
        return (T::lit(f64::NAN), T::lit(f64::NAN));
    }
    let m = mean(xs);
    if n == 1 {
        return (m, T::zero());
    }
    let ss = xs.iter().fold(T::zero(), |a, &x| a + (x - m) * (x - m));
    (m, (ss / T::from_usize_lossy(n - 1)).sqrt())
}

/// Aggregates trials; lost tracks (if a threshold is given) are counted and
/// excluded from the mean and standard deviation.
///
/// Sums run in ascending (seed, score) order so the result does not depend
/// on the order of `trials`.
pub fn aggregate<T: Scalar>(
    trials: &[TrialRecord<T>],
    score: TrialScore,
    lost_threshold: Option<T>,
) -> Result<Summary<T>> {
    if trials.is_empty() {
        return Err(invalid("cannot aggregate an empty set of trials"));
    }
    for t in trials {
        t.validate()?;
    }
    let mut order: Vec<(u64, T, &TrialRecord<T>)> =
        trials.iter().map(|t| (t.seed, score.of(t), t)).collect();
    order.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal)));

    let mut kept = Vec::with_capacity(order.len());
    let mut lost = 0usize;
    for (_, s, t) in &order {
        if lost_threshold.is_some_and(|th| lost_track(t, th)) {
            lost += 1;
        } else {
            kept.push(*s);
        }
    }
    let (avg, sd) = mean_sd(&kept);

    let horizon = order.iter().map(|(_, _, t)| t.geff.len()).max().unwrap_or(0);
    let mut geff = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let vals: Vec<T> = order.iter().filter_map(|(_, _, t)| t.geff.get(k).copied()).collect();
        geff.push(mean(&vals));
    }
    Ok(Summary { trials: trials.len(), lost_tracks: lost, included: kept.len(), mean: avg, sd, geff })
}
