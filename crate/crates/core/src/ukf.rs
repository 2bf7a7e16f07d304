//! Belief over the behavioural parameters of every agent, corrected with an
//! unscented Kalman filter. The process model is a random walk; the
//! measurement model solves the game at a sigma point and rolls the joint
//! state forward.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{solve_ilq_with, GameSpec, NashSolution, SolverOptions};
use crate::model::{AgentParams, BehaviorParams, JointState, D_UPPER, V_MAX_LOWER, V_MAX_UPPER};

/// Eigenvalue floor applied to posterior covariances.
pub const COV_FLOOR: f64 = 1e-9;

/// Mean and covariance over flattened [`BehaviorParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeliefState {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl BeliefState {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::validation("belief covariance must be dim×dim"));
        }
        if mean.len() % 2 != 0 {
            return Err(Error::validation("belief dimension must be 2 per agent"));
        }
        Ok(Self { mean, covariance })
    }

    /// Same parameters and isotropic variance for every agent.
    pub fn uniform(n_agents: usize, params: AgentParams, variance: f64) -> Self {
        let mean = DVector::from_vec(BehaviorParams::uniform(n_agents, params).flatten());
        Self {
            covariance: DMatrix::identity(2 * n_agents, 2 * n_agents) * variance,
            mean,
        }
    }

    pub fn from_params(params: &BehaviorParams, variance: f64) -> Self {
        let n = params.len();
        Self {
            mean: DVector::from_vec(params.flatten()),
            covariance: DMatrix::identity(2 * n, 2 * n) * variance,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_agents(&self) -> usize {
        self.mean.len() / 2
    }

    pub fn params(&self) -> BehaviorParams {
        BehaviorParams::from_flat_clamped(self.mean.as_slice())
    }

    pub fn covariance_diagonal(&self) -> Vec<f64> {
        self.covariance.diagonal().iter().copied().collect()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (&self.covariance + self.covariance.transpose()) * 0.5;
        sym.symmetric_eigenvalues().min()
    }
}

/// Random-walk and measurement noise covariances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub process_cov: DMatrix<f64>,
    pub measurement_cov: DMatrix<f64>,
    /// Number of future joint states stacked into one measurement.
    pub measurement_steps: usize,
}

impl NoiseConfig {
    /// Diagonal covariances: `process_var` per parameter per step and
    /// `measurement_var` (m²) per observed coordinate.
    pub fn diagonal(
        n_agents: usize,
        process_var: f64,
        measurement_var: f64,
        measurement_steps: usize,
    ) -> Self {
        let m = 2 * n_agents * measurement_steps.max(1);
        Self {
            process_cov: DMatrix::identity(2 * n_agents, 2 * n_agents) * process_var,
            measurement_cov: DMatrix::identity(m, m) * measurement_var,
            measurement_steps: measurement_steps.max(1),
        }
    }
}

/// Unscented transform spread parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UkfHyper {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfHyper {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl UkfHyper {
    pub fn lambda(&self, dim: usize) -> f64 {
        let n = dim as f64;
        self.alpha * self.alpha * (n + self.kappa) - n
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::validation("UKF alpha must lie in (0, 1]"));
        }
        if dim as f64 + self.lambda(dim) <= 0.0 {
            return Err(Error::validation("UKF requires dim + lambda > 0"));
        }
        Ok(())
    }
}

/// Weighted sigma points.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaPoints {
    pub points: Vec<DVector<f64>>,
    pub mean_weights: Vec<f64>,
    pub cov_weights: Vec<f64>,
}

/// Standard `2·dim + 1` unscented points of `N(mean, cov)` without any box
/// projection.
pub fn unscented_points(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    hyper: &UkfHyper,
) -> Result<SigmaPoints> {
    let dim = mean.len();
    hyper.validate(dim)?;
    let lambda = hyper.lambda(dim);
    let scale = dim as f64 + lambda;
    let sym = (cov + cov.transpose()) * (0.5 * scale);
    let chol = sym
        .clone()
        .cholesky()
        .or_else(|| (sym + DMatrix::identity(dim, dim) * (COV_FLOOR * scale)).cholesky())
        .ok_or_else(|| Error::Numerical("sigma point covariance is not factorizable".into()))?;
    let l = chol.l();

    let mut points = Vec::with_capacity(2 * dim + 1);
    points.push(mean.clone());
    for j in 0..dim {
        points.push(mean + l.column(j));
    }
    for j in 0..dim {
        points.push(mean - l.column(j));
    }
    let w = 1.0 / (2.0 * scale);
    let mut mean_weights = vec![w; 2 * dim + 1];
    let mut cov_weights = vec![w; 2 * dim + 1];
    mean_weights[0] = lambda / scale;
    cov_weights[0] = lambda / scale + (1.0 - hyper.alpha * hyper.alpha + hyper.beta);
    Ok(SigmaPoints {
        points,
        mean_weights,
        cov_weights,
    })
}

/// Projects a flattened parameter vector into the estimation box.
pub fn clamp_to_box(v: &mut DVector<f64>) {
    for (i, x) in v.iter_mut().enumerate() {
        *x = if i % 2 == 0 {
            x.clamp(V_MAX_LOWER, V_MAX_UPPER)
        } else {
            x.clamp(0.0, D_UPPER)
        };
    }
}

/// Sigma points of the belief, each projected into the parameter box.
pub fn sigma_points(belief: &BeliefState, hyper: &UkfHyper) -> Result<SigmaPoints> {
    let mut sp = unscented_points(&belief.mean, &belief.covariance, hyper)?;
    sp.points.iter_mut().for_each(clamp_to_box);
    Ok(sp)
}

/// Random-walk prediction: mean unchanged, `Σ' = Σ + Q_t`.
pub fn predict_step(belief: &BeliefState, noise: &NoiseConfig) -> Result<BeliefState> {
    if noise.process_cov.shape() != belief.covariance.shape() {
        return Err(Error::validation("process covariance dimension mismatch"));
    }
    Ok(BeliefState {
        mean: belief.mean.clone(),
        covariance: &belief.covariance + &noise.process_cov,
    })
}

/// Measurement model: solve the game with parameters `point`, roll forward and
/// stack the positions of all agents for the next `steps` timesteps.
pub fn measure(
    point: &DVector<f64>,
    joint: &JointState,
    spec: &GameSpec,
    warm_start: Option<&NashSolution>,
    steps: usize,
) -> Result<DVector<f64>> {
    let params = BehaviorParams::from_flat_clamped(point.as_slice());
    // Sigma points stay on the branch of the warm start so the map is smooth.
    let opts = SolverOptions {
        select_equilibrium: false,
        ..spec.solver.clone()
    };
    let sol = solve_ilq_with(joint, spec, &params, warm_start, &opts)
        .map_err(|e| Error::Measurement(e.to_string()))?;
    Ok(stack_positions(&sol, steps))
}

/// Positions of all agents at the first `steps` states of the solution,
/// stacked step-major.
pub fn stack_positions(sol: &NashSolution, steps: usize) -> DVector<f64> {
    let steps = steps.max(1);
    let n = sol.trajectories.len();
    let mut out = DVector::zeros(2 * n * steps);
    for k in 0..steps {
        for (a, t) in sol.trajectories.iter().enumerate() {
            let p = t.position_or_last(k);
            out[2 * (k * n + a)] = p.x;
            out[2 * (k * n + a) + 1] = p.y;
        }
    }
    out
}

/// Result of one correction.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateOutcome {
    pub belief: BeliefState,
    /// Set when the correction was skipped; the belief is then the prior.
    pub skipped: Option<String>,
    pub predicted_measurement: Option<DVector<f64>>,
}

/// Unscented correction with an arbitrary measurement function. Sigma-point
/// evaluations run in parallel; the combination is sequential.
pub fn unscented_update<F>(
    belief: &BeliefState,
    observed: &DVector<f64>,
    measurement_cov: &DMatrix<f64>,
    hyper: &UkfHyper,
    h: F,
) -> Result<UpdateOutcome>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>> + Sync,
{
    if observed.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("non-finite observation"));
    }
    if measurement_cov.nrows() != observed.len() {
        return Err(Error::validation(format!(
            "measurement covariance is {}×{}, observation has {} entries",
            measurement_cov.nrows(),
            measurement_cov.ncols(),
            observed.len()
        )));
    }
    let sp = sigma_points(belief, hyper)?;
    let ys = sp.points.par_iter().map(&h).collect::<Result<Vec<_>>>();
    let ys = match ys {
        Ok(ys) => ys,
        Err(e) => {
            return Ok(UpdateOutcome {
                belief: belief.clone(),
                skipped: Some(e.to_string()),
                predicted_measurement: None,
            })
        }
    };
    if ys.iter().any(|y| y.len() != observed.len()) {
        return Err(Error::validation("measurement dimension mismatch"));
    }

    let dim = belief.dim();
    let m = observed.len();
    let x_mean = sp
        .points
        .iter()
        .zip(&sp.mean_weights)
        .fold(DVector::zeros(dim), |acc, (x, &w)| acc + x * w);
    let y_mean = ys
        .iter()
        .zip(&sp.mean_weights)
        .fold(DVector::zeros(m), |acc, (y, &w)| acc + y * w);

    let mut s = measurement_cov.clone();
    let mut cross = DMatrix::zeros(dim, m);
    for ((x, y), &w) in sp.points.iter().zip(&ys).zip(&sp.cov_weights) {
        let dy = y - &y_mean;
        let dx = x - &x_mean;
        s += &dy * dy.transpose() * w;
        cross += &dx * dy.transpose() * w;
    }
    let s = (&s + s.transpose()) * 0.5;

    let s_inv = match s.clone().cholesky() {
        Some(c) => c.inverse(),
        None => match (&s + DMatrix::identity(m, m) * 1e-6).cholesky() {
            Some(c) => c.inverse(),
            None => {
                return Ok(UpdateOutcome {
                    belief: belief.clone(),
                    skipped: Some("innovation covariance is singular".into()),
                    predicted_measurement: Some(y_mean),
                })
            }
        },
    };
    let gain = &cross * &s_inv;
    // The correction starts from the central point and its own measurement,
    // so observing exactly the mean-parameter prediction leaves the mean put.
    let center = &sp.points[0];
    let predicted = ys[0].clone();
    let mut mean = center + &gain * (observed - &predicted);
    clamp_to_box(&mut mean);
    let cov = &belief.covariance - &gain * &s * gain.transpose();
    Ok(UpdateOutcome {
        belief: BeliefState {
            mean,
            covariance: floor_covariance(cov),
        },
        skipped: None,
        predicted_measurement: Some(predicted),
    })
}

/// Symmetrise and lift eigenvalues below [`COV_FLOOR`].
pub fn floor_covariance(cov: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&cov + cov.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= COV_FLOOR) {
        return sym;
    }
    let lambda = eig.eigenvalues.map(|l| l.max(COV_FLOOR));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&lambda) * eig.eigenvectors.transpose();
    (&out + out.transpose()) * 0.5
}

/// Unscented correction using the game solver as the measurement model.
pub fn update_step(
    belief: &BeliefState,
    observed: &DVector<f64>,
    joint: &JointState,
    spec: &GameSpec,
    noise: &NoiseConfig,
    hyper: &UkfHyper,
    warm_start: Option<&NashSolution>,
) -> Result<UpdateOutcome> {
    let steps = noise.measurement_steps.max(1);
    if observed.len() != 2 * joint.len() * steps {
        return Err(Error::validation(format!(
            "observation has {} entries, expected {}",
            observed.len(),
            2 * joint.len() * steps
        )));
    }
    unscented_update(belief, observed, &noise.measurement_cov, hyper, |p| {
        measure(p, joint, spec, warm_start, steps)
    })
}
