//! The human internal model: a finite-horizon general-sum game in which every
//! agent trades goal progress and control effort against proximity to the
//! other agents and to obstacles. [`solve_ilq`] returns an open-loop Nash
//! strategy by repeatedly solving linear-quadratic approximations of the game.

mod cost;
mod solver;
mod verify;

use nalgebra::Matrix2;
use serde::{Deserialize, Serialize};

pub use cost::{evaluate_cost, stage_cost, PSD_FLOOR};
pub use solver::{solve_ilq, solve_ilq_with};
pub use verify::verify_nash;

use crate::error::{Error, Result};
use crate::model::{Bounds, Control, Obstacle, Trajectory, Vec2};

/// Cost weights shared by every player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Goal tracking weight (2×2, PSD).
    pub q: Matrix2<f64>,
    /// Control effort weight (2×2, PD).
    pub r: Matrix2<f64>,
    pub w_social: f64,
    pub w_obstacle: f64,
    /// Preferred obstacle clearance (m).
    pub d_obstacle: f64,
    /// Quadratic penalty weight on leaving the world bounds.
    #[serde(default = "default_bounds_weight")]
    pub w_bounds: f64,
}

fn default_bounds_weight() -> f64 {
    1e3
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            q: Matrix2::identity(),
            r: Matrix2::identity() * 0.1,
            w_social: 20.0,
            w_obstacle: 40.0,
            d_obstacle: 0.35,
            w_bounds: default_bounds_weight(),
        }
    }
}

impl CostWeights {
    /// Goal tracking and effort only.
    pub fn lq(q: Matrix2<f64>, r: Matrix2<f64>) -> Self {
        Self {
            q,
            r,
            w_social: 0.0,
            w_obstacle: 0.0,
            d_obstacle: 0.0,
            w_bounds: 0.0,
        }
    }

    /// Multiply every weight by `s` (the argmin is unchanged for `s > 0`).
    pub fn scaled(&self, s: f64) -> Self {
        Self {
            q: self.q * s,
            r: self.r * s,
            w_social: self.w_social * s,
            w_obstacle: self.w_obstacle * s,
            d_obstacle: self.d_obstacle,
            w_bounds: self.w_bounds * s,
        }
    }
}

/// Iteration control of the iterative LQ solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Convergence threshold on the max-norm of the control update.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub backtrack_factor: f64,
    pub max_halvings: usize,
    /// Also solve from a cold start and keep the better equilibrium.
    pub select_equilibrium: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-4,
            max_iterations: 50,
            backtrack_factor: 0.5,
            max_halvings: 10,
            select_equilibrium: true,
        }
    }
}

/// Everything about the game except the behavioural parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSpec {
    pub goals: Vec<Vec2>,
    #[serde(default)]
    pub obstacle: Obstacle,
    /// Horizon in steps.
    pub horizon: usize,
    pub dt: f64,
    pub weights: CostWeights,
    #[serde(default)]
    pub bounds: Option<Bounds>,
    /// Scenario speed cap per agent; combined with each agent's `v_max`.
    #[serde(default)]
    pub speed_caps: Vec<f64>,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl GameSpec {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::validation("game horizon must be >= 1"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::validation("game dt must be > 0"));
        }
        let w = &self.weights;
        let qs = (w.q + w.q.transpose()) * 0.5;
        let rs = (w.r + w.r.transpose()) * 0.5;
        if qs.symmetric_eigenvalues().min() < -1e-12 {
            return Err(Error::validation("Q must be positive semidefinite"));
        }
        if rs.symmetric_eigenvalues().min() <= 0.0 {
            return Err(Error::validation("R must be positive definite"));
        }
        if w.w_social < 0.0 || w.w_obstacle < 0.0 || w.d_obstacle < 0.0 || w.w_bounds < 0.0 {
            return Err(Error::validation(
                "cost weights and d_o must be non-negative",
            ));
        }
        if self.goals.iter().any(|g| !g.is_finite()) {
            return Err(Error::validation("non-finite goal"));
        }
        if self.speed_caps.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::validation("speed caps must be positive"));
        }
        Ok(())
    }
}

/// Open-loop Nash strategy with its rollout and diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashSolution {
    /// Per-agent control sequences of length `horizon`.
    pub controls: Vec<Vec<Control>>,
    pub trajectories: Vec<Trajectory>,
    pub costs: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_update_norm: f64,
    /// Final Nash residual: norm of the projected own-control gradients.
    #[serde(default)]
    pub residual: f64,
    #[serde(skip)]
    pub history: Vec<IterationStat>,
}

/// One accepted solver iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationStat {
    pub total_cost: f64,
    pub residual: f64,
    pub step_size: f64,
}

impl NashSolution {
    pub fn first_controls(&self) -> Vec<Control> {
        self.controls.iter().map(|c| c[0]).collect()
    }
}
