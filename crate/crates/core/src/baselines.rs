//! Stateless baseline predictors: constant velocity and Social Force.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AgentState, JointState, Obstacle, Trajectory, Vec2};

/// Extrapolate the last observed velocity for `horizon` steps. The returned
/// trajectory starts one step after the last history state. A single-state
/// history predicts zero velocity.
pub fn cv_predict(history: &Trajectory, horizon: usize) -> Result<Trajectory> {
    if history.is_empty() || horizon == 0 {
        return Err(Error::validation(
            "cv_predict needs a non-empty history and horizon",
        ));
    }
    let last = history.position(history.len() - 1);
    let step = if history.len() >= 2 {
        last - history.position(history.len() - 2)
    } else {
        Vec2::ZERO
    };
    let states = (1..=horizon)
        .map(|k| AgentState::from(last + step * k as f64))
        .collect();
    Trajectory::new(states, history.start_index + history.len(), history.dt)
}

/// Social Force parameters. `radius` is the combined body radius entering the
/// exponential repulsion terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SocialForceParams {
    /// Dimensionless weight on the goal relaxation term.
    pub goal_gain: f64,
    pub neighbor_strength: f64,
    pub neighbor_range: f64,
    pub obstacle_strength: f64,
    pub obstacle_range: f64,
    /// Relaxation time (s).
    pub tau: f64,
    /// Desired (and maximum) speed (m/s).
    pub v_des: f64,
    pub radius: f64,
}

impl Default for SocialForceParams {
    fn default() -> Self {
        Self {
            goal_gain: 1.0,
            neighbor_strength: 3.0,
            neighbor_range: 0.4,
            obstacle_strength: 5.0,
            obstacle_range: 0.25,
            tau: 0.5,
            v_des: 1.0,
            radius: 0.5,
        }
    }
}

impl SocialForceParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.goal_gain,
            self.neighbor_strength,
            self.neighbor_range,
            self.obstacle_strength,
            self.obstacle_range,
            self.tau,
            self.v_des,
            self.radius,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::validation(
                "social force parameters must be positive",
            ))
        }
    }

    /// Exponential neighbour repulsion magnitude at distance `dist`.
    pub fn neighbor_magnitude(&self, dist: f64) -> f64 {
        self.neighbor_strength * ((self.radius - dist) / self.neighbor_range).exp()
    }

    pub fn obstacle_magnitude(&self, dist: f64) -> f64 {
        self.obstacle_strength * ((self.radius - dist) / self.obstacle_range).exp()
    }
}

/// Roll the Social Force model forward for `horizon` steps.
///
/// Agents listed in `active` follow the force model; every other agent keeps
/// its current velocity and acts only as a moving neighbour. Returns one
/// trajectory per entry of `active`, in that order, starting one step after
/// `joint`.
pub fn sf_predict(
    joint: &JointState,
    velocities: &[Vec2],
    goals: &[Vec2],
    obstacle: &Obstacle,
    params: &SocialForceParams,
    horizon: usize,
    active: &[usize],
) -> Result<Vec<Trajectory>> {
    params.validate()?;
    let n = joint.len();
    if velocities.len() != n || goals.len() != n {
        return Err(Error::validation(
            "sf_predict: velocities and goals must match agent count",
        ));
    }
    if active.iter().any(|&a| a >= n) {
        return Err(Error::validation("sf_predict: active agent out of range"));
    }
    if horizon == 0 {
        return Err(Error::validation("sf_predict: horizon must be >= 1"));
    }
    let dt = joint.dt;
    let mut pos = joint.positions();
    let mut vel = velocities.to_vec();
    let mut is_active = vec![false; n];
    active.iter().for_each(|&a| is_active[a] = true);
    let mut out: Vec<Vec<Vec2>> = vec![Vec::with_capacity(horizon); active.len()];

    for _ in 0..horizon {
        let acc: Vec<Vec2> = (0..n)
            .map(|i| {
                if is_active[i] {
                    force(i, &pos, &vel, goals, obstacle, params, dt)
                } else {
                    Vec2::ZERO
                }
            })
            .collect();
        for i in 0..n {
            if is_active[i] {
                vel[i] = (vel[i] + acc[i] * dt).clamp_norm(params.v_des);
            }
            pos[i] += vel[i] * dt;
        }
        for (slot, &a) in out.iter_mut().zip(active) {
            slot.push(pos[a]);
        }
    }
    out.iter()
        .map(|ps| Trajectory::from_positions(ps, joint.timestep_index + 1, dt))
        .collect()
}

fn force(
    i: usize,
    pos: &[Vec2],
    vel: &[Vec2],
    goals: &[Vec2],
    obstacle: &Obstacle,
    p: &SocialForceParams,
    dt: f64,
) -> Vec2 {
    let to_goal = goals[i] - pos[i];
    let goal_dir = to_goal.normalized().unwrap_or(Vec2::ZERO);
    // slow down on arrival instead of orbiting the goal
    let desired = goal_dir * p.v_des.min(to_goal.norm() / dt);
    let mut a = (desired - vel[i]) * (p.goal_gain / p.tau);

    for (j, &pj) in pos.iter().enumerate() {
        if j == i {
            continue;
        }
        let diff = pos[i] - pj;
        let dist = diff.norm();
        let dir = diff.normalized().unwrap_or_else(|| {
            let side = if i < j { 1.0 } else { -1.0 };
            goal_dir
                .normalized()
                .map_or(Vec2::new(0.0, side), |g| g.perp() * side)
        });
        a += dir * p.neighbor_magnitude(dist);
    }

    if let Some((c, dist)) = obstacle.closest(pos[i]) {
        if let Some(dir) = (pos[i] - c).normalized() {
            a += dir * p.obstacle_magnitude(dist);
        }
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(ps: &[Vec2]) -> Trajectory {
        Trajectory::from_positions(ps, 0, 0.2).unwrap()
    }

    #[test]
    fn cv_extrapolates() {
        let t = cv_predict(&traj(&[Vec2::ZERO, Vec2::new(0.2, 0.0)]), 3).unwrap();
        let xs: Vec<f64> = t.positions().map(|p| p.x).collect();
        assert!(
            (xs[0] - 0.4).abs() < 1e-15
                && (xs[1] - 0.6).abs() < 1e-15
                && (xs[2] - 0.8).abs() < 1e-15
        );
        assert_eq!(t.start_index, 2);
    }

    #[test]
    fn cv_single_state_is_stationary() {
        let t = cv_predict(&traj(&[Vec2::new(1.0, 2.0)]), 4).unwrap();
        assert!(t.positions().all(|p| p == Vec2::new(1.0, 2.0)));
    }

    #[test]
    fn repulsion_magnitude() {
        let p = SocialForceParams {
            neighbor_strength: 2.0,
            neighbor_range: 0.3,
            radius: 0.4,
            ..Default::default()
        };
        assert!((p.neighbor_magnitude(0.5) - 2.0 * (-1.0f64 / 3.0).exp()).abs() < 1e-12);
        assert!((p.neighbor_magnitude(0.5) - 1.433).abs() < 1e-3);
    }

    #[test]
    fn invalid_params_rejected() {
        let p = SocialForceParams {
            tau: 0.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
    }
}
