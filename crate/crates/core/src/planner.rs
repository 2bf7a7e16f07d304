//! Sampling receding-horizon planner for the robot.
//!
//! Each sample is a goal-relative policy: at every step the robot heads at an
//! angular offset from the current goal direction with a fraction of its speed
//! cap. Offsets and speed fractions follow a seeded random walk, so samples
//! range from straight-to-goal through wide detours to waiting. Samples that
//! come closer than `r_col` to a predicted human, or closer than
//! `obstacle_clearance` to the obstacle, are infeasible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AgentState, Control, Obstacle, Trajectory, Vec2};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub samples: usize,
    pub goal_weight: f64,
    pub effort_weight: f64,
    pub clearance_weight: f64,
    /// Clearance below which the soft clearance cost starts (m).
    pub preferred_clearance: f64,
    /// Hard minimum distance to predicted humans (m).
    pub r_col: f64,
    /// Hard minimum distance to obstacle segments (m).
    pub obstacle_clearance: f64,
    pub speed_cap: f64,
    pub dt: f64,
    /// Spread of the initial heading offset (rad).
    pub heading_sigma: f64,
    /// Per-step heading random-walk increment (rad).
    pub heading_walk: f64,
    pub seed: u64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 12,
            samples: 256,
            goal_weight: 1.0,
            effort_weight: 0.1,
            clearance_weight: 10.0,
            preferred_clearance: 1.0,
            r_col: 0.5,
            obstacle_clearance: 0.3,
            speed_cap: 1.0,
            dt: 0.2,
            heading_sigma: 0.8,
            heading_walk: 0.15,
            seed: 0,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 || self.samples < 1 {
            return Err(Error::validation(
                "planner horizon and samples must be >= 1",
            ));
        }
        if !(self.r_col > 0.0) || !(self.speed_cap > 0.0) || !(self.dt > 0.0) {
            return Err(Error::validation(
                "planner r_col, speed_cap and dt must be > 0",
            ));
        }
        if self.obstacle_clearance < 0.0 || self.heading_sigma < 0.0 || self.heading_walk < 0.0 {
            return Err(Error::validation(
                "planner clearances and spreads must be non-negative",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanResult {
    pub controls: Vec<Control>,
    pub trajectory: Trajectory,
    pub cost: f64,
    pub feasible: bool,
    /// Smallest distance to any predicted human over the horizon.
    pub min_clearance: f64,
}

/// First control of a plan.
pub fn execute_first(plan: &PlanResult) -> Control {
    plan.controls[0]
}

struct Sample {
    headings: Vec<f64>,
    speeds: Vec<f64>,
}

struct Scored {
    controls: Vec<Control>,
    positions: Vec<Vec2>,
    cost: f64,
    feasible: bool,
    clearance: f64,
}

/// Plan from `robot` toward `goal` against the predicted human trajectories.
pub fn plan(
    robot: AgentState,
    predicted_humans: &[Trajectory],
    goal: Vec2,
    obstacle: &Obstacle,
    cfg: &PlannerConfig,
) -> Result<PlanResult> {
    plan_with_warm(robot, predicted_humans, goal, obstacle, cfg, None)
}

/// Like [`plan`], additionally evaluating the previous plan shifted by one
/// step as an extra open-loop sample.
pub fn plan_with_warm(
    robot: AgentState,
    predicted_humans: &[Trajectory],
    goal: Vec2,
    obstacle: &Obstacle,
    cfg: &PlannerConfig,
    previous: Option<&[Control]>,
) -> Result<PlanResult> {
    cfg.validate()?;
    if !robot.position.is_finite() || !goal.is_finite() {
        return Err(Error::validation("non-finite robot state or goal"));
    }
    let samples = draw_samples(cfg);
    let mut scored: Vec<Scored> = samples
        .par_iter()
        .map(|s| {
            score(
                closed_loop(robot.position, goal, s, cfg),
                predicted_humans,
                goal,
                obstacle,
                cfg,
            )
        })
        .collect();
    if let Some(prev) = previous.filter(|p| !p.is_empty()) {
        let mut controls: Vec<Control> = prev.iter().skip(1).copied().collect();
        controls.resize(cfg.horizon, *prev.last().expect("non-empty"));
        controls.truncate(cfg.horizon);
        let controls: Vec<Control> = controls
            .into_iter()
            .map(|c| c.clamped(cfg.speed_cap))
            .collect();
        scored.push(score(
            open_loop(robot.position, controls, cfg),
            predicted_humans,
            goal,
            obstacle,
            cfg,
        ));
    }

    let best = scored
        .iter()
        .enumerate()
        .filter(|(_, s)| s.feasible)
        .min_by(|(i, a), (j, b)| a.cost.total_cmp(&b.cost).then(i.cmp(j)))
        .or_else(|| {
            scored
                .iter()
                .enumerate()
                .max_by(|(i, a), (j, b)| a.clearance.total_cmp(&b.clearance).then(j.cmp(i)))
        })
        .map(|(i, _)| i)
        .expect("at least one sample");
    let s = scored.swap_remove(best);
    Ok(PlanResult {
        trajectory: Trajectory::from_positions(&s.positions, 1, cfg.dt)?,
        controls: s.controls,
        cost: s.cost,
        feasible: s.feasible,
        min_clearance: s.clearance,
    })
}

fn draw_samples(cfg: &PlannerConfig) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let t = cfg.horizon;
    let mut out = Vec::with_capacity(cfg.samples);
    // straight to goal at full speed, then standing still
    out.push(Sample {
        headings: vec![0.0; t],
        speeds: vec![1.0; t],
    });
    if cfg.samples > 1 {
        out.push(Sample {
            headings: vec![0.0; t],
            speeds: vec![0.0; t],
        });
    }
    let head0 = Normal::new(0.0, cfg.heading_sigma.max(1e-12)).expect("finite sigma");
    let walk = Normal::new(0.0, cfg.heading_walk.max(1e-12)).expect("finite sigma");
    let speed_walk = Normal::new(0.0, 0.1).expect("finite sigma");
    while out.len() < cfg.samples {
        let mut h = head0.sample(&mut rng);
        let mut s: f64 = if rng.random_bool(0.5) {
            1.0
        } else {
            rng.random_range(0.0..1.0)
        };
        let mut headings = Vec::with_capacity(t);
        let mut speeds = Vec::with_capacity(t);
        for _ in 0..t {
            headings.push(h);
            speeds.push(s);
            h += walk.sample(&mut rng);
            s = (s + speed_walk.sample(&mut rng)).clamp(0.0, 1.0);
        }
        out.push(Sample { headings, speeds });
    }
    out
}

fn rotate(v: Vec2, angle: f64) -> Vec2 {
    let (s, c) = angle.sin_cos();
    Vec2::new(c * v.x - s * v.y, s * v.x + c * v.y)
}

fn closed_loop(
    start: Vec2,
    goal: Vec2,
    s: &Sample,
    cfg: &PlannerConfig,
) -> (Vec<Control>, Vec<Vec2>) {
    let mut p = start;
    let mut controls = Vec::with_capacity(cfg.horizon);
    let mut positions = Vec::with_capacity(cfg.horizon);
    for (&h, &frac) in s.headings.iter().zip(&s.speeds) {
        let to_goal = goal - p;
        let vel = match to_goal.normalized() {
            Some(dir) => {
                let speed = (frac * cfg.speed_cap).min(to_goal.norm() / cfg.dt);
                rotate(dir, h) * speed
            }
            None => Vec2::ZERO,
        };
        let u = Control::from(vel).clamped(cfg.speed_cap);
        p += u.velocity * cfg.dt;
        controls.push(u);
        positions.push(p);
    }
    (controls, positions)
}

fn open_loop(
    start: Vec2,
    controls: Vec<Control>,
    cfg: &PlannerConfig,
) -> (Vec<Control>, Vec<Vec2>) {
    let mut p = start;
    let positions = controls
        .iter()
        .map(|u| {
            p += u.velocity * cfg.dt;
            p
        })
        .collect();
    (controls, positions)
}

fn score(
    (controls, positions): (Vec<Control>, Vec<Vec2>),
    humans: &[Trajectory],
    goal: Vec2,
    obstacle: &Obstacle,
    cfg: &PlannerConfig,
) -> Scored {
    let mut cost = 0.0;
    let mut feasible = true;
    let mut clearance = f64::INFINITY;
    for (k, (&p, u)) in positions.iter().zip(&controls).enumerate() {
        cost += cfg.goal_weight * p.distance(goal) + cfg.effort_weight * u.velocity.norm_squared();
        for h in humans {
            let d = p.distance(h.position_or_last(k));
            clearance = clearance.min(d);
            if d < cfg.r_col {
                feasible = false;
            }
            let gap = cfg.preferred_clearance - d;
            if gap > 0.0 {
                cost += cfg.clearance_weight * gap * gap;
            }
        }
        if let Some((_, d)) = obstacle.closest(p) {
            if d < cfg.obstacle_clearance {
                feasible = false;
            }
        }
    }
    Scored {
        controls,
        positions,
        cost,
        feasible,
        clearance,
    }
}
