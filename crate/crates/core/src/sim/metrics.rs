//! Per-round evaluation metrics, computed from realized and predicted
//! trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{closest_point_on_segment, Trajectory, Vec2};
use crate::session::StepRecord;

/// Distance below which a robot–human pair counts as a collision (m).
pub const COLLISION_DISTANCE: f64 = 0.5;

/// Mean Euclidean distance over matched steps; the longer trajectory is
/// truncated to the shorter one.
pub fn compute_ade(truth: &Trajectory, predicted: &Trajectory) -> Result<f64> {
    ade_points(
        &truth.positions().collect::<Vec<_>>(),
        &predicted.positions().collect::<Vec<_>>(),
    )
}

pub(crate) fn ade_points(truth: &[Vec2], predicted: &[Vec2]) -> Result<f64> {
    let n = truth.len().min(predicted.len());
    if n == 0 {
        return Err(Error::validation("ADE of an empty trajectory"));
    }
    Ok(truth
        .iter()
        .zip(predicted)
        .map(|(a, b)| a.distance(*b))
        .sum::<f64>()
        / n as f64)
}

/// Mean distance from the robot positions to the straight segment from
/// `start` to `goal`.
pub fn compute_detour(robot: &Trajectory, start: Vec2, goal: Vec2) -> f64 {
    let ps: Vec<Vec2> = robot.positions().collect();
    detour_points(&ps, start, goal)
}

pub(crate) fn detour_points(ps: &[Vec2], start: Vec2, goal: Vec2) -> f64 {
    if ps.is_empty() {
        return 0.0;
    }
    ps.iter()
        .map(|&p| p.distance(closest_point_on_segment(p, start, goal)))
        .sum::<f64>()
        / ps.len() as f64
}

/// Smallest robot–human distance over aligned timesteps.
pub fn compute_min_distance(robot: &Trajectory, humans: &[Trajectory]) -> f64 {
    let r: Vec<Vec2> = robot.positions().collect();
    let hs: Vec<Vec<Vec2>> = humans.iter().map(|h| h.positions().collect()).collect();
    min_distance_points(&r, &hs)
}

pub(crate) fn min_distance_points(robot: &[Vec2], humans: &[Vec<Vec2>]) -> f64 {
    humans
        .iter()
        .flat_map(|h| robot.iter().zip(h).map(|(a, b)| a.distance(*b)))
        .fold(f64::INFINITY, f64::min)
}

/// First step index within `radius` of `goal`; `None` if never reached.
pub fn compute_time_to_goal(robot: &Trajectory, goal: Vec2, radius: f64) -> Option<usize> {
    robot.positions().position(|p| p.distance(goal) <= radius)
}

/// Metrics of one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: String,
    pub predictor: String,
    /// 1-based round number.
    pub round: usize,
    /// Per-human ADE (m).
    pub ade: Vec<f64>,
    pub ade_robot_by_human: Option<f64>,
    pub detour: f64,
    pub min_distance: f64,
    /// Steps until the robot reached its goal radius.
    pub time_to_goal: Option<usize>,
    /// Number of timesteps with some robot–human distance below 0.5 m.
    pub collisions: usize,
}

impl MetricsReport {
    pub const CSV_HEADER: &'static str =
        "scenario,predictor,round,ade_h1,ade_h2,ade_robot_by_human,detour,min_distance,time_to_goal,collisions";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.scenario,
            self.predictor,
            self.round,
            opt(self.ade.first().copied()),
            opt(self.ade.get(1).copied()),
            opt(self.ade_robot_by_human),
            self.detour,
            self.min_distance,
            self.time_to_goal.map_or(String::new(), |t| t.to_string()),
            self.collisions
        )
    }

    pub fn collided(&self) -> bool {
        self.min_distance < COLLISION_DISTANCE
    }
}

/// Realized positions of every agent over a round: `[agent][t]`, including
/// the start state and the final state.
pub fn realized_from_records(records: &[StepRecord]) -> Vec<Vec<Vec2>> {
    let Some(first) = records.first() else {
        return Vec::new();
    };
    let n = first.positions.len();
    (0..n)
        .map(|a| {
            let mut v: Vec<Vec2> = records.iter().map(|r| r.positions[a]).collect();
            v.push(records.last().expect("non-empty").next_positions[a]);
            v
        })
        .collect()
}

/// Mean ADE over all predictions issued in a round, each compared with the
/// realized trajectory from the following step onward (truncated at round end).
fn round_ade<'a>(
    records: &'a [StepRecord],
    realized: &[Vec2],
    pick: impl Fn(&'a StepRecord) -> Option<&'a [Vec2]>,
) -> Option<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, r) in records.iter().enumerate() {
        let Some(pred) = pick(r) else { continue };
        let truth = &realized[(k + 1).min(realized.len())..];
        if let Ok(v) = ade_points(truth, pred) {
            sum += v;
            count += 1;
        }
    }
    (count > 0).then(|| sum / count as f64)
}

/// Recompute every metric of a round from its step records.
pub fn metrics_from_records(
    scenario: &str,
    predictor: &str,
    round: usize,
    records: &[StepRecord],
    robot_start: Vec2,
    robot_goal: Vec2,
    goal_radius: f64,
) -> MetricsReport {
    let realized = realized_from_records(records);
    if realized.is_empty() {
        return MetricsReport {
            scenario: scenario.into(),
            predictor: predictor.into(),
            round,
            ade: Vec::new(),
            ade_robot_by_human: None,
            detour: 0.0,
            min_distance: f64::INFINITY,
            time_to_goal: None,
            collisions: 0,
        };
    }
    let n = realized.len();
    let ade = (1..n)
        .map(|h| {
            round_ade(records, &realized[h], |r| {
                r.predicted_humans.get(h - 1).map(Vec::as_slice)
            })
            .unwrap_or(0.0)
        })
        .collect();
    let ade_robot_by_human = round_ade(records, &realized[0], |r| {
        r.predicted_robot_by_human.as_deref()
    });
    let robot = &realized[0];
    let humans = &realized[1..];
    let collisions = (0..robot.len())
        .filter(|&t| {
            humans
                .iter()
                .any(|h| robot[t].distance(h[t]) < COLLISION_DISTANCE)
        })
        .count();
    MetricsReport {
        scenario: scenario.into(),
        predictor: predictor.into(),
        round,
        ade,
        ade_robot_by_human,
        detour: detour_points(robot, robot_start, robot_goal),
        min_distance: min_distance_points(robot, humans),
        time_to_goal: robot
            .iter()
            .position(|p| p.distance(robot_goal) <= goal_radius),
        collisions,
    }
}
