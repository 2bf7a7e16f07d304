//! Shared domain types: planar vectors, agent state, trajectories, obstacle
//! geometry and the single-integrator dynamics used by every agent.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default simulation timestep in seconds.
pub const DEFAULT_DT: f64 = 0.2;

/// Upper bound of the speed parameter box (m/s).
pub const V_MAX_UPPER: f64 = 2.0;
/// Lower bound used when clamping the speed parameter; v_max must stay > 0.
pub const V_MAX_LOWER: f64 = 0.05;
/// Upper bound of the social radius box (m).
pub const D_UPPER: f64 = 5.0;

/// Slack allowed on per-step displacement checks.
pub const EPS_DYN: f64 = 1e-9;

/// A point or velocity in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    /// Unit vector in the same direction, or `None` for (near) zero vectors.
    pub fn normalized(self) -> Option<Vec2> {
        let n = self.norm();
        (n > 1e-12).then(|| self / n)
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    /// Radially scale down so that the norm does not exceed `cap`.
    pub fn clamp_norm(self, cap: f64) -> Vec2 {
        let n = self.norm();
        if n > cap && n > 0.0 {
            self * (cap / n)
        } else {
            self
        }
    }
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2::new(v[0], v[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Div<f64> for Vec2 {
    type Output = Vec2;
    fn div(self, s: f64) -> Vec2 {
        Vec2::new(self.x / s, self.y / s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Position of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentState {
    pub position: Vec2,
}

impl AgentState {
    pub const fn new(x: f64, y: f64) -> Self {
        Self {
            position: Vec2::new(x, y),
        }
    }
}

impl From<Vec2> for AgentState {
    fn from(position: Vec2) -> Self {
        Self { position }
    }
}

/// Velocity command of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Control {
    pub velocity: Vec2,
}

impl Control {
    pub const ZERO: Control = Control {
        velocity: Vec2::ZERO,
    };

    pub const fn new(vx: f64, vy: f64) -> Self {
        Self {
            velocity: Vec2::new(vx, vy),
        }
    }

    pub fn clamped(self, cap: f64) -> Control {
        Control {
            velocity: self.velocity.clamp_norm(cap),
        }
    }
}

impl From<Vec2> for Control {
    fn from(velocity: Vec2) -> Self {
        Self { velocity }
    }
}

/// Positions of all agents at one timestep. Agent 0 is always the robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub agents: Vec<AgentState>,
    pub timestep_index: usize,
    pub dt: f64,
}

impl JointState {
    pub fn new(agents: Vec<AgentState>, timestep_index: usize, dt: f64) -> Result<Self> {
        let js = Self {
            agents,
            timestep_index,
            dt,
        };
        js.validate()?;
        Ok(js)
    }

    pub fn from_positions(positions: &[Vec2], dt: f64) -> Result<Self> {
        Self::new(positions.iter().map(|&p| p.into()).collect(), 0, dt)
    }

    /// Scene-level validation: at least two agents (robot first), finite
    /// positions, positive dt.
    pub fn validate(&self) -> Result<()> {
        self.check_finite()?;
        if self.agents.len() < 2 {
            return Err(Error::validation(format!(
                "joint state needs at least 2 agents, got {}",
                self.agents.len()
            )));
        }
        Ok(())
    }

    /// Finite positions and positive dt; game instances may hold a single player.
    pub fn check_finite(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::validation(format!(
                "dt must be > 0, got {}",
                self.dt
            )));
        }
        if self.agents.iter().any(|a| !a.position.is_finite()) {
            return Err(Error::validation("non-finite agent position"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }

    pub fn position(&self, agent: usize) -> Vec2 {
        self.agents[agent].position
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.agents.iter().map(|a| a.position).collect()
    }

    /// Positions stacked as `[x0, y0, x1, y1, ...]`.
    pub fn stacked(&self) -> Vec<f64> {
        self.agents
            .iter()
            .flat_map(|a| [a.position.x, a.position.y])
            .collect()
    }
}

/// Timestamped state sequence of one agent at a fixed dt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<AgentState>,
    pub start_index: usize,
    pub dt: f64,
}

impl Trajectory {
    pub fn new(states: Vec<AgentState>, start_index: usize, dt: f64) -> Result<Self> {
        if states.is_empty() {
            return Err(Error::validation("trajectory must be non-empty"));
        }
        Ok(Self {
            states,
            start_index,
            dt,
        })
    }

    pub fn from_positions(positions: &[Vec2], start_index: usize, dt: f64) -> Result<Self> {
        Self::new(
            positions.iter().map(|&p| p.into()).collect(),
            start_index,
            dt,
        )
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn position(&self, k: usize) -> Vec2 {
        self.states[k].position
    }

    pub fn positions(&self) -> impl Iterator<Item = Vec2> + '_ {
        self.states.iter().map(|s| s.position)
    }

    /// Position at step `k`, holding the last state beyond the end.
    pub fn position_or_last(&self, k: usize) -> Vec2 {
        self.states[k.min(self.states.len() - 1)].position
    }

    /// Checks `‖p_{k+1} − p_k‖ ≤ cap·dt + eps` for consecutive states.
    pub fn respects_speed(&self, cap: f64, eps: f64) -> bool {
        self.states
            .windows(2)
            .all(|w| w[0].position.distance(w[1].position) <= cap * self.dt + eps)
    }
}

/// A line segment between two distinct endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub fn new(a: Vec2, b: Vec2) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) {
            return Err(Error::validation("segment endpoints must be finite"));
        }
        if a.distance(b) <= 0.0 {
            return Err(Error::validation("segment has zero length"));
        }
        Ok(Self { a, b })
    }

    pub fn closest_point(&self, p: Vec2) -> Vec2 {
        closest_point_on_segment(p, self.a, self.b)
    }

    pub fn distance(&self, p: Vec2) -> f64 {
        p.distance(self.closest_point(p))
    }
}

/// Closest point to `p` on segment `a`–`b`; degenerate segments collapse to `a`.
pub fn closest_point_on_segment(p: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 <= 0.0 {
        return a;
    }
    let t = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}

/// Static obstacle made of line segments.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "Vec<[[f64; 2]; 2]>", into = "Vec<[[f64; 2]; 2]>")]
pub struct Obstacle {
    segments: Vec<Segment>,
}

impl Obstacle {
    pub fn new(segments: Vec<Segment>) -> Self {
        Self { segments }
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_endpoints(pairs: &[([f64; 2], [f64; 2])]) -> Result<Self> {
        let segments = pairs
            .iter()
            .map(|(a, b)| Segment::new((*a).into(), (*b).into()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Closest point on the obstacle and its distance; `None` when empty.
    pub fn closest(&self, p: Vec2) -> Option<(Vec2, f64)> {
        self.segments
            .iter()
            .map(|s| {
                let c = s.closest_point(p);
                (c, p.distance(c))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

impl TryFrom<Vec<[[f64; 2]; 2]>> for Obstacle {
    type Error = Error;
    fn try_from(raw: Vec<[[f64; 2]; 2]>) -> Result<Self> {
        let pairs: Vec<_> = raw.into_iter().map(|[a, b]| (a, b)).collect();
        Obstacle::from_endpoints(&pairs)
    }
}

impl From<Obstacle> for Vec<[[f64; 2]; 2]> {
    fn from(o: Obstacle) -> Self {
        o.segments
            .iter()
            .map(|s| [s.a.into(), s.b.into()])
            .collect()
    }
}

/// Axis-aligned world bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub min: Vec2,
    pub max: Vec2,
}

impl Bounds {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Self { min, max }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }
}

/// Behavioural parameters of one agent: speed limit and preferred social radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub v_max: f64,
    pub d: f64,
}

impl AgentParams {
    pub const fn new(v_max: f64, d: f64) -> Self {
        Self { v_max, d }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_max > 0.0 && self.v_max <= V_MAX_UPPER) {
            return Err(Error::validation(format!(
                "v_max must lie in (0, {V_MAX_UPPER}], got {}",
                self.v_max
            )));
        }
        if !(self.d >= 0.0 && self.d <= D_UPPER) {
            return Err(Error::validation(format!(
                "d must lie in [0, {D_UPPER}], got {}",
                self.d
            )));
        }
        Ok(())
    }

    /// Project into the estimation box.
    pub fn clamped(self) -> Self {
        Self {
            v_max: self.v_max.clamp(V_MAX_LOWER, V_MAX_UPPER),
            d: self.d.clamp(0.0, D_UPPER),
        }
    }
}

/// Per-agent parameters for every agent, robot included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BehaviorParams {
    pub per_agent: Vec<AgentParams>,
}

impl BehaviorParams {
    pub fn new(per_agent: Vec<AgentParams>) -> Result<Self> {
        let p = Self { per_agent };
        for a in &p.per_agent {
            a.validate()?;
        }
        Ok(p)
    }

    pub fn uniform(n: usize, params: AgentParams) -> Self {
        Self {
            per_agent: vec![params; n],
        }
    }

    pub fn len(&self) -> usize {
        self.per_agent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_agent.is_empty()
    }

    /// Flattened `[v_max_0, d_0, v_max_1, d_1, ...]`.
    pub fn flatten(&self) -> Vec<f64> {
        self.per_agent.iter().flat_map(|p| [p.v_max, p.d]).collect()
    }

    /// Inverse of [`flatten`](Self::flatten), projecting into the box.
    pub fn from_flat_clamped(flat: &[f64]) -> Self {
        Self {
            per_agent: flat
                .chunks_exact(2)
                .map(|c| AgentParams::new(c[0], c[1]).clamped())
                .collect(),
        }
    }

    /// Effective speed caps: `min(v_max, scenario cap)` per agent. An empty
    /// `scenario_caps` slice means no scenario-level caps.
    pub fn speed_caps(&self, scenario_caps: &[f64]) -> Vec<f64> {
        self.per_agent
            .iter()
            .enumerate()
            .map(|(i, p)| match scenario_caps.get(i) {
                Some(&c) => p.v_max.min(c),
                None => p.v_max,
            })
            .collect()
    }
}

/// Single-integrator step: `position + velocity·dt`.
pub fn step_dynamics(state: AgentState, control: Control, dt: f64) -> Result<AgentState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::validation(format!("dt must be > 0, got {dt}")));
    }
    if !state.position.is_finite() || !control.velocity.is_finite() {
        return Err(Error::validation("non-finite state or control"));
    }
    Ok(AgentState {
        position: state.position + control.velocity * dt,
    })
}

/// Closest distance from `p` to the obstacle, `+∞` for an empty obstacle.
pub fn distance_to_obstacle(p: Vec2, obs: &Obstacle) -> f64 {
    obs.closest(p).map_or(f64::INFINITY, |(_, d)| d)
}

/// Integrates every agent's control sequence from `start`, radially clamping
/// each control to the agent's cap first. Returns one trajectory of `T` states
/// per agent (the start state excluded).
pub fn rollout(
    start: &JointState,
    controls: &[Vec<Control>],
    caps: &[f64],
) -> Result<Vec<Trajectory>> {
    if controls.len() != start.len() || caps.len() != start.len() {
        return Err(Error::validation(format!(
            "rollout: {} agents but {} control sequences and {} caps",
            start.len(),
            controls.len(),
            caps.len()
        )));
    }
    let horizon = controls.first().map_or(0, Vec::len);
    if horizon == 0 || controls.iter().any(|c| c.len() != horizon) {
        return Err(Error::validation(
            "rollout: control sequences must share one non-zero horizon",
        ));
    }
    controls
        .iter()
        .zip(caps)
        .enumerate()
        .map(|(i, (seq, &cap))| {
            let mut state = start.agents[i];
            let mut states = Vec::with_capacity(horizon);
            for &u in seq {
                state = step_dynamics(state, u.clamped(cap), start.dt)?;
                states.push(state);
            }
            Trajectory::new(states, start.timestep_index + 1, start.dt)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_dynamics_examples() {
        let s = step_dynamics(AgentState::new(0.0, 0.0), Control::new(1.0, 0.0), 0.2).unwrap();
        assert_eq!(s.position, Vec2::new(0.2, 0.0));
        let s = step_dynamics(AgentState::new(1.0, 2.0), Control::ZERO, 0.2).unwrap();
        assert_eq!(s.position, Vec2::new(1.0, 2.0));
    }

    #[test]
    fn step_dynamics_repeated_matches_repeated_addition() {
        let mut s = AgentState::new(-4.0, 0.0);
        let mut oracle = -4.0_f64;
        for _ in 0..40 {
            s = step_dynamics(s, Control::new(1.0, 0.0), 0.2).unwrap();
            oracle += 1.0 * 0.2;
        }
        assert_eq!(s.position.x, oracle);
        assert!((s.position.x - 4.0).abs() < 1e-12);
        assert_eq!(s.position.y, 0.0);
    }

    #[test]
    fn step_dynamics_rejects_bad_input() {
        assert!(step_dynamics(AgentState::new(f64::NAN, 0.0), Control::ZERO, 0.2).is_err());
        assert!(step_dynamics(
            AgentState::new(0.0, 0.0),
            Control::new(f64::INFINITY, 0.0),
            0.2
        )
        .is_err());
        assert!(step_dynamics(AgentState::new(0.0, 0.0), Control::ZERO, 0.0).is_err());
    }

    #[test]
    fn obstacle_distance_examples() {
        let obs = Obstacle::from_endpoints(&[([-1.0, 0.0], [1.0, 0.0])]).unwrap();
        assert_eq!(distance_to_obstacle(Vec2::new(0.0, 1.0), &obs), 1.0);
        assert_eq!(distance_to_obstacle(Vec2::new(2.0, 0.0), &obs), 1.0);
        assert!(distance_to_obstacle(Vec2::new(0.3, 0.0), &obs) < 1e-12);
        assert_eq!(
            distance_to_obstacle(Vec2::new(0.3, 0.0), &Obstacle::empty()),
            f64::INFINITY
        );
    }

    #[test]
    fn tiny_segment_matches_dense_sampling() {
        let a = Vec2::new(0.0, 0.0);
        let b = Vec2::new(0.0, 0.001);
        let obs = Obstacle::new(vec![Segment::new(a, b).unwrap()]);
        let p = Vec2::new(3.0, 4.0);
        let oracle = (0..=1000)
            .map(|i| p.distance(a + (b - a) * (i as f64 / 1000.0)))
            .fold(f64::INFINITY, f64::min);
        let d = distance_to_obstacle(p, &obs);
        assert!((d - oracle).abs() < 1e-9);
        assert!((d - 5.0).abs() < 1e-3);
    }

    #[test]
    fn zero_length_segment_rejected() {
        assert!(Segment::new(Vec2::new(1.0, 1.0), Vec2::new(1.0, 1.0)).is_err());
        assert!(Obstacle::from_endpoints(&[([0.0, 0.0], [0.0, 0.0])]).is_err());
    }

    #[test]
    fn rollout_zero_controls_is_constant() {
        let start =
            JointState::from_positions(&[Vec2::new(1.0, 2.0), Vec2::new(-3.0, 0.5)], 0.2).unwrap();
        let controls = vec![vec![Control::ZERO; 5]; 2];
        let trajs = rollout(&start, &controls, &[1.0, 1.0]).unwrap();
        for (i, t) in trajs.iter().enumerate() {
            assert_eq!(t.len(), 5);
            assert!(t.positions().all(|p| p == start.position(i)));
        }
    }

    #[test]
    fn rollout_clamps_before_integrating() {
        let start =
            JointState::from_positions(&[Vec2::new(0.0, 0.0), Vec2::new(5.0, 5.0)], 0.2).unwrap();
        let controls = vec![vec![Control::new(2.0, 0.0); 3], vec![Control::ZERO; 3]];
        let trajs = rollout(&start, &controls, &[1.0, 1.0]).unwrap();
        let xs: Vec<f64> = trajs[0].positions().map(|p| p.x).collect();
        // hand clamp-then-integrate: 2.0 clamps to 1.0, 1.0·0.2 per step
        let mut x = 0.0;
        for got in xs {
            x += 1.0 * 0.2;
            assert!((got - x).abs() < 1e-15);
        }
    }

    #[test]
    fn rollout_rejects_mismatched_horizons() {
        let start = JointState::from_positions(&[Vec2::ZERO, Vec2::new(1.0, 0.0)], 0.2).unwrap();
        let controls = vec![vec![Control::ZERO; 3], vec![Control::ZERO; 4]];
        assert!(rollout(&start, &controls, &[1.0, 1.0]).is_err());
    }

    #[test]
    fn joint_state_requires_two_agents() {
        assert!(JointState::from_positions(&[Vec2::ZERO], 0.2).is_err());
        assert!(JointState::from_positions(&[Vec2::ZERO, Vec2::ZERO], -0.1).is_err());
    }

    #[test]
    fn obstacle_json_round_trip() {
        let obs = Obstacle::from_endpoints(&[([0.0, -5.0], [0.0, -0.6]), ([0.0, 0.6], [0.0, 5.0])])
            .unwrap();
        let s = serde_json::to_string(&obs).unwrap();
        assert_eq!(s, "[[[0.0,-5.0],[0.0,-0.6]],[[0.0,0.6],[0.0,5.0]]]");
        let back: Obstacle = serde_json::from_str(&s).unwrap();
        assert_eq!(back, obs);
        assert!(serde_json::from_str::<Obstacle>("[[[1.0,1.0],[1.0,1.0]]]").is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn vec2() -> impl Strategy<Value = Vec2> {
            (-10.0..10.0f64, -10.0..10.0f64).prop_map(|(x, y)| Vec2::new(x, y))
        }

        proptest! {
            #[test]
            fn step_is_exact(p in vec2(), v in vec2(), dt in 0.01..1.0f64) {
                let s = step_dynamics(p.into(), v.into(), dt).unwrap();
                prop_assert_eq!(s.position, p + v * dt);
            }

            #[test]
            fn rollout_respects_caps(
                p0 in vec2(), p1 in vec2(),
                us in proptest::collection::vec((vec2(), vec2()), 1..15),
                c0 in 0.1..2.0f64, c1 in 0.1..2.0f64,
            ) {
                let start = JointState::from_positions(&[p0, p1], 0.2).unwrap();
                let controls = vec![
                    us.iter().map(|u| Control::from(u.0)).collect::<Vec<_>>(),
                    us.iter().map(|u| Control::from(u.1)).collect::<Vec<_>>(),
                ];
                let trajs = rollout(&start, &controls, &[c0, c1]).unwrap();
                for (t, cap) in trajs.iter().zip([c0, c1]) {
                    prop_assert_eq!(t.len(), us.len());
                    prop_assert!(t.respects_speed(cap, EPS_DYN));
                }
                prop_assert!(start.position(0).distance(trajs[0].position(0)) <= c0 * 0.2 + EPS_DYN);
            }

            #[test]
            fn distance_zero_iff_on_segment(a in vec2(), b in vec2(), t in 0.0..1.0f64, off in 1e-3..2.0f64) {
                prop_assume!(a.distance(b) > 1e-3);
                let obs = Obstacle::new(vec![Segment::new(a, b).unwrap()]);
                let on = a + (b - a) * t;
                prop_assert!(distance_to_obstacle(on, &obs) < 1e-9);
                let normal = (b - a).perp().normalized().unwrap();
                prop_assert!(distance_to_obstacle(on + normal * off, &obs) > 1e-9);
            }
        }
    }
}
