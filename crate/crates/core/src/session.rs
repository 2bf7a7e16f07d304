//! One interaction loop: predict, plan, advance robot and humans together,
//! observe, update. Shared by the offline simulator and the live service.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{step_dynamics, AgentState, Control, JointState, Obstacle, Trajectory, Vec2};
use crate::planner::{execute_first, plan_with_warm, PlanResult, PlannerConfig};
use crate::predictor::{PredictionBundle, Predictor};

/// Static scene of a session: agent 0 is the robot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub starts: Vec<Vec2>,
    pub goals: Vec<Vec2>,
    pub obstacle: Obstacle,
    /// Executed speed cap per agent (m/s).
    pub speed_caps: Vec<f64>,
    pub dt: f64,
    pub goal_radius: f64,
}

impl World {
    pub fn validate(&self) -> Result<()> {
        let n = self.starts.len();
        if n < 2 || self.goals.len() != n || self.speed_caps.len() != n {
            return Err(Error::validation(
                "world needs >= 2 agents with one goal and cap each",
            ));
        }
        if !(self.dt > 0.0) || !(self.goal_radius > 0.0) {
            return Err(Error::validation("dt and goal radius must be > 0"));
        }
        if self.speed_caps.iter().any(|&c| !(c > 0.0)) {
            return Err(Error::validation("speed caps must be > 0"));
        }
        Ok(())
    }

    pub fn initial_state(&self) -> JointState {
        JointState {
            agents: self.starts.iter().map(|&p| AgentState::from(p)).collect(),
            timestep_index: 0,
            dt: self.dt,
        }
    }

    pub fn all_at_goal(&self, joint: &JointState) -> bool {
        (0..joint.len()).all(|a| joint.position(a).distance(self.goals[a]) <= self.goal_radius)
    }
}

/// Robot decision maker used by [`Session::run_step`].
pub trait RobotPlanner: Send {
    fn plan(
        &mut self,
        joint: &JointState,
        bundle: &PredictionBundle,
        world: &World,
    ) -> Result<PlanResult>;
    fn start_round(&mut self) {}
}

/// Sampling planner, re-seeded every step from the configured seed, the
/// round and the timestep.
#[derive(Debug, Clone)]
pub struct SamplingPlanner {
    pub cfg: PlannerConfig,
    pub round: usize,
    previous: Option<Vec<Control>>,
}

impl SamplingPlanner {
    pub fn new(cfg: PlannerConfig) -> Self {
        Self {
            cfg,
            round: 0,
            previous: None,
        }
    }
}

impl RobotPlanner for SamplingPlanner {
    fn plan(
        &mut self,
        joint: &JointState,
        bundle: &PredictionBundle,
        world: &World,
    ) -> Result<PlanResult> {
        let cfg = PlannerConfig {
            seed: self
                .cfg
                .seed
                .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                .wrapping_add((self.round as u64) << 32)
                .wrapping_add(joint.timestep_index as u64),
            speed_cap: self.cfg.speed_cap.min(world.speed_caps[0]),
            dt: world.dt,
            ..self.cfg.clone()
        };
        let r = plan_with_warm(
            joint.agents[0],
            &bundle.predicted_humans,
            world.goals[0],
            &world.obstacle,
            &cfg,
            self.previous.as_deref(),
        )?;
        self.previous = Some(r.controls.clone());
        Ok(r)
    }

    fn start_round(&mut self) {
        self.previous = None;
        self.round += 1;
    }
}

/// Planner that never moves the robot.
#[derive(Debug, Clone, Default)]
pub struct StationaryPlanner;

impl RobotPlanner for StationaryPlanner {
    fn plan(
        &mut self,
        joint: &JointState,
        _bundle: &PredictionBundle,
        world: &World,
    ) -> Result<PlanResult> {
        let p = joint.position(0);
        Ok(PlanResult {
            controls: vec![Control::ZERO],
            trajectory: Trajectory::from_positions(&[p], joint.timestep_index + 1, world.dt)?,
            cost: 0.0,
            feasible: true,
            min_clearance: f64::INFINITY,
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepFlags {
    pub prediction_fallback: bool,
    pub solver_converged: bool,
    pub solver_iterations: usize,
    pub planner_feasible: bool,
    /// Reason the belief update was skipped, if it was.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub update_skipped: Option<String>,
    /// The human control came from a fallback rather than its own model.
    #[serde(default)]
    pub human_fallback: bool,
}

/// Log record of one step. Positions are `[x, y]` pairs; `positions` holds
/// the state the step started from and `next_positions` the state it
/// produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub round: usize,
    pub timestep: usize,
    pub positions: Vec<Vec2>,
    pub next_positions: Vec<Vec2>,
    pub controls: Vec<Control>,
    pub predicted_humans: Vec<Vec<Vec2>>,
    #[serde(default)]
    pub predicted_robot_by_human: Option<Vec<Vec2>>,
    pub robot_plan: Vec<Vec2>,
    #[serde(default)]
    pub belief_mean: Option<Vec<f64>>,
    #[serde(default)]
    pub belief_cov_diag: Option<Vec<f64>>,
    pub planner_cost: f64,
    pub flags: StepFlags,
}

/// Round-scoped interaction state around one predictor.
pub struct Session {
    pub world: World,
    pub predictor: Box<dyn Predictor>,
    pub joint: JointState,
    /// Observed joint states of the current round, oldest first.
    pub history: Vec<JointState>,
    pub round: usize,
    pub last_bundle: Option<PredictionBundle>,
}

impl Session {
    pub fn new(world: World, predictor: Box<dyn Predictor>) -> Result<Self> {
        world.validate()?;
        let joint = world.initial_state();
        Ok(Self {
            history: vec![joint.clone()],
            joint,
            world,
            predictor,
            round: 0,
            last_bundle: None,
        })
    }

    /// Put every agent back at its start; the predictor keeps its belief.
    pub fn reset_round(&mut self) {
        self.joint = self.world.initial_state();
        self.history = vec![self.joint.clone()];
        self.last_bundle = None;
        self.predictor.start_round();
    }

    pub fn next_round(&mut self) {
        self.round += 1;
        self.reset_round();
    }

    pub fn done(&self) -> bool {
        self.world.all_at_goal(&self.joint)
    }

    /// Run one loop iteration. `human_controls` holds the executed control of
    /// every human (agents `1..n`) and must be decided from the current state
    /// only; the robot control is planned here. Both are clamped to their
    /// agents' caps and applied simultaneously. Nothing is committed when the
    /// prediction or the plan fails.
    pub fn run_step(
        &mut self,
        planner: &mut dyn RobotPlanner,
        human_controls: &[Control],
        human_fallback: bool,
    ) -> Result<StepRecord> {
        let n = self.joint.len();
        if human_controls.len() != n - 1 {
            return Err(Error::validation(format!(
                "expected {} human controls, got {}",
                n - 1,
                human_controls.len()
            )));
        }
        let bundle = self.predictor.predict(&self.history)?;
        let plan = planner.plan(&self.joint, &bundle, &self.world)?;

        let mut controls = Vec::with_capacity(n);
        controls.push(execute_first(&plan).clamped(self.world.speed_caps[0]));
        for (a, u) in human_controls.iter().enumerate() {
            controls.push(u.clamped(self.world.speed_caps[a + 1]));
        }
        let agents = self
            .joint
            .agents
            .iter()
            .zip(&controls)
            .map(|(&s, &u)| step_dynamics(s, u, self.world.dt))
            .collect::<Result<Vec<_>>>()?;
        let next = JointState {
            agents,
            timestep_index: self.joint.timestep_index + 1,
            dt: self.world.dt,
        };

        let report = self.predictor.observe(&self.joint, &next);
        let update_skipped = match report {
            Ok(r) => r.skipped,
            Err(e) => Some(e.to_string()),
        };
        let belief = self.predictor.belief();
        let record = StepRecord {
            round: self.round,
            timestep: self.joint.timestep_index,
            positions: self.joint.positions(),
            next_positions: next.positions(),
            controls,
            predicted_humans: bundle
                .predicted_humans
                .iter()
                .map(|t| t.positions().collect())
                .collect(),
            predicted_robot_by_human: bundle
                .predicted_robot_by_human
                .as_ref()
                .map(|t| t.positions().collect()),
            robot_plan: plan.trajectory.positions().collect(),
            belief_mean: belief.map(|b| b.mean.iter().copied().collect()),
            belief_cov_diag: belief.map(|b| b.covariance_diagonal()),
            planner_cost: plan.cost,
            flags: StepFlags {
                prediction_fallback: bundle.diagnostics.fallback,
                solver_converged: bundle.diagnostics.converged,
                solver_iterations: bundle.diagnostics.iterations,
                planner_feasible: plan.feasible,
                update_skipped,
                human_fallback,
            },
        };
        self.history.push(next.clone());
        self.joint = next;
        self.last_bundle = Some(bundle);
        Ok(record)
    }
}
