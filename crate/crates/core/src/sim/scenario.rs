//! Scenario and experiment configuration, with the three built-in scenes.

use serde::{Deserialize, Serialize};

use crate::baselines::SocialForceParams;
use crate::error::{Error, Result};
use crate::game::{CostWeights, GameSpec, SolverOptions};
use crate::model::{AgentParams, BehaviorParams, Bounds, Obstacle, Vec2, DEFAULT_DT, V_MAX_UPPER};
use crate::planner::PlannerConfig;
use crate::predictor::PredictorKind;
use crate::session::World;
use crate::ukf::{BeliefState, NoiseConfig, UkfHyper};

/// Slowest and fastest scripted human speeds (m/s).
pub const HUMAN_SPEED_RANGE: (f64, f64) = (0.35, 1.2);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotConfig {
    pub start: Vec2,
    pub goal: Vec2,
    pub speed_cap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HumanConfig {
    pub start: Vec2,
    pub goal: Vec2,
    /// Ground-truth parameters for each round.
    pub schedule: Vec<AgentParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GameConfig {
    pub horizon: usize,
    pub weights: CostWeights,
    pub solver: SolverOptions,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            horizon: 12,
            weights: CostWeights::default(),
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BeliefInit {
    pub v_max: f64,
    pub d: f64,
    pub variance: f64,
}

impl Default for BeliefInit {
    fn default() -> Self {
        Self {
            v_max: 0.8,
            d: 1.5,
            variance: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSettings {
    /// Random-walk variance per parameter per step.
    pub process_var: f64,
    /// Position measurement variance (m²).
    pub measurement_var: f64,
    pub measurement_steps: usize,
}

impl Default for NoiseSettings {
    fn default() -> Self {
        Self {
            process_var: 2.5e-3,
            measurement_var: 1e-2,
            measurement_steps: 1,
        }
    }
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn default_max_steps() -> usize {
    150
}

fn default_goal_radius() -> f64 {
    0.3
}

fn default_robot_view() -> AgentParams {
    AgentParams::new(1.0, 1.0)
}

/// Everything needed to run an experiment. Round indices in `schedule` are
/// 0-based; reports number rounds from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub rounds: usize,
    #[serde(default = "default_max_steps")]
    pub max_steps: usize,
    #[serde(default = "default_goal_radius")]
    pub goal_radius: f64,
    pub robot: RobotConfig,
    pub humans: Vec<HumanConfig>,
    #[serde(default)]
    pub obstacle: Obstacle,
    #[serde(default)]
    pub bounds: Option<Bounds>,
    #[serde(default = "default_predictor")]
    pub predictor: PredictorKind,
    #[serde(default)]
    pub game: GameConfig,
    #[serde(default)]
    pub belief: BeliefInit,
    #[serde(default)]
    pub noise: NoiseSettings,
    #[serde(default)]
    pub ukf: UkfHyper,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub social_force: SocialForceParams,
    /// Parameters the scripted humans assume for the robot.
    #[serde(default = "default_robot_view")]
    pub robot_view: AgentParams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub reset_belief: bool,
    /// Live sessions report which agent crossed `x = 0` first.
    #[serde(default)]
    pub label_crossing: bool,
}

fn default_predictor() -> PredictorKind {
    PredictorKind::Atom
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds < 1 {
            return Err(Error::validation("rounds must be >= 1"));
        }
        if self.humans.is_empty() {
            return Err(Error::validation("at least one human is required"));
        }
        for (i, h) in self.humans.iter().enumerate() {
            if h.schedule.len() != self.rounds {
                return Err(Error::validation(format!(
                    "human {} schedule has {} entries for {} rounds",
                    i + 1,
                    h.schedule.len(),
                    self.rounds
                )));
            }
            for p in &h.schedule {
                p.validate()?;
                if p.v_max < HUMAN_SPEED_RANGE.0 - 1e-12 || p.v_max > HUMAN_SPEED_RANGE.1 + 1e-12 {
                    return Err(Error::validation(format!(
                        "scripted human speed {} outside [{}, {}]",
                        p.v_max, HUMAN_SPEED_RANGE.0, HUMAN_SPEED_RANGE.1
                    )));
                }
            }
        }
        if !(self.robot.speed_cap > 0.0) {
            return Err(Error::validation("robot speed cap must be > 0"));
        }
        self.robot_view.validate()?;
        self.social_force.validate()?;
        self.planner.validate()?;
        self.game_spec().validate()?;
        self.world().validate()
    }

    pub fn n_agents(&self) -> usize {
        1 + self.humans.len()
    }

    /// Truncate or extend (repeating the last entry) every schedule.
    pub fn with_rounds(mut self, rounds: usize) -> Self {
        self.rounds = rounds;
        for h in &mut self.humans {
            let last = *h.schedule.last().expect("validated schedule");
            h.schedule.resize(rounds, last);
        }
        self
    }

    pub fn goals(&self) -> Vec<Vec2> {
        std::iter::once(self.robot.goal)
            .chain(self.humans.iter().map(|h| h.goal))
            .collect()
    }

    pub fn starts(&self) -> Vec<Vec2> {
        std::iter::once(self.robot.start)
            .chain(self.humans.iter().map(|h| h.start))
            .collect()
    }

    /// Executed speed caps: the robot's cap, and the box limit for humans
    /// (scripted humans are limited by their own parameters).
    pub fn world(&self) -> World {
        let mut caps = vec![self.robot.speed_cap];
        caps.extend(std::iter::repeat_n(V_MAX_UPPER, self.humans.len()));
        World {
            starts: self.starts(),
            goals: self.goals(),
            obstacle: self.obstacle.clone(),
            speed_caps: caps,
            dt: self.dt,
            goal_radius: self.goal_radius,
        }
    }

    /// The internal-model game shared by the predictor and the scripted humans.
    pub fn game_spec(&self) -> GameSpec {
        let mut caps = vec![self.robot.speed_cap];
        caps.extend(std::iter::repeat_n(V_MAX_UPPER, self.humans.len()));
        GameSpec {
            goals: self.goals(),
            obstacle: self.obstacle.clone(),
            horizon: self.game.horizon,
            dt: self.dt,
            weights: self.game.weights.clone(),
            bounds: self.bounds,
            speed_caps: caps,
            solver: self.game.solver.clone(),
        }
    }

    /// Parameters the scripted humans use in `round` (0-based): their own
    /// ground truth and `robot_view` for the robot.
    pub fn true_params(&self, round: usize) -> BehaviorParams {
        let r = round.min(self.rounds - 1);
        BehaviorParams {
            per_agent: std::iter::once(self.robot_view)
                .chain(self.humans.iter().map(|h| h.schedule[r]))
                .collect(),
        }
    }

    pub fn initial_belief(&self) -> BeliefState {
        BeliefState::uniform(
            self.n_agents(),
            AgentParams::new(self.belief.v_max, self.belief.d),
            self.belief.variance,
        )
    }

    pub fn noise_config(&self) -> NoiseConfig {
        NoiseConfig::diagonal(
            self.n_agents(),
            self.noise.process_var,
            self.noise.measurement_var,
            self.noise.measurement_steps,
        )
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Built-in scenario by name: `exchange`, `corridor` or `doorway`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "exchange" => Ok(exchange()),
            "corridor" => Ok(corridor()),
            "doorway" => Ok(doorway()),
            other => Err(Error::validation(format!("unknown scenario '{other}'"))),
        }
    }

    pub const PRESETS: [&'static str; 3] = ["exchange", "corridor", "doorway"];
}

/// `rounds` values interpolated linearly from `a` to `b`.
pub fn linear_schedule(a: f64, b: f64, rounds: usize) -> Vec<f64> {
    if rounds == 1 {
        return vec![a];
    }
    (0..rounds)
        .map(|i| a + (b - a) * i as f64 / (rounds - 1) as f64)
        .collect()
}

fn zip_schedule(v: Vec<f64>, d: Vec<f64>) -> Vec<AgentParams> {
    v.into_iter()
        .zip(d)
        .map(|(v, d)| AgentParams::new(v, d))
        .collect()
}

fn base(name: &str, rounds: usize, robot: RobotConfig, humans: Vec<HumanConfig>) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        dt: DEFAULT_DT,
        rounds,
        max_steps: default_max_steps(),
        goal_radius: default_goal_radius(),
        planner: PlannerConfig {
            speed_cap: robot.speed_cap,
            ..Default::default()
        },
        robot,
        humans,
        obstacle: Obstacle::empty(),
        bounds: None,
        predictor: PredictorKind::Atom,
        game: GameConfig::default(),
        belief: BeliefInit::default(),
        noise: NoiseSettings::default(),
        ukf: UkfHyper::default(),
        social_force: SocialForceParams::default(),
        robot_view: default_robot_view(),
        seed: 0,
        reset_belief: false,
        label_crossing: false,
    }
}

/// Two-agent position exchange in open space; the human speeds up and keeps
/// less distance every round.
fn exchange() -> ScenarioConfig {
    let mut cfg = base(
        "exchange",
        8,
        RobotConfig {
            start: Vec2::new(-4.0, 0.0),
            goal: Vec2::new(4.0, 0.0),
            speed_cap: 1.0,
        },
        vec![HumanConfig {
            start: Vec2::new(4.0, 0.0),
            goal: Vec2::new(-4.0, 0.0),
            schedule: zip_schedule(linear_schedule(0.5, 1.2, 8), linear_schedule(2.0, 0.8, 8)),
        }],
    );
    cfg.bounds = Some(Bounds::new(Vec2::new(-5.0, -5.0), Vec2::new(5.0, 5.0)));
    cfg.social_force.neighbor_strength = 3.0;
    cfg.social_force.neighbor_range = 0.4;
    cfg
}

/// Three agents in a corridor: the robot overtakes a slowing human while a
/// second human comes the other way.
fn corridor() -> ScenarioConfig {
    let rounds = 8;
    let mut d1 = linear_schedule(1.0, 1.6, 4);
    d1.extend(linear_schedule(1.6, 0.8, 5).into_iter().skip(1));
    let mut cfg = base(
        "corridor",
        rounds,
        RobotConfig {
            start: Vec2::new(-4.0, 0.0),
            goal: Vec2::new(4.0, 0.0),
            speed_cap: 1.0,
        },
        vec![
            HumanConfig {
                start: Vec2::new(-2.5, 0.0),
                goal: Vec2::new(4.0, 0.4),
                schedule: zip_schedule(linear_schedule(0.9, 0.35, rounds), d1),
            },
            HumanConfig {
                start: Vec2::new(4.0, -0.4),
                goal: Vec2::new(-4.0, -0.4),
                schedule: zip_schedule(
                    linear_schedule(0.5, 1.2, rounds),
                    linear_schedule(2.0, 0.8, rounds),
                ),
            },
        ],
    );
    cfg.obstacle =
        Obstacle::from_endpoints(&[([-5.0, 1.0], [5.0, 1.0]), ([-5.0, -1.0], [5.0, -1.0])])
            .expect("valid walls");
    cfg.bounds = Some(Bounds::new(Vec2::new(-5.5, -1.0), Vec2::new(5.5, 1.0)));
    cfg.social_force.obstacle_strength = 5.0;
    cfg.social_force.obstacle_range = 0.25;
    cfg
}

/// Two agents negotiating a 1.2 m doorway in a wall; the human turns from
/// conservative to cooperative to aggressive.
fn doorway() -> ScenarioConfig {
    let phase = |v, d| std::iter::repeat_n(AgentParams::new(v, d), 5);
    let schedule = phase(0.35, 2.0)
        .chain(phase(0.7, 1.2))
        .chain(phase(1.2, 0.6))
        .collect();
    let mut cfg = base(
        "doorway",
        15,
        RobotConfig {
            start: Vec2::new(-3.0, 0.8),
            goal: Vec2::new(3.0, -0.8),
            speed_cap: 0.6,
        },
        vec![HumanConfig {
            start: Vec2::new(3.0, 0.8),
            goal: Vec2::new(-3.0, -0.8),
            schedule,
        }],
    );
    cfg.obstacle =
        Obstacle::from_endpoints(&[([0.0, 0.6], [0.0, 4.0]), ([0.0, -4.0], [0.0, -0.6])])
            .expect("valid wall");
    cfg.bounds = Some(Bounds::new(Vec2::new(-4.0, -4.0), Vec2::new(4.0, 4.0)));
    cfg.social_force.obstacle_strength = 5.0;
    cfg.social_force.obstacle_range = 0.25;
    cfg.label_crossing = true;
    cfg
}
