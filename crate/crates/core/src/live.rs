//! Live sessions: a person steers the first human against the adapting robot.
//! Transport free; a server feeds client messages to [`LiveSession::submit`]
//! and calls [`LiveSession::tick`] once per `dt` of wall-clock time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Bounds, Control, Vec2};
use crate::session::{RobotPlanner, SamplingPlanner, Session, StepRecord};
use crate::sim::{
    build_predictor, metrics_from_records, realized_from_records, ScenarioConfig, ScriptedHumans,
};

/// Wire schema version carried in every message.
pub const WIRE_VERSION: u32 = 1;
/// Speed cap applied to live human input (m/s).
pub const LIVE_HUMAN_CAP: f64 = 1.2;
/// Controls stamped more than this many ticks behind the session are dropped.
pub const STALE_TICKS: u64 = 2;

/// One JSON text frame; `type` selects the body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub v: u32,
    pub session: String,
    pub tick: u64,
    #[serde(flatten)]
    pub body: WireBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireBody {
    /// Server: scene and current positions (agent 0 is the robot, 1 the live human).
    State {
        scenario: String,
        round: usize,
        timestep: usize,
        positions: Vec<Vec2>,
        goals: Vec<Vec2>,
        walls: Vec<[Vec2; 2]>,
        bounds: Option<Bounds>,
        goal_radius: f64,
        human_cap: f64,
    },
    /// Server: predictions issued this tick.
    Predictions {
        predicted_humans: Vec<Vec<Vec2>>,
        predicted_robot_by_human: Option<Vec<Vec2>>,
        robot_plan: Vec<Vec2>,
    },
    /// Server: belief mean and variances, `[v_max, d]` per agent.
    BeliefDiag {
        predictor: String,
        mean: Option<Vec<f64>>,
        cov_diag: Option<Vec<f64>>,
    },
    /// Server: outcome of a finished or interrupted round.
    RoundSummary { outcome: RoundOutcome },
    /// Server: a client message was rejected.
    Error { message: String },
    /// Client: desired velocity of the live human.
    Control { vx: f64, vy: f64 },
    /// Client: put agents back at their starts.
    ResetRound {
        #[serde(default)]
        reset_belief: bool,
    },
    /// Client: switch to a built-in scenario.
    SetScenario { name: String },
}

/// Which agent crossed `x = 0` first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Crossing {
    Robot,
    Human,
    Both,
    Neither,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub round: usize,
    pub steps: usize,
    /// Every agent reached its goal radius.
    pub completed: bool,
    pub time_to_goal: Option<usize>,
    pub min_distance: f64,
    #[serde(default)]
    pub crossed_first: Option<Crossing>,
}

/// First step at which the sign of `x` differs from its starting sign.
pub fn first_sign_flip(xs: &[f64]) -> Option<usize> {
    let x0 = *xs.first()?;
    if x0 == 0.0 {
        return None;
    }
    xs.iter().position(|&x| x * x0 < 0.0)
}

/// Label of robot (`xs_robot`) against human (`xs_human`) by first sign flip.
pub fn crossed_first(xs_robot: &[f64], xs_human: &[f64]) -> Crossing {
    match (first_sign_flip(xs_robot), first_sign_flip(xs_human)) {
        (None, None) => Crossing::Neither,
        (Some(_), None) => Crossing::Robot,
        (None, Some(_)) => Crossing::Human,
        (Some(r), Some(h)) if r < h => Crossing::Robot,
        (Some(r), Some(h)) if h < r => Crossing::Human,
        _ => Crossing::Both,
    }
}

/// A client message as it arrived, stamped with the session tick at arrival.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEvent {
    pub tick: u64,
    pub message: WireMessage,
}

/// Output of one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickOutput {
    pub record: StepRecord,
    pub messages: Vec<WireMessage>,
}

/// State of one live session.
pub struct LiveSession {
    pub id: String,
    pub config: ScenarioConfig,
    /// Ticks executed so far.
    pub tick: u64,
    session: Session,
    planner: SamplingPlanner,
    scripted: ScriptedHumans,
    pending: Option<Control>,
    records: Vec<StepRecord>,
    outcomes: Vec<RoundOutcome>,
    inputs: Vec<InputEvent>,
}

impl LiveSession {
    pub fn new(id: impl Into<String>, config: ScenarioConfig) -> Result<Self> {
        config.validate()?;
        let mut session =
            Session::new(config.world(), build_predictor(&config, config.predictor)?)?;
        session.round = 1;
        Ok(Self {
            id: id.into(),
            planner: SamplingPlanner::new(crate::planner::PlannerConfig {
                seed: config.seed,
                ..config.planner.clone()
            }),
            scripted: ScriptedHumans::new(&config, 0),
            session,
            config,
            tick: 0,
            pending: None,
            records: Vec::new(),
            outcomes: Vec::new(),
            inputs: Vec::new(),
        })
    }

    pub fn round(&self) -> usize {
        self.session.round
    }

    pub fn joint(&self) -> &crate::model::JointState {
        &self.session.joint
    }

    pub fn belief(&self) -> Option<&crate::ukf::BeliefState> {
        self.session.predictor.belief()
    }

    /// Every client message received so far.
    pub fn inputs(&self) -> &[InputEvent] {
        &self.inputs
    }

    /// Per-round series of finished or interrupted rounds.
    pub fn session_report(&self) -> &[RoundOutcome] {
        &self.outcomes
    }

    fn message(&self, body: WireBody) -> WireMessage {
        WireMessage {
            v: WIRE_VERSION,
            session: self.id.clone(),
            tick: self.tick,
            body,
        }
    }

    /// Current positions and scene.
    pub fn state_message(&self) -> WireMessage {
        let j = &self.session.joint;
        self.message(WireBody::State {
            scenario: self.config.name.clone(),
            round: self.session.round,
            timestep: j.timestep_index,
            positions: j.positions(),
            goals: self.config.goals(),
            walls: self
                .config
                .obstacle
                .segments()
                .iter()
                .map(|s| [s.a, s.b])
                .collect(),
            bounds: self.config.bounds,
            goal_radius: self.config.goal_radius,
            human_cap: LIVE_HUMAN_CAP,
        })
    }

    fn belief_message(&self) -> WireMessage {
        let b = self.session.predictor.belief();
        self.message(WireBody::BeliefDiag {
            predictor: self.config.predictor.to_string(),
            mean: b.map(|b| b.mean.iter().copied().collect()),
            cov_diag: b.map(|b| b.covariance_diagonal()),
        })
    }

    /// Handle one client message. Replies go to the sender; an empty reply
    /// means the message was accepted silently or dropped as stale.
    pub fn submit(&mut self, msg: WireMessage) -> Result<Vec<WireMessage>> {
        self.inputs.push(InputEvent {
            tick: self.tick,
            message: msg.clone(),
        });
        if msg.v != WIRE_VERSION {
            return Err(Error::validation(format!(
                "unsupported wire version {}",
                msg.v
            )));
        }
        if msg.session != self.id {
            return Err(Error::validation(format!(
                "message for session '{}'",
                msg.session
            )));
        }
        match msg.body {
            WireBody::Control { vx, vy } => {
                if !(vx.is_finite() && vy.is_finite()) {
                    return Err(Error::validation("control must be finite"));
                }
                if msg.tick + STALE_TICKS >= self.tick {
                    self.pending = Some(Control::new(vx, vy));
                }
                Ok(Vec::new())
            }
            WireBody::ResetRound { reset_belief } => {
                let mut out = Vec::new();
                if !self.records.is_empty() {
                    let outcome = self.close_round(false);
                    out.push(self.message(WireBody::RoundSummary { outcome }));
                }
                self.next_round();
                if reset_belief {
                    self.session
                        .predictor
                        .set_belief(self.config.initial_belief());
                }
                out.push(self.state_message());
                out.push(self.belief_message());
                Ok(out)
            }
            WireBody::SetScenario { name } => {
                let cfg = ScenarioConfig {
                    seed: self.config.seed,
                    ..ScenarioConfig::preset(&name)?
                };
                let (tick, inputs) = (self.tick, std::mem::take(&mut self.inputs));
                *self = LiveSession::new(self.id.clone(), cfg)?;
                self.tick = tick;
                self.inputs = inputs;
                Ok(vec![self.state_message(), self.belief_message()])
            }
            _ => Err(Error::validation("server message sent by client")),
        }
    }

    /// Advance one step with the latest pending control (zero if none). A
    /// round whose agents all reached their goals is closed and the next one
    /// started; the belief carries over.
    pub fn tick(&mut self) -> Result<TickOutput> {
        let live = self
            .pending
            .take()
            .unwrap_or(Control::ZERO)
            .clamped(LIVE_HUMAN_CAP);
        let result = self.step(live);
        self.tick += 1;
        let record = result?;
        self.records.push(record.clone());
        let mut messages = vec![
            self.state_message(),
            self.message(WireBody::Predictions {
                predicted_humans: record.predicted_humans.clone(),
                predicted_robot_by_human: record.predicted_robot_by_human.clone(),
                robot_plan: record.robot_plan.clone(),
            }),
            self.belief_message(),
        ];
        if self.session.done() {
            let outcome = self.close_round(true);
            messages.push(self.message(WireBody::RoundSummary { outcome }));
            self.next_round();
            messages.push(self.state_message());
        }
        Ok(TickOutput { record, messages })
    }

    fn step(&mut self, live: Control) -> Result<StepRecord> {
        let mut controls = vec![live];
        let mut fallback = false;
        if self.session.joint.len() > 2 {
            let (u, fb) = self.scripted.controls(&self.session.joint)?;
            controls.extend_from_slice(&u[1..]);
            fallback = fb;
        }
        self.session
            .run_step(&mut self.planner, &controls, fallback)
    }

    fn close_round(&mut self, completed: bool) -> RoundOutcome {
        let m = metrics_from_records(
            &self.config.name,
            self.config.predictor.as_str(),
            self.session.round,
            &self.records,
            self.config.robot.start,
            self.config.robot.goal,
            self.config.goal_radius,
        );
        let crossed_first = self.config.label_crossing.then(|| {
            let realized = realized_from_records(&self.records);
            let xs = |a: usize| realized[a].iter().map(|p| p.x).collect::<Vec<_>>();
            crossed_first(&xs(0), &xs(1))
        });
        let outcome = RoundOutcome {
            round: self.session.round,
            steps: self.records.len(),
            completed,
            time_to_goal: m.time_to_goal,
            min_distance: m.min_distance,
            crossed_first,
        };
        self.outcomes.push(outcome.clone());
        outcome
    }

    fn next_round(&mut self) {
        self.records.clear();
        self.pending = None;
        self.session.next_round();
        self.planner.start_round();
        let idx = (self.session.round - 1).min(self.config.rounds - 1);
        self.scripted = ScriptedHumans::new(&self.config, idx);
    }
}

/// Re-run a recorded input stream offline for `ticks` ticks. Returns the
/// session and the step records of every successful tick.
pub fn replay(
    id: &str,
    config: ScenarioConfig,
    inputs: &[InputEvent],
    ticks: u64,
) -> Result<(LiveSession, Vec<StepRecord>)> {
    let mut s = LiveSession::new(id, config)?;
    let mut records = Vec::new();
    let mut next = 0;
    while s.tick < ticks {
        while next < inputs.len() && inputs[next].tick <= s.tick {
            // Rejected messages were rejected live too; the replay ignores them alike.
            let _ = s.submit(inputs[next].message.clone());
            next += 1;
        }
        if let Ok(out) = s.tick() {
            records.push(out.record);
        }
    }
    Ok((s, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sign_flip_and_labels() {
        assert_eq!(first_sign_flip(&[-1.0, -0.5, 0.0, 0.3]), Some(3));
        assert_eq!(first_sign_flip(&[0.0, 1.0]), None);
        assert_eq!(crossed_first(&[-1.0, 1.0], &[1.0, 0.5]), Crossing::Robot);
        assert_eq!(
            crossed_first(&[-1.0, -1.0, 1.0], &[1.0, -1.0, -1.0]),
            Crossing::Human
        );
        assert_eq!(crossed_first(&[-1.0, 1.0], &[1.0, -1.0]), Crossing::Both);
        assert_eq!(crossed_first(&[-1.0], &[1.0]), Crossing::Neither);
    }

    #[test]
    fn wire_json_shape() {
        let m = WireMessage {
            v: WIRE_VERSION,
            session: "s".into(),
            tick: 3,
            body: WireBody::Control { vx: 0.5, vy: -0.1 },
        };
        let j: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(j["type"], "control");
        assert_eq!(j["v"], 1);
        assert_eq!(j["tick"], 3);
        assert_eq!(j["vx"], 0.5);
        let back: WireMessage = serde_json::from_value(j).unwrap();
        assert_eq!(back, m);
        let r: WireMessage =
            serde_json::from_str(r#"{"v":1,"session":"s","tick":0,"type":"reset_round"}"#).unwrap();
        assert_eq!(
            r.body,
            WireBody::ResetRound {
                reset_belief: false
            }
        );
    }
}
