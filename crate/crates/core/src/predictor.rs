//! Predictors behind one interface: the adaptive game-theoretic predictor and
//! the constant-velocity and Social Force baselines.
//!
//! Agent 0 is always the robot; predictions are issued for agents `1..n`.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::baselines::{cv_predict, sf_predict, SocialForceParams};
use crate::error::{Error, Result};
use crate::game::{solve_ilq, GameSpec, NashSolution};
use crate::model::{JointState, Trajectory, Vec2};
use crate::ukf::{predict_step, update_step, BeliefState, NoiseConfig, UkfHyper, UpdateOutcome};

/// Solver diagnostics attached to a prediction.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionDiagnostics {
    pub iterations: usize,
    pub converged: bool,
    /// Set when the game solve failed and constant velocity was used instead.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBundle {
    /// One trajectory per human (agents `1..n`), each `horizon` states long,
    /// starting one step after the current state.
    pub predicted_humans: Vec<Trajectory>,
    /// The robot motion anticipated by the human model, when the predictor has one.
    pub predicted_robot_by_human: Option<Trajectory>,
    pub belief_snapshot: Option<BeliefState>,
    pub diagnostics: PredictionDiagnostics,
}

/// Common contract of all predictors. `predict` reads the observed history of
/// the current round (last entry is the current joint state); `observe`
/// reports the executed transition from `prev` to `next`.
pub trait Predictor: Send {
    fn name(&self) -> &'static str;
    fn predict(&mut self, history: &[JointState]) -> Result<PredictionBundle>;
    fn observe(&mut self, prev: &JointState, next: &JointState) -> Result<ObserveReport>;
    fn belief(&self) -> Option<&BeliefState> {
        None
    }
    /// Called when a new round starts; drops per-round state such as warm
    /// starts. Beliefs persist.
    fn start_round(&mut self) {}
    /// Replace the belief (no-op for stateless predictors).
    fn set_belief(&mut self, _belief: BeliefState) {}
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ObserveReport {
    pub updated: bool,
    pub skipped: Option<String>,
}

/// Which predictor to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictorKind {
    Atom,
    Cv,
    Sf,
}

impl PredictorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PredictorKind::Atom => "atom",
            PredictorKind::Cv => "cv",
            PredictorKind::Sf => "sf",
        }
    }
}

impl std::str::FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "atom" => Ok(Self::Atom),
            "cv" => Ok(Self::Cv),
            "sf" => Ok(Self::Sf),
            other => Err(Error::validation(format!("unknown predictor '{other}'"))),
        }
    }
}

impl std::fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-agent trajectory of everything observed so far in the round.
pub fn agent_history(history: &[JointState], agent: usize) -> Result<Trajectory> {
    let first = history
        .first()
        .ok_or_else(|| Error::validation("empty history"))?;
    let ps: Vec<Vec2> = history.iter().map(|j| j.position(agent)).collect();
    Trajectory::from_positions(&ps, first.timestep_index, first.dt)
}

fn cv_bundle(history: &[JointState], horizon: usize) -> Result<Vec<Trajectory>> {
    let n = history
        .last()
        .ok_or_else(|| Error::validation("empty history"))?
        .len();
    (1..n)
        .map(|a| {
            cv_predict(
                &agent_history(&history[history.len().saturating_sub(2)..], a)?,
                horizon,
            )
        })
        .collect()
}

/// Solve the game at the current state with the belief mean and roll out all
/// agents. On solver failure every human falls back to constant velocity.
pub fn atom_predict(
    history: &[JointState],
    spec: &GameSpec,
    belief: &BeliefState,
    warm_start: Option<&NashSolution>,
) -> Result<(PredictionBundle, Option<NashSolution>)> {
    let joint = history
        .last()
        .ok_or_else(|| Error::validation("empty history"))?;
    if belief.n_agents() != joint.len() {
        return Err(Error::validation(
            "belief dimension does not match agent count",
        ));
    }
    match solve_ilq(joint, spec, &belief.params(), warm_start) {
        Ok(sol) => {
            let mut trajs = sol.trajectories.clone();
            let robot = trajs.remove(0);
            let bundle = PredictionBundle {
                predicted_humans: trajs,
                predicted_robot_by_human: Some(robot),
                belief_snapshot: Some(belief.clone()),
                diagnostics: PredictionDiagnostics {
                    iterations: sol.iterations,
                    converged: sol.converged,
                    fallback: false,
                },
            };
            Ok((bundle, Some(sol)))
        }
        Err(Error::Diverged { iterations, .. }) => {
            let bundle = PredictionBundle {
                predicted_humans: cv_bundle(history, spec.horizon)?,
                predicted_robot_by_human: None,
                belief_snapshot: Some(belief.clone()),
                diagnostics: PredictionDiagnostics {
                    iterations,
                    converged: false,
                    fallback: true,
                },
            };
            Ok((bundle, None))
        }
        Err(e) => Err(e),
    }
}

/// Random-walk prediction followed by the unscented correction with the
/// executed positions of every agent (humans and robot). `observed` stacks
/// the joint states following `joint_prev`, one per measurement step.
#[allow(clippy::too_many_arguments)]
pub fn atom_observe_update(
    belief: &BeliefState,
    joint_prev: &JointState,
    observed: &[JointState],
    spec: &GameSpec,
    noise: &NoiseConfig,
    hyper: &UkfHyper,
    warm_start: Option<&NashSolution>,
) -> Result<UpdateOutcome> {
    if observed.len() != noise.measurement_steps.max(1) {
        return Err(Error::validation(
            "observation count must equal measurement_steps",
        ));
    }
    for (k, o) in observed.iter().enumerate() {
        if o.len() != joint_prev.len() || o.timestep_index != joint_prev.timestep_index + k + 1 {
            return Err(Error::validation(
                "observed states must follow joint_prev one dt apart",
            ));
        }
    }
    let prior = predict_step(belief, noise)?;
    let y = DVector::from_iterator(
        2 * joint_prev.len() * observed.len(),
        observed.iter().flat_map(|o| o.stacked()),
    );
    update_step(&prior, &y, joint_prev, spec, noise, hyper, warm_start)
}

/// Warm start that the solver's one-step shift maps back onto `sol` itself;
/// used when re-solving at the same state with different parameters.
pub(crate) fn same_step_warm_start(sol: &NashSolution) -> NashSolution {
    let mut out = sol.clone();
    for c in &mut out.controls {
        if let Some(&first) = c.first() {
            c.insert(0, first);
        }
    }
    out
}

/// The adaptive game-theoretic predictor.
#[derive(Debug, Clone)]
pub struct AtomPredictor {
    pub spec: GameSpec,
    pub belief: BeliefState,
    pub noise: NoiseConfig,
    pub hyper: UkfHyper,
    last_solution: Option<NashSolution>,
    /// States (with the solution computed there) awaiting enough subsequent
    /// observations for a measurement.
    pending: VecDeque<(JointState, Option<NashSolution>)>,
    observed: VecDeque<JointState>,
}

impl AtomPredictor {
    pub fn new(
        spec: GameSpec,
        belief: BeliefState,
        noise: NoiseConfig,
        hyper: UkfHyper,
    ) -> Result<Self> {
        spec.validate()?;
        hyper.validate(belief.dim())?;
        if belief.n_agents() != spec.goals.len() {
            return Err(Error::validation(
                "belief dimension does not match the number of goals",
            ));
        }
        if noise.process_cov.nrows() != belief.dim() {
            return Err(Error::validation(
                "process covariance does not match the belief",
            ));
        }
        Ok(Self {
            spec,
            belief,
            noise,
            hyper,
            last_solution: None,
            pending: VecDeque::new(),
            observed: VecDeque::new(),
        })
    }

    pub fn last_solution(&self) -> Option<&NashSolution> {
        self.last_solution.as_ref()
    }
}

impl Predictor for AtomPredictor {
    fn name(&self) -> &'static str {
        "atom"
    }

    fn predict(&mut self, history: &[JointState]) -> Result<PredictionBundle> {
        let (bundle, sol) = atom_predict(
            history,
            &self.spec,
            &self.belief,
            self.last_solution.as_ref(),
        )?;
        let joint = history.last().expect("checked by atom_predict").clone();
        // a solve at this state is only reused for the measurement at this state
        if !matches!(self.pending.back(), Some((j, _)) if j == &joint) {
            self.pending.push_back((joint, sol.clone()));
        }
        self.last_solution = sol;
        Ok(bundle)
    }

    fn observe(&mut self, prev: &JointState, next: &JointState) -> Result<ObserveReport> {
        let steps = self.noise.measurement_steps.max(1);
        if !matches!(self.pending.back(), Some((j, _)) if j == prev) {
            self.pending.push_back((prev.clone(), None));
        }
        self.observed.push_back(next.clone());
        while self.pending.len() > steps {
            self.pending.pop_front();
        }
        while self.observed.len() > steps {
            self.observed.pop_front();
        }
        if self.observed.len() < steps || self.pending.len() < steps {
            return Ok(ObserveReport::default());
        }
        let (base, sol) = self.pending.front().expect("non-empty").clone();
        let obs: Vec<JointState> = self.observed.iter().cloned().collect();
        if obs[0].timestep_index != base.timestep_index + 1 {
            return Ok(ObserveReport::default());
        }
        let warm = sol.as_ref().map(same_step_warm_start);
        let out = atom_observe_update(
            &self.belief,
            &base,
            &obs,
            &self.spec,
            &self.noise,
            &self.hyper,
            warm.as_ref(),
        )?;
        self.belief = out.belief;
        self.pending.pop_front();
        Ok(ObserveReport {
            updated: out.skipped.is_none(),
            skipped: out.skipped,
        })
    }

    fn belief(&self) -> Option<&BeliefState> {
        Some(&self.belief)
    }

    fn start_round(&mut self) {
        self.last_solution = None;
        self.pending.clear();
        self.observed.clear();
    }

    fn set_belief(&mut self, belief: BeliefState) {
        self.belief = belief;
    }
}

/// Constant-velocity baseline.
#[derive(Debug, Clone)]
pub struct CvPredictor {
    pub horizon: usize,
}

impl Predictor for CvPredictor {
    fn name(&self) -> &'static str {
        "cv"
    }

    fn predict(&mut self, history: &[JointState]) -> Result<PredictionBundle> {
        Ok(PredictionBundle {
            predicted_humans: cv_bundle(history, self.horizon)?,
            predicted_robot_by_human: None,
            belief_snapshot: None,
            diagnostics: PredictionDiagnostics {
                converged: true,
                ..Default::default()
            },
        })
    }

    fn observe(&mut self, _prev: &JointState, _next: &JointState) -> Result<ObserveReport> {
        Ok(ObserveReport::default())
    }
}

/// Social Force baseline; the robot is extrapolated at constant velocity.
#[derive(Debug, Clone)]
pub struct SfPredictor {
    pub horizon: usize,
    pub goals: Vec<Vec2>,
    pub obstacle: crate::model::Obstacle,
    pub params: SocialForceParams,
}

impl Predictor for SfPredictor {
    fn name(&self) -> &'static str {
        "sf"
    }

    fn predict(&mut self, history: &[JointState]) -> Result<PredictionBundle> {
        let joint = history
            .last()
            .ok_or_else(|| Error::validation("empty history"))?;
        let velocities: Vec<Vec2> = match history.len() {
            0 | 1 => vec![Vec2::ZERO; joint.len()],
            l => {
                let prev = &history[l - 2];
                (0..joint.len())
                    .map(|a| (joint.position(a) - prev.position(a)) / joint.dt)
                    .collect()
            }
        };
        let active: Vec<usize> = (1..joint.len()).collect();
        Ok(PredictionBundle {
            predicted_humans: sf_predict(
                joint,
                &velocities,
                &self.goals,
                &self.obstacle,
                &self.params,
                self.horizon,
                &active,
            )?,
            predicted_robot_by_human: None,
            belief_snapshot: None,
            diagnostics: PredictionDiagnostics {
                converged: true,
                ..Default::default()
            },
        })
    }

    fn observe(&mut self, _prev: &JointState, _next: &JointState) -> Result<ObserveReport> {
        Ok(ObserveReport::default())
    }
}
