//! Scenario simulation: scripted humans, repeated rounds, metrics and
//! persistence.

mod metrics;
mod plot;
mod scenario;

use std::io::{BufRead, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use metrics::{
    compute_ade, compute_detour, compute_min_distance, compute_time_to_goal, metrics_from_records,
    realized_from_records, MetricsReport, COLLISION_DISTANCE,
};
pub use plot::{trend_svg, TrendSeries};
pub use scenario::{
    linear_schedule, BeliefInit, GameConfig, HumanConfig, NoiseSettings, RobotConfig,
    ScenarioConfig, HUMAN_SPEED_RANGE,
};

use crate::baselines::sf_predict;
use crate::error::{Error, Result};
use crate::game::{solve_ilq, GameSpec, NashSolution};
use crate::model::{BehaviorParams, Control, JointState, Vec2};
use crate::predictor::{AtomPredictor, CvPredictor, Predictor, PredictorKind, SfPredictor};
use crate::session::{RobotPlanner, SamplingPlanner, Session, StepRecord};

/// Control of scripted human `human` (agent index, ≥ 1): it solves its own
/// game with the ground-truth parameters and executes the first control. On
/// solver divergence it falls back to Social Force; the flag reports that.
pub fn scripted_human_step(
    human: usize,
    joint: &JointState,
    truth: &BehaviorParams,
    spec: &GameSpec,
    warm_start: Option<&NashSolution>,
    fallback: &crate::baselines::SocialForceParams,
) -> Result<(Control, Option<NashSolution>, bool)> {
    if human == 0 || human >= joint.len() {
        return Err(Error::validation(format!("agent {human} is not a human")));
    }
    let cap = truth.per_agent[human].v_max;
    match solve_ilq(joint, spec, truth, warm_start) {
        Ok(sol) => Ok((sol.controls[human][0].clamped(cap), Some(sol), false)),
        Err(Error::Diverged { .. }) => {
            let sf = crate::baselines::SocialForceParams {
                v_des: cap,
                ..fallback.clone()
            };
            let traj = sf_predict(
                joint,
                &vec![Vec2::ZERO; joint.len()],
                &spec.goals,
                &spec.obstacle,
                &sf,
                1,
                &[human],
            )?;
            let v = (traj[0].position(0) - joint.position(human)) / joint.dt;
            Ok((Control::from(v).clamped(cap), None, true))
        }
        Err(e) => Err(e),
    }
}

/// The scripted humans of a scenario, each with its own warm start.
pub struct ScriptedHumans {
    spec: GameSpec,
    truth: BehaviorParams,
    fallback: crate::baselines::SocialForceParams,
    warm: Vec<Option<NashSolution>>,
}

impl ScriptedHumans {
    pub fn new(cfg: &ScenarioConfig, round: usize) -> Self {
        Self {
            spec: cfg.game_spec(),
            truth: cfg.true_params(round),
            fallback: cfg.social_force.clone(),
            warm: vec![None; cfg.humans.len()],
        }
    }

    /// Controls of all humans decided from `joint` alone.
    pub fn controls(&mut self, joint: &JointState) -> Result<(Vec<Control>, bool)> {
        let mut out = Vec::with_capacity(self.warm.len());
        let mut any_fallback = false;
        for h in 0..self.warm.len() {
            let (u, sol, fb) = scripted_human_step(
                h + 1,
                joint,
                &self.truth,
                &self.spec,
                self.warm[h].as_ref(),
                &self.fallback,
            )?;
            self.warm[h] = sol;
            any_fallback |= fb;
            out.push(u);
        }
        Ok((out, any_fallback))
    }
}

/// Build the predictor selected in the config.
pub fn build_predictor(cfg: &ScenarioConfig, kind: PredictorKind) -> Result<Box<dyn Predictor>> {
    Ok(match kind {
        PredictorKind::Atom => Box::new(AtomPredictor::new(
            cfg.game_spec(),
            cfg.initial_belief(),
            cfg.noise_config(),
            cfg.ukf,
        )?),
        PredictorKind::Cv => Box::new(CvPredictor {
            horizon: cfg.game.horizon,
        }),
        PredictorKind::Sf => Box::new(SfPredictor {
            horizon: cfg.game.horizon,
            goals: cfg.goals(),
            obstacle: cfg.obstacle.clone(),
            params: cfg.social_force.clone(),
        }),
    })
}

/// One finished (or failed) round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    /// 1-based.
    pub round: usize,
    pub records: Vec<StepRecord>,
    pub metrics: MetricsReport,
    pub wall_clock_s: f64,
    #[serde(default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub config: ScenarioConfig,
    pub rounds: Vec<RoundLog>,
}

impl Experiment {
    pub fn metrics(&self) -> Vec<MetricsReport> {
        self.rounds.iter().map(|r| r.metrics.clone()).collect()
    }
}

/// Run `session` until every agent is within its goal radius or
/// `cfg.max_steps` steps have passed.
pub fn run_round(
    cfg: &ScenarioConfig,
    session: &mut Session,
    planner: &mut SamplingPlanner,
    round: usize,
) -> (Vec<StepRecord>, Option<String>) {
    let mut humans = ScriptedHumans::new(cfg, round);
    let mut records = Vec::new();
    for _ in 0..cfg.max_steps {
        if session.done() {
            break;
        }
        let step = humans
            .controls(&session.joint)
            .and_then(|(u, fb)| session.run_step(planner, &u, fb));
        match step {
            Ok(r) => records.push(r),
            Err(e) => return (records, Some(e.to_string())),
        }
    }
    (records, None)
}

/// Run all rounds of an experiment with the config's predictor. The belief
/// carries over between rounds unless `reset_belief` is set.
pub fn run_experiment(cfg: &ScenarioConfig) -> Result<Experiment> {
    cfg.validate()?;
    let mut session = Session::new(cfg.world(), build_predictor(cfg, cfg.predictor)?)?;
    let mut planner = SamplingPlanner::new(crate::planner::PlannerConfig {
        seed: cfg.seed,
        ..cfg.planner.clone()
    });
    let initial = cfg.initial_belief();
    let mut rounds = Vec::with_capacity(cfg.rounds);
    for round in 0..cfg.rounds {
        if round > 0 {
            session.next_round();
            planner.start_round();
        }
        session.round = round + 1;
        if cfg.reset_belief {
            session.predictor.set_belief(initial.clone());
        }
        let t0 = Instant::now();
        let (records, error) = run_round(cfg, &mut session, &mut planner, round);
        let metrics = metrics_from_records(
            &cfg.name,
            cfg.predictor.as_str(),
            round + 1,
            &records,
            cfg.robot.start,
            cfg.robot.goal,
            cfg.goal_radius,
        );
        rounds.push(RoundLog {
            round: round + 1,
            records,
            metrics,
            wall_clock_s: t0.elapsed().as_secs_f64(),
            error,
        });
    }
    Ok(Experiment {
        config: cfg.clone(),
        rounds,
    })
}

/// Metrics CSV text (header plus one row per report).
pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut s = String::from(MetricsReport::CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub const CONFIG_FILE: &str = "config.json";
pub const STEPS_FILE: &str = "steps.jsonl";
pub const ROUNDS_FILE: &str = "rounds.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";

/// Round summary line written next to the step records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundSummary {
    pub round: usize,
    pub steps: usize,
    pub wall_clock_s: f64,
    pub error: Option<String>,
    pub metrics: MetricsReport,
}

/// Write config, step records (JSON lines), round summaries and metrics CSV.
pub fn write_experiment(exp: &Experiment, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join(CONFIG_FILE),
        serde_json::to_string_pretty(&exp.config)?,
    )?;
    let mut steps = std::io::BufWriter::new(std::fs::File::create(dir.join(STEPS_FILE))?);
    let mut rounds = std::io::BufWriter::new(std::fs::File::create(dir.join(ROUNDS_FILE))?);
    for r in &exp.rounds {
        for rec in &r.records {
            serde_json::to_writer(&mut steps, rec)?;
            steps.write_all(b"\n")?;
        }
        serde_json::to_writer(
            &mut rounds,
            &RoundSummary {
                round: r.round,
                steps: r.records.len(),
                wall_clock_s: r.wall_clock_s,
                error: r.error.clone(),
                metrics: r.metrics.clone(),
            },
        )?;
        rounds.write_all(b"\n")?;
    }
    steps.flush()?;
    rounds.flush()?;
    std::fs::write(dir.join(METRICS_FILE), metrics_csv(&exp.metrics()))?;
    Ok(())
}

/// Read step records from a JSON-lines file.
pub fn read_steps(path: &Path) -> Result<Vec<StepRecord>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Recompute per-round metrics from a directory written by
/// [`write_experiment`].
pub fn recompute_metrics(dir: &Path) -> Result<Vec<MetricsReport>> {
    let cfg: ScenarioConfig =
        serde_json::from_str(&std::fs::read_to_string(dir.join(CONFIG_FILE))?)?;
    let steps = read_steps(&dir.join(STEPS_FILE))?;
    let mut out = Vec::new();
    for round in 1..=cfg.rounds {
        let recs: Vec<StepRecord> = steps.iter().filter(|r| r.round == round).cloned().collect();
        out.push(metrics_from_records(
            &cfg.name,
            cfg.predictor.as_str(),
            round,
            &recs,
            cfg.robot.start,
            cfg.robot.goal,
            cfg.goal_radius,
        ));
    }
    Ok(out)
}

/// Parse a metrics CSV back into reports.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsReport>> {
    let mut lines = text.lines();
    if lines.next() != Some(MetricsReport::CSV_HEADER) {
        return Err(Error::validation("unexpected metrics CSV header"));
    }
    let num = |s: &str| -> Result<f64> {
        s.parse::<f64>()
            .map_err(|_| Error::validation(format!("bad number '{s}' in metrics CSV")))
    };
    let opt = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            num(s).map(Some)
        }
    };
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 10 {
                return Err(Error::validation(format!(
                    "metrics row has {} fields",
                    f.len()
                )));
            }
            Ok(MetricsReport {
                scenario: f[0].into(),
                predictor: f[1].into(),
                round: num(f[2])? as usize,
                ade: [opt(f[3])?, opt(f[4])?].into_iter().flatten().collect(),
                ade_robot_by_human: opt(f[5])?,
                detour: num(f[6])?,
                min_distance: num(f[7])?,
                time_to_goal: opt(f[8])?.map(|v| v as usize),
                collisions: num(f[9])? as usize,
            })
        })
        .collect()
}
