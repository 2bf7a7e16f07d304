use atom_core::live::first_sign_flip;
use atom_core::model::{AgentParams, BehaviorParams, JointState, Vec2};
use atom_core::sim::{
    metrics_csv, run_experiment, scripted_human_step, write_experiment, ScenarioConfig,
    METRICS_FILE,
};

fn x_series(exp: &atom_core::sim::Experiment, agent: usize) -> Vec<f64> {
    let records = &exp.rounds[0].records;
    let mut xs: Vec<f64> = records.iter().map(|r| r.positions[agent].x).collect();
    xs.push(records.last().unwrap().next_positions[agent].x);
    xs
}

#[test]
fn aggressive_doorway_human_goes_through_first() {
    let mut cfg = ScenarioConfig::preset("doorway").unwrap().with_rounds(1);
    cfg.humans[0].schedule = vec![AgentParams::new(1.2, 0.6)];
    // Both start the same distance from the doorway.
    assert!((cfg.robot.start.norm() - cfg.humans[0].start.norm()).abs() < 1e-12);
    let exp = run_experiment(&cfg).unwrap();
    let human = first_sign_flip(&x_series(&exp, 1)).expect("human crossed");
    let robot = first_sign_flip(&x_series(&exp, 0)).unwrap_or(usize::MAX);
    assert!(human < robot, "human crossed at {human}, robot at {robot}");
}

#[test]
fn symmetric_scripted_walkers_mirror_each_other() {
    // Two scripted walkers on parallel lanes past a robot parked at the
    // origin; the scene is invariant under a half-turn about the origin.
    let cfg = ScenarioConfig::preset("exchange").unwrap();
    let mut spec = cfg.game_spec();
    spec.goals = vec![Vec2::ZERO, Vec2::new(3.0, 1.0), Vec2::new(-3.0, -1.0)];
    spec.speed_caps = vec![1.0, 1.2, 1.2];
    let truth = BehaviorParams {
        per_agent: vec![
            AgentParams::new(1.0, 1.0),
            AgentParams::new(0.8, 1.2),
            AgentParams::new(0.8, 1.2),
        ],
    };
    let mut joint = JointState::from_positions(
        &[Vec2::ZERO, Vec2::new(-3.0, 1.0), Vec2::new(3.0, -1.0)],
        0.2,
    )
    .unwrap();
    let mut warm = [None, None];
    for _ in 0..30 {
        let mut next = joint.positions();
        for h in 0..2 {
            let (u, sol, fallback) = scripted_human_step(
                h + 1,
                &joint,
                &truth,
                &spec,
                warm[h].as_ref(),
                &cfg.social_force,
            )
            .unwrap();
            assert!(!fallback);
            assert!(u.velocity.norm() <= 0.8 + 1e-6);
            warm[h] = sol;
            next[h + 1] += u.velocity * joint.dt;
        }
        joint = JointState::from_positions(&next, 0.2).unwrap();
        let (a, b) = (joint.position(1), joint.position(2));
        assert!((a + b).norm() < 1e-6, "{a:?} vs {b:?}");
    }
    // They did move, and away from the parked robot.
    assert!(joint.position(1).x > 1.0);
}

#[test]
fn same_seed_gives_byte_identical_metrics() {
    let cfg = ScenarioConfig::preset("exchange").unwrap().with_rounds(2);
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(metrics_csv(&a.metrics()), metrics_csv(&b.metrics()));
    let (da, db) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_experiment(&a, da.path()).unwrap();
    write_experiment(&b, db.path()).unwrap();
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join(METRICS_FILE)).unwrap();
    assert_eq!(read(&da), read(&db));
}

#[test]
fn presets_survive_a_json_round_trip() {
    for name in ["exchange", "corridor", "doorway"] {
        let cfg = ScenarioConfig::preset(name).unwrap();
        cfg.validate().unwrap();
        let back: ScenarioConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
    assert!(ScenarioConfig::preset("nowhere").is_err());
}

#[test]
fn schedules_stay_within_the_stated_speed_range() {
    for name in ["exchange", "corridor", "doorway"] {
        let cfg = ScenarioConfig::preset(name).unwrap();
        for h in &cfg.humans {
            assert_eq!(h.schedule.len(), cfg.rounds);
            assert!(h.schedule.iter().all(|p| (0.35..=1.2).contains(&p.v_max)));
        }
    }
}

#[test]
fn scripted_humans_never_exceed_their_round_speed() {
    let cfg = ScenarioConfig::preset("corridor").unwrap().with_rounds(1);
    let exp = run_experiment(&cfg).unwrap();
    let truth = cfg.true_params(0);
    for r in &exp.rounds[0].records {
        for h in 1..r.positions.len() {
            let step = r.next_positions[h].distance(r.positions[h]);
            assert!(step <= (truth.per_agent[h].v_max + 1e-6) * cfg.dt);
        }
    }
}
