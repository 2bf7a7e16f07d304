use atom_core::model::{AgentState, Control, Obstacle, Trajectory, Vec2};
use atom_core::planner::{execute_first, plan, plan_with_warm, PlannerConfig};
use proptest::prelude::*;

fn cfg(seed: u64) -> PlannerConfig {
    PlannerConfig {
        seed,
        ..Default::default()
    }
}

/// Distance to each human at matching timesteps, recomputed from the plan's
/// controls rather than its reported trajectory.
fn clearance_oracle(start: Vec2, controls: &[Control], humans: &[Trajectory], dt: f64) -> f64 {
    let mut p = start;
    let mut best = f64::INFINITY;
    for (k, u) in controls.iter().enumerate() {
        p += u.velocity * dt;
        for h in humans {
            if k < h.len() {
                best = best.min(p.distance(h.position(k)));
            }
        }
    }
    best
}

#[test]
fn empty_world_heads_for_the_goal_at_cap() {
    for seed in 0..5 {
        let r = plan(
            AgentState::new(0.0, 0.0),
            &[],
            Vec2::new(2.0, 0.0),
            &Obstacle::empty(),
            &cfg(seed),
        )
        .unwrap();
        let u = execute_first(&r).velocity;
        assert!(u.y.atan2(u.x).abs() <= 10f64.to_radians());
        assert!((u.norm() - 1.0).abs() <= 0.05);
        assert!(r.feasible);
    }
}

#[test]
fn at_goal_stays_put_at_near_zero_cost() {
    let r = plan(
        AgentState::new(1.0, 1.0),
        &[],
        Vec2::new(1.0, 1.0),
        &Obstacle::empty(),
        &cfg(0),
    )
    .unwrap();
    assert!(r.cost < 1e-9);
    assert_eq!(execute_first(&r), Control::ZERO);
}

#[test]
fn crossing_human_is_kept_beyond_collision_radius() {
    let c = cfg(3);
    // Human walks across the robot's straight path, arriving at (1.2, 0)
    // exactly when the robot would.
    let human: Vec<Vec2> = (1..=c.horizon)
        .map(|k| Vec2::new(1.2, -1.2 + 0.2 * k as f64))
        .collect();
    let humans = [Trajectory::from_positions(&human, 1, c.dt).unwrap()];
    let r = plan(
        AgentState::new(0.0, 0.0),
        &humans,
        Vec2::new(4.0, 0.0),
        &Obstacle::empty(),
        &c,
    )
    .unwrap();
    assert!(r.feasible);
    let oracle = clearance_oracle(Vec2::ZERO, &r.controls, &humans, c.dt);
    assert!(oracle >= c.r_col, "clearance {oracle}");
    assert!((oracle - r.min_clearance).abs() < 1e-9);
}

#[test]
fn plans_keep_away_from_walls() {
    let c = cfg(1);
    let wall = Obstacle::from_endpoints(&[([1.0, -3.0], [1.0, 0.4])]).unwrap();
    let r = plan(
        AgentState::new(0.0, 0.0),
        &[],
        Vec2::new(3.0, 0.0),
        &wall,
        &c,
    )
    .unwrap();
    assert!(r.feasible);
    for p in r.trajectory.positions() {
        assert!(atom_core::model::distance_to_obstacle(p, &wall) >= c.obstacle_clearance - 1e-12);
    }
}

#[test]
fn same_seed_same_plan_and_warm_sample_is_considered() {
    let humans = [Trajectory::from_positions(&[Vec2::new(2.0, 0.3); 12], 1, 0.2).unwrap()];
    let a = plan(
        AgentState::new(0.0, 0.0),
        &humans,
        Vec2::new(4.0, 0.0),
        &Obstacle::empty(),
        &cfg(9),
    )
    .unwrap();
    let b = plan(
        AgentState::new(0.0, 0.0),
        &humans,
        Vec2::new(4.0, 0.0),
        &Obstacle::empty(),
        &cfg(9),
    )
    .unwrap();
    assert_eq!(a, b);
    let w = plan_with_warm(
        AgentState::new(0.0, 0.0),
        &humans,
        Vec2::new(4.0, 0.0),
        &Obstacle::empty(),
        &cfg(9),
        Some(&a.controls),
    )
    .unwrap();
    assert!(w.cost <= a.cost + 1e-12);
}

#[test]
fn execute_first_is_the_first_control() {
    let r = plan(
        AgentState::new(0.0, 0.0),
        &[],
        Vec2::new(-3.0, 1.0),
        &Obstacle::empty(),
        &cfg(2),
    )
    .unwrap();
    assert_eq!(execute_first(&r), r.controls[0]);
    assert_eq!(r.controls.len(), 12);
    assert_eq!(r.trajectory.len(), 12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]
    #[test]
    fn plans_respect_the_speed_cap(
        gx in -5.0..5.0f64, gy in -5.0..5.0f64, hx in -3.0..3.0f64, hy in -3.0..3.0f64,
        cap in 0.2..1.5f64, seed in 0u64..1000
    ) {
        let c = PlannerConfig { speed_cap: cap, samples: 64, seed, ..Default::default() };
        let humans = [Trajectory::from_positions(&[Vec2::new(hx, hy); 12], 1, 0.2).unwrap()];
        let r = plan(AgentState::new(0.0, 0.0), &humans, Vec2::new(gx, gy), &Obstacle::empty(), &c).unwrap();
        for u in &r.controls {
            prop_assert!(u.velocity.norm() <= cap + 1e-9);
        }
        let mut prev = Vec2::ZERO;
        for p in r.trajectory.positions() {
            prop_assert!(p.distance(prev) <= cap * c.dt + 1e-9);
            prev = p;
        }
        if r.feasible {
            prop_assert!(r.min_clearance >= c.r_col);
        }
    }
}
