//! Empirical Nash check: hold the other players fixed and search for a
//! unilateral deviation that lowers one player's cost.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{evaluate_cost, GameSpec, NashSolution};
use crate::model::{rollout, BehaviorParams, Control, JointState, Vec2};

const LINE_STEPS: [f64; 6] = [1e-4, 1e-3, 1e-2, 3e-2, 1e-1, 3e-1];

/// Largest cost decrease any single player obtains from `n_probes` random
/// perturbations of its own controls plus `n_probes` random line probes,
/// others held fixed. Zero when no deviation improved.
pub fn verify_nash(
    sol: &NashSolution,
    start: &JointState,
    spec: &GameSpec,
    params: &BehaviorParams,
    n_probes: usize,
    seed: u64,
) -> f64 {
    let caps = params.speed_caps(&spec.speed_caps);
    let cost_of = |player: usize, controls: &[Vec<Control>]| -> f64 {
        rollout(start, controls, &caps)
            .and_then(|trajs| evaluate_cost(player, &trajs, controls, spec, params))
            .unwrap_or(f64::INFINITY)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best_gain = 0.0_f64;
    for player in 0..sol.controls.len() {
        let base = cost_of(player, &sol.controls);
        let horizon = sol.controls[player].len();
        let mut trial = sol.controls.clone();

        for _ in 0..n_probes {
            let sigma = 10f64.powf(rng.random_range(-3.0..-0.3));
            for (k, u) in trial[player].iter_mut().enumerate() {
                let noise = Vec2::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                *u = Control::from(sol.controls[player][k].velocity + noise * sigma);
            }
            best_gain = best_gain.max(base - cost_of(player, &trial));
        }

        for _ in 0..n_probes {
            let dir: Vec<Vec2> = (0..horizon)
                .map(|_| {
                    Vec2::new(
                        rng.sample::<f64, _>(StandardNormal),
                        rng.sample::<f64, _>(StandardNormal),
                    )
                })
                .collect();
            let scale = dir.iter().map(|d| d.norm()).fold(0.0, f64::max).max(1e-12);
            for step in LINE_STEPS {
                for sign in [1.0, -1.0] {
                    for (k, u) in trial[player].iter_mut().enumerate() {
                        *u = Control::from(
                            sol.controls[player][k].velocity + dir[k] * (sign * step / scale),
                        );
                    }
                    best_gain = best_gain.max(base - cost_of(player, &trial));
                }
            }
        }
    }
    best_gain.max(0.0)
}
