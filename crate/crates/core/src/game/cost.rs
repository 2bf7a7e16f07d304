//! Per-player stage cost of the navigation game and its local derivatives.
//!
//! Player `i` at one stage pays
//!
//! ```text
//! (x_i − g_i)ᵀ Q (x_i − g_i) + uᵀ R u
//!   + w_s · Σ_{n≠i} max(0, d_i − ‖x_i − x_n‖)²
//!   + w_o · max(0, d_o − D(x_i, O))²
//!   + w_b · (squared violation of the world bounds)
//! ```
//!
//! where `d_i` is the player's own preferred social radius. The hinges
//! penalise proximity and are squared so the quadratic model is well defined
//! at the activation boundary.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use super::GameSpec;
use crate::error::{Error, Result};
use crate::model::{BehaviorParams, Control, Trajectory, Vec2};

/// Eigenvalue floor applied when projecting indefinite stage Hessians.
pub const PSD_FLOOR: f64 = 1e-6;

fn v(p: Vec2) -> Vector2<f64> {
    Vector2::new(p.x, p.y)
}

/// Cost of `player` at one stage.
pub fn stage_cost(
    player: usize,
    positions: &[Vec2],
    control: Control,
    spec: &GameSpec,
    params: &BehaviorParams,
) -> Result<f64> {
    if player >= positions.len() || player >= params.len() || player >= spec.goals.len() {
        return Err(Error::validation(format!(
            "player {player} out of range for {} agents",
            positions.len()
        )));
    }
    Ok(
        state_cost(player, positions, spec, params.per_agent[player].d)
            + control_cost(control, &spec.weights.r),
    )
}

pub(crate) fn control_cost(u: Control, r: &Matrix2<f64>) -> f64 {
    let u = v(u.velocity);
    (u.transpose() * r * u)[0]
}

/// State-dependent part of the stage cost.
pub(crate) fn state_cost(player: usize, positions: &[Vec2], spec: &GameSpec, d_social: f64) -> f64 {
    let w = &spec.weights;
    let xi = positions[player];
    let e = v(xi - spec.goals[player]);
    let mut cost = (e.transpose() * w.q * e)[0];

    if w.w_social > 0.0 && d_social > 0.0 {
        for (n, &xn) in positions.iter().enumerate() {
            if n != player {
                let gap = d_social - xi.distance(xn);
                if gap > 0.0 {
                    cost += w.w_social * gap * gap;
                }
            }
        }
    }

    if w.w_obstacle > 0.0 {
        if let Some((_, dist)) = spec.obstacle.closest(xi) {
            let gap = w.d_obstacle - dist;
            if gap > 0.0 {
                cost += w.w_obstacle * gap * gap;
            }
        }
    }

    if let Some(b) = spec.bounds {
        let viol = |lo: f64, hi: f64, x: f64| {
            if x < lo {
                lo - x
            } else if x > hi {
                x - hi
            } else {
                0.0
            }
        };
        let vx = viol(b.min.x, b.max.x, xi.x);
        let vy = viol(b.min.y, b.max.y, xi.y);
        cost += w.w_bounds * (vx * vx + vy * vy);
    }
    cost
}

/// Sum of stage costs of `player` over the horizon: stage `k` pairs the
/// state `x^k` with the control `u^{k-1}` that produced it.
pub fn evaluate_cost(
    player: usize,
    trajectories: &[Trajectory],
    controls: &[Vec<Control>],
    spec: &GameSpec,
    params: &BehaviorParams,
) -> Result<f64> {
    let horizon = trajectories.first().map_or(0, Trajectory::len);
    if trajectories.iter().any(|t| t.len() != horizon)
        || controls.iter().any(|c| c.len() != horizon)
    {
        return Err(Error::validation("evaluate_cost: mismatched horizons"));
    }
    if player >= controls.len() {
        return Err(Error::validation(format!("player {player} out of range")));
    }
    let mut positions = vec![Vec2::ZERO; trajectories.len()];
    let mut total = 0.0;
    for k in 0..horizon {
        for (p, t) in positions.iter_mut().zip(trajectories) {
            *p = t.position(k);
        }
        total += stage_cost(player, &positions, controls[player][k], spec, params)?;
    }
    Ok(total)
}

/// Gradient and (PSD-projected) Hessian of `state_cost` with respect to the
/// stacked joint positions `[x_0, y_0, x_1, y_1, ...]`.
pub(crate) struct StateQuadratic {
    pub grad: DVector<f64>,
    pub hess: DMatrix<f64>,
}

pub(crate) fn state_quadratic(
    player: usize,
    positions: &[Vec2],
    spec: &GameSpec,
    d_social: f64,
    project: bool,
) -> StateQuadratic {
    let n = positions.len();
    let w = &spec.weights;
    let mut grad = DVector::zeros(2 * n);
    let mut hess = DMatrix::zeros(2 * n, 2 * n);
    let mut curved = false;

    let i = 2 * player;
    let xi = positions[player];
    let qs = (w.q + w.q.transpose()) * 0.5;
    let e = v(xi - spec.goals[player]);
    let g = 2.0 * qs * e;
    add_vec(&mut grad, i, g);
    add_block(&mut hess, i, i, 2.0 * qs);

    if w.w_social > 0.0 && d_social > 0.0 {
        for (other, &xn) in positions.iter().enumerate() {
            if other == player {
                continue;
            }
            let diff = xi - xn;
            let r = diff.norm();
            let gap = d_social - r;
            if gap <= 0.0 {
                continue;
            }
            // coincident agents: step to the right of the way to the goal,
            // or along a fixed index-dependent axis when already there
            let dir = diff.normalized().unwrap_or_else(|| {
                (spec.goals[player] - xi)
                    .normalized()
                    .map(|h| Vec2::new(h.y, -h.x))
                    .unwrap_or(if player < other {
                        Vec2::new(0.0, 1.0)
                    } else {
                        Vec2::new(0.0, -1.0)
                    })
            });
            let rh = v(dir);
            let outer = rh * rh.transpose();
            let tangential = if r > 1e-9 {
                (Matrix2::identity() - outer) * (gap / r)
            } else {
                Matrix2::zeros()
            };
            // h = w (d − r)²; ∂h/∂x_i = −2w(d − r) r̂
            let gi = -2.0 * w.w_social * gap * rh;
            let m = 2.0 * w.w_social * (outer - tangential);
            let j = 2 * other;
            add_vec(&mut grad, i, gi);
            add_vec(&mut grad, j, -gi);
            add_block(&mut hess, i, i, m);
            add_block(&mut hess, j, j, m);
            add_block(&mut hess, i, j, -m);
            add_block(&mut hess, j, i, -m);
            curved |= r > 1e-9;
        }
    }

    if w.w_obstacle > 0.0 {
        if let Some((c, dist)) = spec.obstacle.closest(xi) {
            let gap = w.d_obstacle - dist;
            if gap > 0.0 {
                let dir = (xi - c).normalized().unwrap_or_else(|| {
                    let seg = spec
                        .obstacle
                        .segments()
                        .iter()
                        .min_by(|a, b| a.distance(xi).total_cmp(&b.distance(xi)))
                        .expect("closest implies non-empty");
                    (seg.b - seg.a)
                        .perp()
                        .normalized()
                        .unwrap_or(Vec2::new(1.0, 0.0))
                });
                let nh = v(dir);
                let outer = nh * nh.transpose();
                let mut m = 2.0 * w.w_obstacle * outer;
                // distance to an endpoint curves; distance to a segment interior does not
                let at_endpoint = spec
                    .obstacle
                    .segments()
                    .iter()
                    .any(|s| c == s.a || c == s.b);
                if at_endpoint && dist > 1e-9 {
                    m -= 2.0 * w.w_obstacle * (gap / dist) * (Matrix2::identity() - outer);
                    curved = true;
                }
                add_vec(&mut grad, i, -2.0 * w.w_obstacle * gap * nh);
                add_block(&mut hess, i, i, m);
            }
        }
    }

    if let Some(b) = spec.bounds {
        for (c, (lo, hi, x)) in [(b.min.x, b.max.x, xi.x), (b.min.y, b.max.y, xi.y)]
            .into_iter()
            .enumerate()
        {
            let viol = if x < lo {
                x - lo
            } else if x > hi {
                x - hi
            } else {
                continue;
            };
            grad[i + c] += 2.0 * w.w_bounds * viol;
            hess[(i + c, i + c)] += 2.0 * w.w_bounds;
        }
    }

    if curved && project {
        hess = project_psd(hess);
    }
    StateQuadratic { grad, hess }
}

/// Symmetrise and raise negative eigenvalues to [`PSD_FLOOR`].
pub(crate) fn project_psd(h: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&h + h.transpose()) * 0.5;
    let eig = sym.clone().symmetric_eigen();
    if eig.eigenvalues.iter().all(|&l| l >= 0.0) {
        return sym;
    }
    let lambda = eig.eigenvalues.map(|l| if l < 0.0 { PSD_FLOOR } else { l });
    &eig.eigenvectors * DMatrix::from_diagonal(&lambda) * eig.eigenvectors.transpose()
}

fn add_vec(dst: &mut DVector<f64>, at: usize, g: Vector2<f64>) {
    dst[at] += g[0];
    dst[at + 1] += g[1];
}

fn add_block(dst: &mut DMatrix<f64>, r: usize, c: usize, m: Matrix2<f64>) {
    for a in 0..2 {
        for b in 0..2 {
            dst[(r + a, c + b)] += m[(a, b)];
        }
    }
}
