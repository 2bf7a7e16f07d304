//! Iterative LQ open-loop Nash solver.
//!
//! Controls of all players are stacked into one vector `U` (player-major,
//! then time, then axis). Because every agent is a single integrator the
//! states are affine in `U`, so the LQ approximation of player `i`'s cost is
//! obtained by chaining the stage derivatives through suffix sums. The open-loop
//! Nash conditions of the LQ game (each player's own-control gradient vanishes)
//! form one square linear system in the update `δU`, solved densely.
//!
//! Speed caps `‖u‖ ≤ cap` are handled with an active set: controls sitting on
//! the cap whose gradient points outward are constrained to move tangentially,
//! with a multiplier per active control. After each step controls are radially
//! clamped.
//!
//! Steps are globalised by backtracking on the Nash residual (the stacked
//! own-control gradients, projected for capped controls). The sum of the
//! players' costs is not a merit function for a general-sum game: close to an
//! equilibrium the Nash step routinely raises it.
//! The step comes from the PSD-projected quadratic model first. That step is
//! not guaranteed to reduce the residual, so when it fails the exact Jacobian
//! of the stacked gradients is used instead, undamped and then with growing
//! Levenberg-Marquardt damping; for that model the step is a descent
//! direction of the squared residual.
//!
//! A vanishing residual does not make a Nash point: two agents meeting head-on
//! along one line have zero sideways gradient by symmetry, although each would
//! gain by sidestepping. When the iteration stops, a player whose exact
//! own-control Hessian has a negative eigenvalue is moved a short way along it,
//! toward the cheaper side with ties broken to its right, and the iteration
//! resumes.

use nalgebra::{DMatrix, DVector};

use super::cost::{control_cost, state_cost, state_quadratic, StateQuadratic};
use super::{evaluate_cost, GameSpec, IterationStat, NashSolution, SolverOptions};
use crate::error::{Error, Result};
use crate::model::{rollout, BehaviorParams, Control, JointState, Vec2};

/// Levenberg-Marquardt retries on the exact model: the damping starts at
/// `DAMPING_START · scale²` and grows by `DAMPING_GROWTH` per retry.
const DAMPING_TRIES: usize = 6;
const DAMPING_START: f64 = 1e-2;
const DAMPING_GROWTH: f64 = 10.0;

/// Largest control change (m/s) of the first negative-curvature escape; each
/// further escape is `ESCAPE_GROWTH` times larger. Eigenvalues below
/// `-NEGATIVE_CURVATURE · scale` count as curved down.
const ESCAPE_SPEED: f64 = 0.05;
const ESCAPE_GROWTH: f64 = 4.0;
const NEGATIVE_CURVATURE: f64 = 1e-6;
const MAX_ESCAPES: usize = 3;

/// Solve with the options stored in `spec.solver`.
pub fn solve_ilq(
    start: &JointState,
    spec: &GameSpec,
    params: &BehaviorParams,
    warm_start: Option<&NashSolution>,
) -> Result<NashSolution> {
    solve_ilq_with(start, spec, params, warm_start, &spec.solver)
}

pub fn solve_ilq_with(
    start: &JointState,
    spec: &GameSpec,
    params: &BehaviorParams,
    warm_start: Option<&NashSolution>,
    opts: &SolverOptions,
) -> Result<NashSolution> {
    start.check_finite()?;
    spec.validate()?;
    let n = start.len();
    if n == 0 || spec.goals.len() != n || params.len() != n {
        return Err(Error::validation(format!(
            "agent count mismatch: state {n}, goals {}, params {}",
            spec.goals.len(),
            params.len()
        )));
    }
    if (start.dt - spec.dt).abs() > 1e-12 {
        return Err(Error::validation(format!(
            "state dt {} differs from game dt {}",
            start.dt, spec.dt
        )));
    }
    if !spec.speed_caps.is_empty() && spec.speed_caps.len() != n {
        return Err(Error::validation(
            "speed_caps must be empty or one per agent",
        ));
    }
    let game = Game::new(start, spec, params);
    let Some(ws) =
        warm_start.filter(|ws| ws.controls.len() == n && ws.controls.iter().all(|c| !c.is_empty()))
    else {
        return iterate(&game, game.initial_guess(), opts);
    };
    let warm = iterate(&game, game.shifted(ws), opts);
    if !opts.select_equilibrium && matches!(&warm, Ok(w) if w.converged) {
        return warm;
    }
    let cold = iterate(&game, game.initial_guess(), opts);
    // Several local equilibria may exist; keep the cheaper converged one.
    Ok(match (warm, cold) {
        (Ok(w), Ok(c)) => {
            let cost = |s: &NashSolution| s.costs.iter().sum::<f64>();
            if (c.converged && !w.converged) || (c.converged == w.converged && cost(&c) < cost(&w))
            {
                c
            } else {
                w
            }
        }
        (Ok(w), Err(_)) => w,
        (Err(_), c) => c?,
    })
}

fn iterate(game: &Game, mut u: DVector<f64>, opts: &SolverOptions) -> Result<NashSolution> {
    let n = game.n;
    game.clamp(&mut u);

    if game.costs(&u).iter().any(|c| !c.is_finite()) {
        return Err(Error::Diverged {
            iterations: 0,
            reason: "non-finite cost at initial guess".into(),
            last_stable: None,
        });
    }

    let mut multipliers = vec![0.0; n * game.t];
    let mut converged = false;
    let mut iterations = 0;
    let mut max_update = f64::INFINITY;
    let mut residual = f64::INFINITY;
    let mut history = Vec::new();
    let mut escapes = 0;

    'outer: loop {
        while iterations < opts.max_iterations {
            iterations += 1;
            let model = game.linearize(&u, true);
            if iterations == 1 {
                residual = game.residual(&u, &model.grads);
            }
            let scale = model.diagonal_scale();
            let mut exact = None;
            let mut accepted = None;
            let mut any_finite = false;
            let mut any_step = false;
            let mut plain_step: Option<f64> = None;
            let mut alpha = 1.0;
            for attempt in 0..DAMPING_TRIES + 2 {
                let damping = match attempt {
                    0 | 1 => 0.0,
                    k => DAMPING_START * scale * scale * DAMPING_GROWTH.powi(k as i32 - 2),
                };
                let m = if attempt == 0 {
                    &model
                } else {
                    exact.get_or_insert_with(|| game.linearize(&u, false))
                };
                let Some((step, new_mult)) = game.nash_step(&u, m, &multipliers, damping) else {
                    continue;
                };
                any_step = true;
                plain_step.get_or_insert(step.amax());
                alpha = 1.0;
                for _ in 0..=opts.max_halvings {
                    let mut trial = &u + &step * alpha;
                    game.clamp(&mut trial);
                    let trial_costs = game.costs(&trial);
                    if trial_costs.iter().all(|c| c.is_finite()) {
                        any_finite = true;
                        let trial_res = game.residual(&trial, &game.gradients(&trial));
                        if trial_res <= (1.0 - 1e-4 * alpha) * residual {
                            accepted = Some((trial, trial_costs, trial_res));
                            break;
                        }
                    }
                    alpha *= opts.backtrack_factor;
                }
                if accepted.is_some() {
                    multipliers = new_mult;
                    break;
                }
            }

            if !any_step {
                return Err(Error::Diverged {
                    iterations,
                    reason: "singular LQ game system".into(),
                    last_stable: Some(Box::new(game.solution(&u, iterations, false, max_update)?)),
                });
            }
            if !any_finite {
                return Err(Error::Diverged {
                    iterations,
                    reason: "non-finite cost at every trial step".into(),
                    last_stable: Some(Box::new(game.solution(&u, iterations, false, max_update)?)),
                });
            }
            let Some((next, next_costs, next_res)) = accepted else {
                // no further decrease of the Nash residual, even with damping
                let plain = plain_step.unwrap_or(f64::INFINITY);
                max_update = plain * alpha;
                converged = plain < opts.tolerance;
                break;
            };
            residual = next_res;
            history.push(IterationStat {
                total_cost: next_costs.iter().sum(),
                residual,
                step_size: alpha,
            });
            max_update = (&next - &u).amax();
            u = next;
            if max_update < opts.tolerance {
                converged = true;
                break;
            }
        }
        if escapes < MAX_ESCAPES
            && iterations < opts.max_iterations
            && game.escape_saddles(&mut u, ESCAPE_SPEED * ESCAPE_GROWTH.powi(escapes as i32))
        {
            escapes += 1;
            converged = false;
            residual = game.residual(&u, &game.gradients(&u));
            continue 'outer;
        }
        break;
    }

    let mut sol = game.solution(&u, iterations, converged, max_update)?;
    sol.residual = game.residual(&u, &game.gradients(&u));
    sol.history = history;
    Ok(sol)
}

struct Game<'a> {
    start: &'a JointState,
    spec: &'a GameSpec,
    params: &'a BehaviorParams,
    caps: Vec<f64>,
    n: usize,
    t: usize,
    dt: f64,
}

/// Per-player LQ model: own-control gradient and own-control rows of the Hessian.
struct LqModel {
    grads: Vec<DVector<f64>>,
    rows: Vec<DMatrix<f64>>,
}

impl LqModel {
    /// Largest own-control diagonal entry; sets the scale of the damping.
    fn diagonal_scale(&self) -> f64 {
        let t2 = self.grads.first().map_or(0, |g| g.len());
        let mut m: f64 = 0.0;
        for (i, h) in self.rows.iter().enumerate() {
            for j in 0..t2 {
                m = m.max(h[(j, i * t2 + j)].abs());
            }
        }
        if m > 0.0 {
            m
        } else {
            1.0
        }
    }
}

impl<'a> Game<'a> {
    fn new(start: &'a JointState, spec: &'a GameSpec, params: &'a BehaviorParams) -> Self {
        Self {
            start,
            spec,
            params,
            caps: params.speed_caps(&spec.speed_caps),
            n: start.len(),
            t: spec.horizon,
            dt: start.dt,
        }
    }

    fn idx(&self, agent: usize, k: usize) -> usize {
        (agent * self.t + k) * 2
    }

    fn dim(&self) -> usize {
        2 * self.n * self.t
    }

    fn control(&self, u: &DVector<f64>, agent: usize, k: usize) -> Vec2 {
        let i = self.idx(agent, k);
        Vec2::new(u[i], u[i + 1])
    }

    fn clamp(&self, u: &mut DVector<f64>) {
        for a in 0..self.n {
            for k in 0..self.t {
                let c = self.control(u, a, k).clamp_norm(self.caps[a]);
                let i = self.idx(a, k);
                u[i] = c.x;
                u[i + 1] = c.y;
            }
        }
    }

    fn initial_guess(&self) -> DVector<f64> {
        let mut u = DVector::zeros(self.dim());
        let span = self.t as f64 * self.dt;
        for a in 0..self.n {
            let to_goal = self.spec.goals[a] - self.start.position(a);
            let speed = self.caps[a].min(to_goal.norm() / span);
            let vel = to_goal.normalized().map_or(Vec2::ZERO, |d| d * speed);
            for k in 0..self.t {
                let i = self.idx(a, k);
                u[i] = vel.x;
                u[i + 1] = vel.y;
            }
        }
        u
    }

    /// Moves every player whose exact own-control Hessian has a negative
    /// eigenvalue a short way along that eigenvector, toward the cheaper side
    /// (ties broken to the player's right). Returns whether any player moved.
    fn escape_saddles(&self, u: &mut DVector<f64>, size: f64) -> bool {
        let model = self.linearize(u, false);
        let base = self.costs(u);
        let t2 = 2 * self.t;
        let mut next = u.clone();
        let mut moved = false;
        for a in 0..self.n {
            let r0 = self.idx(a, 0);
            let own = model.rows[a].columns(r0, t2).into_owned();
            let own = (&own + own.transpose()) * 0.5;
            let eig = own.symmetric_eigen();
            let (k_min, &l_min) = eig
                .eigenvalues
                .iter()
                .enumerate()
                .min_by(|x, y| x.1.total_cmp(y.1))
                .expect("non-empty horizon");
            if l_min >= -NEGATIVE_CURVATURE * model.diagonal_scale() {
                continue;
            }
            let dir = eig.eigenvectors.column(k_min).into_owned();
            let dir = &dir * (size.min(self.caps[a]) / dir.amax());
            let right = (self.spec.goals[a] - self.start.position(a))
                .normalized()
                .map_or(Vec2::ZERO, |h| Vec2::new(h.y, -h.x));
            let lateral: f64 = (0..self.t)
                .map(|k| Vec2::new(dir[2 * k], dir[2 * k + 1]).dot(right))
                .sum();
            let shifted = |sign: f64| {
                let mut trial = u.clone();
                for j in 0..t2 {
                    trial[r0 + j] += sign * dir[j];
                }
                self.clamp(&mut trial);
                let c = self.costs(&trial)[a];
                (trial, c)
            };
            let preferred = if lateral >= 0.0 { 1.0 } else { -1.0 };
            let (first, c_first) = shifted(preferred);
            let (second, c_second) = shifted(-preferred);
            let tie = (c_first - c_second).abs() <= 1e-9 * base[a].abs().max(1.0);
            let (pick, c) = if tie || c_first < c_second {
                (first, c_first)
            } else {
                (second, c_second)
            };
            if c >= base[a] {
                continue;
            }
            next.rows_mut(r0, t2).copy_from(&pick.rows(r0, t2));
            moved = true;
        }
        if moved {
            *u = next;
        }
        moved
    }

    /// Previous solution advanced one step, repeating the final control.
    fn shifted(&self, prev: &NashSolution) -> DVector<f64> {
        let mut u = DVector::zeros(self.dim());
        for a in 0..self.n {
            let seq = &prev.controls[a];
            for k in 0..self.t {
                let c = seq[(k + 1).min(seq.len() - 1)].velocity;
                let i = self.idx(a, k);
                u[i] = c.x;
                u[i + 1] = c.y;
            }
        }
        u
    }

    /// Joint positions `x^1 … x^T`, indexed `[k][agent]`.
    fn positions(&self, u: &DVector<f64>) -> Vec<Vec<Vec2>> {
        let mut cur = self.start.positions();
        (0..self.t)
            .map(|k| {
                for (a, p) in cur.iter_mut().enumerate() {
                    *p += self.control(u, a, k) * self.dt;
                }
                cur.clone()
            })
            .collect()
    }

    fn costs(&self, u: &DVector<f64>) -> Vec<f64> {
        let xs = self.positions(u);
        (0..self.n)
            .map(|i| {
                let d = self.params.per_agent[i].d;
                (0..self.t)
                    .map(|k| {
                        state_cost(i, &xs[k], self.spec, d)
                            + control_cost(
                                Control::from(self.control(u, i, k)),
                                &self.spec.weights.r,
                            )
                    })
                    .sum()
            })
            .collect()
    }

    /// Norm of the stacked own-control gradients, with the outward radial
    /// component removed for controls resting on their cap.
    fn residual(&self, u: &DVector<f64>, grads: &[DVector<f64>]) -> f64 {
        let mut total = 0.0;
        for a in 0..self.n {
            for k in 0..self.t {
                let c = self.control(u, a, k);
                let mut g = Vec2::new(grads[a][2 * k], grads[a][2 * k + 1]);
                if c.norm() >= self.caps[a] * (1.0 - 1e-9) && g.dot(c) < 0.0 {
                    let dir = c / c.norm();
                    g -= dir * g.dot(dir);
                }
                total += g.norm_squared();
            }
        }
        total.sqrt()
    }

    fn gradients(&self, u: &DVector<f64>) -> Vec<DVector<f64>> {
        self.linearize(u, false).grads
    }

    /// Own-control gradients and Hessian rows; `project` selects the
    /// PSD-projected stage Hessians instead of the exact ones.
    fn linearize(&self, u: &DVector<f64>, project: bool) -> LqModel {
        let xs = self.positions(u);
        let (n, t, dt) = (self.n, self.t, self.dt);
        let rs = (self.spec.weights.r + self.spec.weights.r.transpose()) * 0.5;
        let mut grads = Vec::with_capacity(n);
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let d = self.params.per_agent[i].d;
            let stages: Vec<StateQuadratic> = xs
                .iter()
                .map(|x| state_quadratic(i, x, self.spec, d, project))
                .collect();
            // suffix[k] = Σ_{k' ≥ k} stage[k'], for the states x^{k+1}
            let mut sg = vec![DVector::zeros(2 * n); t + 1];
            let mut sh = vec![DMatrix::zeros(2 * n, 2 * n); t + 1];
            for k in (0..t).rev() {
                sg[k] = &sg[k + 1] + &stages[k].grad;
                sh[k] = &sh[k + 1] + &stages[k].hess;
            }

            let mut g = DVector::zeros(2 * t);
            let mut h = DMatrix::zeros(2 * t, self.dim());
            for s in 0..t {
                let us = self.control(u, i, s);
                let ru = 2.0 * rs * nalgebra::Vector2::new(us.x, us.y);
                // u^s moves every state x^{k}, k > s, by dt
                g[2 * s] = dt * sg[s][2 * i] + ru[0];
                g[2 * s + 1] = dt * sg[s][2 * i + 1] + ru[1];
                for m in 0..n {
                    for r in 0..t {
                        let block = &sh[s.max(r)];
                        let col = self.idx(m, r);
                        for a in 0..2 {
                            for b in 0..2 {
                                h[(2 * s + a, col + b)] = dt * dt * block[(2 * i + a, 2 * m + b)];
                            }
                        }
                    }
                }
                let col = self.idx(i, s);
                for a in 0..2 {
                    for b in 0..2 {
                        h[(2 * s + a, col + b)] += 2.0 * rs[(a, b)];
                    }
                }
            }
            grads.push(g);
            rows.push(h);
        }
        LqModel { grads, rows }
    }

    /// Solves the stacked LQ Nash conditions with the active cap set.
    /// Returns the update and the new multiplier per `(agent, step)`.
    fn nash_step(
        &self,
        u: &DVector<f64>,
        model: &LqModel,
        prev_mult: &[f64],
        damping: f64,
    ) -> Option<(DVector<f64>, Vec<f64>)> {
        let (n, t) = (self.n, self.t);
        let mut active: Vec<usize> = Vec::new();
        for a in 0..n {
            for k in 0..t {
                let c = self.control(u, a, k);
                let cap = self.caps[a];
                let g = Vec2::new(model.grads[a][2 * k], model.grads[a][2 * k + 1]);
                if c.norm() >= cap * (1.0 - 1e-9) && g.dot(c) < 0.0 {
                    active.push(a * t + k);
                }
            }
        }

        for _ in 0..=n * t {
            let (step, mult) = self.solve_kkt(u, model, prev_mult, &active, damping)?;
            let negative: Vec<usize> = active
                .iter()
                .zip(&mult)
                .filter(|(_, &m)| m < 0.0)
                .map(|(&slot, _)| slot)
                .collect();
            if negative.is_empty() {
                let mut out = vec![0.0; n * t];
                for (&slot, &m) in active.iter().zip(&mult) {
                    out[slot] = m;
                }
                return Some((step, out));
            }
            active.retain(|s| !negative.contains(s));
        }
        None
    }

    fn solve_kkt(
        &self,
        u: &DVector<f64>,
        model: &LqModel,
        prev_mult: &[f64],
        active: &[usize],
        damping: f64,
    ) -> Option<(DVector<f64>, Vec<f64>)> {
        let (n, t) = (self.n, self.t);
        let dim = self.dim();
        let size = dim + active.len();
        let mut a = DMatrix::zeros(size, size);
        let mut b = DVector::zeros(size);
        for i in 0..n {
            let r0 = self.idx(i, 0);
            a.view_mut((r0, 0), (2 * t, dim)).copy_from(&model.rows[i]);
            for j in 0..2 * t {
                b[r0 + j] = -model.grads[i][j];
            }
        }
        for (c, &slot) in active.iter().enumerate() {
            let (agent, k) = (slot / t, slot % t);
            let row = self.idx(agent, k);
            let uk = self.control(u, agent, k);
            let mu = prev_mult[slot].max(0.0);
            // multiplier curvature of ½(‖u‖² − cap²)
            a[(row, row)] += mu;
            a[(row + 1, row + 1)] += mu;
            a[(row, dim + c)] = uk.x;
            a[(row + 1, dim + c)] = uk.y;
            a[(dim + c, row)] = uk.x;
            a[(dim + c, row + 1)] = uk.y;
            b[dim + c] = 0.5 * (self.caps[agent].powi(2) - uk.norm_squared());
        }
        let sol = if damping > 0.0 {
            let at = a.transpose();
            let mut normal = &at * &a;
            for j in 0..size {
                normal[(j, j)] += damping;
            }
            normal.cholesky()?.solve(&(at * b))
        } else {
            a.lu().solve(&b)?
        };
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let step = sol.rows(0, dim).into_owned();
        let mult = sol.rows(dim, active.len()).iter().copied().collect();
        Some((step, mult))
    }

    fn solution(
        &self,
        u: &DVector<f64>,
        iterations: usize,
        converged: bool,
        max_update: f64,
    ) -> Result<NashSolution> {
        let controls: Vec<Vec<Control>> = (0..self.n)
            .map(|a| {
                (0..self.t)
                    .map(|k| Control::from(self.control(u, a, k)))
                    .collect()
            })
            .collect();
        let trajectories = rollout(self.start, &controls, &self.caps)?;
        let costs = (0..self.n)
            .map(|i| evaluate_cost(i, &trajectories, &controls, self.spec, self.params))
            .collect::<Result<Vec<_>>>()?;
        Ok(NashSolution {
            controls,
            trajectories,
            costs,
            iterations,
            converged,
            max_update_norm: max_update,
            residual: f64::NAN,
            history: Vec::new(),
        })
    }
}
