//! Tax-rate update procedures over rationality space and their discounted
//! welfare.
//!
//! Scaling a player's utilities by `α_i` moves the equilibrium exactly like
//! scaling `β_i`, so a regulator choosing tax rates is choosing a path
//! `β(t)`. Three procedures pick the next step from first-order utility
//! changes: anarchy (each player follows its own derivative), socialism
//! (steepest ascent of total utility) and market (Nash bargaining over the
//! step, with the current utilities as disagreement point). Every step is
//! re-solved by adiabatic continuation, so a procedure that walks off a fold
//! jumps like the players would.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::continuation::{continue_step, indicator_at, ContinuationError, PathTrace, TraceOptions};
use crate::game::Game;
use crate::solver::{response_jacobian, response_unchecked, QreSolution, RationalityVector, SolverError};

/// Below this `|det(M - Id)|` the equilibrium is treated as sitting on a fold.
pub const NEAR_FOLD: f64 = 1e-8;
/// Absolute slack on `β_i ≤ β_i(0)`.
pub const CAP_SLACK: f64 = 1e-12;
/// First-order gains must exceed this to count as strictly positive.
pub const STRICT_GAIN: f64 = 1e-12;
const MARKET_DIRECTIONS: usize = 720;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Continuation(#[from] ContinuationError),
    #[error("equilibrium is at a fold (|det(M - Id)| = {indicator:e}); treat the step as a jump")]
    NearFold { indicator: f64 },
    #[error("solution has not converged (residual {residual:e})")]
    NotConverged { residual: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
}

/// Which step rule drives a procedure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Procedure {
    Anarchy,
    Socialism,
    Market,
}

impl Procedure {
    pub const ALL: [Procedure; 3] = [Procedure::Anarchy, Procedure::Socialism, Procedure::Market];

    pub fn name(self) -> &'static str {
        match self {
            Procedure::Anarchy => "anarchy",
            Procedure::Socialism => "socialism",
            Procedure::Market => "market",
        }
    }
}

impl std::str::FromStr for Procedure {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "anarchy" => Ok(Procedure::Anarchy),
            "socialism" => Ok(Procedure::Socialism),
            "market" => Ok(Procedure::Market),
            other => Err(PolicyError::Config(format!("unknown procedure {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcedureConfig {
    pub procedure: Procedure,
    /// Step scale Δ; every step has norm at most `√2·Δ`.
    pub delta: f64,
    /// Discount rate γ used for the reported Q.
    pub gamma: f64,
    pub t_max: usize,
    pub start_betas: RationalityVector,
    /// Keep `β_i ≤ β_i(0)` for socialism and market. Anarchy is always capped.
    pub enforce_start_cap: bool,
    /// Stop once `‖δβ‖` falls below this.
    pub stationarity_eps: f64,
    pub trace: TraceOptions,
}

impl ProcedureConfig {
    pub fn new(procedure: Procedure, start_betas: RationalityVector, delta: f64, gamma: f64) -> Self {
        Self {
            procedure,
            delta,
            gamma,
            t_max: 10_000,
            start_betas,
            enforce_start_cap: true,
            stationarity_eps: 1e-9,
            trace: TraceOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(PolicyError::Config(format!(
                "delta must be positive, got {}",
                self.delta
            )));
        }
        check_gamma(self.gamma)?;
        if self.t_max == 0 {
            return Err(PolicyError::Config("t_max must be at least 1".into()));
        }
        if !(self.stationarity_eps >= 0.0) {
            return Err(PolicyError::Config("stationarity_eps must be non-negative".into()));
        }
        Ok(())
    }
}

fn check_gamma(gamma: f64) -> Result<(), PolicyError> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(PolicyError::Config(format!(
            "gamma must be positive and finite, got {gamma}"
        )))
    }
}

/// `G[(i, j)] = ∂E(u_i)/∂β_j` at an equilibrium, by implicit differentiation
/// of the fixed point in reduced simplex coordinates.
pub fn utility_beta_gradient(game: &Game, solution: &QreSolution) -> Result<DMatrix<f64>, PolicyError> {
    if !solution.converged {
        return Err(PolicyError::NotConverged {
            residual: solution.residual_norm,
        });
    }
    let q = &solution.profile;
    let betas = &solution.betas;
    let indicator = indicator_at(game, q, betas)?;
    if indicator.abs() <= NEAR_FOLD {
        return Err(PolicyError::NearFold { indicator });
    }
    let n = game.num_players();
    let counts = game.strategy_counts();
    let dims: Vec<usize> = counts.iter().map(|c| c - 1).collect();
    let offsets: Vec<usize> = dims
        .iter()
        .scan(0, |acc, d| {
            let o = *acc;
            *acc += d;
            Some(o)
        })
        .collect();
    let total: usize = dims.iter().sum();

    let jac = response_jacobian(game, q, betas)?.reduced();
    let lu = (DMatrix::identity(total, total) - jac).lu();
    let response = response_unchecked(game, q, betas.as_slice());

    // ∂E_i/∂q̃_p(m) for every i, p.
    let pinned: Vec<Vec<Vec<f64>>> = (0..n)
        .map(|i| (0..n).map(|p| game.utility_given_pinned(q, i, p)).collect())
        .collect();

    let mut grad = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut rhs = DVector::zeros(total);
        let c = game.conditional_utilities_unchecked(q, j);
        let r = response.mixture(j);
        let mean: f64 = r.iter().zip(&c).map(|(a, b)| a * b).sum();
        for k in 0..dims[j] {
            rhs[offsets[j] + k] = r[k] * (c[k] - mean);
        }
        let dq = lu.solve(&rhs).ok_or(PolicyError::NearFold { indicator })?;
        for i in 0..n {
            let mut s = 0.0;
            for p in 0..n {
                let last = pinned[i][p][dims[p]];
                for m in 0..dims[p] {
                    s += (pinned[i][p][m] - last) * dq[offsets[p] + m];
                }
            }
            grad[(i, j)] = s;
        }
    }
    Ok(grad)
}

fn capped(current: &[f64], cap: Option<&[f64]>, j: usize) -> bool {
    cap.is_some_and(|c| current[j] >= c[j] - CAP_SLACK)
}

/// Shortens steps that would overshoot the cap.
fn clamp_to_cap(step: &mut [f64], current: &[f64], cap: Option<&[f64]>) {
    if let Some(cap) = cap {
        for j in 0..step.len() {
            if current[j] + step[j] > cap[j] {
                step[j] = (cap[j] - current[j]).max(0.0);
            }
        }
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Each player moves its own β by `Δ·sign(∂E(u_i)/∂β_i)`, never above the cap.
pub fn step_anarchy(grad: &DMatrix<f64>, current: &[f64], cap: Option<&[f64]>, delta: f64) -> Vec<f64> {
    (0..current.len())
        .map(|i| {
            let d = grad[(i, i)];
            let step = if d > 0.0 {
                delta
            } else if d < 0.0 {
                -delta
            } else {
                0.0
            };
            match cap {
                Some(c) if current[i] + step > c[i] + CAP_SLACK => 0.0,
                _ => step,
            }
        })
        .collect()
}

/// Steepest ascent of total utility on the disc `‖δβ‖ ≤ √2·Δ`. Coordinates
/// at the cap that would rise are frozen and the rest renormalised.
pub fn step_socialism(
    grad: &DMatrix<f64>,
    current: &[f64],
    cap: Option<&[f64]>,
    delta: f64,
    stationarity_eps: f64,
) -> Vec<f64> {
    let n = current.len();
    let mut g: Vec<f64> = (0..n).map(|j| grad.column(j).sum()).collect();
    if norm(&g) < stationarity_eps {
        return vec![0.0; n];
    }
    for j in 0..n {
        if g[j] > 0.0 && capped(current, cap, j) {
            g[j] = 0.0;
        }
    }
    let len = norm(&g);
    if len < stationarity_eps {
        return vec![0.0; n];
    }
    let mut step: Vec<f64> = g.iter().map(|x| SQRT_2 * delta * x / len).collect();
    clamp_to_cap(&mut step, current, cap);
    step
}

fn gains(grad: &DMatrix<f64>, d: &[f64]) -> Vec<f64> {
    (0..grad.nrows())
        .map(|i| (0..d.len()).map(|j| grad[(i, j)] * d[j]).sum())
        .collect()
}

/// Projects a direction onto the cap-feasible set, rescales it to the disc
/// boundary and clips any coordinate that would overshoot its cap. `None`
/// when nothing is left.
fn feasible_direction(d: &[f64], current: &[f64], cap: Option<&[f64]>, radius: f64) -> Option<Vec<f64>> {
    let mut v = d.to_vec();
    for j in 0..v.len() {
        if v[j] > 0.0 && capped(current, cap, j) {
            v[j] = 0.0;
        }
    }
    let len = norm(&v);
    if len < 1e-15 {
        return None;
    }
    v.iter_mut().for_each(|x| *x *= radius / len);
    clamp_to_cap(&mut v, current, cap);
    Some(v)
}

/// Nash product of first-order gains; `None` unless every gain is positive.
fn nash_product(grad: &DMatrix<f64>, d: &[f64]) -> Option<f64> {
    let g = gains(grad, d);
    g.iter().all(|&x| x > 0.0).then(|| g.iter().product())
}

/// Nash bargaining over the step: maximises `Π_i ∇E(u_i)·δβ` on the disc
/// `‖δβ‖ ≤ √2·Δ` with every factor positive; zero when no such direction
/// exists.
pub fn step_market(grad: &DMatrix<f64>, current: &[f64], cap: Option<&[f64]>, delta: f64) -> Vec<f64> {
    let n = current.len();
    let radius = SQRT_2 * delta;
    let best = if n == 2 {
        market_planar(grad, current, cap, radius)
    } else {
        market_ascent(grad, current, cap, radius)
    };
    best.unwrap_or_else(|| vec![0.0; n])
}

fn market_planar(grad: &DMatrix<f64>, current: &[f64], cap: Option<&[f64]>, radius: f64) -> Option<Vec<f64>> {
    let at = |theta: f64| feasible_direction(&[theta.cos(), theta.sin()], current, cap, radius);
    let score = |theta: f64| {
        at(theta)
            .and_then(|d| nash_product(grad, &d))
            .unwrap_or(f64::NEG_INFINITY)
    };
    let width = 2.0 * PI / MARKET_DIRECTIONS as f64;
    let mut best: Option<(f64, f64)> = None;
    for k in 0..MARKET_DIRECTIONS {
        let theta = k as f64 * width;
        let s = score(theta);
        if s.is_finite() && best.is_none_or(|(_, b)| s > b) {
            best = Some((theta, s));
        }
    }
    let (theta0, s0) = best?;
    let (mut a, mut b) = (theta0 - width, theta0 + width);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (score(c), score(d));
    while b - a > 1e-12 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = score(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = score(d);
        }
    }
    let theta = 0.5 * (a + b);
    if score(theta) >= s0 {
        at(theta)
    } else {
        at(theta0)
    }
}

/// Projected ascent of the log Nash product on the sphere, from the players'
/// own gradients, their sum and seeded random directions.
fn market_ascent(grad: &DMatrix<f64>, current: &[f64], cap: Option<&[f64]>, radius: f64) -> Option<Vec<f64>> {
    let n = current.len();
    let mut seeds: Vec<Vec<f64>> = (0..grad.nrows())
        .map(|i| grad.row(i).iter().copied().collect())
        .collect();
    seeds.push((0..n).map(|j| grad.column(j).sum()).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..64 {
        seeds.push((0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect());
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for seed in seeds {
        let Some(mut d) = feasible_direction(&seed, current, cap, radius) else {
            continue;
        };
        let Some(mut f) = nash_product(grad, &d) else {
            continue;
        };
        let mut eta = 0.5 * radius;
        while eta > 1e-12 * radius {
            let g = gains(grad, &d);
            let ascent: Vec<f64> = (0..n)
                .map(|j| (0..g.len()).map(|i| grad[(i, j)] / g[i]).sum())
                .collect();
            let trial: Vec<f64> = d
                .iter()
                .zip(&ascent)
                .map(|(x, a)| x + eta * a / norm(&ascent).max(1e-300))
                .collect();
            match feasible_direction(&trial, current, cap, radius).and_then(|t| nash_product(grad, &t).map(|v| (t, v)))
            {
                Some((t, v)) if v > f => {
                    d = t;
                    f = v;
                }
                _ => eta *= 0.5,
            }
        }
        if best.as_ref().is_none_or(|(_, b)| f > *b) {
            best = Some((d, f));
        }
    }
    best.map(|(d, _)| d)
}

/// A procedure's realised path and its discounted welfare.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcedureRun {
    pub procedure: Procedure,
    pub trace: PathTrace,
    pub q: f64,
}

/// Runs one procedure from `initial` until the step vanishes or `t_max`
/// steps have been taken. At a fold the last valid gradient is reused and
/// the step is flagged as stale.
pub fn run_procedure(
    game: &Game,
    config: &ProcedureConfig,
    initial: &QreSolution,
) -> Result<ProcedureRun, PolicyError> {
    config.validate()?;
    let trace = run_trace(game, config, initial)?;
    let q = welfare_q(&trace, config.gamma)?;
    Ok(ProcedureRun {
        procedure: config.procedure,
        trace,
        q,
    })
}

fn run_trace(game: &Game, config: &ProcedureConfig, initial: &QreSolution) -> Result<PathTrace, PolicyError> {
    if !initial.converged {
        return Err(PolicyError::NotConverged {
            residual: initial.residual_norm,
        });
    }
    if initial.betas.distance(&config.start_betas) > 1e-12 {
        return Err(PolicyError::Config(format!(
            "initial solution is at {:?}, start is {:?}",
            initial.betas.as_slice(),
            config.start_betas.as_slice()
        )));
    }
    let start = config.start_betas.as_slice().to_vec();
    let cap = match config.procedure {
        Procedure::Anarchy => Some(start.as_slice()),
        _ if config.enforce_start_cap => Some(start.as_slice()),
        _ => None,
    };
    let mut trace = PathTrace::start(game, initial)?;
    let mut last_grad: Option<DMatrix<f64>> = None;
    for _ in 0..config.t_max {
        let step = trace.last().expect("trace has a start");
        let (grad, stale) = match utility_beta_gradient(game, &step.solution) {
            Ok(g) => (g, false),
            Err(PolicyError::NearFold { indicator }) => match &last_grad {
                Some(g) => (g.clone(), true),
                None => return Err(PolicyError::NearFold { indicator }),
            },
            Err(e) => return Err(e),
        };
        let current = step.betas.as_slice();
        let delta = match config.procedure {
            Procedure::Anarchy => step_anarchy(&grad, current, cap, config.delta),
            Procedure::Socialism => step_socialism(&grad, current, cap, config.delta, config.stationarity_eps),
            Procedure::Market => step_market(&grad, current, cap, config.delta),
        };
        if norm(&delta) < config.stationarity_eps {
            break;
        }
        let mut next: Vec<f64> = current.iter().zip(&delta).map(|(b, d)| b + d).collect();
        if let Some(cap) = cap {
            next.iter_mut().zip(cap).for_each(|(b, c)| *b = b.min(*c));
        }
        if !trace.advance(game, RationalityVector::from_raw(next), &config.trace) {
            break;
        }
        trace.steps.last_mut().expect("step was appended").stale_gradient = stale;
        last_grad = Some(grad);
    }
    Ok(trace)
}

/// Discounted welfare `Q = Σ_{t=1..T} (1+γ)^{-t} W(t) + (1+γ)^{-T} W(T)/γ`,
/// the last term being the stationary tail after the trace ends.
pub fn welfare_q(trace: &PathTrace, gamma: f64) -> Result<f64, PolicyError> {
    if trace.is_empty() {
        return Err(PolicyError::Config("welfare of an empty trace".into()));
    }
    welfare_q_series(&trace.welfare_series(), gamma)
}

/// [`welfare_q`] on a welfare series whose index 0 is the start.
pub fn welfare_q_series(welfare: &[f64], gamma: f64) -> Result<f64, PolicyError> {
    check_gamma(gamma)?;
    let Some(&last) = welfare.last() else {
        return Err(PolicyError::Config("welfare of an empty trace".into()));
    };
    let r = 1.0 / (1.0 + gamma);
    let mut w = 1.0;
    let mut q = 0.0;
    for &x in &welfare[1..] {
        w *= r;
        q += w * x;
    }
    Ok(q + w * last / gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParetoOptions {
    pub trace: TraceOptions,
    /// Directions scanned on the step disc.
    pub directions: usize,
    pub max_steps: usize,
}

impl Default for ParetoOptions {
    fn default() -> Self {
        Self {
            trace: TraceOptions::default(),
            directions: 720,
            max_steps: 10_000,
        }
    }
}

/// Greedy Pareto-improving path: every step stays within `√2·Δ`, keeps each
/// `β_i` at or below its start, continues the branch without jumping and
/// raises every player's utility both to first order and as re-solved.
/// Among admissible steps a Pareto-superior one is preferred, then the
/// largest total gain, then the lexicographically smallest step. Empty when
/// not even the first step is admissible.
pub fn find_pareto_path(
    game: &Game,
    start: &QreSolution,
    delta: f64,
    options: &ParetoOptions,
) -> Result<PathTrace, PolicyError> {
    if !start.converged {
        return Err(PolicyError::NotConverged {
            residual: start.residual_norm,
        });
    }
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(PolicyError::Config(format!("delta must be non-negative, got {delta}")));
    }
    let cap = start.betas.as_slice().to_vec();
    let radius = SQRT_2 * delta;
    let mut trace = PathTrace::start(game, start)?;
    if delta == 0.0 {
        return Ok(PathTrace::default());
    }
    let n = game.num_players();
    let dirs = disc_directions(n, options.directions);
    while trace.len() <= options.max_steps {
        let step = trace.last().expect("trace has a start");
        let Ok(grad) = utility_beta_gradient(game, &step.solution) else {
            break;
        };
        let current = step.betas.as_slice();
        let mut candidates: Vec<(Vec<f64>, Vec<f64>)> = std::iter::once(vec![0.0; n])
            .chain(dirs.iter().map(|d| d.iter().map(|x| x * radius).collect()))
            .filter(|d: &Vec<f64>| (0..n).all(|j| current[j] + d[j] <= cap[j] + CAP_SLACK))
            .map(|d| {
                let g = gains(&grad, &d);
                (d, g)
            })
            .filter(|(_, g)| g.iter().all(|&x| x > STRICT_GAIN))
            .collect();
        let mut accepted = None;
        while !candidates.is_empty() {
            let pick = preferred(&candidates);
            let (d, _) = candidates.swap_remove(pick);
            let next: Vec<f64> = (0..n).map(|j| (current[j] + d[j]).min(cap[j])).collect();
            let betas = RationalityVector::from_raw(next);
            if let Some((sol, false)) = continue_step(game, &step.solution, &betas, &options.trace) {
                let realised = sol
                    .expected_utilities
                    .iter()
                    .zip(&step.expected_utilities)
                    .all(|(a, b)| a - b > 0.0);
                if realised {
                    accepted = Some(betas);
                    break;
                }
            }
        }
        let Some(betas) = accepted else {
            break;
        };
        if !trace.advance(game, betas, &options.trace) {
            break;
        }
    }
    if trace.len() == 1 {
        return Ok(PathTrace::default());
    }
    Ok(trace)
}

/// Index of the preferred candidate: a Pareto-superior one if it exists,
/// otherwise the largest total gain, ties broken lexicographically on δβ.
fn preferred(candidates: &[(Vec<f64>, Vec<f64>)]) -> usize {
    let dominates = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| x >= y);
    for (k, (_, g)) in candidates.iter().enumerate() {
        if candidates.iter().all(|(_, h)| dominates(g, h)) {
            return k;
        }
    }
    let mut best = 0;
    for k in 1..candidates.len() {
        let (dk, gk) = &candidates[k];
        let (db, gb) = &candidates[best];
        let (tk, tb): (f64, f64) = (gk.iter().sum(), gb.iter().sum());
        if tk > tb
            || (tk == tb
                && dk.iter().zip(db).map(|(a, b)| a.total_cmp(b)).find(|o| o.is_ne()) == Some(std::cmp::Ordering::Less))
        {
            best = k;
        }
    }
    best
}

/// Unit directions: an even angular grid for two players, a deterministic
/// spread on the sphere otherwise.
fn disc_directions(n: usize, count: usize) -> Vec<Vec<f64>> {
    if n == 2 {
        return (0..count)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(count + 2 * n);
    for j in 0..n {
        for s in [-1.0, 1.0] {
            let mut e = vec![0.0; n];
            e[j] = s;
            out.push(e);
        }
    }
    while out.len() < count.max(2 * n) {
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let l = norm(&v);
        if l > 1e-3 && l <= 1.0 {
            out.push(v.iter().map(|x| x / l).collect());
        }
    }
    out
}

/// Discounted welfare of all three procedures over a γ grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WelfareReport {
    pub gammas: Vec<f64>,
    /// Indexed like [`Procedure::ALL`].
    pub traces: Vec<PathTrace>,
    /// `q[k][p]`: Q of procedure `p` at `gammas[k]`.
    pub q: Vec<[f64; 3]>,
}

impl WelfareReport {
    pub fn q_of(&self, procedure: Procedure) -> Vec<f64> {
        let p = procedure as usize;
        self.q.iter().map(|row| row[p]).collect()
    }

    /// `Q_socialism − Q_market` per γ.
    pub fn socialism_minus_market(&self) -> Vec<f64> {
        self.q.iter().map(|row| row[1] - row[2]).collect()
    }
}

/// Settings shared by the three procedures in [`compare_procedures`].
#[derive(Debug, Clone, PartialEq)]
pub struct CompareOptions {
    pub t_max: usize,
    pub enforce_start_cap: bool,
    pub stationarity_eps: f64,
    pub trace: TraceOptions,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            t_max: 10_000,
            enforce_start_cap: true,
            stationarity_eps: 1e-9,
            trace: TraceOptions::default(),
        }
    }
}

/// Runs anarchy, socialism and market from a shared start and discounts each
/// realised path over `gammas`. The paths do not depend on γ, so each
/// procedure runs once.
pub fn compare_procedures(
    game: &Game,
    start: &QreSolution,
    delta: f64,
    gammas: &[f64],
    options: &CompareOptions,
) -> Result<WelfareReport, PolicyError> {
    for &g in gammas {
        check_gamma(g)?;
    }
    let traces: Vec<PathTrace> = if delta == 0.0 {
        let t = PathTrace::start(game, start)?;
        vec![t.clone(), t.clone(), t]
    } else {
        let run = |p: Procedure| {
            let config = ProcedureConfig {
                procedure: p,
                delta,
                gamma: 1.0,
                t_max: options.t_max,
                start_betas: start.betas.clone(),
                enforce_start_cap: options.enforce_start_cap,
                stationarity_eps: options.stationarity_eps,
                trace: options.trace.clone(),
            };
            config.validate()?;
            run_trace(game, &config, start)
        };
        let (a, (s, m)) = rayon::join(
            || run(Procedure::Anarchy),
            || rayon::join(|| run(Procedure::Socialism), || run(Procedure::Market)),
        );
        vec![a?, s?, m?]
    };
    let series: Vec<Vec<f64>> = traces.iter().map(|t| t.welfare_series()).collect();
    let q = gammas
        .iter()
        .map(|&g| {
            Ok([
                welfare_q_series(&series[0], g)?,
                welfare_q_series(&series[1], g)?,
                welfare_q_series(&series[2], g)?,
            ])
        })
        .collect::<Result<_, PolicyError>>()?;
    Ok(WelfareReport {
        gammas: gammas.to_vec(),
        traces,
        q,
    })
}
