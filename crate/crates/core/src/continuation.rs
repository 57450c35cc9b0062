//! Equilibrium surfaces over rationality space: sweeps, adiabatic branch
//! tracing with discontinuous jumps, and fold detection.
//!
//! A fold is where `det(M - Id)` vanishes, `M` being the composed response
//! Jacobian `∂f_0/∂q_1 · ∂f_1/∂q_0` in reduced simplex coordinates (for more
//! than two players, the full reduced response Jacobian). There the implicit
//! function `q(β)` cannot be continued and the solution count changes.
//!
//! Branches are continued along β only. When a traced branch ends at a fold
//! the players "fall off the edge": the new equilibrium is whatever the damped
//! adjustment dynamic reaches from the stale profile.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::game::{Game, StrategyProfile};
use crate::solver::{
    enumerate_qre, newton_refine, response_jacobian, solve_unchecked, LogOdds, QreSolution, RationalityVector,
    SolverError, SolverOptions,
};

/// Default sup-norm distance separating adiabatic tracking from a jump.
pub const DEFAULT_JUMP_THRESHOLD: f64 = 0.2;
/// Fold indicator magnitude accepted as "at the fold".
pub const FOLD_TOLERANCE: f64 = 1e-8;
const FOLD_BETA_INTERVAL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContinuationError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("solution at {betas:?} has not converged (residual {residual:e})")]
    NotConverged { betas: Vec<f64>, residual: f64 },
    #[error("fold indicator does not change sign across the segment ({start:e} to {end:e})")]
    NoSignChange { start: f64, end: f64 },
    #[error("branch lost during fold bisection at {betas:?}")]
    BranchLost { betas: Vec<f64> },
    #[error("invalid grid: {0}")]
    Grid(String),
    #[error("path is empty")]
    EmptyPath,
}

/// Regular grid of rationality vectors; `points[i]` samples per axis,
/// endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaGrid {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub points: Vec<usize>,
}

impl BetaGrid {
    pub fn new(min: Vec<f64>, max: Vec<f64>, points: Vec<usize>) -> Result<Self, ContinuationError> {
        if min.len() != max.len() || min.len() != points.len() || min.is_empty() {
            return Err(ContinuationError::Grid(
                "min, max and points must have one entry per player".into(),
            ));
        }
        for i in 0..min.len() {
            if !(min[i].is_finite() && max[i].is_finite()) || min[i] > max[i] {
                return Err(ContinuationError::Grid(format!("axis {i}: need finite min <= max")));
            }
            if points[i] == 0 {
                return Err(ContinuationError::Grid(format!("axis {i}: need at least one point")));
            }
        }
        Ok(Self { min, max, points })
    }

    /// Square grid `[lo, hi]^players` with `n` points per axis.
    pub fn square(players: usize, lo: f64, hi: f64, n: usize) -> Result<Self, ContinuationError> {
        Self::new(vec![lo; players], vec![hi; players], vec![n; players])
    }

    pub fn axis(&self, i: usize) -> Vec<f64> {
        let n = self.points[i];
        if n == 1 {
            return vec![self.min[i]];
        }
        (0..n)
            .map(|k| self.min[i] + (self.max[i] - self.min[i]) * k as f64 / (n - 1) as f64)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.points.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.points.len()];
        for i in (0..self.points.len() - 1).rev() {
            strides[i] = strides[i + 1] * self.points[i + 1];
        }
        strides
    }

    /// Multi-index of flat grid position `idx` (player 0 slowest).
    pub fn multi_index(&self, idx: usize) -> Vec<usize> {
        self.strides()
            .iter()
            .zip(&self.points)
            .map(|(s, n)| (idx / s) % n)
            .collect()
    }

    /// All grid points, player 0 slowest.
    pub fn betas(&self) -> Vec<RationalityVector> {
        let axes: Vec<Vec<f64>> = (0..self.points.len()).map(|i| self.axis(i)).collect();
        (0..self.len())
            .map(|idx| {
                let mi = self.multi_index(idx);
                RationalityVector::from_raw(mi.iter().enumerate().map(|(i, &k)| axes[i][k]).collect())
            })
            .collect()
    }

    /// Flat indices of the grid neighbours one step back along each axis.
    fn previous_neighbours(&self, idx: usize) -> Vec<usize> {
        let mi = self.multi_index(idx);
        self.strides()
            .iter()
            .zip(&mi)
            .filter(|(_, &k)| k > 0)
            .map(|(s, _)| idx - s)
            .collect()
    }

    fn next_neighbours(&self, idx: usize) -> Vec<usize> {
        let mi = self.multi_index(idx);
        self.strides()
            .iter()
            .zip(mi.iter().zip(&self.points))
            .filter(|(_, (&k, &n))| k + 1 < n)
            .map(|(s, _)| idx + s)
            .collect()
    }
}

/// All equilibria found at one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSample {
    pub betas: RationalityVector,
    /// Sorted lexicographically, each tagged with a branch id.
    pub solutions: Vec<QreSolution>,
    pub fold_indicators: Vec<f64>,
    /// Set when no start converged at this point.
    pub enumeration_failed: bool,
}

impl SurfaceSample {
    /// Product of the fold indicators of all solutions. Solutions are born
    /// in pairs with opposite indicator signs, so the sign of the product
    /// flips whenever the count changes by two.
    pub fn indicator_product(&self) -> f64 {
        self.fold_indicators.iter().product()
    }
}

/// `det(M - Id)`: zero exactly at a fold of the branch through `solution`.
pub fn fold_indicator(game: &Game, solution: &QreSolution) -> Result<f64, ContinuationError> {
    if !solution.converged {
        return Err(ContinuationError::NotConverged {
            betas: solution.betas.as_slice().to_vec(),
            residual: solution.residual_norm,
        });
    }
    Ok(indicator_at(game, &solution.profile, &solution.betas)?)
}

pub(crate) fn indicator_at(
    game: &Game,
    profile: &StrategyProfile,
    betas: &RationalityVector,
) -> Result<f64, SolverError> {
    let jac = response_jacobian(game, profile, betas)?;
    if game.num_players() == 2 {
        let a = jac.reduced_block(0, 1);
        let b = jac.reduced_block(1, 0);
        let m = &a * &b;
        let n = m.nrows();
        return Ok((m - DMatrix::identity(n, n)).determinant());
    }
    let j = jac.reduced();
    let n = j.nrows();
    Ok((j - DMatrix::identity(n, n)).determinant())
}

/// Enumerates equilibria at every grid point, fills in solutions the
/// multistart missed by continuing neighbours' solutions, and links
/// solutions into branches.
///
/// Two solutions at neighbouring grid points share a branch when Newton
/// continuation from one lands within `10 × dedupe_radius` of the other and
/// their fold indicators have the same sign, so the stable and unstable
/// sheets of a fold are never merged.
pub fn sweep_surface(
    game: &Game,
    grid: &BetaGrid,
    options: &SolverOptions,
) -> Result<Vec<SurfaceSample>, ContinuationError> {
    if grid.points.len() != game.num_players() {
        return Err(ContinuationError::Grid(format!(
            "grid has {} axes, game has {} players",
            grid.points.len(),
            game.num_players()
        )));
    }
    options.validate()?;
    let betas = grid.betas();
    let mut solutions: Vec<Vec<QreSolution>> = betas
        .par_iter()
        .map(|b| enumerate_qre(game, b, options))
        .collect::<Result<_, _>>()?;

    // Fill gaps from both directions.
    for idx in 0..betas.len() {
        for nb in grid.previous_neighbours(idx) {
            adopt_continuations(game, &betas[idx], &mut solutions, nb, idx, options);
        }
    }
    for idx in (0..betas.len()).rev() {
        for nb in grid.next_neighbours(idx) {
            adopt_continuations(game, &betas[idx], &mut solutions, nb, idx, options);
        }
    }

    let mut indicators = Vec::with_capacity(betas.len());
    for sols in &solutions {
        indicators.push(
            sols.iter()
                .map(|s| indicator_at(game, &s.profile, &s.betas))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }

    // Union-find over (point, solution) nodes.
    let mut offsets = Vec::with_capacity(solutions.len());
    let mut total = 0;
    for sols in &solutions {
        offsets.push(total);
        total += sols.len();
    }
    let mut parent: Vec<usize> = (0..total).collect();
    let match_radius = 10.0 * options.dedupe_radius;
    for idx in 0..betas.len() {
        for nb in grid.previous_neighbours(idx) {
            for (a, from) in solutions[nb].iter().enumerate() {
                let q = newton_refine(game, betas[idx].as_slice(), &from.profile, options.tolerance);
                let nearest = solutions[idx]
                    .iter()
                    .enumerate()
                    .map(|(k, s)| (k, s.profile.sup_distance(&q)))
                    .filter(|&(k, d)| d <= match_radius && same_sign(indicators[idx][k], indicators[nb][a]))
                    .min_by(|x, y| x.1.total_cmp(&y.1));
                if let Some((k, _)) = nearest {
                    union(&mut parent, offsets[nb] + a, offsets[idx] + k);
                }
            }
        }
    }
    let mut ids = std::collections::HashMap::new();
    let mut samples = Vec::with_capacity(betas.len());
    for (idx, (b, (mut sols, inds))) in betas.into_iter().zip(solutions.into_iter().zip(indicators)).enumerate() {
        for (k, s) in sols.iter_mut().enumerate() {
            let root = find(&mut parent, offsets[idx] + k);
            let next = ids.len();
            s.branch_id = Some(*ids.entry(root).or_insert(next));
        }
        samples.push(SurfaceSample {
            betas: b,
            enumeration_failed: sols.is_empty(),
            solutions: sols,
            fold_indicators: inds,
        });
    }
    Ok(samples)
}

fn same_sign(a: f64, b: f64) -> bool {
    (a >= 0.0) == (b >= 0.0)
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // Lower index wins so ids follow grid order.
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

fn adopt_continuations(
    game: &Game,
    betas: &RationalityVector,
    solutions: &mut [Vec<QreSolution>],
    from: usize,
    to: usize,
    options: &SolverOptions,
) {
    let seeds: Vec<StrategyProfile> = solutions[from].iter().map(|s| s.profile.clone()).collect();
    let mut added = false;
    for seed in seeds {
        let q = newton_refine(game, betas.as_slice(), &seed, options.tolerance);
        let sol = QreSolution::evaluate(game, betas, q, options.tolerance);
        if sol.converged
            && solutions[to]
                .iter()
                .all(|s| s.profile.sup_distance(&sol.profile) > options.dedupe_radius)
        {
            solutions[to].push(sol);
            added = true;
        }
    }
    if added {
        let merged = std::mem::take(&mut solutions[to]);
        solutions[to] = crate::solver::dedupe_and_sort(merged, options.dedupe_radius);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceOptions {
    pub solver: SolverOptions,
    /// Corrector results farther than this (sup-norm) from the seed are jumps.
    pub jump_threshold: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            jump_threshold: DEFAULT_JUMP_THRESHOLD,
        }
    }
}

/// One point of a path through rationality space.
#[derive(Debug, Clone, PartialEq)]
pub struct PathStep {
    pub t: usize,
    pub betas: RationalityVector,
    pub solution: QreSolution,
    pub expected_utilities: Vec<f64>,
    /// The branch ended and the profile jumped to another equilibrium.
    pub jump: bool,
    pub branch_id: usize,
    /// Branch the step left, when it jumped.
    pub previous_branch: Option<usize>,
    pub fold_indicator: f64,
    /// Change of β from the previous step (zero at `t = 0`).
    pub dbeta: Vec<f64>,
    /// Set by procedures when a gradient could not be computed at this step.
    pub stale_gradient: bool,
}

/// Ordered steps; `failure` explains an early truncation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathTrace {
    pub steps: Vec<PathStep>,
    pub failure: Option<String>,
}

impl PathTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn jumps(&self) -> usize {
        self.steps.iter().filter(|s| s.jump).count()
    }

    /// `W(t) = Σ_i E(u_i(t))` for every step.
    pub fn welfare_series(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.expected_utilities.iter().sum()).collect()
    }

    pub fn last(&self) -> Option<&PathStep> {
        self.steps.last()
    }

    pub(crate) fn start(game: &Game, solution: &QreSolution) -> Result<Self, ContinuationError> {
        let fold = fold_indicator(game, solution)?;
        Ok(Self {
            steps: vec![PathStep {
                t: 0,
                betas: solution.betas.clone(),
                expected_utilities: solution.expected_utilities.clone(),
                solution: solution.clone(),
                jump: false,
                branch_id: solution.branch_id.unwrap_or(0),
                previous_branch: None,
                fold_indicator: fold,
                dbeta: vec![0.0; solution.betas.len()],
                stale_gradient: false,
            }],
            failure: None,
        })
    }

    /// Appends the continuation of the last step to `betas`. Returns `false`
    /// (and records the failure) when neither the corrector nor the
    /// adjustment dynamic converged.
    pub(crate) fn advance(&mut self, game: &Game, betas: RationalityVector, options: &TraceOptions) -> bool {
        let prev = self.steps.last().expect("trace has a start");
        let next_branch = self.steps.iter().map(|s| s.branch_id).max().unwrap_or(0) + 1;
        match continue_step(game, &prev.solution, &betas, options) {
            Some((mut sol, jump)) => {
                let Ok(fold) = indicator_at(game, &sol.profile, &sol.betas) else {
                    self.failure = Some(format!("fold indicator failed at {:?}", betas.as_slice()));
                    return false;
                };
                let branch_id = if jump { next_branch } else { prev.branch_id };
                sol.branch_id = Some(branch_id);
                let dbeta = betas
                    .as_slice()
                    .iter()
                    .zip(prev.betas.as_slice())
                    .map(|(a, b)| a - b)
                    .collect();
                let step = PathStep {
                    t: prev.t + 1,
                    previous_branch: jump.then_some(prev.branch_id),
                    betas,
                    expected_utilities: sol.expected_utilities.clone(),
                    solution: sol,
                    jump,
                    branch_id,
                    fold_indicator: fold,
                    dbeta,
                    stale_gradient: false,
                };
                self.steps.push(step);
                true
            }
            None => {
                self.failure = Some(format!(
                    "no equilibrium reached from the previous profile at {:?}",
                    betas.as_slice()
                ));
                false
            }
        }
    }
}

/// Corrector step: Newton from the current profile. If it converges within
/// the jump threshold the branch continues; otherwise the damped dynamic
/// from the stale profile decides where play lands. Returns the new
/// solution and whether it jumped.
pub(crate) fn continue_step(
    game: &Game,
    current: &QreSolution,
    betas: &RationalityVector,
    options: &TraceOptions,
) -> Option<(QreSolution, bool)> {
    let tol = options.solver.tolerance;
    let q = newton_refine(game, betas.as_slice(), &current.profile, tol);
    let corrected = QreSolution::evaluate(game, betas, q, tol);
    if corrected.converged && corrected.profile.sup_distance(&current.profile) <= options.jump_threshold {
        return Some((corrected, false));
    }
    let landed = solve_unchecked(game, betas, &current.profile, &options.solver);
    if !landed.converged {
        return None;
    }
    let jump = landed.profile.sup_distance(&current.profile) > options.jump_threshold;
    Some((landed, jump))
}

/// Follows `start` along `beta_path` (whose first entry is `start`'s β).
pub fn trace_branch(
    game: &Game,
    beta_path: &[RationalityVector],
    start: &QreSolution,
    options: &TraceOptions,
) -> Result<PathTrace, ContinuationError> {
    let Some(first) = beta_path.first() else {
        return Err(ContinuationError::EmptyPath);
    };
    if first.distance(&start.betas) > 1e-12 {
        return Err(ContinuationError::Grid(format!(
            "path starts at {:?} but the start solution is at {:?}",
            first.as_slice(),
            start.betas.as_slice()
        )));
    }
    let mut trace = PathTrace::start(game, start)?;
    for b in &beta_path[1..] {
        if b.len() != game.num_players() {
            return Err(SolverError::BetaShape {
                expected: game.num_players(),
                found: b.len(),
            }
            .into());
        }
        if !trace.advance(game, b.clone(), options) {
            break;
        }
    }
    Ok(trace)
}

/// Straight segments between waypoints, each cut into equal steps no longer
/// than `max_step`. The waypoints themselves are always included.
pub fn interpolate_path(waypoints: &[RationalityVector], max_step: f64) -> Vec<RationalityVector> {
    let mut out = Vec::new();
    let Some(first) = waypoints.first() else {
        return out;
    };
    out.push(first.clone());
    for pair in waypoints.windows(2) {
        let len = pair[0].distance(&pair[1]);
        // Guard the ceil against rounding (5.0 / 0.05 = 100.00000000000001).
        let n = ((len / max_step) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        for k in 1..=n {
            out.push(pair[0].lerp(&pair[1], k as f64 / n as f64));
        }
    }
    out
}

/// A located fold: the rationality vector, the branch solution there and
/// its indicator value.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldPoint {
    pub betas: RationalityVector,
    pub solution: QreSolution,
    pub indicator: f64,
}

/// Locates the fold between two consecutive steps whose fold indicators have
/// opposite signs. Bisects along the β segment, continuing `from`'s branch
/// at each midpoint, then sharpens with Newton on the system extended by the
/// indicator equation.
pub fn locate_fold(
    game: &Game,
    from: &PathStep,
    to: &PathStep,
    options: &TraceOptions,
) -> Result<FoldPoint, ContinuationError> {
    if same_sign(from.fold_indicator, to.fold_indicator) {
        return Err(ContinuationError::NoSignChange {
            start: from.fold_indicator,
            end: to.fold_indicator,
        });
    }
    locate_fold_between(game, &from.solution, &to.betas, options)
}

/// [`locate_fold`] from a solution towards an arbitrary β.
pub fn locate_fold_between(
    game: &Game,
    from: &QreSolution,
    towards: &RationalityVector,
    options: &TraceOptions,
) -> Result<FoldPoint, ContinuationError> {
    let tol = options.solver.tolerance;
    let a = from.betas.clone();
    let sign = fold_indicator(game, from)?;
    let seg = a.distance(towards);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best = from.clone();
    let mut best_ind = sign;
    while best_ind.abs() > FOLD_TOLERANCE && (hi - lo) * seg > FOLD_BETA_INTERVAL {
        let mid = 0.5 * (lo + hi);
        let b = a.lerp(towards, mid);
        let q = newton_refine(game, b.as_slice(), &best.profile, tol);
        let sol = QreSolution::evaluate(game, &b, q, tol);
        let ok = sol.converged && sol.profile.sup_distance(&best.profile) <= options.jump_threshold;
        let ind = if ok {
            indicator_at(game, &sol.profile, &b)?
        } else {
            f64::NAN
        };
        if ok && same_sign(ind, sign) {
            lo = mid;
            best = sol;
            best_ind = ind;
        } else {
            hi = mid;
        }
    }
    if let Some((sol, ind)) = sharpen_fold(game, &a, towards, lo, &best, tol) {
        if ind.abs() < best_ind.abs() {
            best = sol;
            best_ind = ind;
        }
    }
    if best_ind.abs() > 1e-3 {
        return Err(ContinuationError::BranchLost {
            betas: a.lerp(towards, hi).as_slice().to_vec(),
        });
    }
    Ok(FoldPoint {
        betas: best.betas.clone(),
        solution: best,
        indicator: best_ind,
    })
}

/// Newton on `(G(y, β(s)), det(M - Id)) = 0` with a finite-difference
/// Jacobian, where `β(s)` moves along the segment.
fn sharpen_fold(
    game: &Game,
    a: &RationalityVector,
    b: &RationalityVector,
    s0: f64,
    start: &QreSolution,
    tol: f64,
) -> Option<(QreSolution, f64)> {
    let dim = LogOdds::new(game, a.as_slice()).dim;
    let seg = a.distance(b);
    if seg == 0.0 {
        return None;
    }
    let eval = |x: &DVector<f64>| -> Option<DVector<f64>> {
        let beta = a.lerp(b, x[dim]);
        let sys = LogOdds::new(game, beta.as_slice());
        let y = x.rows(0, dim).into_owned();
        let q = sys.decode(&y);
        let g = sys.residual(&q, &y);
        let ind = indicator_at(game, &q, &beta).ok()?;
        let mut out = DVector::zeros(dim + 1);
        out.rows_mut(0, dim).copy_from(&g);
        out[dim] = ind;
        Some(out)
    };
    let sys = LogOdds::new(game, a.as_slice());
    let mut x = DVector::zeros(dim + 1);
    x.rows_mut(0, dim).copy_from(&sys.encode(&start.profile));
    x[dim] = s0;
    let mut f = eval(&x)?;
    for _ in 0..30 {
        if f.amax() < 1e-14 {
            break;
        }
        let mut jac = DMatrix::zeros(dim + 1, dim + 1);
        for k in 0..=dim {
            let h = if k == dim {
                1e-7 / seg
            } else {
                1e-7 * (1.0 + x[k].abs())
            };
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[k] += h;
            xm[k] -= h;
            let col = (eval(&xp)? - eval(&xm)?) / (2.0 * h);
            jac.set_column(k, &col);
        }
        let step = jac.lu().solve(&(-&f))?;
        let mut t = 1.0;
        let mut improved = false;
        for _ in 0..20 {
            let xt = &x + &step * t;
            if let Some(ft) = eval(&xt) {
                if ft.amax() < f.amax() {
                    x = xt;
                    f = ft;
                    improved = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let beta = a.lerp(b, x[dim]);
    let q = LogOdds::new(game, beta.as_slice()).decode(&x.rows(0, dim).into_owned());
    let sol = QreSolution::evaluate(game, &beta, q, tol);
    if !sol.converged || sol.profile.sup_distance(&start.profile) > 0.05 {
        return None;
    }
    let ind = indicator_at(game, &sol.profile, &beta).ok()?;
    Some((sol, ind))
}
