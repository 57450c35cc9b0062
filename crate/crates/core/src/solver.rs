//! Logit quantal response equilibria at a fixed rationality vector.
//!
//! A profile `q` is a QRE at `β` when every player's mixture is the softmax
//! of `β_i` times its conditional expected utilities:
//! `q_i(x_i) ∝ exp(β_i E_{q_{-i}}(u_i | x_i))`.
//!
//! Two routes reach a fixed point. The damped iteration
//! `q ← (1-λ) q + λ·response(q)` is the global phase; it only settles on
//! equilibria that are stable under the adjustment dynamic. Newton's method
//! on the log-odds form of the equations polishes to machine precision and,
//! started from a grid of seeds, also finds the unstable middle branches
//! that the iteration is repelled from.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::game::{Game, GameError, StrategyProfile};

/// Residual below which the damped phase hands over to Newton.
const NEWTON_HANDOFF: f64 = 1e-6;
/// Largest log-odds change allowed in one Newton step.
const MAX_LOG_STEP: f64 = 8.0;
const NEWTON_MAX_ITERATIONS: usize = 80;
/// Log-odds are clamped here when a seed has zero probabilities.
const MIN_PROBABILITY: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error(transparent)]
    Game(#[from] GameError),
    #[error("rationality vector has {found} entries, game has {expected} players")]
    BetaShape { expected: usize, found: usize },
    #[error("rationality of player {player} is not finite")]
    NonFiniteBeta { player: usize },
    #[error("invalid solver options: {0}")]
    Options(String),
}

/// Per-player inverse temperatures `β_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct RationalityVector(Vec<f64>);

impl RationalityVector {
    pub fn new(betas: Vec<f64>) -> Result<Self, SolverError> {
        if let Some(player) = betas.iter().position(|b| !b.is_finite()) {
            return Err(SolverError::NonFiniteBeta { player });
        }
        Ok(Self(betas))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn distance(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    /// `self + t · (other - self)`.
    pub fn lerp(&self, other: &Self, t: f64) -> Self {
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + t * (b - a)).collect())
    }

    pub(crate) fn from_raw(betas: Vec<f64>) -> Self {
        Self(betas)
    }
}

impl std::ops::Index<usize> for RationalityVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Bound on the residual sup-norm for a solution to count as converged.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Weight `λ` of the new response in the damped iteration.
    pub damping: f64,
    pub newton_polish: bool,
    /// Seeds per player-axis in the multistart grid.
    pub multistart_grid: usize,
    /// Random starting profiles used when the game is not two-player.
    pub random_restarts: usize,
    /// Solutions closer than this in sup-norm are the same equilibrium.
    pub dedupe_radius: f64,
    pub rng_seed: u64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-12,
            max_iterations: 10_000,
            damping: 0.5,
            newton_polish: true,
            multistart_grid: 50,
            random_restarts: 500,
            dedupe_radius: 1e-6,
            rng_seed: 0,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.tolerance > 0.0) {
            return Err(SolverError::Options(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(SolverError::Options(format!(
                "damping must lie in (0, 1], got {}",
                self.damping
            )));
        }
        if self.multistart_grid == 0 {
            return Err(SolverError::Options("multistart_grid must be at least 1".into()));
        }
        if !(self.dedupe_radius >= 0.0) {
            return Err(SolverError::Options("dedupe_radius must be nonnegative".into()));
        }
        Ok(())
    }
}

/// A profile together with the rationality vector it was solved at.
#[derive(Debug, Clone, PartialEq)]
pub struct QreSolution {
    pub betas: RationalityVector,
    pub profile: StrategyProfile,
    /// Sup-norm of `q - response(q)`.
    pub residual_norm: f64,
    pub expected_utilities: Vec<f64>,
    pub converged: bool,
    pub branch_id: Option<usize>,
}

impl QreSolution {
    pub(crate) fn evaluate(game: &Game, betas: &RationalityVector, profile: StrategyProfile, tolerance: f64) -> Self {
        let residual_norm = residual_sup(game, &profile, betas.as_slice());
        let expected_utilities = game.expected_utilities_unchecked(&profile);
        Self {
            betas: betas.clone(),
            converged: residual_norm <= tolerance,
            profile,
            residual_norm,
            expected_utilities,
            branch_id: None,
        }
    }

    /// Sum of all players' expected utilities.
    pub fn welfare(&self) -> f64 {
        self.expected_utilities.iter().sum()
    }
}

fn check_betas(game: &Game, betas: &RationalityVector) -> Result<(), SolverError> {
    if betas.len() != game.num_players() {
        return Err(SolverError::BetaShape {
            expected: game.num_players(),
            found: betas.len(),
        });
    }
    Ok(())
}

fn softmax_scaled(values: &[f64], beta: f64) -> Vec<f64> {
    let max = values.iter().map(|v| beta * v).fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|v| (beta * v - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

/// Logit response of `player` to the opponents' mixtures in `profile`.
pub fn logit_response(
    game: &Game,
    profile: &StrategyProfile,
    player: usize,
    beta: f64,
) -> Result<Vec<f64>, SolverError> {
    let cond = game.conditional_utilities(profile, player)?;
    Ok(softmax_scaled(&cond, beta))
}

pub(crate) fn response_unchecked(game: &Game, profile: &StrategyProfile, betas: &[f64]) -> StrategyProfile {
    StrategyProfile::from_raw(
        (0..game.num_players())
            .map(|i| softmax_scaled(&game.conditional_utilities_unchecked(profile, i), betas[i]))
            .collect(),
    )
}

pub(crate) fn residual_sup(game: &Game, profile: &StrategyProfile, betas: &[f64]) -> f64 {
    profile.sup_distance(&response_unchecked(game, profile, betas))
}

/// `q - response(q)`, concatenated over players.
pub fn qre_residual(
    game: &Game,
    profile: &StrategyProfile,
    betas: &RationalityVector,
) -> Result<Vec<f64>, SolverError> {
    game.check_profile(profile)?;
    check_betas(game, betas)?;
    let r = response_unchecked(game, profile, betas.as_slice());
    Ok(profile.flat().iter().zip(r.flat()).map(|(q, f)| q - f).collect())
}

/// Reduced log-odds coordinates: `y_i(k) = ln q_i(k) - ln q_i(last)`.
pub(crate) struct LogOdds<'a> {
    game: &'a Game,
    betas: &'a [f64],
    offsets: Vec<usize>,
    pub(crate) dim: usize,
}

impl<'a> LogOdds<'a> {
    pub(crate) fn new(game: &'a Game, betas: &'a [f64]) -> Self {
        let mut offsets = Vec::with_capacity(game.num_players());
        let mut dim = 0;
        for &n in game.strategy_counts() {
            offsets.push(dim);
            dim += n - 1;
        }
        Self {
            game,
            betas,
            offsets,
            dim,
        }
    }

    pub(crate) fn encode(&self, profile: &StrategyProfile) -> DVector<f64> {
        let mut y = DVector::zeros(self.dim);
        for (i, q) in profile.mixtures().iter().enumerate() {
            let last = q[q.len() - 1].max(MIN_PROBABILITY).ln();
            for k in 0..q.len() - 1 {
                y[self.offsets[i] + k] = q[k].max(MIN_PROBABILITY).ln() - last;
            }
        }
        y
    }

    pub(crate) fn decode(&self, y: &DVector<f64>) -> StrategyProfile {
        let mixtures = self
            .game
            .strategy_counts()
            .iter()
            .enumerate()
            .map(|(i, &n)| {
                let mut logits: Vec<f64> = (0..n - 1).map(|k| y[self.offsets[i] + k]).collect();
                logits.push(0.0);
                softmax_scaled(&logits, 1.0)
            })
            .collect();
        StrategyProfile::from_raw(mixtures)
    }

    /// `G(y) = y - β Δu(q(y))`, where `Δu` is the utility gap to the last strategy.
    pub(crate) fn residual(&self, q: &StrategyProfile, y: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(self.dim);
        for (i, &beta) in self.betas.iter().enumerate() {
            let cond = self.game.conditional_utilities_unchecked(q, i);
            let last = cond[cond.len() - 1];
            for k in 0..cond.len() - 1 {
                let idx = self.offsets[i] + k;
                g[idx] = y[idx] - beta * (cond[k] - last);
            }
        }
        g
    }

    pub(crate) fn jacobian(&self, q: &StrategyProfile) -> DMatrix<f64> {
        let counts = self.game.strategy_counts();
        let mut jac = DMatrix::identity(self.dim, self.dim);
        for i in 0..counts.len() {
            let ni = counts[i];
            for j in 0..counts.len() {
                if i == j {
                    continue;
                }
                let nj = counts[j];
                let cross = self.game.conditional_cross(q, i, j);
                let qj = q.mixture(j);
                for k in 0..ni - 1 {
                    for l in 0..nj - 1 {
                        // Σ_m (X[k][m] - X[last][m]) ∂q_j(m)/∂y_j(l)
                        let mut acc = 0.0;
                        for m in 0..nj {
                            let dq = qj[m] * (f64::from(u8::from(m == l)) - qj[l]);
                            acc += (cross[k][m] - cross[ni - 1][m]) * dq;
                        }
                        jac[(self.offsets[i] + k, self.offsets[j] + l)] = -self.betas[i] * acc;
                    }
                }
            }
        }
        jac
    }
}

/// Newton's method on the log-odds equations from `seed`. Returns the final
/// iterate whether or not it converged.
pub(crate) fn newton_refine(game: &Game, betas: &[f64], seed: &StrategyProfile, tolerance: f64) -> StrategyProfile {
    let sys = LogOdds::new(game, betas);
    if sys.dim == 0 {
        return seed.clone();
    }
    let mut y = sys.encode(seed);
    let mut q = sys.decode(&y);
    let mut g = sys.residual(&q, &y);
    let mut g_norm = g.amax();
    for _ in 0..NEWTON_MAX_ITERATIONS {
        if residual_sup(game, &q, betas) <= tolerance * 1e-2 {
            break;
        }
        let jac = sys.jacobian(&q);
        let Some(mut step) = jac.lu().solve(&(-&g)) else {
            break;
        };
        let big = step.amax();
        if !big.is_finite() {
            break;
        }
        if big > MAX_LOG_STEP {
            step *= MAX_LOG_STEP / big;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let y_try = &y + &step * t;
            let q_try = sys.decode(&y_try);
            let g_try = sys.residual(&q_try, &y_try);
            let n_try = g_try.amax();
            if n_try < g_norm || n_try == 0.0 {
                y = y_try;
                q = q_try;
                g = g_try;
                g_norm = n_try;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted || step.amax() * t <= 1e-15 * (1.0 + y.amax()) {
            break;
        }
    }
    q
}

/// Newton corrector used for continuation: stays near `seed`.
pub fn newton_solve(
    game: &Game,
    betas: &RationalityVector,
    seed: &StrategyProfile,
    options: &SolverOptions,
) -> Result<QreSolution, SolverError> {
    game.check_profile(seed)?;
    check_betas(game, betas)?;
    let q = newton_refine(game, betas.as_slice(), seed, options.tolerance);
    Ok(QreSolution::evaluate(game, betas, q, options.tolerance))
}

/// Solves for a QRE from `init` by damped fixed-point iteration, optionally
/// finished with a Newton polish. Non-convergence is reported through
/// `converged`, with the best iterate returned.
pub fn solve_qre(
    game: &Game,
    betas: &RationalityVector,
    init: &StrategyProfile,
    options: &SolverOptions,
) -> Result<QreSolution, SolverError> {
    game.check_profile(init)?;
    check_betas(game, betas)?;
    options.validate()?;
    Ok(solve_unchecked(game, betas, init, options))
}

pub(crate) fn solve_unchecked(
    game: &Game,
    betas: &RationalityVector,
    init: &StrategyProfile,
    options: &SolverOptions,
) -> QreSolution {
    let b = betas.as_slice();
    let lambda = options.damping;
    let handoff = if options.newton_polish {
        NEWTON_HANDOFF.max(options.tolerance)
    } else {
        options.tolerance
    };
    let mut q = init.clone();
    let mut best = (f64::INFINITY, q.clone());
    for _ in 0..=options.max_iterations {
        let r = response_unchecked(game, &q, b);
        let res = q.sup_distance(&r);
        if res < best.0 {
            best = (res, q.clone());
        }
        if res <= handoff {
            break;
        }
        let next = q
            .mixtures()
            .iter()
            .zip(r.mixtures())
            .map(|(qi, ri)| {
                let mut m: Vec<f64> = qi
                    .iter()
                    .zip(ri)
                    .map(|(a, f)| (1.0 - lambda) * a + lambda * f)
                    .collect();
                let s: f64 = m.iter().sum();
                m.iter_mut().for_each(|v| *v /= s);
                m
            })
            .collect();
        q = StrategyProfile::from_raw(next);
    }
    let (best_res, best_q) = best;
    if options.newton_polish && best_res > options.tolerance * 1e-2 {
        let polished = newton_refine(game, b, &best_q, options.tolerance);
        let polished_res = residual_sup(game, &polished, b);
        if polished_res <= options.tolerance || polished_res < best_res {
            return QreSolution::evaluate(game, betas, polished, options.tolerance);
        }
    }
    QreSolution::evaluate(game, betas, best_q, options.tolerance)
}

/// Deterministic starting profiles for multistart enumeration.
pub(crate) fn seed_profiles(game: &Game, options: &SolverOptions) -> Vec<StrategyProfile> {
    let counts = game.strategy_counts();
    let grid = options.multistart_grid;
    let mut rng = ChaCha8Rng::seed_from_u64(options.rng_seed);
    let axis = |n: usize, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        if n == 1 {
            return vec![vec![1.0]];
        }
        if n == 2 {
            return (0..grid)
                .map(|k| {
                    let p = (k as f64 + 0.5) / grid as f64;
                    vec![p, 1.0 - p]
                })
                .collect();
        }
        let mut pts = vec![vec![1.0 / n as f64; n]];
        for vertex in 0..n {
            let mut q = vec![0.1 / (n - 1) as f64; n];
            q[vertex] = 0.9;
            pts.push(q);
        }
        while pts.len() < grid.max(n + 1) {
            pts.push(random_mixture(n, rng));
        }
        pts
    };
    if counts.len() == 2 {
        let rows = axis(counts[0], &mut rng);
        let cols = axis(counts[1], &mut rng);
        let mut seeds = Vec::with_capacity(rows.len() * cols.len());
        for r in &rows {
            for c in &cols {
                seeds.push(StrategyProfile::from_raw(vec![r.clone(), c.clone()]));
            }
        }
        return seeds;
    }
    let mut seeds = vec![StrategyProfile::uniform(counts)];
    if game.num_profiles() <= 256 {
        // Near-pure seeds at every pure profile.
        let mut pure = vec![0usize; counts.len()];
        loop {
            let mixtures = counts
                .iter()
                .zip(&pure)
                .map(|(&n, &x)| {
                    if n == 1 {
                        return vec![1.0];
                    }
                    let mut q = vec![0.1 / (n - 1) as f64; n];
                    q[x] = 0.9;
                    q
                })
                .collect();
            seeds.push(StrategyProfile::from_raw(mixtures));
            let mut k = counts.len();
            loop {
                if k == 0 {
                    break;
                }
                k -= 1;
                pure[k] += 1;
                if pure[k] < counts[k] {
                    break;
                }
                pure[k] = 0;
            }
            if pure.iter().all(|&x| x == 0) {
                break;
            }
        }
    }
    for _ in 0..options.random_restarts {
        let mixtures = counts.iter().map(|&n| random_mixture(n, &mut rng)).collect();
        seeds.push(StrategyProfile::from_raw(mixtures));
    }
    seeds
}

/// Uniform draw from the simplex (normalized exponentials).
fn random_mixture(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut q: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = q.iter().sum();
    q.iter_mut().for_each(|v| *v /= s);
    q
}

/// Finds all equilibria reachable from the seed grid: each seed is run
/// through both the damped iteration and a direct Newton solve. Results are
/// deduplicated in profile space and sorted lexicographically.
pub fn enumerate_qre(
    game: &Game,
    betas: &RationalityVector,
    options: &SolverOptions,
) -> Result<Vec<QreSolution>, SolverError> {
    enumerate_qre_seeded(game, betas, options, &[])
}

/// [`enumerate_qre`] with additional caller-provided seeds tried first.
pub fn enumerate_qre_seeded(
    game: &Game,
    betas: &RationalityVector,
    options: &SolverOptions,
    extra_seeds: &[StrategyProfile],
) -> Result<Vec<QreSolution>, SolverError> {
    check_betas(game, betas)?;
    options.validate()?;
    for s in extra_seeds {
        game.check_profile(s)?;
    }
    let mut seeds = extra_seeds.to_vec();
    seeds.extend(seed_profiles(game, options));
    let found: Vec<Vec<QreSolution>> = seeds
        .par_iter()
        .map(|seed| {
            let direct = newton_refine(game, betas.as_slice(), seed, options.tolerance);
            let direct = QreSolution::evaluate(game, betas, direct, options.tolerance);
            let damped = solve_unchecked(game, betas, seed, options);
            [direct, damped].into_iter().filter(|s| s.converged).collect()
        })
        .collect();
    Ok(dedupe_and_sort(found.into_iter().flatten(), options.dedupe_radius))
}

pub(crate) fn dedupe_and_sort(solutions: impl IntoIterator<Item = QreSolution>, radius: f64) -> Vec<QreSolution> {
    let mut unique: Vec<QreSolution> = Vec::new();
    for s in solutions {
        if let Some(existing) = unique.iter_mut().find(|u| u.profile.sup_distance(&s.profile) <= radius) {
            if s.residual_norm < existing.residual_norm {
                *existing = s;
            }
        } else {
            unique.push(s);
        }
    }
    unique.sort_by(|a, b| {
        a.profile
            .flat()
            .iter()
            .zip(b.profile.flat())
            .map(|(x, y)| x.total_cmp(&y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    unique
}

/// `∂ response_i / ∂ q_j` in full probability coordinates; `blocks[i][j]` is
/// `|X_i| × |X_j|` and diagonal blocks are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseJacobian {
    pub blocks: Vec<Vec<DMatrix<f64>>>,
}

impl ResponseJacobian {
    /// Block `(i, j)` in reduced simplex coordinates: the last strategy of
    /// each player is eliminated as `1 - Σ` of the others.
    pub fn reduced_block(&self, i: usize, j: usize) -> DMatrix<f64> {
        let b = &self.blocks[i][j];
        let (ni, nj) = b.shape();
        DMatrix::from_fn(ni - 1, nj - 1, |k, m| b[(k, m)] - b[(k, nj - 1)])
    }

    /// The full reduced Jacobian of the response map.
    pub fn reduced(&self) -> DMatrix<f64> {
        let n = self.blocks.len();
        let dims: Vec<usize> = (0..n).map(|i| self.blocks[i][0].nrows() - 1).collect();
        let total: usize = dims.iter().sum();
        let mut out = DMatrix::zeros(total, total);
        let mut row = 0;
        for i in 0..n {
            let mut col = 0;
            for j in 0..n {
                if dims[i] > 0 && dims[j] > 0 {
                    out.view_mut((row, col), (dims[i], dims[j]))
                        .copy_from(&self.reduced_block(i, j));
                }
                col += dims[j];
            }
            row += dims[i];
        }
        out
    }
}

/// Analytic derivative of the logit response map.
pub fn response_jacobian(
    game: &Game,
    profile: &StrategyProfile,
    betas: &RationalityVector,
) -> Result<ResponseJacobian, SolverError> {
    game.check_profile(profile)?;
    check_betas(game, betas)?;
    let counts = game.strategy_counts();
    let n = counts.len();
    let response = response_unchecked(game, profile, betas.as_slice());
    let mut blocks = vec![Vec::with_capacity(n); n];
    for (i, row) in blocks.iter_mut().enumerate() {
        let r = response.mixture(i);
        for j in 0..n {
            if i == j {
                row.push(DMatrix::zeros(counts[i], counts[j]));
                continue;
            }
            let cross = game.conditional_cross(profile, i, j);
            let block = DMatrix::from_fn(counts[i], counts[j], |k, m| {
                let mean: f64 = (0..counts[i]).map(|l| r[l] * cross[l][m]).sum();
                betas[i] * r[k] * (cross[k][m] - mean)
            });
            row.push(block);
        }
    }
    Ok(ResponseJacobian { blocks })
}
