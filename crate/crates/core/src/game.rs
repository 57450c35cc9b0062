//! Finite normal-form games, mixed-strategy profiles and the expected-utility
//! algebra the solver and continuation code are built on.
//!
//! Utilities are stored per player as a flat tensor over joint pure-strategy
//! profiles in row-major order with player 0 varying slowest. Every
//! expectation enumerates the joint profile space, which is fine for
//! desk-scale games.

use thiserror::Error;

/// Tolerance on `Σ q_i = 1` accepted when a profile is built from user data.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("a game needs at least one player")]
    NoPlayers,
    #[error("player {player} has no strategies")]
    NoStrategies { player: usize },
    #[error("expected utilities for {expected} players, found {found}")]
    PlayerCount { expected: usize, found: usize },
    #[error("utility tensor of player {player} has {found} entries, expected {expected}")]
    UtilityShape {
        player: usize,
        expected: usize,
        found: usize,
    },
    #[error("utility of player {player} at joint index {index} is not finite")]
    NonFiniteUtility { player: usize, index: usize },
    #[error("label shape mismatch: {0}")]
    Labels(String),
    #[error("profile has {found} players, game has {expected}")]
    ProfilePlayers { expected: usize, found: usize },
    #[error("profile for player {player} has {found} entries, expected {expected}")]
    ProfileShape {
        player: usize,
        expected: usize,
        found: usize,
    },
    #[error("probability {value} of player {player}, strategy {strategy} is outside [0, 1]")]
    ProbabilityRange { player: usize, strategy: usize, value: f64 },
    #[error("mixture of player {player} sums to {sum}, not 1")]
    NotNormalized { player: usize, sum: f64 },
    #[error("player index {player} out of range for {players} players")]
    PlayerOutOfRange { player: usize, players: usize },
    #[error("strategy index {strategy} out of range for player {player} with {count} strategies")]
    StrategyOutOfRange {
        player: usize,
        strategy: usize,
        count: usize,
    },
    #[error("scaling vector has {found} entries, game has {expected} players")]
    ScalingShape { expected: usize, found: usize },
    #[error("scaling factor {value} for player {player} is not finite")]
    NonFiniteScaling { player: usize, value: f64 },
}

/// A finite game in normal form.
#[derive(Debug, Clone, PartialEq)]
pub struct Game {
    players: Vec<String>,
    strategies: Vec<Vec<String>>,
    counts: Vec<usize>,
    strides: Vec<usize>,
    utilities: Vec<Vec<f64>>,
}

impl Game {
    /// Builds a game with default labels (`P0`, `P1`, ... and `s1`, `s2`, ...).
    pub fn new(strategy_counts: &[usize], utilities: Vec<Vec<f64>>) -> Result<Self, GameError> {
        let players = (0..strategy_counts.len()).map(|i| format!("P{i}")).collect();
        let strategies = strategy_counts
            .iter()
            .map(|&n| (1..=n).map(|k| format!("s{k}")).collect())
            .collect();
        Self::with_labels(players, strategies, utilities)
    }

    pub fn with_labels(
        players: Vec<String>,
        strategies: Vec<Vec<String>>,
        utilities: Vec<Vec<f64>>,
    ) -> Result<Self, GameError> {
        if players.is_empty() {
            return Err(GameError::NoPlayers);
        }
        if strategies.len() != players.len() {
            return Err(GameError::Labels(format!(
                "{} player names but {} strategy lists",
                players.len(),
                strategies.len()
            )));
        }
        let counts: Vec<usize> = strategies.iter().map(Vec::len).collect();
        if let Some(player) = counts.iter().position(|&n| n == 0) {
            return Err(GameError::NoStrategies { player });
        }
        if utilities.len() != players.len() {
            return Err(GameError::PlayerCount {
                expected: players.len(),
                found: utilities.len(),
            });
        }
        let total: usize = counts.iter().product();
        for (player, u) in utilities.iter().enumerate() {
            if u.len() != total {
                return Err(GameError::UtilityShape {
                    player,
                    expected: total,
                    found: u.len(),
                });
            }
            if let Some(index) = u.iter().position(|v| !v.is_finite()) {
                return Err(GameError::NonFiniteUtility { player, index });
            }
        }
        let mut strides = vec![1; counts.len()];
        for i in (0..counts.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * counts[i + 1];
        }
        Ok(Self {
            players,
            strategies,
            counts,
            strides,
            utilities,
        })
    }

    /// Two-player game from row and column payoff matrices (`row[r][c]`).
    pub fn bimatrix(row: &[Vec<f64>], col: &[Vec<f64>]) -> Result<Self, GameError> {
        let rows = row.len();
        let cols = row.first().map_or(0, Vec::len);
        let flat = |m: &[Vec<f64>], player: usize| -> Result<Vec<f64>, GameError> {
            let found: usize = m.iter().map(Vec::len).sum();
            if m.len() != rows || m.iter().any(|r| r.len() != cols) {
                return Err(GameError::UtilityShape {
                    player,
                    expected: rows * cols,
                    found,
                });
            }
            Ok(m.iter().flatten().copied().collect())
        };
        let u_row = flat(row, 0)?;
        let u_col = flat(col, 1)?;
        let mut game = Self::new(&[rows, cols], vec![u_row, u_col])?;
        game.players = vec!["Row".into(), "Column".into()];
        Ok(game)
    }

    pub fn num_players(&self) -> usize {
        self.counts.len()
    }

    pub fn strategy_counts(&self) -> &[usize] {
        &self.counts
    }

    /// Number of joint pure-strategy profiles.
    pub fn num_profiles(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn players(&self) -> &[String] {
        &self.players
    }

    pub fn strategies(&self) -> &[Vec<String>] {
        &self.strategies
    }

    /// Flat utility tensor of one player, player 0 slowest.
    pub fn utilities(&self, player: usize) -> &[f64] {
        &self.utilities[player]
    }

    pub fn joint_index(&self, pure: &[usize]) -> usize {
        pure.iter().zip(&self.strides).map(|(x, s)| x * s).sum()
    }

    pub fn utility(&self, player: usize, pure: &[usize]) -> f64 {
        self.utilities[player][self.joint_index(pure)]
    }

    fn check_player(&self, player: usize) -> Result<(), GameError> {
        if player >= self.num_players() {
            return Err(GameError::PlayerOutOfRange {
                player,
                players: self.num_players(),
            });
        }
        Ok(())
    }

    /// Checks that `profile` has this game's shape.
    pub fn check_profile(&self, profile: &StrategyProfile) -> Result<(), GameError> {
        if profile.num_players() != self.num_players() {
            return Err(GameError::ProfilePlayers {
                expected: self.num_players(),
                found: profile.num_players(),
            });
        }
        for (player, (&n, q)) in self.counts.iter().zip(profile.mixtures()).enumerate() {
            if q.len() != n {
                return Err(GameError::ProfileShape {
                    player,
                    expected: n,
                    found: q.len(),
                });
            }
        }
        Ok(())
    }

    /// `E(u_i) = Σ_x Π_j q_j(x_j) u_i(x)`.
    pub fn expected_utility(&self, profile: &StrategyProfile, player: usize) -> Result<f64, GameError> {
        self.check_profile(profile)?;
        self.check_player(player)?;
        Ok(self.expected_utility_unchecked(profile, player))
    }

    pub(crate) fn expected_utility_unchecked(&self, profile: &StrategyProfile, player: usize) -> f64 {
        let cond = self.conditional_utilities_unchecked(profile, player);
        cond.iter().zip(profile.mixture(player)).map(|(c, q)| c * q).sum()
    }

    /// Expected utilities of all players.
    pub fn expected_utilities(&self, profile: &StrategyProfile) -> Result<Vec<f64>, GameError> {
        self.check_profile(profile)?;
        Ok(self.expected_utilities_unchecked(profile))
    }

    pub(crate) fn expected_utilities_unchecked(&self, profile: &StrategyProfile) -> Vec<f64> {
        (0..self.num_players())
            .map(|i| self.expected_utility_unchecked(profile, i))
            .collect()
    }

    /// `E_{q_{-i}}(u_i | x_i = strategy)`: the opponents' mixture is used, the
    /// player's own mixture is ignored.
    pub fn conditional_expected_utility(
        &self,
        profile: &StrategyProfile,
        player: usize,
        strategy: usize,
    ) -> Result<f64, GameError> {
        self.check_profile(profile)?;
        self.check_player(player)?;
        if strategy >= self.counts[player] {
            return Err(GameError::StrategyOutOfRange {
                player,
                strategy,
                count: self.counts[player],
            });
        }
        Ok(self.conditional_utilities_unchecked(profile, player)[strategy])
    }

    /// Conditional expected utilities of every pure strategy of `player`.
    pub fn conditional_utilities(&self, profile: &StrategyProfile, player: usize) -> Result<Vec<f64>, GameError> {
        self.check_profile(profile)?;
        self.check_player(player)?;
        Ok(self.conditional_utilities_unchecked(profile, player))
    }

    pub(crate) fn conditional_utilities_unchecked(&self, profile: &StrategyProfile, player: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.counts[player]];
        let u = &self.utilities[player];
        if self.num_players() == 2 {
            // Hot path for bimatrix games.
            let other = 1 - player;
            let q = profile.mixture(other);
            for (xi, slot) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (xo, &w) in q.iter().enumerate() {
                    let idx = if player == 0 {
                        xi * self.strides[0] + xo
                    } else {
                        xo * self.strides[0] + xi
                    };
                    acc += w * u[idx];
                }
                *slot = acc;
            }
            return out;
        }
        self.for_each_joint(|pure, idx| {
            let mut w = 1.0;
            for (j, &x) in pure.iter().enumerate() {
                if j != player {
                    w *= profile.mixture(j)[x];
                }
            }
            out[pure[player]] += w * u[idx];
        });
        out
    }

    /// Expected utility of `player` when `pinned` plays each of its pure
    /// strategies and everybody else mixes: `∂E(u_i)/∂q_pinned`.
    pub(crate) fn utility_given_pinned(&self, profile: &StrategyProfile, player: usize, pinned: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.counts[pinned]];
        let u = &self.utilities[player];
        self.for_each_joint(|pure, idx| {
            let mut w = 1.0;
            for (j, &x) in pure.iter().enumerate() {
                if j != pinned {
                    w *= profile.mixture(j)[x];
                }
            }
            out[pure[pinned]] += w * u[idx];
        });
        out
    }

    /// `∂ E(u_i | x_i) / ∂ q_j(x_j)` for `j != i`, as a `|X_i| × |X_j|` table.
    pub(crate) fn conditional_cross(&self, profile: &StrategyProfile, i: usize, j: usize) -> Vec<Vec<f64>> {
        debug_assert_ne!(i, j);
        let mut out = vec![vec![0.0; self.counts[j]]; self.counts[i]];
        let u = &self.utilities[i];
        self.for_each_joint(|pure, idx| {
            let mut w = 1.0;
            for (k, &x) in pure.iter().enumerate() {
                if k != i && k != j {
                    w *= profile.mixture(k)[x];
                }
            }
            out[pure[i]][pure[j]] += w * u[idx];
        });
        out
    }

    fn for_each_joint(&self, mut f: impl FnMut(&[usize], usize)) {
        let n = self.num_players();
        let mut pure = vec![0usize; n];
        for idx in 0..self.num_profiles() {
            f(&pure, idx);
            for k in (0..n).rev() {
                pure[k] += 1;
                if pure[k] < self.counts[k] {
                    break;
                }
                pure[k] = 0;
            }
        }
    }

    /// Returns a new game with `u_i` replaced by `α_i · u_i`.
    pub fn scale_utilities(&self, alphas: &ScalingVector) -> Result<Self, GameError> {
        if alphas.len() != self.num_players() {
            return Err(GameError::ScalingShape {
                expected: self.num_players(),
                found: alphas.len(),
            });
        }
        let mut scaled = self.clone();
        for (u, &a) in scaled.utilities.iter_mut().zip(alphas.as_slice()) {
            u.iter_mut().for_each(|v| *v *= a);
        }
        Ok(scaled)
    }

    /// The coordination game with payoffs `2|1, 0|0 / 0|0, 1|2`.
    pub fn battle_of_sexes() -> Self {
        Self::bimatrix(&[vec![2.0, 0.0], vec![0.0, 1.0]], &[vec![1.0, 0.0], vec![0.0, 2.0]])
            .expect("bundled game is well formed")
    }

    /// Battle of the sexes with every utility multiplied by -1.
    pub fn battle_of_sexes_negated() -> Self {
        Self::battle_of_sexes()
            .scale_utilities(&ScalingVector::new(vec![-1.0, -1.0]).expect("finite"))
            .expect("two players")
    }

    /// Relabels the strategies of `player` so that new strategy `k` is old
    /// strategy `perm[k]`.
    pub fn permute_strategies(&self, player: usize, perm: &[usize]) -> Self {
        let mut out = self.clone();
        out.strategies[player] = perm.iter().map(|&k| self.strategies[player][k].clone()).collect();
        for (u_new, u_old) in out.utilities.iter_mut().zip(&self.utilities) {
            self.for_each_joint(|pure, idx| {
                let mut src = pure.to_vec();
                src[player] = perm[pure[player]];
                u_new[idx] = u_old[self.joint_index(&src)];
            });
        }
        out
    }
}

/// Per-player multipliers `α_i`; `1 - α_i` reads as a tax rate on player `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalingVector(Vec<f64>);

impl ScalingVector {
    pub fn new(alphas: Vec<f64>) -> Result<Self, GameError> {
        if let Some((player, &value)) = alphas.iter().enumerate().find(|(_, a)| !a.is_finite()) {
            return Err(GameError::NonFiniteScaling { player, value });
        }
        Ok(Self(alphas))
    }

    pub fn from_tax_rates(rates: &[f64]) -> Result<Self, GameError> {
        Self::new(rates.iter().map(|t| 1.0 - t).collect())
    }

    pub fn tax_rates(&self) -> Vec<f64> {
        self.0.iter().map(|a| 1.0 - a).collect()
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
}

/// One probability vector per player.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyProfile {
    mixtures: Vec<Vec<f64>>,
}

impl StrategyProfile {
    /// Validates that each mixture lies on its simplex.
    pub fn new(mixtures: Vec<Vec<f64>>) -> Result<Self, GameError> {
        for (player, q) in mixtures.iter().enumerate() {
            if q.is_empty() {
                return Err(GameError::NoStrategies { player });
            }
            for (strategy, &value) in q.iter().enumerate() {
                if !(0.0..=1.0).contains(&value) {
                    return Err(GameError::ProbabilityRange {
                        player,
                        strategy,
                        value,
                    });
                }
            }
            let sum: f64 = q.iter().sum();
            if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(GameError::NotNormalized { player, sum });
            }
        }
        Ok(Self { mixtures })
    }

    /// Builds a profile and validates it against the game's shape.
    pub fn for_game(game: &Game, mixtures: Vec<Vec<f64>>) -> Result<Self, GameError> {
        let profile = Self::new(mixtures)?;
        game.check_profile(&profile)?;
        Ok(profile)
    }

    pub(crate) fn from_raw(mixtures: Vec<Vec<f64>>) -> Self {
        Self { mixtures }
    }

    pub fn uniform(strategy_counts: &[usize]) -> Self {
        Self {
            mixtures: strategy_counts.iter().map(|&n| vec![1.0 / n as f64; n]).collect(),
        }
    }

    pub fn pure(strategy_counts: &[usize], choice: &[usize]) -> Result<Self, GameError> {
        if choice.len() != strategy_counts.len() {
            return Err(GameError::ProfilePlayers {
                expected: strategy_counts.len(),
                found: choice.len(),
            });
        }
        let mut mixtures = Vec::with_capacity(choice.len());
        for (player, (&n, &x)) in strategy_counts.iter().zip(choice).enumerate() {
            if x >= n {
                return Err(GameError::StrategyOutOfRange {
                    player,
                    strategy: x,
                    count: n,
                });
            }
            let mut q = vec![0.0; n];
            q[x] = 1.0;
            mixtures.push(q);
        }
        Ok(Self { mixtures })
    }

    pub fn num_players(&self) -> usize {
        self.mixtures.len()
    }

    pub fn mixture(&self, player: usize) -> &[f64] {
        &self.mixtures[player]
    }

    pub fn mixtures(&self) -> &[Vec<f64>] {
        &self.mixtures
    }

    pub fn into_mixtures(self) -> Vec<Vec<f64>> {
        self.mixtures
    }

    /// All probabilities, player 0 first.
    pub fn flat(&self) -> Vec<f64> {
        self.mixtures.iter().flatten().copied().collect()
    }

    /// Largest absolute coordinate difference.
    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.mixtures
            .iter()
            .flatten()
            .zip(other.mixtures.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Shannon entropy (nats) of each player's mixture, with `0 ln 0 = 0`.
    pub fn entropy(&self) -> Vec<f64> {
        self.mixtures
            .iter()
            .map(|q| -q.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>())
            .map(|h| h.max(0.0))
            .collect()
    }
}

/// Per-player Shannon entropies of a profile, in nats.
pub fn strategy_entropy(profile: &StrategyProfile) -> Vec<f64> {
    profile.entropy()
}
