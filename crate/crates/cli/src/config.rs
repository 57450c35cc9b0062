//! JSON run configuration. Every field is optional; command-line flags take
//! precedence over the file.

use std::path::Path;

use qre_core::{QreSolution, SolverOptions};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub game: Option<String>,
    pub betas: Option<Vec<f64>>,
    pub grid: Option<GridConfig>,
    pub waypoints: Option<Vec<Vec<f64>>>,
    pub step: Option<f64>,
    pub procedure: Option<String>,
    pub delta: Option<f64>,
    pub gamma: Option<f64>,
    pub gamma_grid: Option<String>,
    pub t_max: Option<usize>,
    pub enforce_start_cap: Option<bool>,
    pub start_branch: Option<String>,
    pub jump_threshold: Option<f64>,
    pub output: Option<String>,
    pub seed: Option<u64>,
    pub solver: Option<SolverConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub points: Vec<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub tolerance: Option<f64>,
    pub max_iterations: Option<usize>,
    pub damping: Option<f64>,
    pub newton_polish: Option<bool>,
    pub multistart_grid: Option<usize>,
    pub random_restarts: Option<usize>,
    pub dedupe_radius: Option<f64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::new("config", format!("{}: {e}", path.display())))
    }

    pub fn solver_options(&self, seed: Option<u64>, multistart_grid: Option<usize>) -> Result<SolverOptions, CliError> {
        let mut o = SolverOptions::default();
        if let Some(s) = &self.solver {
            if let Some(v) = s.tolerance {
                o.tolerance = v;
            }
            if let Some(v) = s.max_iterations {
                o.max_iterations = v;
            }
            if let Some(v) = s.damping {
                o.damping = v;
            }
            if let Some(v) = s.newton_polish {
                o.newton_polish = v;
            }
            if let Some(v) = s.multistart_grid {
                o.multistart_grid = v;
            }
            if let Some(v) = s.random_restarts {
                o.random_restarts = v;
            }
            if let Some(v) = s.dedupe_radius {
                o.dedupe_radius = v;
            }
        }
        if let Some(v) = seed.or(self.seed) {
            o.rng_seed = v;
        }
        if let Some(v) = multistart_grid {
            o.multistart_grid = v;
        }
        o.validate().map_err(|e| CliError::new("config", e.to_string()))?;
        Ok(o)
    }
}

/// Comma-separated reals on the command line, e.g. `5,5`.
#[derive(Debug, Clone)]
pub struct Reals(pub Vec<f64>);

impl std::str::FromStr for Reals {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_vector(s).map(Self)
    }
}

/// Semicolon-separated vectors on the command line, e.g. `5,5;0,5;5,5`.
#[derive(Debug, Clone)]
pub struct Waypoints(pub Vec<Vec<f64>>);

impl std::str::FromStr for Waypoints {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_waypoints(s).map(Self)
    }
}

/// Comma-separated reals: `5,5`.
pub fn parse_vector(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|t| {
            let v: f64 = t.trim().parse().map_err(|_| format!("not a number: {t:?}"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("not finite: {t:?}"))
            }
        })
        .collect()
}

/// Semicolon-separated vectors: `5,5;0,5;5,5`.
pub fn parse_waypoints(s: &str) -> Result<Vec<Vec<f64>>, String> {
    s.split(';').map(parse_vector).collect()
}

/// Inclusive linear range `start:stop:count`.
pub fn parse_range(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [a, b, n] = parts.as_slice() else {
        return Err(format!("expected start:stop:count, got {s:?}"));
    };
    let a: f64 = a.trim().parse().map_err(|_| format!("bad start in {s:?}"))?;
    let b: f64 = b.trim().parse().map_err(|_| format!("bad stop in {s:?}"))?;
    let n: usize = n.trim().parse().map_err(|_| format!("bad count in {s:?}"))?;
    if n == 0 || !a.is_finite() || !b.is_finite() {
        return Err(format!("range {s:?} must have finite ends and a positive count"));
    }
    if n == 1 {
        return Ok(vec![a]);
    }
    Ok((0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect())
}

/// Which of the equilibria at the start point to follow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BranchSelector {
    /// Position in the lexicographically sorted solution list.
    Index(usize),
    MaxEu(usize),
    MinEu(usize),
    MaxWelfare,
    MinWelfare,
}

impl std::str::FromStr for BranchSelector {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let player = |v: &str| v.parse::<usize>().map_err(|_| format!("bad player index in {s:?}"));
        match s.split_once(':') {
            Some(("index", v)) => Ok(Self::Index(v.parse().map_err(|_| format!("bad index in {s:?}"))?)),
            Some(("max-eu", v)) => Ok(Self::MaxEu(player(v)?)),
            Some(("min-eu", v)) => Ok(Self::MinEu(player(v)?)),
            None if s == "max-welfare" => Ok(Self::MaxWelfare),
            None if s == "min-welfare" => Ok(Self::MinWelfare),
            None => s
                .parse()
                .map(Self::Index)
                .map_err(|_| format!("unknown branch selector {s:?}")),
            _ => Err(format!("unknown branch selector {s:?}")),
        }
    }
}

impl BranchSelector {
    pub fn select(self, mut solutions: Vec<QreSolution>) -> Result<QreSolution, CliError> {
        if solutions.is_empty() {
            return Err(CliError::new("solver", "no equilibrium found at the start point"));
        }
        let players = solutions[0].expected_utilities.len();
        let by = |f: &dyn Fn(&QreSolution) -> f64, max: bool, sols: &[QreSolution]| {
            let mut best = 0;
            for k in 1..sols.len() {
                let (a, b) = (f(&sols[k]), f(&sols[best]));
                if (max && a > b) || (!max && a < b) {
                    best = k;
                }
            }
            best
        };
        let check = |i: usize| {
            if i < players {
                Ok(())
            } else {
                Err(CliError::new("config", format!("player {i} out of range")))
            }
        };
        let k = match self {
            Self::Index(k) => {
                if k >= solutions.len() {
                    return Err(CliError::new(
                        "config",
                        format!("branch index {k} out of range ({} solutions)", solutions.len()),
                    ));
                }
                k
            }
            Self::MaxEu(i) => {
                check(i)?;
                by(&|s| s.expected_utilities[i], true, &solutions)
            }
            Self::MinEu(i) => {
                check(i)?;
                by(&|s| s.expected_utilities[i], false, &solutions)
            }
            Self::MaxWelfare => by(&|s| s.welfare(), true, &solutions),
            Self::MinWelfare => by(&|s| s.welfare(), false, &solutions),
        };
        Ok(solutions.swap_remove(k))
    }
}
