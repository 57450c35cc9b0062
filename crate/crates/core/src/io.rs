//! Game files and CSV export.
//!
//! Games are JSON documents:
//!
//! ```json
//! {
//!   "players": ["Row", "Column"],
//!   "strategies": [["s1", "s2"], ["s1", "s2"]],
//!   "utilities": [[[2, 0], [0, 1]], [[1, 0], [0, 2]]],
//!   "alphas": [1.0, 1.0]
//! }
//! ```
//!
//! `utilities[i]` is nested one level per player, player 0 outermost.
//! `alphas` is optional and scales each player's utilities at load time.
//!
//! All floats are written with 17 significant digits so that CSV output
//! round-trips exactly.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::continuation::{PathTrace, SurfaceSample};
use crate::game::{Game, GameError, ScalingVector};
use crate::policy::WelfareReport;

/// Games available by name without a file.
pub const BUNDLED_GAMES: [&str; 2] = ["battle_of_sexes", "battle_of_sexes_negated"];

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{location}: {source}")]
    Parse {
        location: String,
        source: serde_json::Error,
    },
    #[error("{location}: {message}")]
    Shape { location: String, message: String },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Nested {
    Value(f64),
    List(Vec<Nested>),
}

/// On-disk form of a [`Game`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameFile {
    pub players: Vec<String>,
    pub strategies: Vec<Vec<String>>,
    pub utilities: Vec<Nested>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alphas: Option<Vec<f64>>,
}

impl GameFile {
    pub fn from_game(game: &Game) -> Self {
        let counts = game.strategy_counts();
        let utilities = (0..game.num_players())
            .map(|i| nest(game.utilities(i), counts))
            .collect();
        Self {
            players: game.players().to_vec(),
            strategies: game.strategies().to_vec(),
            utilities,
            alphas: None,
        }
    }

    /// Validates shapes and builds the game, applying `alphas` if present.
    pub fn to_game(&self) -> Result<Game, IoError> {
        if self.strategies.len() != self.players.len() {
            return Err(shape(
                "strategies",
                format!(
                    "{} strategy lists for {} players",
                    self.strategies.len(),
                    self.players.len()
                ),
            ));
        }
        if self.utilities.len() != self.players.len() {
            return Err(shape(
                "utilities",
                format!(
                    "{} utility tables for {} players",
                    self.utilities.len(),
                    self.players.len()
                ),
            ));
        }
        let counts: Vec<usize> = self.strategies.iter().map(Vec::len).collect();
        let mut flat = Vec::with_capacity(self.players.len());
        for (i, table) in self.utilities.iter().enumerate() {
            let mut out = Vec::new();
            flatten(
                table,
                &counts,
                &mut format!("utilities[{i}] (player {:?})", self.players[i]),
                &mut out,
            )?;
            flat.push(out);
        }
        let game = Game::with_labels(self.players.clone(), self.strategies.clone(), flat)?;
        match &self.alphas {
            Some(a) => {
                if a.len() != game.num_players() {
                    return Err(shape(
                        "alphas",
                        format!("{} entries for {} players", a.len(), game.num_players()),
                    ));
                }
                Ok(game.scale_utilities(&ScalingVector::new(a.clone())?)?)
            }
            None => Ok(game),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("game files serialize")
    }
}

fn shape(location: &str, message: String) -> IoError {
    IoError::Shape {
        location: location.into(),
        message,
    }
}

fn nest(values: &[f64], counts: &[usize]) -> Nested {
    match counts.split_first() {
        None => Nested::Value(values[0]),
        Some((&n, rest)) => {
            let block = values.len() / n;
            Nested::List(
                (0..n)
                    .map(|k| nest(&values[k * block..(k + 1) * block], rest))
                    .collect(),
            )
        }
    }
}

fn flatten(node: &Nested, counts: &[usize], location: &mut String, out: &mut Vec<f64>) -> Result<(), IoError> {
    match (node, counts.split_first()) {
        (Nested::Value(v), None) => {
            if !v.is_finite() {
                return Err(shape(location, "non-finite utility".into()));
            }
            out.push(*v);
            Ok(())
        }
        (Nested::List(items), Some((&n, rest))) => {
            if items.len() != n {
                return Err(shape(location, format!("expected {n} entries, found {}", items.len())));
            }
            for (k, item) in items.iter().enumerate() {
                let len = location.len();
                location.push_str(&format!("[{k}]"));
                flatten(item, rest, location, out)?;
                location.truncate(len);
            }
            Ok(())
        }
        (Nested::Value(_), Some((&n, _))) => Err(shape(
            location,
            format!("expected a list of {n} entries, found a number"),
        )),
        (Nested::List(_), None) => Err(shape(location, "expected a number, found a list".into())),
    }
}

/// Parses a game document; `source` names it in error messages.
pub fn parse_game(text: &str, source: &str) -> Result<Game, IoError> {
    let file: GameFile = serde_json::from_str(text).map_err(|e| IoError::Parse {
        location: source.into(),
        source: e,
    })?;
    file.to_game().map_err(|e| match e {
        IoError::Shape { location, message } => IoError::Shape {
            location: format!("{source}: {location}"),
            message,
        },
        other => other,
    })
}

/// A bundled game by name, if there is one.
pub fn bundled_game(name: &str) -> Option<Game> {
    match name {
        "battle_of_sexes" => Some(Game::battle_of_sexes()),
        "battle_of_sexes_negated" => Some(Game::battle_of_sexes_negated()),
        _ => None,
    }
}

/// Loads a bundled game by name, or a game file from disk.
pub fn load_game(spec: &str) -> Result<Game, IoError> {
    if let Some(game) = bundled_game(spec) {
        return Ok(game);
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path).map_err(|e| IoError::Read {
        path: spec.into(),
        source: e,
    })?;
    parse_game(&text, spec)
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn profile_header(game: &Game) -> Vec<String> {
    let n = game.num_players();
    let mut h: Vec<String> = (0..n).map(|i| format!("beta_{i}")).collect();
    h.push("branch_id".into());
    for (i, &c) in game.strategy_counts().iter().enumerate() {
        h.extend((0..c).map(|k| format!("q_{i}_{k}")));
    }
    h.extend((0..n).map(|i| format!("eu_{i}")));
    h.push("fold_indicator".into());
    h
}

fn profile_fields(betas: &[f64], branch_id: Option<usize>, profile: &[f64], eu: &[f64], fold: f64) -> Vec<String> {
    let mut row: Vec<String> = betas.iter().map(|&b| fmt_f64(b)).collect();
    row.push(branch_id.map(|b| b.to_string()).unwrap_or_default());
    row.extend(profile.iter().map(|&v| fmt_f64(v)));
    row.extend(eu.iter().map(|&v| fmt_f64(v)));
    row.push(fmt_f64(fold));
    row
}

/// One row per solution: `beta_*, branch_id, q_{player}_{strategy}, eu_*,
/// fold_indicator`.
pub fn write_surface_csv<W: Write>(out: W, game: &Game, samples: &[SurfaceSample]) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(profile_header(game))?;
    for s in samples {
        for (sol, &fold) in s.solutions.iter().zip(&s.fold_indicators) {
            w.write_record(profile_fields(
                s.betas.as_slice(),
                sol.branch_id,
                &sol.profile.flat(),
                &sol.expected_utilities,
                fold,
            ))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `t`, the surface columns, then `jump_flag` and `dbeta_*`.
pub fn write_trace_csv<W: Write>(out: W, game: &Game, trace: &PathTrace) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend(profile_header(game));
    header.push("jump_flag".into());
    header.extend((0..game.num_players()).map(|i| format!("dbeta_{i}")));
    w.write_record(header)?;
    for s in &trace.steps {
        let mut row = vec![s.t.to_string()];
        row.extend(profile_fields(
            s.betas.as_slice(),
            Some(s.branch_id),
            &s.solution.profile.flat(),
            &s.expected_utilities,
            s.fold_indicator,
        ));
        row.push(u8::from(s.jump).to_string());
        row.extend(s.dbeta.iter().map(|&d| fmt_f64(d)));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// `gamma, Q_anarchy, Q_socialism, Q_market`.
pub fn write_welfare_csv<W: Write>(out: W, report: &WelfareReport) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gamma", "Q_anarchy", "Q_socialism", "Q_market"])?;
    for (g, q) in report.gammas.iter().zip(&report.q) {
        w.write_record([fmt_f64(*g), fmt_f64(q[0]), fmt_f64(q[1]), fmt_f64(q[2])])?;
    }
    w.flush()?;
    Ok(())
}
