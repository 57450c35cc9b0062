//! `qre`: logit quantal response equilibria from the command line.
//!
//! CSV goes to `--output` (or stdout). Run summaries are JSON, printed to
//! stdout when the CSV goes to a file and to stderr otherwise. Failures
//! print `{"error": kind, "message": ...}` on stderr and exit nonzero.

mod config;

use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use qre_core::continuation::{interpolate_path, sweep_surface, trace_branch, BetaGrid, SurfaceSample, TraceOptions};
use qre_core::io::{load_game, write_surface_csv, write_trace_csv, write_welfare_csv};
use qre_core::policy::{
    compare_procedures, find_pareto_path, run_procedure, CompareOptions, ParetoOptions, Procedure, ProcedureConfig,
};
use qre_core::{enumerate_qre, fold_indicator, Game, PathTrace, QreSolution, RationalityVector, SolverOptions};
use serde_json::json;

use config::{parse_range, BranchSelector, Reals, RunConfig, Waypoints};

#[derive(Debug)]
pub struct CliError {
    kind: &'static str,
    message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", json!({ "error": self.kind, "message": self.message }))
    }
}

macro_rules! from_error {
    ($ty:ty, $kind:literal) => {
        impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new($kind, e.to_string())
            }
        }
    };
}

from_error!(qre_core::IoError, "io");
from_error!(qre_core::SolverError, "solver");
from_error!(qre_core::ContinuationError, "continuation");
from_error!(qre_core::PolicyError, "policy");
from_error!(std::io::Error, "io");

#[derive(Parser)]
#[command(
    name = "qre",
    version,
    about = "Logit quantal response equilibria of normal-form games"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Bundled game name (battle_of_sexes, battle_of_sexes_negated) or JSON game file.
    #[arg(long)]
    game: Option<String>,
    /// JSON run configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV destination (default: stdout).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overwrite an existing output file.
    #[arg(long)]
    force: bool,
    /// Seed for randomized multistart.
    #[arg(long)]
    seed: Option<u64>,
    /// Seeds per player axis for multistart enumeration.
    #[arg(long)]
    multistart_grid: Option<usize>,
}

#[derive(Args)]
struct Start {
    /// Rationality vector at the start, e.g. `4,4`.
    #[arg(long)]
    beta: Option<Reals>,
    /// Equilibrium to start from: an index, `max-eu:I`, `min-eu:I`,
    /// `max-welfare` or `min-welfare`.
    #[arg(long)]
    start_branch: Option<BranchSelector>,
}

#[derive(Subcommand)]
enum Command {
    /// Enumerate all equilibria at one rationality vector.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Rationality vector, e.g. `5,5`.
        #[arg(long)]
        beta: Option<Reals>,
    },
    /// Enumerate equilibria over a rectangular grid of rationality vectors.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Lower grid corner, e.g. `0,0`.
        #[arg(long)]
        beta_min: Option<Reals>,
        /// Upper grid corner, e.g. `5,5`.
        #[arg(long)]
        beta_max: Option<Reals>,
        /// Grid points per axis, e.g. `50,50`.
        #[arg(long, value_delimiter = ',')]
        points: Option<Vec<usize>>,
    },
    /// Follow a branch along straight segments between waypoints.
    Trace {
        #[command(flatten)]
        common: Common,
        /// Waypoints separated by `;`, e.g. `5,5;0,5;5,5`.
        #[arg(long)]
        waypoints: Option<Waypoints>,
        /// Largest distance between consecutive path points.
        #[arg(long)]
        step: Option<f64>,
        /// Equilibrium at the first waypoint to follow: an index, `max-eu:I`,
        /// `min-eu:I`, `max-welfare` or `min-welfare`.
        #[arg(long)]
        start_branch: Option<BranchSelector>,
        /// Corrector moves farther than this (sup-norm) count as jumps.
        #[arg(long)]
        jump_threshold: Option<f64>,
    },
    /// Run one tax-update procedure.
    Procedure {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        start: Start,
        /// anarchy, socialism or market.
        #[arg(long)]
        procedure: Option<String>,
        /// Step scale; each step has norm at most √2·delta.
        #[arg(long)]
        delta: Option<f64>,
        /// Discount rate for the reported Q.
        #[arg(long)]
        gamma: Option<f64>,
        /// Largest number of steps.
        #[arg(long)]
        t_max: Option<usize>,
        /// Let socialism and market raise β above its start.
        #[arg(long)]
        no_start_cap: bool,
    },
    /// Discounted welfare of all three procedures over a γ grid.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        start: Start,
        /// Step scale; each step has norm at most √2·delta.
        #[arg(long)]
        delta: Option<f64>,
        /// Inclusive `start:stop:count` range.
        #[arg(long)]
        gamma: Option<String>,
        /// Largest number of steps per procedure.
        #[arg(long)]
        t_max: Option<usize>,
        /// Let socialism and market raise β above its start.
        #[arg(long)]
        no_start_cap: bool,
    },
    /// Greedy path that raises every player's utility.
    ParetoPath {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        start: Start,
        /// Step scale; each step has norm at most √2·delta.
        #[arg(long)]
        delta: Option<f64>,
    },
}

struct Context {
    config: RunConfig,
    game: Game,
    solver: SolverOptions,
    output: Option<PathBuf>,
    force: bool,
}

impl Context {
    fn new(common: Common) -> Result<Self, CliError> {
        let config = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let game_spec = common
            .game
            .or_else(|| config.game.clone())
            .ok_or_else(|| CliError::new("config", "no game given (--game)"))?;
        let solver = config.solver_options(common.seed, common.multistart_grid)?;
        let output = common.output.or_else(|| config.output.clone().map(PathBuf::from));
        if let Some(p) = &output {
            if p.exists() && !common.force {
                return Err(CliError::new(
                    "io",
                    format!("{} exists; pass --force to overwrite", p.display()),
                ));
            }
        }
        let game = load_game(&game_spec)?;
        Ok(Self {
            config,
            game,
            solver,
            output,
            force: common.force,
        })
    }

    fn betas(&self, v: Vec<f64>) -> Result<RationalityVector, CliError> {
        if v.len() != self.game.num_players() {
            return Err(CliError::new(
                "config",
                format!("{} rationalities for {} players", v.len(), self.game.num_players()),
            ));
        }
        Ok(RationalityVector::new(v)?)
    }

    fn start_betas(&self, flag: Option<Reals>) -> Result<RationalityVector, CliError> {
        let v = flag
            .map(|r| r.0)
            .or_else(|| self.config.betas.clone())
            .ok_or_else(|| CliError::new("config", "no rationality vector given (--beta)"))?;
        self.betas(v)
    }

    fn start_solution(&self, start: Start) -> Result<QreSolution, CliError> {
        let betas = self.start_betas(start.beta)?;
        let selector = self.selector(start.start_branch)?;
        selector.select(enumerate_qre(&self.game, &betas, &self.solver)?)
    }

    fn selector(&self, flag: Option<BranchSelector>) -> Result<BranchSelector, CliError> {
        match (flag, &self.config.start_branch) {
            (Some(s), _) => Ok(s),
            (None, Some(s)) => s.parse().map_err(|e: String| CliError::new("config", e)),
            (None, None) => Ok(BranchSelector::Index(0)),
        }
    }

    fn trace_options(&self, jump_threshold: Option<f64>) -> Result<TraceOptions, CliError> {
        let mut t = TraceOptions {
            solver: self.solver.clone(),
            ..Default::default()
        };
        if let Some(j) = jump_threshold.or(self.config.jump_threshold) {
            if !(j > 0.0 && j.is_finite()) {
                return Err(CliError::new("config", "jump threshold must be positive"));
            }
            t.jump_threshold = j;
        }
        Ok(t)
    }

    fn delta(&self, flag: Option<f64>) -> Result<f64, CliError> {
        flag.or(self.config.delta)
            .ok_or_else(|| CliError::new("config", "no step scale given (--delta)"))
    }

    fn enforce_cap(&self, no_start_cap: bool) -> bool {
        !no_start_cap && self.config.enforce_start_cap.unwrap_or(true)
    }

    /// Writes the CSV and, if given, the summary.
    fn emit(&self, csv: Vec<u8>, summary: Option<serde_json::Value>) -> Result<(), CliError> {
        match &self.output {
            Some(p) => {
                if p.exists() && !self.force {
                    return Err(CliError::new(
                        "io",
                        format!("{} exists; pass --force to overwrite", p.display()),
                    ));
                }
                std::fs::write(p, csv).map_err(|e| CliError::new("io", format!("{}: {e}", p.display())))?;
                if let Some(s) = summary {
                    println!("{s}");
                }
            }
            None => {
                std::io::stdout().write_all(&csv)?;
                if let Some(s) = summary {
                    eprintln!("{s}");
                }
            }
        }
        Ok(())
    }
}

fn trace_summary(trace: &PathTrace) -> serde_json::Value {
    json!({
        "steps": trace.len(),
        "jumps": trace.jumps(),
        "failure": trace.failure,
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Solve { common, beta } => {
            let ctx = Context::new(common)?;
            let betas = ctx.start_betas(beta)?;
            let mut solutions = enumerate_qre(&ctx.game, &betas, &ctx.solver)?;
            let mut folds = Vec::with_capacity(solutions.len());
            for (k, s) in solutions.iter_mut().enumerate() {
                s.branch_id = Some(k);
                folds.push(fold_indicator(&ctx.game, s)?);
            }
            let sample = SurfaceSample {
                betas,
                enumeration_failed: solutions.is_empty(),
                solutions,
                fold_indicators: folds,
            };
            let mut buf = Vec::new();
            write_surface_csv(&mut buf, &ctx.game, std::slice::from_ref(&sample))?;
            ctx.emit(buf, None)
        }
        Command::Sweep {
            common,
            beta_min,
            beta_max,
            points,
        } => {
            let ctx = Context::new(common)?;
            let cfg = ctx.config.grid.clone();
            let min = beta_min.map(|r| r.0).or_else(|| cfg.as_ref().map(|g| g.min.clone()));
            let max = beta_max.map(|r| r.0).or_else(|| cfg.as_ref().map(|g| g.max.clone()));
            let points = points.or_else(|| cfg.as_ref().map(|g| g.points.clone()));
            let (Some(min), Some(max), Some(points)) = (min, max, points) else {
                return Err(CliError::new(
                    "config",
                    "sweep needs --beta-min, --beta-max and --points",
                ));
            };
            let grid = BetaGrid::new(min, max, points)?;
            let samples = sweep_surface(&ctx.game, &grid, &ctx.solver)?;
            let mut buf = Vec::new();
            write_surface_csv(&mut buf, &ctx.game, &samples)?;
            let failed = samples.iter().filter(|s| s.enumeration_failed).count();
            ctx.emit(buf, Some(json!({ "points": samples.len(), "failed_points": failed })))
        }
        Command::Trace {
            common,
            waypoints,
            step,
            start_branch,
            jump_threshold,
        } => {
            let ctx = Context::new(common)?;
            let waypoints = waypoints
                .map(|w| w.0)
                .or_else(|| ctx.config.waypoints.clone())
                .ok_or_else(|| CliError::new("config", "no waypoints given (--waypoints)"))?;
            let waypoints = waypoints
                .into_iter()
                .map(|w| ctx.betas(w))
                .collect::<Result<Vec<_>, _>>()?;
            let step = step.or(ctx.config.step).unwrap_or(0.05);
            if !(step > 0.0 && step.is_finite()) {
                return Err(CliError::new("config", "step must be positive"));
            }
            let path = interpolate_path(&waypoints, step);
            let selector = ctx.selector(start_branch)?;
            let start = selector.select(enumerate_qre(&ctx.game, &path[0], &ctx.solver)?)?;
            let trace = trace_branch(&ctx.game, &path, &start, &ctx.trace_options(jump_threshold)?)?;
            let mut buf = Vec::new();
            write_trace_csv(&mut buf, &ctx.game, &trace)?;
            ctx.emit(buf, Some(trace_summary(&trace)))
        }
        Command::Procedure {
            common,
            start,
            procedure,
            delta,
            gamma,
            t_max,
            no_start_cap,
        } => {
            let ctx = Context::new(common)?;
            let name = procedure
                .or_else(|| ctx.config.procedure.clone())
                .ok_or_else(|| CliError::new("config", "no procedure given (--procedure)"))?;
            let procedure: Procedure = name.parse()?;
            let initial = ctx.start_solution(start)?;
            let gamma = gamma
                .or(ctx.config.gamma)
                .ok_or_else(|| CliError::new("config", "no discount rate given (--gamma)"))?;
            let mut cfg = ProcedureConfig::new(procedure, initial.betas.clone(), ctx.delta(delta)?, gamma);
            if let Some(t) = t_max.or(ctx.config.t_max) {
                cfg.t_max = t;
            }
            cfg.enforce_start_cap = ctx.enforce_cap(no_start_cap);
            cfg.trace = ctx.trace_options(None)?;
            cfg.validate()?;
            let result = run_procedure(&ctx.game, &cfg, &initial)?;
            let mut buf = Vec::new();
            write_trace_csv(&mut buf, &ctx.game, &result.trace)?;
            let mut summary = trace_summary(&result.trace);
            summary["procedure"] = json!(procedure.name());
            summary["Q"] = json!(result.q);
            summary["stale_gradient_steps"] = json!(result.trace.steps.iter().filter(|s| s.stale_gradient).count());
            ctx.emit(buf, Some(summary))
        }
        Command::Compare {
            common,
            start,
            delta,
            gamma,
            t_max,
            no_start_cap,
        } => {
            let ctx = Context::new(common)?;
            let spec = gamma
                .or_else(|| ctx.config.gamma_grid.clone())
                .ok_or_else(|| CliError::new("config", "no discount grid given (--gamma start:stop:count)"))?;
            let gammas = parse_range(&spec).map_err(|e| CliError::new("config", e))?;
            let delta = ctx.delta(delta)?;
            let initial = ctx.start_solution(start)?;
            let mut opts = CompareOptions {
                enforce_start_cap: ctx.enforce_cap(no_start_cap),
                trace: ctx.trace_options(None)?,
                ..Default::default()
            };
            if let Some(t) = t_max.or(ctx.config.t_max) {
                opts.t_max = t;
            }
            let report = compare_procedures(&ctx.game, &initial, delta, &gammas, &opts)?;
            let mut buf = Vec::new();
            write_welfare_csv(&mut buf, &report)?;
            let steps: Vec<usize> = report.traces.iter().map(PathTrace::len).collect();
            ctx.emit(buf, Some(json!({ "start": initial.betas.as_slice(), "steps": steps })))
        }
        Command::ParetoPath { common, start, delta } => {
            let ctx = Context::new(common)?;
            let delta = ctx.delta(delta)?;
            let initial = ctx.start_solution(start)?;
            let opts = ParetoOptions {
                trace: ctx.trace_options(None)?,
                ..Default::default()
            };
            let trace = find_pareto_path(&ctx.game, &initial, delta, &opts)?;
            let mut buf = Vec::new();
            write_trace_csv(&mut buf, &ctx.game, &trace)?;
            ctx.emit(buf, Some(trace_summary(&trace)))
        }
    }
}

fn init_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("QRE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| CliError::new("config", format!("QRE_THREADS must be a count, got {v:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::new("config", e.to_string()))?;
    }
    Ok(())
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let message = e.to_string();
            let first = message.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", CliError::new("usage", first));
            std::process::exit(2);
        }
    };
    if let Err(e) = init_threads().and_then(|_| run(cli)) {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
