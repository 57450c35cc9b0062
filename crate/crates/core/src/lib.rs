//! Logit quantal response equilibria of finite normal-form games.

pub mod continuation;
pub mod game;
pub mod io;
pub mod policy;
pub mod solver;

pub use continuation::{
    fold_indicator, interpolate_path, locate_fold, locate_fold_between, sweep_surface, trace_branch, BetaGrid,
    ContinuationError, FoldPoint, PathStep, PathTrace, SurfaceSample, TraceOptions,
};
pub use game::{strategy_entropy, Game, GameError, ScalingVector, StrategyProfile};
pub use io::{load_game, parse_game, GameFile, IoError};
pub use policy::{
    compare_procedures, find_pareto_path, run_procedure, step_anarchy, step_market, step_socialism,
    utility_beta_gradient, welfare_q, welfare_q_series, CompareOptions, ParetoOptions, PolicyError, Procedure,
    ProcedureConfig, ProcedureRun, WelfareReport,
};
pub use solver::{
    enumerate_qre, enumerate_qre_seeded, logit_response, newton_solve, qre_residual, response_jacobian, solve_qre,
    QreSolution, RationalityVector, ResponseJacobian, SolverError, SolverOptions,
};
