//! Discounted stochastic optimal control of (mode-switching) diffusions.
//!
//! The value function is computed on a tensor grid with a semi-Lagrangian
//! discretization of the Bellman equation, iterated to its fixed point with
//! Gauss-Seidel sweeps. The converged field yields a feedback controller that
//! can be checked by closed-loop Monte Carlo simulation.
//!
//! ```
//! use slcontrol::{benchmarks, solver};
//!
//! let p = benchmarks::LqParams { counts: 33, action_count: 33, ..Default::default() };
//! let lq = benchmarks::lq1d(&p).unwrap();
//! let sol = solver::solve(&lq.model, &lq.grid(), &solver::SolverConfig::default()).unwrap();
//! assert!(sol.stats.converged);
//! ```

pub mod bellman;
pub mod benchmarks;
pub mod error;
pub mod grid;
pub mod model;
pub mod solver;
pub mod synthesis;

pub use bellman::{Decision, Stencil};
pub use error::{Error, Result};
pub use grid::{Grid, GridSpec, ValueField};
pub use model::{validate_model, ActionSet, Model};
pub use solver::{solve, Solution, SolveStats, SolverConfig};
pub use synthesis::{Lookup, LookupMode, Policy, SimReport, Trajectory};
