//! Fixed-point iteration of the discrete Bellman operator.
//!
//! Gauss-Seidel sweeps update the field in place along a configurable cycle of
//! orderings; Jacobi sweeps double-buffer and evaluate nodes in parallel, and
//! serve as the independent reference for the in-place solver.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bellman::{time_step, Operator, Scratch};
use crate::error::{Error, Result};
use crate::grid::{Grid, ValueField};
use crate::model::{validate_model, Model};
use crate::synthesis::{extract_policy, Policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    GaussSeidel,
    Jacobi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ordering {
    /// Mode-major, ascending flat node index.
    Forward,
    /// Exact reverse of `Forward`.
    Backward,
    /// `Forward` on even sweep indices, `Backward` on odd ones.
    Alternating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Boundary {
    /// Foot points outside the box are clamped onto it.
    Projection,
    /// Boundary nodes are held at `value`; foot points are still clamped.
    Dirichlet { value: f64 },
}

/// When a run counts as converged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    /// Successive sup-norm change `≤ tol`.
    Change,
    /// Successive change small enough that the contraction bound
    /// `change·β/(1−β)` on the distance to the fixed point is `≤ tol`.
    ErrorBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_sweeps: usize,
    pub c_dt: f64,
    pub sweep_mode: SweepMode,
    pub ordering_cycle: Vec<Ordering>,
    pub boundary: Boundary,
    pub init: f64,
    pub stop_rule: StopRule,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 10_000,
            c_dt: 1.0,
            sweep_mode: SweepMode::GaussSeidel,
            ordering_cycle: vec![Ordering::Forward, Ordering::Backward],
            boundary: Boundary::Projection,
            init: 0.0,
            stop_rule: StopRule::ErrorBound,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return bad(format!("tol must be a positive number, got {}", self.tol));
        }
        if self.max_sweeps == 0 {
            return bad("max_sweeps must be at least 1".into());
        }
        if !(self.c_dt > 0.0) || !self.c_dt.is_finite() {
            return bad(format!("c_dt must be a positive number, got {}", self.c_dt));
        }
        if self.ordering_cycle.is_empty() {
            return bad("ordering_cycle must not be empty".into());
        }
        if !self.init.is_finite() {
            return bad(format!("init must be finite, got {}", self.init));
        }
        if let Boundary::Dirichlet { value } = self.boundary {
            if !value.is_finite() {
                return bad(format!("boundary value must be finite, got {value}"));
            }
        }
        Ok(())
    }

    pub fn time_step(&self, grid: &Grid) -> f64 {
        time_step(grid, self.c_dt)
    }

    fn pinned(&self, grid: &Grid, node: usize) -> bool {
        matches!(self.boundary, Boundary::Dirichlet { .. }) && grid.is_boundary(node)
    }

    /// Direction of sweep `sweep_index`: `true` for forward.
    fn forward(&self, sweep_index: usize) -> bool {
        resolve(self.ordering_cycle[sweep_index % self.ordering_cycle.len()], sweep_index)
    }
}

fn resolve(ordering: Ordering, sweep_index: usize) -> bool {
    match ordering {
        Ordering::Forward => true,
        Ordering::Backward => false,
        Ordering::Alternating => sweep_index.is_multiple_of(2),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub sweeps: usize,
    pub final_change: f64,
    /// Sup-norm Bellman residual of the returned field.
    pub residual: f64,
    pub converged: bool,
    pub wall_time_s: f64,
    pub dt: f64,
    /// Sup-norm change after each sweep.
    pub changes: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub field: ValueField,
    pub policy: Policy,
    pub stats: SolveStats,
}

/// Visit order of sweep `sweep_index` as `(mode, node)` pairs.
pub fn sweep_order(
    grid: &Grid,
    num_modes: usize,
    ordering: Ordering,
    sweep_index: usize,
) -> Vec<(usize, usize)> {
    let n = grid.len();
    let pairs = (0..num_modes).flat_map(|q| (0..n).map(move |node| (q, node)));
    if resolve(ordering, sweep_index) {
        pairs.collect()
    } else {
        let mut v: Vec<_> = pairs.collect();
        v.reverse();
        v
    }
}

/// Field at the start of iteration: `init` everywhere, boundary nodes pinned under Dirichlet.
pub fn initial_field(grid: &Grid, num_modes: usize, cfg: &SolverConfig) -> ValueField {
    let mut field = ValueField::constant(grid, num_modes, cfg.init);
    if let Boundary::Dirichlet { value } = cfg.boundary {
        for q in 0..num_modes {
            for node in (0..grid.len()).filter(|&n| grid.is_boundary(n)) {
                field.set(q, node, value);
            }
        }
    }
    field
}

/// One in-place sweep; returns the sup-norm change.
pub fn gauss_seidel_sweep(
    field: &mut ValueField,
    m: &Model,
    cfg: &SolverConfig,
    sweep_index: usize,
) -> Result<f64> {
    let op = Operator::new(m, cfg.time_step(field.grid()))?;
    let mut scratch = Scratch::new(m.dim());
    gs_sweep(&op, field, cfg, sweep_index, &mut scratch)
}

fn gs_sweep(
    op: &Operator<'_>,
    field: &mut ValueField,
    cfg: &SolverConfig,
    sweep_index: usize,
    scratch: &mut Scratch,
) -> Result<f64> {
    let n = field.grid().len();
    let total = n * field.num_modes();
    let forward = cfg.forward(sweep_index);
    let mut change: f64 = 0.0;
    for step in 0..total {
        let flat = if forward { step } else { total - 1 - step };
        let (q, node) = (flat / n, flat % n);
        if cfg.pinned(field.grid(), node) {
            continue;
        }
        let (v, _) = op.update_node(field, node, q, scratch)?;
        let old = field.get(q, node);
        change = change.max((v - old).abs());
        field.set(q, node, v);
    }
    Ok(change)
}

/// One double-buffered sweep; returns the new field and the sup-norm change.
pub fn jacobi_sweep(field: &ValueField, m: &Model, cfg: &SolverConfig) -> Result<(ValueField, f64)> {
    let op = Operator::new(m, cfg.time_step(field.grid()))?;
    let mut next = field.clone();
    let change = jacobi_into(&op, field, &mut next, cfg)?;
    Ok((next, change))
}

fn jacobi_into(
    op: &Operator<'_>,
    prev: &ValueField,
    next: &mut ValueField,
    cfg: &SolverConfig,
) -> Result<f64> {
    let grid = prev.grid();
    let n = grid.len();
    let dim = grid.dim();
    next.values_mut()
        .par_iter_mut()
        .enumerate()
        .try_for_each_init(
            || Scratch::new(dim),
            |scratch, (flat, out)| {
                let (q, node) = (flat / n, flat % n);
                *out = if cfg.pinned(grid, node) {
                    prev.get(q, node)
                } else {
                    op.update_node(prev, node, q, scratch)?.0
                };
                Ok::<_, Error>(())
            },
        )?;
    Ok(prev.max_abs_diff(next))
}

/// `max |T(V) − V|` over non-pinned (mode, node) pairs.
pub fn bellman_residual(field: &ValueField, m: &Model, cfg: &SolverConfig) -> Result<f64> {
    let op = Operator::new(m, cfg.time_step(field.grid()))?;
    residual(&op, field, cfg)
}

fn residual(op: &Operator<'_>, field: &ValueField, cfg: &SolverConfig) -> Result<f64> {
    let grid = field.grid();
    let n = grid.len();
    let dim = grid.dim();
    let diffs = (0..n * field.num_modes())
        .into_par_iter()
        .map_init(
            || Scratch::new(dim),
            |scratch, flat| {
                let (q, node) = (flat / n, flat % n);
                if cfg.pinned(grid, node) {
                    return Ok(0.0);
                }
                let (v, _) = op.update_node(field, node, q, scratch)?;
                Ok((v - field.get(q, node)).abs())
            },
        )
        .collect::<Result<Vec<f64>>>()?;
    Ok(diffs.into_iter().fold(0.0, f64::max))
}

/// Iterates sweeps from the configured initial field until the stop rule holds.
///
/// Returns [`Error::NotConverged`] with the last iterate if `max_sweeps` runs out.
pub fn solve(m: &Model, grid: &Grid, cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    if m.dim() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: m.dim(),
        });
    }
    validate_model(m, &grid.center())?;

    let start = Instant::now();
    let dt = cfg.time_step(grid);
    let op = Operator::new(m, dt)?;
    let threshold = match cfg.stop_rule {
        StopRule::Change => cfg.tol,
        StopRule::ErrorBound => cfg.tol * ((1.0 - op.beta()) / op.beta()).min(1.0),
    };

    let mut field = initial_field(grid, m.num_modes(), cfg);
    let mut changes = Vec::new();
    let mut converged = false;
    match cfg.sweep_mode {
        SweepMode::GaussSeidel => {
            let mut scratch = Scratch::new(m.dim());
            for sweep in 0..cfg.max_sweeps {
                let change = gs_sweep(&op, &mut field, cfg, sweep, &mut scratch)?;
                changes.push(change);
                if change <= threshold {
                    converged = true;
                    break;
                }
            }
        }
        SweepMode::Jacobi => {
            let mut next = field.clone();
            for _ in 0..cfg.max_sweeps {
                let change = jacobi_into(&op, &field, &mut next, cfg)?;
                std::mem::swap(&mut field, &mut next);
                changes.push(change);
                if change <= threshold {
                    converged = true;
                    break;
                }
            }
        }
    }

    let residual = residual(&op, &field, cfg)?;
    let policy = extract_policy(&field, m, cfg)?;
    let stats = SolveStats {
        sweeps: changes.len(),
        final_change: changes.last().copied().unwrap_or(f64::INFINITY),
        residual,
        converged,
        wall_time_s: start.elapsed().as_secs_f64(),
        dt,
        changes,
    };
    let solution = Solution {
        field,
        policy,
        stats,
    };
    if converged {
        Ok(solution)
    } else {
        Err(Error::NotConverged(Box::new(solution)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ActionSet;

    fn constant_cost(c: f64, lambda: f64) -> Model {
        Model::builder(1)
            .running_cost(move |_, _, _| c)
            .discount(lambda)
            .build()
            .unwrap()
    }

    fn fixed_point(c: f64, lambda: f64, dt: f64) -> f64 {
        c * dt / (1.0 - (-lambda * dt).exp())
    }

    #[test]
    fn orders() {
        let g = Grid::new(&[0.0], &[1.0], &[3]).unwrap();
        let nodes = |o, s| -> Vec<usize> {
            sweep_order(&g, 1, o, s).into_iter().map(|(_, n)| n).collect()
        };
        assert_eq!(nodes(Ordering::Forward, 0), vec![0, 1, 2]);
        assert_eq!(nodes(Ordering::Backward, 0), vec![2, 1, 0]);
        assert_eq!(nodes(Ordering::Alternating, 1), vec![2, 1, 0]);
        assert_eq!(nodes(Ordering::Alternating, 2), vec![0, 1, 2]);

        let two = sweep_order(&g, 2, Ordering::Forward, 0);
        assert_eq!(two[3], (1, 0));
        let back = sweep_order(&g, 2, Ordering::Backward, 0);
        assert_eq!(back[0], (1, 2));
    }

    #[test]
    fn config_validation_names_field() {
        let cfg = SolverConfig {
            tol: -1.0,
            ..Default::default()
        };
        let err = cfg.validate().unwrap_err().to_string();
        assert!(err.contains("tol"), "{err}");
        let cfg = SolverConfig {
            max_sweeps: 0,
            ..Default::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("max_sweeps"));
        let cfg = SolverConfig {
            c_dt: 0.0,
            ..Default::default()
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("c_dt"));
    }

    #[test]
    fn sweep_at_fixed_point_does_not_move() {
        let g = Grid::new(&[0.0], &[1.0], &[11]).unwrap();
        let m = constant_cost(2.0, 1.0);
        let cfg = SolverConfig::default();
        let dt = cfg.time_step(&g);
        let mut f = ValueField::constant(&g, 1, fixed_point(2.0, 1.0, dt));
        let change = gauss_seidel_sweep(&mut f, &m, &cfg, 0).unwrap();
        assert!(change <= 1e-12, "{change}");
    }

    #[test]
    fn zero_cost_sweep_is_zero() {
        let g = Grid::new(&[0.0], &[1.0], &[11]).unwrap();
        let m = constant_cost(0.0, 1.0);
        let mut f = ValueField::constant(&g, 1, 0.0);
        let change = gauss_seidel_sweep(&mut f, &m, &SolverConfig::default(), 0).unwrap();
        assert_eq!(change, 0.0);
    }

    #[test]
    fn first_sweep_adds_one_step_cost() {
        let g = Grid::new(&[0.0], &[1.0], &[11]).unwrap();
        let c = 3.0;
        let m = constant_cost(c, 1.0);
        let cfg = SolverConfig::default();
        let dt = cfg.time_step(&g);
        let mut f = ValueField::constant(&g, 1, 0.0);
        let change = gauss_seidel_sweep(&mut f, &m, &cfg, 0).unwrap();
        assert!((change - c * dt).abs() < 1e-15);
        for n in 0..g.len() {
            assert!((f.get(0, n) - c * dt).abs() < 1e-15);
        }
    }

    #[test]
    fn residual_examples() {
        let g = Grid::new(&[0.0], &[1.0], &[5]).unwrap();
        let m = constant_cost(0.0, 1.0);
        let cfg = SolverConfig::default();
        let zero = ValueField::constant(&g, 1, 0.0);
        assert_eq!(bellman_residual(&zero, &m, &cfg).unwrap(), 0.0);
        let ones = ValueField::constant(&g, 1, 1.0);
        let dt = cfg.time_step(&g);
        let r = bellman_residual(&ones, &m, &cfg).unwrap();
        assert!((r - (1.0 - (-dt).exp())).abs() < 1e-15);
    }

    #[test]
    fn constant_cost_solve_matches_series() {
        let g = Grid::new(&[-1.0], &[1.0], &[21]).unwrap();
        let m = constant_cost(2.0, 1.0);
        let cfg = SolverConfig::default();
        let sol = solve(&m, &g, &cfg).unwrap();
        let v = fixed_point(2.0, 1.0, sol.stats.dt);
        for &x in sol.field.values() {
            assert!((x - v).abs() <= 10.0 * cfg.tol);
        }
        assert!(sol.stats.converged);
        assert!(sol.stats.final_change <= cfg.tol);
        assert!(sol.stats.residual <= 10.0 * cfg.tol);
    }

    #[test]
    fn not_converged_keeps_partial_field() {
        let g = Grid::new(&[-1.0], &[1.0], &[21]).unwrap();
        let m = constant_cost(2.0, 1.0);
        let cfg = SolverConfig {
            max_sweeps: 3,
            ..Default::default()
        };
        match solve(&m, &g, &cfg) {
            Err(Error::NotConverged(sol)) => {
                assert_eq!(sol.stats.sweeps, 3);
                assert!(!sol.stats.converged);
                assert!(sol.field.values().iter().all(|&v| v > 0.0));
            }
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }

    #[test]
    fn dirichlet_pins_boundary() {
        let g = Grid::new(&[-1.0], &[1.0], &[11]).unwrap();
        let m = Model::builder(1)
            .actions(ActionSet::scalars(vec![-1.0, 1.0]))
            .drift(|_, _, a, out| out[0] = a[0])
            .running_cost(|_, _, _| 1.0)
            .build()
            .unwrap();
        let cfg = SolverConfig {
            boundary: Boundary::Dirichlet { value: 0.0 },
            ..Default::default()
        };
        let sol = solve(&m, &g, &cfg).unwrap();
        assert_eq!(sol.field.get(0, 0), 0.0);
        assert_eq!(sol.field.get(0, 10), 0.0);
        // exit time problem: value grows toward the centre
        assert!(sol.field.get(0, 5) > sol.field.get(0, 2));
        assert!(sol.field.get(0, 2) > sol.field.get(0, 1));
    }

    #[test]
    fn dimension_mismatch() {
        let g = Grid::new(&[0.0, 0.0], &[1.0, 1.0], &[3, 3]).unwrap();
        let m = constant_cost(1.0, 1.0);
        assert!(matches!(
            solve(&m, &g, &SolverConfig::default()),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
