//! Feedback synthesis from a converged value field and closed-loop
//! Euler–Maruyama validation.

use std::io::{self, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bellman::{Decision, Operator, Scratch};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridSpec, ValueField};
use crate::model::Model;
use crate::solver::SolverConfig;

/// Generator used for every simulation. Fixed so reports reproduce across platforms.
pub type SimRng = ChaCha8Rng;

/// Tabulated argmin decisions, mode-major like [`ValueField`].
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    grid: Grid,
    num_modes: usize,
    decisions: Vec<Decision>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PolicyDoc {
    grid: GridSpec,
    num_modes: usize,
    decisions: Vec<Decision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<serde_json::Value>,
}

impl Policy {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn decisions(&self) -> &[Decision] {
        &self.decisions
    }

    pub fn get(&self, q: usize, node: usize) -> Decision {
        self.decisions[q * self.grid.len() + node]
    }

    pub fn to_json(&self, meta: Option<&serde_json::Value>) -> Result<String> {
        Ok(serde_json::to_string(&PolicyDoc {
            grid: self.grid.spec(),
            num_modes: self.num_modes,
            decisions: self.decisions.clone(),
            meta: meta.cloned(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PolicyDoc = serde_json::from_str(text)?;
        let grid = Grid::from_spec(&doc.grid)?;
        if doc.decisions.len() != grid.len() * doc.num_modes {
            return Err(Error::DimensionMismatch {
                expected: grid.len() * doc.num_modes,
                got: doc.decisions.len(),
            });
        }
        Ok(Self {
            grid,
            num_modes: doc.num_modes,
            decisions: doc.decisions,
        })
    }
}

/// Stores the operator's argmin decision at every (mode, node) without touching `field`.
pub fn extract_policy(field: &ValueField, m: &Model, cfg: &SolverConfig) -> Result<Policy> {
    let grid = field.grid();
    let op = Operator::new(m, cfg.time_step(grid))?;
    let n = grid.len();
    let decisions = (0..n * field.num_modes())
        .into_par_iter()
        .map_init(
            || Scratch::new(m.dim()),
            |s, flat| Ok(op.update_node(field, flat % n, flat / n, s)?.1),
        )
        .collect::<Result<Vec<_>>>()?;
    Ok(Policy {
        grid: grid.clone(),
        num_modes: field.num_modes(),
        decisions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LookupMode {
    /// Re-run the node minimization at the continuous state.
    #[default]
    Online,
    /// Use the stored decision of the nearest node.
    Tabular,
}

#[derive(Debug, Clone, Copy)]
pub enum Lookup<'a> {
    Online,
    Tabular(&'a Policy),
}

/// Decision at an arbitrary state (projected into the box).
pub fn feedback_action(
    field: &ValueField,
    m: &Model,
    x: &[f64],
    q: usize,
    lookup: Lookup<'_>,
    dt: f64,
) -> Result<Decision> {
    let mut c = Controller::new(m, field, dt, lookup)?;
    let x = field.grid().project(x);
    c.decide(&x, q)
}

/// Feedback law bound to a field, with its own scratch space.
#[derive(Debug, Clone)]
pub struct Controller<'a> {
    op: Operator<'a>,
    field: &'a ValueField,
    lookup: Lookup<'a>,
    scratch: Scratch,
}

impl<'a> Controller<'a> {
    pub fn new(m: &'a Model, field: &'a ValueField, dt: f64, lookup: Lookup<'a>) -> Result<Self> {
        if m.dim() != field.grid().dim() {
            return Err(Error::DimensionMismatch {
                expected: field.grid().dim(),
                got: m.dim(),
            });
        }
        if let Lookup::Tabular(p) = lookup {
            if p.grid() != field.grid() || p.num_modes() != field.num_modes() {
                return Err(Error::GridMismatch(
                    "policy and value field are on different grids".into(),
                ));
            }
        }
        Ok(Self {
            op: Operator::new(m, dt)?,
            field,
            lookup,
            scratch: Scratch::new(m.dim()),
        })
    }

    /// `x` must already lie in the box.
    pub fn decide(&mut self, x: &[f64], q: usize) -> Result<Decision> {
        match self.lookup {
            Lookup::Online => Ok(self.op.update_at(self.field, x, q, &mut self.scratch)?.1),
            Lookup::Tabular(p) => Ok(p.get(q, self.field.grid().nearest_node(x))),
        }
    }

    /// Best action with switching excluded. Tabular controllers fall back to the
    /// online minimization here since the table may only hold a switch.
    pub fn decide_continuous(&mut self, x: &[f64], q: usize) -> Result<usize> {
        if let Lookup::Tabular(p) = self.lookup {
            if let Decision::Continuous(a) = p.get(q, self.field.grid().nearest_node(x)) {
                return Ok(a);
            }
        }
        Ok(self
            .op
            .best_continuous_at(self.field, x, q, &mut self.scratch)?
            .1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchEvent {
    pub step: usize,
    pub from: usize,
    pub to: usize,
}

/// Sampled closed-loop path. Row `i` holds the state at `t_i` (after any
/// switches at that time), the action applied over `[t_i, t_i + dt_sim)` and
/// the discounted cost accumulated through the end of that interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    pub dt_sim: f64,
    pub dim: usize,
    pub times: Vec<f64>,
    pub states: Vec<f64>,
    pub modes: Vec<usize>,
    pub decisions: Vec<Decision>,
    pub costs: Vec<f64>,
    pub switches: Vec<SwitchEvent>,
    pub final_state: Vec<f64>,
    pub final_mode: usize,
    pub total_cost: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    /// `t,x_1..x_d,q,decision_kind,decision_index,cost_so_far`, one row per step.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let xs: Vec<String> = (1..=self.dim).map(|k| format!("x_{k}")).collect();
        writeln!(w, "t,{},q,decision_kind,decision_index,cost_so_far", xs.join(","))?;
        for i in 0..self.len() {
            write!(w, "{}", self.times[i])?;
            for v in self.state(i) {
                write!(w, ",{v}")?;
            }
            let d = self.decisions[i];
            writeln!(
                w,
                ",{},{},{},{}",
                self.modes[i],
                d.kind(),
                d.index(),
                self.costs[i]
            )?;
        }
        Ok(())
    }
}

fn check_step(horizon: f64, dt_sim: f64) -> Result<usize> {
    if !(dt_sim > 0.0) || !dt_sim.is_finite() || !(horizon >= dt_sim) || !horizon.is_finite() {
        return Err(Error::NonpositiveStep { dt_sim, horizon });
    }
    Ok(((horizon / dt_sim).round() as usize).max(1))
}

/// Closed-loop Euler–Maruyama run; returns the discounted cost, optionally
/// recording the path.
fn run(
    ctl: &mut Controller<'_>,
    x0: &[f64],
    q0: usize,
    steps: usize,
    dt_sim: f64,
    seed: u64,
    mut rec: Option<&mut Trajectory>,
) -> Result<f64> {
    let m = ctl.op.model();
    let grid = ctl.field.grid();
    let d = m.dim();
    if x0.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x0.len(),
        });
    }
    if q0 >= m.num_modes() {
        return Err(Error::OutOfRange {
            index: q0,
            size: m.num_modes(),
        });
    }
    let lambda = m.discount();
    let sqrt_dt = dt_sim.sqrt();
    let mut rng = SimRng::seed_from_u64(seed);
    let mut x = grid.project(x0);
    let mut q = q0;
    let mut drift = vec![0.0; d];
    let mut sigma = vec![0.0; d * d];
    let mut noise = vec![0.0; d];
    let mut cost = 0.0;

    for step in 0..steps {
        let t = step as f64 * dt_sim;
        let disc = (-lambda * t).exp();
        let mut switches = 0;
        let action = loop {
            let decision = if switches + 1 < m.num_modes() {
                ctl.decide(&x, q)?
            } else {
                Decision::Continuous(ctl.decide_continuous(&x, q)?)
            };
            match decision {
                Decision::Continuous(a) => break a,
                Decision::Switch(target) => {
                    cost += disc * m.switch_cost(q, target);
                    if let Some(r) = rec.as_deref_mut() {
                        r.switches.push(SwitchEvent {
                            step,
                            from: q,
                            to: target,
                        });
                    }
                    q = target;
                    switches += 1;
                }
            }
        };
        debug_assert!(switches < m.num_modes());

        cost += disc * m.eval_cost(&x, q, action)? * dt_sim;
        m.eval_dynamics(&x, q, action, &mut drift, &mut sigma)?;
        if let Some(r) = rec.as_deref_mut() {
            r.times.push(t);
            r.states.extend_from_slice(&x);
            r.modes.push(q);
            r.decisions.push(Decision::Continuous(action));
            r.costs.push(cost);
        }
        for xi in noise.iter_mut() {
            *xi = StandardNormal.sample(&mut rng);
        }
        for i in 0..d {
            let mut diffusion = 0.0;
            for k in 0..d {
                diffusion += sigma[k * d + i] * noise[k];
            }
            x[i] += drift[i] * dt_sim + diffusion * sqrt_dt;
        }
        grid.project_in_place(&mut x);
    }
    if let Some(r) = rec {
        r.final_state = x;
        r.final_mode = q;
        r.total_cost = cost;
    }
    Ok(cost)
}

impl<'a> Controller<'a> {
    pub fn simulate(
        &mut self,
        x0: &[f64],
        q0: usize,
        horizon: f64,
        dt_sim: f64,
        seed: u64,
    ) -> Result<Trajectory> {
        let steps = check_step(horizon, dt_sim)?;
        let d = self.op.model().dim();
        let mut traj = Trajectory {
            seed,
            dt_sim,
            dim: d,
            times: Vec::with_capacity(steps),
            states: Vec::with_capacity(steps * d),
            modes: Vec::with_capacity(steps),
            decisions: Vec::with_capacity(steps),
            costs: Vec::with_capacity(steps),
            switches: Vec::new(),
            final_state: Vec::new(),
            final_mode: q0,
            total_cost: 0.0,
        };
        run(self, x0, q0, steps, dt_sim, seed, Some(&mut traj))?;
        Ok(traj)
    }

    /// Discounted cost of one run without recording the path.
    pub fn run_cost(
        &mut self,
        x0: &[f64],
        q0: usize,
        horizon: f64,
        dt_sim: f64,
        seed: u64,
    ) -> Result<f64> {
        let steps = check_step(horizon, dt_sim)?;
        run(self, x0, q0, steps, dt_sim, seed, None)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    m: &Model,
    field: &ValueField,
    x0: &[f64],
    q0: usize,
    horizon: f64,
    dt_sim: f64,
    seed: u64,
    lookup: Lookup<'_>,
    dt_solve: f64,
) -> Result<Trajectory> {
    Controller::new(m, field, dt_solve, lookup)?.simulate(x0, q0, horizon, dt_sim, seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimReport {
    pub n_runs: usize,
    pub costs: Vec<f64>,
    pub mean: f64,
    pub std_err: f64,
    pub horizon: f64,
    /// `exp(−λ·T)·‖V‖∞`: bound on the discounted cost beyond the horizon.
    pub tail_bound: f64,
    pub base_seed: u64,
}

#[derive(Serialize)]
struct ReportDoc<'a> {
    n_runs: usize,
    mean: f64,
    std_err: f64,
    horizon: f64,
    tail_bound: f64,
    seeds: [u64; 2],
    #[serde(skip_serializing_if = "Option::is_none")]
    meta: Option<&'a serde_json::Value>,
}

impl SimReport {
    pub fn seeds(&self) -> [u64; 2] {
        [
            self.base_seed,
            self.base_seed.wrapping_add(self.n_runs as u64 - 1),
        ]
    }

    pub fn to_json(&self, meta: Option<&serde_json::Value>) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ReportDoc {
            n_runs: self.n_runs,
            mean: self.mean,
            std_err: self.std_err,
            horizon: self.horizon,
            tail_bound: self.tail_bound,
            seeds: self.seeds(),
            meta,
        })?)
    }
}

/// Mean and standard error `s/√N`. Identical samples give exactly zero error.
pub fn mean_and_std_err(samples: &[f64]) -> (f64, f64) {
    let n = samples.len();
    let pivot = samples[0];
    let mean = pivot + samples.iter().map(|c| c - pivot).sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// `n_runs` independent runs with seeds `base_seed..base_seed + n_runs − 1`.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo(
    m: &Model,
    field: &ValueField,
    x0: &[f64],
    q0: usize,
    n_runs: usize,
    horizon: f64,
    dt_sim: f64,
    base_seed: u64,
    lookup: Lookup<'_>,
    dt_solve: f64,
) -> Result<SimReport> {
    if n_runs == 0 {
        return Err(Error::InvalidConfig("number of runs must be at least 1".into()));
    }
    let steps = check_step(horizon, dt_sim)?;
    let proto = Controller::new(m, field, dt_solve, lookup)?;
    let costs = (0..n_runs)
        .into_par_iter()
        .map_init(
            || proto.clone(),
            |ctl, k| {
                let seed = base_seed.wrapping_add(k as u64);
                run(ctl, x0, q0, steps, dt_sim, seed, None)
            },
        )
        .collect::<Result<Vec<f64>>>()?;
    let (mean, std_err) = mean_and_std_err(&costs);
    let horizon = steps as f64 * dt_sim;
    Ok(SimReport {
        n_runs,
        costs,
        mean,
        std_err,
        horizon,
        tail_bound: (-m.discount() * horizon).exp() * field.sup_norm(),
        base_seed,
    })
}
