//! Semi-Lagrangian discrete Bellman operator.
//!
//! One node update minimizes, over the finite action set, the one-step cost
//! `ℓ·dt` plus the discounted interpolated value at the characteristic foot
//! points, and compares the result with the cheapest instantaneous mode switch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ValueField};
use crate::model::Model;

/// Optimal decision at a (state, mode) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Decision {
    /// Apply action `index` of the model's action set.
    Continuous(usize),
    /// Jump to mode `index`.
    Switch(usize),
}

impl Decision {
    pub fn kind(&self) -> &'static str {
        match self {
            Decision::Continuous(_) => "continuous",
            Decision::Switch(_) => "switch",
        }
    }

    pub fn index(&self) -> usize {
        match *self {
            Decision::Continuous(i) | Decision::Switch(i) => i,
        }
    }
}

/// Foot points and weights of one semi-Lagrangian step.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl Stencil {
    fn with_dim(dim: usize) -> Self {
        Self {
            dim,
            points: Vec::with_capacity(2 * dim * dim),
            weights: Vec::with_capacity(2 * dim),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.points
            .chunks_exact(self.dim)
            .zip(self.weights.iter().copied())
    }

    /// Fills from drift and diffusion columns already evaluated at `x`.
    ///
    /// Zero diffusion gives the single point `x + dt·f`. Otherwise the `2d`
    /// points `x + dt·f ± sqrt(d·dt)·σ_k`, each with weight `1/(2d)`, match the
    /// mean and covariance of the diffusion increment.
    fn fill(&mut self, x: &[f64], drift: &[f64], sigma: &[f64], dt: f64) {
        let d = self.dim;
        self.points.clear();
        self.weights.clear();
        if sigma.iter().all(|&s| s == 0.0) {
            self.points.extend(x.iter().zip(drift).map(|(xi, fi)| xi + dt * fi));
            self.weights.push(1.0);
            return;
        }
        let scale = (d as f64 * dt).sqrt();
        let w = 1.0 / (2 * d) as f64;
        for k in 0..d {
            let col = &sigma[k * d..(k + 1) * d];
            for sign in [1.0, -1.0] {
                for i in 0..d {
                    self.points.push(x[i] + dt * drift[i] + sign * scale * col[i]);
                }
                self.weights.push(w);
            }
        }
    }
}

/// Reusable buffers for operator evaluation; one per worker.
#[derive(Debug, Clone)]
pub struct Scratch {
    x: Vec<f64>,
    drift: Vec<f64>,
    sigma: Vec<f64>,
    stencil: Stencil,
}

impl Scratch {
    pub fn new(dim: usize) -> Self {
        Self {
            x: vec![0.0; dim],
            drift: vec![0.0; dim],
            sigma: vec![0.0; dim * dim],
            stencil: Stencil::with_dim(dim),
        }
    }
}

/// `dt = c_dt · min_k h_k`.
pub fn time_step(grid: &Grid, c_dt: f64) -> f64 {
    c_dt * grid.min_spacing()
}

pub fn stencil_points(m: &Model, x: &[f64], q: usize, action: usize, dt: f64) -> Result<Stencil> {
    check_dt(dt)?;
    let mut s = Scratch::new(m.dim());
    m.eval_dynamics(x, q, action, &mut s.drift, &mut s.sigma)?;
    s.stencil.fill(x, &s.drift, &s.sigma, dt);
    Ok(s.stencil)
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::NonpositiveDt(dt))
    }
}

/// Discretized Bellman operator for one model and time step.
#[derive(Debug, Clone, Copy)]
pub struct Operator<'a> {
    model: &'a Model,
    dt: f64,
    beta: f64,
}

impl<'a> Operator<'a> {
    pub fn new(model: &'a Model, dt: f64) -> Result<Self> {
        check_dt(dt)?;
        Ok(Self {
            model,
            dt,
            beta: (-model.discount() * dt).exp(),
        })
    }

    pub fn model(&self) -> &'a Model {
        self.model
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Per-step discount factor `exp(-λ·dt)`.
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// `ℓ·dt + β·Σ w·V(q, foot point)` at an arbitrary state `x`.
    pub fn continuous_at(
        &self,
        field: &ValueField,
        x: &[f64],
        q: usize,
        action: usize,
        s: &mut Scratch,
    ) -> Result<f64> {
        let m = self.model;
        m.eval_dynamics(x, q, action, &mut s.drift, &mut s.sigma)?;
        let cost = m.eval_cost(x, q, action)?;
        s.stencil.fill(x, &s.drift, &s.sigma, self.dt);
        let values = field.mode(q);
        let grid = field.grid();
        let expected: f64 = s
            .stencil
            .iter()
            .map(|(p, w)| w * grid.interpolate_nodes(values, p))
            .sum();
        Ok(cost * self.dt + self.beta * expected)
    }

    /// Cheapest action at `x` ignoring switches; ties go to the lowest index.
    pub fn best_continuous_at(
        &self,
        field: &ValueField,
        x: &[f64],
        q: usize,
        s: &mut Scratch,
    ) -> Result<(f64, usize)> {
        let mut best = (f64::INFINITY, 0);
        for a in 0..self.model.actions().len() {
            let v = self.continuous_at(field, x, q, a, s)?;
            if !v.is_finite() {
                return Err(Error::NonFiniteValue(a));
            }
            if v < best.0 {
                best = (v, a);
            }
        }
        Ok(best)
    }

    /// Cheapest switch using interpolated values at `x`.
    pub fn switch_at(&self, field: &ValueField, x: &[f64], q: usize) -> Option<(f64, usize)> {
        self.best_switch(q, |target| field.interpolate(target, x))
    }

    fn best_switch(&self, q: usize, value: impl Fn(usize) -> f64) -> Option<(f64, usize)> {
        let m = self.model;
        if m.num_modes() == 1 {
            return None;
        }
        let mut best: Option<(f64, usize)> = None;
        for target in (0..m.num_modes()).filter(|&t| t != q) {
            let v = value(target) + m.switch_cost(q, target);
            if best.is_none_or(|(b, _)| v < b) {
                best = Some((v, target));
            }
        }
        best
    }

    /// Full minimization at a continuous state: continuous branch beats a tied switch.
    pub fn update_at(
        &self,
        field: &ValueField,
        x: &[f64],
        q: usize,
        s: &mut Scratch,
    ) -> Result<(f64, Decision)> {
        let (cont, action) = self.best_continuous_at(field, x, q, s)?;
        match self.switch_at(field, x, q) {
            Some((sw, target)) if sw < cont => Ok((sw, Decision::Switch(target))),
            _ => Ok((cont, Decision::Continuous(action))),
        }
    }

    /// Node update: identical to [`Operator::update_at`] at the node's coordinates,
    /// with switch candidates read straight from the stored values.
    pub fn update_node(
        &self,
        field: &ValueField,
        node: usize,
        q: usize,
        s: &mut Scratch,
    ) -> Result<(f64, Decision)> {
        let mut x = std::mem::take(&mut s.x);
        field.grid().node_coords(node, &mut x);
        let cont = self.best_continuous_at(field, &x, q, s);
        s.x = x;
        let (cont, action) = cont?;
        match self.switch_node(field, node, q) {
            Some((sw, target)) if sw < cont => Ok((sw, Decision::Switch(target))),
            _ => Ok((cont, Decision::Continuous(action))),
        }
    }

    pub fn continuous_node(
        &self,
        field: &ValueField,
        node: usize,
        q: usize,
        action: usize,
        s: &mut Scratch,
    ) -> Result<f64> {
        let mut x = std::mem::take(&mut s.x);
        field.grid().node_coords(node, &mut x);
        let v = self.continuous_at(field, &x, q, action, s);
        s.x = x;
        v
    }

    pub fn switch_node(&self, field: &ValueField, node: usize, q: usize) -> Option<(f64, usize)> {
        self.best_switch(q, |target| field.get(target, node))
    }

    /// Value of the branch named by `decision` at a node.
    pub fn evaluate_decision(
        &self,
        field: &ValueField,
        node: usize,
        q: usize,
        decision: Decision,
        s: &mut Scratch,
    ) -> Result<f64> {
        match decision {
            Decision::Continuous(a) => self.continuous_node(field, node, q, a, s),
            Decision::Switch(t) => Ok(field.get(t, node) + self.model.switch_cost(q, t)),
        }
    }
}

/// Continuous branch at grid node `node` in mode `q` for one action.
pub fn continuous_branch(
    field: &ValueField,
    m: &Model,
    node: usize,
    q: usize,
    action: usize,
    dt: f64,
) -> Result<f64> {
    let op = Operator::new(m, dt)?;
    op.continuous_node(field, node, q, action, &mut Scratch::new(m.dim()))
}

/// Cheapest switch away from mode `q` at `node` (`None` for single-mode models).
/// Ties go to the lowest target mode.
pub fn switch_branch(field: &ValueField, m: &Model, node: usize, q: usize) -> Option<(f64, usize)> {
    let op = Operator {
        model: m,
        dt: 1.0,
        beta: 1.0,
    };
    op.switch_node(field, node, q)
}

pub fn sl_update(
    field: &ValueField,
    m: &Model,
    node: usize,
    q: usize,
    dt: f64,
) -> Result<(f64, Decision)> {
    let op = Operator::new(m, dt)?;
    op.update_node(field, node, q, &mut Scratch::new(m.dim()))
}
