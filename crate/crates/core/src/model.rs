//! Controlled switching diffusion: per-mode dynamics, running cost, discount,
//! a finite action set and mode-switching costs.
//!
//! The maps are stored as shared closures so one `Model` can be evaluated from
//! many worker threads at once. Closures write into caller-provided buffers to
//! keep the solver's inner loop allocation-free.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, ModelMap, Result};

/// `f(x, q, a)` written into `out` (length `dim`).
pub type DriftFn = Arc<dyn Fn(&[f64], usize, &[f64], &mut [f64]) + Send + Sync>;
/// `σ(x, q, a)` written into `out` (length `dim * dim`), column `k` at `out[k*dim..(k+1)*dim]`.
pub type DiffusionFn = Arc<dyn Fn(&[f64], usize, &[f64], &mut [f64]) + Send + Sync>;
/// `ℓ(x, q, a)`.
pub type CostFn = Arc<dyn Fn(&[f64], usize, &[f64]) -> f64 + Send + Sync>;

pub const DEFAULT_MIN_SWITCH_COST: f64 = 1e-9;

/// Ordered finite control set. Each action is a small vector payload that only
/// the model maps interpret.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSet {
    width: usize,
    values: Vec<f64>,
}

impl ActionSet {
    pub fn new(width: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || !values.len().is_multiple_of(width) {
            return Err(Error::InvalidModel(format!(
                "action payload length {} is not a multiple of width {}",
                values.len(),
                width
            )));
        }
        Ok(Self { width, values })
    }

    /// One scalar per action.
    pub fn scalars(values: Vec<f64>) -> Self {
        Self { width: 1, values }
    }

    /// `count` evenly spaced scalars on `[lo, hi]` (a single action at the midpoint when `count == 1`).
    pub fn uniform(lo: f64, hi: f64, count: usize) -> Self {
        let values = match count {
            0 => Vec::new(),
            1 => vec![0.5 * (lo + hi)],
            n => (0..n)
                .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
                .collect(),
        };
        Self::scalars(values)
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, index: usize) -> &[f64] {
        &self.values[index * self.width..(index + 1) * self.width]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.width)
    }
}

#[derive(Clone)]
pub struct Model {
    dim: usize,
    num_modes: usize,
    drift: DriftFn,
    diffusion: DiffusionFn,
    running_cost: CostFn,
    discount: f64,
    actions: ActionSet,
    /// Row-major `num_modes × num_modes`; diagonal is `+∞`.
    switch_cost: Vec<f64>,
    min_switch_cost: f64,
}

impl fmt::Debug for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Model")
            .field("dim", &self.dim)
            .field("num_modes", &self.num_modes)
            .field("discount", &self.discount)
            .field("actions", &self.actions.len())
            .field("switch_cost", &self.switch_cost)
            .finish_non_exhaustive()
    }
}

impl Model {
    /// Starts a model with zero drift, zero diffusion, zero cost, unit discount,
    /// a single zero action and one mode.
    pub fn builder(dim: usize) -> ModelBuilder {
        ModelBuilder {
            dim,
            num_modes: 1,
            drift: Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
            diffusion: Arc::new(|_, _, _, out: &mut [f64]| out.fill(0.0)),
            running_cost: Arc::new(|_, _, _| 0.0),
            discount: 1.0,
            actions: ActionSet::scalars(vec![0.0]),
            switch_cost: Vec::new(),
            min_switch_cost: DEFAULT_MIN_SWITCH_COST,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_modes(&self) -> usize {
        self.num_modes
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn actions(&self) -> &ActionSet {
        &self.actions
    }

    pub fn min_switch_cost(&self) -> f64 {
        self.min_switch_cost
    }

    /// `K(from, to)`; `+∞` on the diagonal.
    pub fn switch_cost(&self, from: usize, to: usize) -> f64 {
        self.switch_cost[from * self.num_modes + to]
    }

    pub fn drift(&self, x: &[f64], q: usize, action: usize, out: &mut [f64]) {
        (self.drift)(x, q, self.actions.get(action), out)
    }

    pub fn diffusion(&self, x: &[f64], q: usize, action: usize, out: &mut [f64]) {
        (self.diffusion)(x, q, self.actions.get(action), out)
    }

    pub fn running_cost(&self, x: &[f64], q: usize, action: usize) -> f64 {
        (self.running_cost)(x, q, self.actions.get(action))
    }

    /// Drift and diffusion at `(x, q, action)`, checked for finiteness.
    pub(crate) fn eval_dynamics(
        &self,
        x: &[f64],
        q: usize,
        action: usize,
        drift: &mut [f64],
        sigma: &mut [f64],
    ) -> Result<()> {
        self.drift(x, q, action, drift);
        if drift.iter().any(|v| !v.is_finite()) {
            return Err(self.failure(ModelMap::Drift, x, q, action));
        }
        self.diffusion(x, q, action, sigma);
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(self.failure(ModelMap::Diffusion, x, q, action));
        }
        Ok(())
    }

    pub(crate) fn eval_cost(&self, x: &[f64], q: usize, action: usize) -> Result<f64> {
        let c = self.running_cost(x, q, action);
        if c.is_finite() {
            Ok(c)
        } else {
            Err(self.failure(ModelMap::RunningCost, x, q, action))
        }
    }

    fn failure(&self, map: ModelMap, x: &[f64], mode: usize, action: usize) -> Error {
        Error::EvaluationFailure {
            map,
            point: x.to_vec(),
            mode,
            action,
        }
    }
}

pub struct ModelBuilder {
    dim: usize,
    num_modes: usize,
    drift: DriftFn,
    diffusion: DiffusionFn,
    running_cost: CostFn,
    discount: f64,
    actions: ActionSet,
    switch_cost: Vec<(usize, usize, f64)>,
    min_switch_cost: f64,
}

impl ModelBuilder {
    pub fn modes(mut self, num_modes: usize) -> Self {
        self.num_modes = num_modes;
        self
    }

    pub fn drift<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], usize, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.drift = Arc::new(f);
        self
    }

    pub fn diffusion<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], usize, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        self.diffusion = Arc::new(f);
        self
    }

    pub fn running_cost<F>(mut self, f: F) -> Self
    where
        F: Fn(&[f64], usize, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.running_cost = Arc::new(f);
        self
    }

    pub fn discount(mut self, lambda: f64) -> Self {
        self.discount = lambda;
        self
    }

    pub fn actions(mut self, actions: ActionSet) -> Self {
        self.actions = actions;
        self
    }

    /// Sets `K(from, to)`. Unset off-diagonal entries are `+∞` (switch unavailable).
    pub fn switch_cost(mut self, from: usize, to: usize, cost: f64) -> Self {
        self.switch_cost.push((from, to, cost));
        self
    }

    /// Sets every off-diagonal entry to `cost`.
    pub fn uniform_switch_cost(mut self, cost: f64) -> Self {
        for from in 0..self.num_modes {
            for to in 0..self.num_modes {
                if from != to {
                    self.switch_cost.push((from, to, cost));
                }
            }
        }
        self
    }

    pub fn min_switch_cost(mut self, kappa: f64) -> Self {
        self.min_switch_cost = kappa;
        self
    }

    /// Assembles the record. Invariants are checked by [`validate_model`], not here.
    pub fn build(self) -> Result<Model> {
        let q = self.num_modes;
        let mut matrix = vec![f64::INFINITY; q * q];
        for (from, to, cost) in self.switch_cost {
            if from >= q || to >= q {
                return Err(Error::OutOfRange {
                    index: from.max(to),
                    size: q,
                });
            }
            if from != to {
                matrix[from * q + to] = cost;
            }
        }
        Ok(Model {
            dim: self.dim,
            num_modes: q,
            drift: self.drift,
            diffusion: self.diffusion,
            running_cost: self.running_cost,
            discount: self.discount,
            actions: self.actions,
            switch_cost: matrix,
            min_switch_cost: self.min_switch_cost,
        })
    }
}

/// Checks the model invariants and probes every `(mode, action)` pair at `probe`
/// (normally the centre of the state box).
pub fn validate_model(m: &Model, probe: &[f64]) -> Result<()> {
    if m.dim == 0 {
        return Err(Error::InvalidModel("state dimension must be at least 1".into()));
    }
    if m.num_modes == 0 {
        return Err(Error::InvalidModel("model needs at least one mode".into()));
    }
    if !(m.discount > 0.0) || !m.discount.is_finite() {
        return Err(Error::NonpositiveDiscount(m.discount));
    }
    if m.actions.is_empty() {
        return Err(Error::EmptyActionSet);
    }
    if !(m.min_switch_cost > 0.0) {
        return Err(Error::InvalidModel(format!(
            "minimum switch cost must be positive, got {}",
            m.min_switch_cost
        )));
    }
    for from in 0..m.num_modes {
        for to in 0..m.num_modes {
            let k = m.switch_cost(from, to);
            if from == to {
                continue;
            }
            if k.is_nan() || k < m.min_switch_cost {
                return Err(Error::NonpositiveSwitchCost(from, to));
            }
        }
    }
    if probe.len() != m.dim {
        return Err(Error::DimensionMismatch {
            expected: m.dim,
            got: probe.len(),
        });
    }

    let d = m.dim;
    let mut drift = vec![0.0; d];
    let mut sigma = vec![0.0; d * d];
    for q in 0..m.num_modes {
        for a in 0..m.actions.len() {
            m.eval_dynamics(probe, q, a, &mut drift, &mut sigma)?;
            let c = m.eval_cost(probe, q, a)?;
            if c < 0.0 {
                return Err(Error::InvalidModel(format!(
                    "running cost is negative ({c}) at mode {q}, action {a}"
                )));
            }
        }
    }
    Ok(())
}
