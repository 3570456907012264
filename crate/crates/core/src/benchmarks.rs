//! Benchmark problems with independent reference values, and a grid
//! refinement study that measures the solver against them.

use std::io::{self, Write};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ValueField};
use crate::model::{ActionSet, Model};
use crate::solver::{solve, SolverConfig};

/// Reference value `V(x, q)` for a model solved with time step `dt`.
pub type Oracle = Arc<dyn Fn(&[f64], usize, f64) -> f64 + Send + Sync>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidParams(msg()))
    }
}

/// Scalar linear-quadratic problem: `dx = a dt + σ dW`, cost `x² + r·a²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqParams {
    pub sigma: f64,
    pub r_ctl: f64,
    pub lambda: f64,
    /// State box is `[-radius, radius]`.
    pub radius: f64,
    pub action_count: usize,
    pub counts: usize,
}

impl Default for LqParams {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            r_ctl: 1.0,
            lambda: 1.0,
            radius: 2.0,
            action_count: 65,
            counts: 65,
        }
    }
}

impl LqParams {
    fn validate(&self) -> Result<()> {
        check(self.sigma >= 0.0 && self.sigma.is_finite(), || {
            format!("sigma must be >= 0, got {}", self.sigma)
        })?;
        check(self.r_ctl > 0.0 && self.r_ctl.is_finite(), || {
            format!("r_ctl must be > 0, got {}", self.r_ctl)
        })?;
        check(self.lambda > 0.0 && self.lambda.is_finite(), || {
            format!("lambda must be > 0, got {}", self.lambda)
        })?;
        check(self.radius > 0.0 && self.radius.is_finite(), || {
            format!("radius must be > 0, got {}", self.radius)
        })?;
        check(self.action_count >= 2, || "action_count must be >= 2".into())?;
        check(self.counts >= 2, || "counts must be >= 2".into())
    }
}

/// The LQ model with its closed-form value `P·x² + c_off`.
#[derive(Debug, Clone)]
pub struct LqBenchmark {
    pub model: Model,
    pub params: LqParams,
    /// Positive root of `P²/r + λP − 1 = 0`.
    pub p_coeff: f64,
    /// `σ²·P/λ`.
    pub offset: f64,
    pub a_max: f64,
}

pub fn lq1d(p: &LqParams) -> Result<LqBenchmark> {
    p.validate()?;
    let (r, lambda) = (p.r_ctl, p.lambda);
    let p_coeff = 0.5 * r * (-lambda + (lambda * lambda + 4.0 / r).sqrt());
    let offset = p.sigma * p.sigma * p_coeff / lambda;
    let a_max = (p.radius * p_coeff / r).ceil();
    let sigma = p.sigma;
    let model = Model::builder(1)
        .actions(ActionSet::uniform(-a_max, a_max, p.action_count))
        .drift(|_, _, a, out| out[0] = a[0])
        .diffusion(move |_, _, _, out| out[0] = sigma)
        .running_cost(move |x, _, a| x[0] * x[0] + r * a[0] * a[0])
        .discount(lambda)
        .build()?;
    Ok(LqBenchmark {
        model,
        params: p.clone(),
        p_coeff,
        offset,
        a_max,
    })
}

impl LqBenchmark {
    pub fn value(&self, x: f64) -> f64 {
        self.p_coeff * x * x + self.offset
    }

    /// Optimal feedback `−P·x/r`.
    pub fn feedback(&self, x: f64) -> f64 {
        -self.p_coeff * x / self.params.r_ctl
    }

    pub fn grid(&self) -> Grid {
        let r = self.params.radius;
        Grid::new(&[-r], &[r], &[self.params.counts]).expect("validated params")
    }

    /// `x² + r·a² + a·V'(x) + ½σ²·V''(x)` for the closed-form `V`.
    pub fn hamiltonian(&self, x: f64, a: f64) -> f64 {
        let p = &self.params;
        x * x + p.r_ctl * a * a + a * 2.0 * self.p_coeff * x + 0.5 * p.sigma * p.sigma * 2.0 * self.p_coeff
    }

    pub fn oracle(&self) -> Oracle {
        let b = self.clone();
        Arc::new(move |x, _, _| b.value(x[0]))
    }
}

/// Two modes with constant costs and no motion; mode 0 is the expensive one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TwoModeParams {
    pub c_high: f64,
    pub c_low: f64,
    pub k_sw: f64,
    pub lambda: f64,
    pub radius: f64,
    pub counts: usize,
}

impl Default for TwoModeParams {
    fn default() -> Self {
        Self {
            c_high: 10.0,
            c_low: 0.0,
            k_sw: 0.01,
            lambda: 1.0,
            radius: 1.0,
            counts: 33,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoModeBenchmark {
    pub model: Model,
    pub params: TwoModeParams,
}

pub fn two_mode_switch(p: &TwoModeParams) -> Result<TwoModeBenchmark> {
    check(p.c_low >= 0.0 && p.c_high >= 0.0, || {
        format!("costs must be >= 0, got c_low={}, c_high={}", p.c_low, p.c_high)
    })?;
    check(p.c_low <= p.c_high, || "c_low must not exceed c_high".into())?;
    check(p.k_sw > 0.0, || format!("k_sw must be > 0, got {}", p.k_sw))?;
    check(p.lambda > 0.0, || format!("lambda must be > 0, got {}", p.lambda))?;
    check(p.radius > 0.0 && p.counts >= 2, || "radius must be > 0 and counts >= 2".into())?;
    let (hi, lo) = (p.c_high, p.c_low);
    let model = Model::builder(1)
        .modes(2)
        .running_cost(move |_, q, _| if q == 0 { hi } else { lo })
        .discount(p.lambda)
        .uniform_switch_cost(p.k_sw)
        .build()?;
    Ok(TwoModeBenchmark {
        model,
        params: p.clone(),
    })
}

impl TwoModeBenchmark {
    /// Exact discrete fixed point in mode `q` for time step `dt`.
    pub fn fixed_point(&self, q: usize, dt: f64) -> f64 {
        let p = &self.params;
        let horizon_sum = dt / (1.0 - (-p.lambda * dt).exp());
        let low = p.c_low * horizon_sum;
        if q == 1 {
            low
        } else {
            (p.c_high * horizon_sum).min(low + p.k_sw)
        }
    }

    /// Whether mode 0 strictly prefers switching at step `dt`.
    pub fn switches(&self, dt: f64) -> bool {
        let p = &self.params;
        let horizon_sum = dt / (1.0 - (-p.lambda * dt).exp());
        p.c_high * horizon_sum > p.c_low * horizon_sum + p.k_sw
    }

    pub fn grid(&self) -> Grid {
        let r = self.params.radius;
        Grid::new(&[-r], &[r], &[self.params.counts]).expect("validated params")
    }

    pub fn oracle(&self) -> Oracle {
        let b = self.clone();
        Arc::new(move |_, q, dt| b.fixed_point(q, dt))
    }
}

/// Motionless single-mode problem with constant cost `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantCostParams {
    pub c: f64,
    pub lambda: f64,
    pub radius: f64,
    pub counts: usize,
}

impl Default for ConstantCostParams {
    fn default() -> Self {
        Self {
            c: 2.0,
            lambda: 1.0,
            radius: 1.0,
            counts: 33,
        }
    }
}

pub fn constant_cost(p: &ConstantCostParams) -> Result<Model> {
    check(p.c >= 0.0, || format!("c must be >= 0, got {}", p.c))?;
    let c = p.c;
    Model::builder(1)
        .running_cost(move |_, _, _| c)
        .discount(p.lambda)
        .build()
}

/// `c·dt / (1 − exp(−λ·dt))`.
pub fn constant_cost_fixed_point(c: f64, lambda: f64, dt: f64) -> f64 {
    c * dt / (1.0 - (-lambda * dt).exp())
}

/// Noisy double integrator `ẍ = a`; no closed-form reference is provided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DoubleIntegratorParams {
    pub sigma: f64,
    pub r_ctl: f64,
    pub lambda: f64,
    pub radius: f64,
    pub a_max: f64,
    pub action_count: usize,
    pub counts: usize,
}

impl Default for DoubleIntegratorParams {
    fn default() -> Self {
        Self {
            sigma: 0.2,
            r_ctl: 1.0,
            lambda: 1.0,
            radius: 2.0,
            a_max: 2.0,
            action_count: 9,
            counts: 17,
        }
    }
}

pub fn double_integrator(p: &DoubleIntegratorParams) -> Result<Model> {
    check(p.r_ctl > 0.0 && p.sigma >= 0.0 && p.action_count >= 1, || {
        "double integrator needs r_ctl > 0, sigma >= 0, action_count >= 1".into()
    })?;
    let (sigma, r) = (p.sigma, p.r_ctl);
    Model::builder(2)
        .actions(ActionSet::uniform(-p.a_max, p.a_max, p.action_count))
        .drift(|x, _, a, out| {
            out[0] = x[1];
            out[1] = a[0];
        })
        .diffusion(move |_, _, _, out| {
            out.fill(0.0);
            out[3] = sigma;
        })
        .running_cost(move |x, _, a| x[0] * x[0] + x[1] * x[1] + r * a[0] * a[0])
        .discount(p.lambda)
        .build()
}

/// Registered benchmark with its parameters.
///
/// Serialized as `{"name": "<benchmark>", "params": {...}}`; omitted
/// parameters take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", content = "params", rename_all = "snake_case")]
#[serde(try_from = "Selector")]
pub enum Benchmark {
    Lq1d(LqParams),
    TwoModeSwitch(TwoModeParams),
    ConstantCost(ConstantCostParams),
    DoubleIntegrator(DoubleIntegratorParams),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Selector {
    name: String,
    #[serde(default)]
    params: Option<serde_json::Value>,
}

impl TryFrom<Selector> for Benchmark {
    type Error = String;

    fn try_from(sel: Selector) -> std::result::Result<Self, String> {
        fn parse<T: serde::de::DeserializeOwned>(v: serde_json::Value) -> std::result::Result<T, String> {
            serde_json::from_value(v).map_err(|e| e.to_string())
        }
        let params = sel.params.unwrap_or_else(|| serde_json::json!({}));
        match sel.name.as_str() {
            "lq1d" => parse(params).map(Benchmark::Lq1d),
            "two_mode_switch" => parse(params).map(Benchmark::TwoModeSwitch),
            "constant_cost" => parse(params).map(Benchmark::ConstantCost),
            "double_integrator" => parse(params).map(Benchmark::DoubleIntegrator),
            other => Err(format!(
                "unknown benchmark `{other}`, expected one of lq1d, two_mode_switch, constant_cost, double_integrator"
            )),
        }
    }
}

impl Benchmark {
    pub fn name(&self) -> &'static str {
        match self {
            Benchmark::Lq1d(_) => "lq1d",
            Benchmark::TwoModeSwitch(_) => "two_mode_switch",
            Benchmark::ConstantCost(_) => "constant_cost",
            Benchmark::DoubleIntegrator(_) => "double_integrator",
        }
    }

    pub fn model(&self) -> Result<Model> {
        match self {
            Benchmark::Lq1d(p) => Ok(lq1d(p)?.model),
            Benchmark::TwoModeSwitch(p) => Ok(two_mode_switch(p)?.model),
            Benchmark::ConstantCost(p) => constant_cost(p),
            Benchmark::DoubleIntegrator(p) => double_integrator(p),
        }
    }

    pub fn default_grid(&self) -> Result<Grid> {
        let (r, n, d) = match self {
            Benchmark::Lq1d(p) => (p.radius, p.counts, 1),
            Benchmark::TwoModeSwitch(p) => (p.radius, p.counts, 1),
            Benchmark::ConstantCost(p) => (p.radius, p.counts, 1),
            Benchmark::DoubleIntegrator(p) => (p.radius, p.counts, 2),
        };
        Grid::new(&vec![-r; d], &vec![r; d], &vec![n; d])
    }

    pub fn oracle(&self) -> Result<Option<Oracle>> {
        Ok(match self {
            Benchmark::Lq1d(p) => Some(lq1d(p)?.oracle()),
            Benchmark::TwoModeSwitch(p) => Some(two_mode_switch(p)?.oracle()),
            Benchmark::ConstantCost(p) => {
                let (c, lambda) = (p.c, p.lambda);
                Some(Arc::new(move |_: &[f64], _: usize, dt: f64| {
                    constant_cost_fixed_point(c, lambda, dt)
                }) as Oracle)
            }
            Benchmark::DoubleIntegrator(_) => None,
        })
    }

    /// Parameters for refinement `level`: the LQ action grid is refined
    /// together with the state grid.
    pub fn refined(&self, level: u32) -> Benchmark {
        match self {
            Benchmark::Lq1d(p) => Benchmark::Lq1d(LqParams {
                action_count: refine_count(p.action_count, level),
                counts: refine_count(p.counts, level),
                ..p.clone()
            }),
            other => other.clone(),
        }
    }
}

/// `(n − 1)·2^level + 1`: interval count doubled per level.
pub fn refine_count(n: usize, level: u32) -> usize {
    (n - 1) * (1 << level) + 1
}

/// `grid` with every axis refined `level` times.
pub fn refine_grid(grid: &Grid, level: u32) -> Result<Grid> {
    let counts: Vec<usize> = grid.counts().iter().map(|&n| refine_count(n, level)).collect();
    Grid::new(grid.lows(), grid.highs(), &counts)
}

/// Max over modes and inner-half-box nodes of `|V − oracle|`.
pub fn inner_sup_error(field: &ValueField, oracle: &Oracle, dt: f64) -> f64 {
    let g = field.grid();
    let centre = g.center();
    let half: Vec<f64> = g
        .lows()
        .iter()
        .zip(g.highs())
        .map(|(l, h)| 0.25 * (h - l))
        .collect();
    let mut err: f64 = 0.0;
    let mut x = vec![0.0; g.dim()];
    for node in 0..g.len() {
        g.node_coords(node, &mut x);
        let inside = (0..g.dim()).all(|k| (x[k] - centre[k]).abs() <= half[k] * (1.0 + 1e-12));
        if !inside {
            continue;
        }
        for q in 0..field.num_modes() {
            err = err.max((field.get(q, node) - oracle(&x, q, dt)).abs());
        }
    }
    err
}

/// One refinement level of a convergence study.
pub struct StudyCase {
    pub model: Model,
    pub grid: Grid,
    pub oracle: Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub level: usize,
    pub counts: Vec<usize>,
    pub h: f64,
    pub dt: f64,
    pub sup_error: f64,
    /// `log2(err_{l−1} / err_l)`; absent on the first level.
    pub order: Option<f64>,
    pub sweeps: usize,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
}

impl ConvergenceStudy {
    /// Finest-level error below coarsest-level error.
    pub fn improved(&self) -> bool {
        match (self.rows.first(), self.rows.last()) {
            (Some(a), Some(b)) => b.sup_error < a.sup_error,
            _ => false,
        }
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].sup_error < w[0].sup_error)
    }

    /// `level,counts,h,dt,sup_error,order,sweeps,wall_ms`
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "level,counts,h,dt,sup_error,order,sweeps,wall_ms")?;
        for r in &self.rows {
            let counts: Vec<String> = r.counts.iter().map(|c| c.to_string()).collect();
            let order = match r.order {
                Some(o) if o.is_finite() => o.to_string(),
                _ => String::new(),
            };
            writeln!(
                w,
                "{},{},{},{},{:e},{},{},{:.3}",
                r.level,
                counts.join("x"),
                r.h,
                r.dt,
                r.sup_error,
                order,
                r.sweeps,
                r.wall_ms
            )?;
        }
        Ok(())
    }
}

/// Solves `levels` refinements produced by `family` and measures each against its oracle.
pub fn convergence_study<F>(family: F, cfg: &SolverConfig, levels: usize) -> Result<ConvergenceStudy>
where
    F: Fn(u32) -> Result<StudyCase>,
{
    if levels < 2 {
        return Err(Error::InvalidConfig(format!(
            "a convergence study needs at least 2 levels, got {levels}"
        )));
    }
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(levels);
    for level in 0..levels {
        let case = family(level as u32)?;
        let start = Instant::now();
        let sol = solve(&case.model, &case.grid, cfg)?;
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        let sup_error = inner_sup_error(&sol.field, &case.oracle, sol.stats.dt);
        let order = rows.last().map(|prev| (prev.sup_error / sup_error).log2());
        rows.push(ConvergenceRow {
            level,
            counts: case.grid.counts().to_vec(),
            h: case.grid.min_spacing(),
            dt: sol.stats.dt,
            sup_error,
            order,
            sweeps: sol.stats.sweeps,
            wall_ms,
        });
    }
    Ok(ConvergenceStudy { rows })
}

/// Study family for a registered benchmark starting from `base` grid.
pub fn benchmark_family(
    bench: &Benchmark,
    base: &Grid,
) -> Result<impl Fn(u32) -> Result<StudyCase>> {
    if bench.oracle()?.is_none() {
        return Err(Error::InvalidParams(format!(
            "benchmark `{}` has no reference solution",
            bench.name()
        )));
    }
    let bench = bench.clone();
    let base = base.clone();
    Ok(move |level| {
        let b = bench.refined(level);
        Ok(StudyCase {
            model: b.model()?,
            grid: refine_grid(&base, level)?,
            oracle: b.oracle()?.expect("checked above"),
        })
    })
}
