//! Config-driven pipeline around the `slcontrol` solver: solve, simulate,
//! refinement studies and artifact dumps.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use slcontrol::benchmarks::{benchmark_family, convergence_study};
use slcontrol::solver::solve;
use slcontrol::synthesis::{extract_policy, monte_carlo, Controller};
use slcontrol::{Error, Lookup, LookupMode, Solution, ValueField};
use thiserror::Error;

pub mod config;

pub use config::{LoadedConfig, RunConfig};

pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(Error::NotConverged(_)) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Settings shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub output_dir: Option<PathBuf>,
    pub quiet: bool,
}

impl Options {
    fn out_dir(&self, cfg: &RunConfig) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| cfg.output_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."))
    }

    fn log(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }
}

/// Writes `contents` to `dir/name` through a temporary file and a rename.
pub fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let target = dir.join(name);
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = std::fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(contents).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    std::fs::rename(&tmp, &target).map_err(io_err(&target))?;
    Ok(target)
}

pub fn config_hash(raw: &[u8]) -> String {
    hex::encode(Sha256::digest(raw).as_slice())
}

/// Provenance block. Files that must be byte-reproducible omit the wall clock.
fn meta(loaded: &LoadedConfig, with_clock: bool) -> serde_json::Value {
    let mut m = json!({
        "build": BUILD_ID,
        "config_hash": config_hash(&loaded.raw),
    });
    if with_clock {
        let now = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        m["wall_clock_unix_s"] = json!(now);
    }
    m
}

#[derive(Serialize)]
struct StatsDoc<'a> {
    #[serde(flatten)]
    stats: &'a slcontrol::SolveStats,
    meta: serde_json::Value,
}

fn write_solution(
    dir: &Path,
    sol: &Solution,
    loaded: &LoadedConfig,
) -> Result<(), CliError> {
    let m = meta(loaded, false);
    write_atomic(dir, "value.json", sol.field.to_json(Some(&m))?.as_bytes())?;
    write_atomic(dir, "policy.json", sol.policy.to_json(Some(&m))?.as_bytes())?;
    let stats = serde_json::to_string_pretty(&StatsDoc {
        stats: &sol.stats,
        meta: meta(loaded, true),
    })
    .map_err(Error::from)?;
    write_atomic(dir, "stats.json", stats.as_bytes())?;
    Ok(())
}

/// `solve <config>`: exit 0 converged, 2 not converged (artifacts still written).
pub fn cmd_solve(config_path: &Path, opts: &Options) -> Result<i32, CliError> {
    let loaded = RunConfig::load(config_path)?;
    let cfg = &loaded.config;
    let model = cfg.model.model()?;
    let grid = cfg.grid()?;
    let dir = opts.out_dir(cfg);
    opts.log(format!(
        "solving `{}` on {:?} nodes ({:?})",
        cfg.model.name(),
        grid.counts(),
        cfg.solver.sweep_mode
    ));
    match solve(&model, &grid, &cfg.solver) {
        Ok(sol) => {
            write_solution(&dir, &sol, &loaded)?;
            opts.log(format!(
                "converged in {} sweeps, residual {:.3e}",
                sol.stats.sweeps, sol.stats.residual
            ));
            Ok(0)
        }
        Err(Error::NotConverged(sol)) => {
            write_solution(&dir, &sol, &loaded)?;
            eprintln!(
                "not converged after {} sweeps (last change {:.3e}); partial artifacts written",
                sol.stats.sweeps, sol.stats.final_change
            );
            Ok(2)
        }
        Err(e) => Err(e.into()),
    }
}

pub fn read_field(path: &Path) -> Result<ValueField, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    Ok(ValueField::from_json(&text)?)
}

/// `simulate <config> <value.json>`: Monte Carlo report plus the first ten trajectories.
pub fn cmd_simulate(config_path: &Path, value_path: &Path, opts: &Options) -> Result<i32, CliError> {
    let loaded = RunConfig::load(config_path)?;
    let cfg = &loaded.config;
    let model = cfg.model.model()?;
    let grid = cfg.grid()?;
    let field = read_field(value_path)?;
    if field.grid().spec() != grid.spec() {
        return Err(Error::GridMismatch(format!(
            "value field grid {:?} differs from config grid {:?}",
            field.grid().spec(),
            grid.spec()
        ))
        .into());
    }
    if field.num_modes() != model.num_modes() {
        return Err(Error::GridMismatch(format!(
            "value field has {} modes, model `{}` has {}",
            field.num_modes(),
            cfg.model.name(),
            model.num_modes()
        ))
        .into());
    }

    let sim = &cfg.simulation;
    let x0 = sim.x0.clone().unwrap_or_else(|| grid.center());
    let dt = cfg.solver.time_step(&grid);
    let policy;
    let lookup = match sim.lookup {
        LookupMode::Online => Lookup::Online,
        LookupMode::Tabular => {
            policy = extract_policy(&field, &model, &cfg.solver)?;
            Lookup::Tabular(&policy)
        }
    };
    opts.log(format!(
        "simulating {} runs of `{}` from x0={:?}, q0={} ({:?} lookup)",
        sim.n_runs,
        cfg.model.name(),
        x0,
        sim.q0,
        sim.lookup
    ));
    let report = monte_carlo(
        &model, &field, &x0, sim.q0, sim.n_runs, sim.horizon, sim.dt_sim, sim.seed, lookup, dt,
    )?;

    let dir = opts.out_dir(cfg);
    write_atomic(
        &dir,
        "report.json",
        report.to_json(Some(&meta(&loaded, false)))?.as_bytes(),
    )?;
    let mut ctl = Controller::new(&model, &field, dt, lookup)?;
    for k in 0..sim.n_runs.min(10) {
        let traj = ctl.simulate(&x0, sim.q0, sim.horizon, sim.dt_sim, sim.seed.wrapping_add(k as u64))?;
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).map_err(io_err(&dir))?;
        write_atomic(&dir, &format!("traj_{k}.csv"), &buf)?;
    }
    opts.log(format!(
        "mean cost {:.6} ± {:.2e} (tail bound {:.2e})",
        report.mean, report.std_err, report.tail_bound
    ));
    Ok(0)
}

/// `study <config>`: exit 0 when the finest level beats the coarsest, or when
/// every level already matches the reference within `10·tol`.
pub fn cmd_study(config_path: &Path, opts: &Options) -> Result<i32, CliError> {
    let loaded = RunConfig::load(config_path)?;
    let cfg = &loaded.config;
    let base = cfg.grid()?;
    let family = benchmark_family(&cfg.model, &base)?;
    opts.log(format!(
        "refinement study of `{}`: {} levels from {:?} nodes",
        cfg.model.name(),
        cfg.study.levels,
        base.counts()
    ));
    let study = match convergence_study(family, &cfg.solver, cfg.study.levels) {
        Ok(s) => s,
        Err(Error::NotConverged(sol)) => {
            eprintln!("a refinement level did not converge after {} sweeps", sol.stats.sweeps);
            return Ok(2);
        }
        Err(e) => return Err(e.into()),
    };
    let mut buf = Vec::new();
    study.write_csv(&mut buf).map_err(io_err(config_path))?;
    write_atomic(&opts.out_dir(cfg), "study.csv", &buf)?;
    for r in &study.rows {
        opts.log(format!(
            "level {} counts {:?} sup_error {:.4e} order {}",
            r.level,
            r.counts,
            r.sup_error,
            r.order.map_or("-".to_string(), |o| format!("{o:.3}"))
        ));
    }
    let exact = study.rows.iter().all(|r| r.sup_error <= 10.0 * cfg.solver.tol);
    Ok(if study.improved() || exact { 0 } else { 2 })
}

/// `dump <value.json>`: grid metadata and value range per mode.
pub fn cmd_dump(value_path: &Path) -> Result<String, CliError> {
    let field = read_field(value_path)?;
    let g = field.grid();
    let mut out = String::new();
    out.push_str(&format!("dim:       {}\n", g.dim()));
    out.push_str(&format!("lows:      {:?}\n", g.lows()));
    out.push_str(&format!("highs:     {:?}\n", g.highs()));
    out.push_str(&format!("counts:    {:?}\n", g.counts()));
    out.push_str(&format!("spacings:  {:?}\n", g.spacings()));
    out.push_str(&format!("nodes:     {}\n", g.len()));
    out.push_str(&format!("num_modes: {}\n", field.num_modes()));
    for q in 0..field.num_modes() {
        let (lo, hi) = field
            .mode(q)
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        out.push_str(&format!("mode {q}:    min {lo:.10e}  max {hi:.10e}\n"));
    }
    Ok(out)
}

/// Configures the global worker pool. Later calls are ignored by rayon.
pub fn init_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

/// Thread count from the config file, if one is set.
pub fn config_threads(config_path: &Path) -> Option<usize> {
    let raw = std::fs::read(config_path).ok()?;
    let v: serde_json::Value = serde_json::from_slice(&raw).ok()?;
    v.get("threads")?.as_u64().map(|n| n as usize)
}
