use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use slcontrol::benchmarks::Benchmark;
use slcontrol::{Grid, GridSpec, LookupMode, SolverConfig};

use crate::CliError;

/// One JSON document drives every subcommand. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Benchmark,
    /// Defaults to the benchmark's own box and node counts.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    /// Defaults to the box centre.
    pub x0: Option<Vec<f64>>,
    pub q0: usize,
    pub n_runs: usize,
    pub horizon: f64,
    pub dt_sim: f64,
    pub seed: u64,
    pub lookup: LookupMode,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            x0: None,
            q0: 0,
            n_runs: 1000,
            horizon: 10.0,
            dt_sim: 1e-3,
            seed: 0,
            lookup: LookupMode::Online,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub levels: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self { levels: 3 }
    }
}

/// Parsed config plus the raw bytes it came from (hashed into output metadata).
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub raw: Vec<u8>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<LoadedConfig, CliError> {
        let raw = std::fs::read(path).map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config: RunConfig = serde_json::from_slice(&raw)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(LoadedConfig { config, raw })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.solver.validate()?;
        if self.study.levels < 2 {
            return Err(CliError::Config(format!(
                "study.levels must be at least 2, got {}",
                self.study.levels
            )));
        }
        if self.threads == Some(0) {
            return Err(CliError::Config("threads must be at least 1".into()));
        }
        let sim = &self.simulation;
        if sim.n_runs == 0 {
            return Err(CliError::Config("simulation.n_runs must be at least 1".into()));
        }
        if !(sim.dt_sim > 0.0) || !(sim.horizon >= sim.dt_sim) {
            return Err(CliError::Config(format!(
                "simulation.dt_sim must be positive and not exceed simulation.horizon (dt_sim={}, horizon={})",
                sim.dt_sim, sim.horizon
            )));
        }
        let grid = self.grid()?;
        if let Some(x0) = &sim.x0 {
            if x0.len() != grid.dim() {
                return Err(CliError::Config(format!(
                    "simulation.x0 has {} components, grid has dimension {}",
                    x0.len(),
                    grid.dim()
                )));
            }
        }
        let model = self.model.model()?;
        if model.dim() != grid.dim() {
            return Err(CliError::Config(format!(
                "grid dimension {} does not match model `{}` (dimension {})",
                grid.dim(),
                self.model.name(),
                model.dim()
            )));
        }
        if sim.q0 >= model.num_modes() {
            return Err(CliError::Config(format!(
                "simulation.q0 = {} but the model has {} modes",
                sim.q0,
                model.num_modes()
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        Ok(match &self.grid {
            Some(spec) => Grid::from_spec(spec)?,
            None => self.model.default_grid()?,
        })
    }
}
