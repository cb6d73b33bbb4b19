//! Problem configuration: JSON schema, validation and defaults.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use covbridge_core::bridge::GaussianMarginal;
use covbridge_core::sim::SimConfig;
use covbridge_core::system::{LtvSystem, PiecewiseRow};

use crate::CliError;

pub const DEFAULT_STEPS: usize = 2000;
pub const DEFAULT_PATHS: usize = 10_000;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_SIM_STEPS: usize = 4000;
pub const DEFAULT_DISPLAY_PATHS: usize = 10;
pub const DEFAULT_TUBE_LEVEL: f64 = 3.0;
/// Cap on recorded nodes when no record stride is given.
pub const MAX_DEFAULT_RECORDS: usize = 200;

fn default_steps() -> usize {
    DEFAULT_STEPS
}
fn default_paths() -> usize {
    DEFAULT_PATHS
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_sim_steps() -> usize {
    DEFAULT_SIM_STEPS
}
fn default_display_paths() -> usize {
    DEFAULT_DISPLAY_PATHS
}
fn default_tube_level() -> f64 {
    DEFAULT_TUBE_LEVEL
}

/// On-disk problem description (JSON). Matrices are arrays of row arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub system: SystemConfig,
    pub horizon: HorizonConfig,
    pub marginals: MarginalsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// "constant", "scenario" or "table".
    pub kind: String,
    #[serde(default, rename = "A", skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, rename = "B", skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<TableEntry>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub t: f64,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HorizonConfig {
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarginalsConfig {
    pub sigma0: Vec<Vec<f64>>,
    #[serde(rename = "sigmaT")]
    pub sigma_t: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_sim_steps")]
    pub sim_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_stride: Option<usize>,
    /// Number of individual paths written to paths.csv; statistics always use
    /// the full ensemble.
    #[serde(default = "default_display_paths")]
    pub display_paths: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    /// Subset of {"csv", "json"}; both by default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formats: Option<Vec<String>>,
    #[serde(default = "default_tube_level")]
    pub tube_level: f64,
}

/// Validated, ready-to-run problem.
pub struct Problem {
    pub system: LtvSystem,
    pub horizon: f64,
    pub steps: usize,
    pub sigma0: GaussianMarginal,
    pub sigma_t: GaussianMarginal,
    pub simulate: Option<SimulateSettings>,
    pub output: OutputSettings,
}

pub struct SimulateSettings {
    pub cfg: SimConfig,
    pub display_paths: usize,
}

pub struct OutputSettings {
    pub dir: Option<PathBuf>,
    pub csv: bool,
    pub json: bool,
    pub tube_level: f64,
}

impl Default for OutputSettings {
    fn default() -> Self {
        Self {
            dir: None,
            csv: true,
            json: true,
            tube_level: DEFAULT_TUBE_LEVEL,
        }
    }
}

fn parse_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(CliError::Config(format!(
            "{what} must be a nonempty matrix"
        )));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(CliError::Config(format!("{what} has ragged rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Config(format!(
            "{what} contains non-finite entries"
        )));
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn build_system(cfg: &SystemConfig) -> Result<LtvSystem, CliError> {
    match cfg.kind.as_str() {
        "constant" => {
            let a = cfg
                .a
                .as_ref()
                .ok_or_else(|| CliError::Config("constant system requires \"A\"".into()))?;
            let b = cfg
                .b
                .as_ref()
                .ok_or_else(|| CliError::Config("constant system requires \"B\"".into()))?;
            LtvSystem::constant(parse_matrix(a, "A")?, parse_matrix(b, "B")?)
                .map_err(|e| CliError::Config(e.to_string()))
        }
        "scenario" => {
            let name = cfg
                .scenario
                .as_ref()
                .ok_or_else(|| CliError::Config("scenario system requires \"scenario\"".into()))?;
            crate::scenario::system_for(name).ok_or_else(|| CliError::UnknownScenario(name.clone()))
        }
        "table" => {
            let table = cfg
                .table
                .as_ref()
                .ok_or_else(|| CliError::Config("table system requires \"table\"".into()))?;
            let rows = table
                .iter()
                .map(|e| {
                    Ok(PiecewiseRow {
                        start: e.t,
                        a: parse_matrix(&e.a, "table A")?,
                        b: parse_matrix(&e.b, "table B")?,
                    })
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            LtvSystem::piecewise(rows).map_err(|e| CliError::Config(e.to_string()))
        }
        other => Err(CliError::Config(format!(
            "unknown system kind \"{other}\" (expected constant, scenario or table)"
        ))),
    }
}

/// Smallest divisor of `sim_steps` that keeps the recorded node count at or
/// below [`MAX_DEFAULT_RECORDS`].
pub fn default_record_stride(sim_steps: usize) -> usize {
    let target = sim_steps.div_ceil(MAX_DEFAULT_RECORDS);
    (target..=sim_steps)
        .find(|d| sim_steps.is_multiple_of(*d))
        .unwrap_or(sim_steps)
}

fn validate(cfg: &ProblemConfig) -> Result<Problem, CliError> {
    let system = build_system(&cfg.system)?;
    let n = system.state_dim();

    if !cfg.horizon.t.is_finite() || cfg.horizon.t <= 0.0 {
        return Err(CliError::Config(format!(
            "horizon T must be positive, got {}",
            cfg.horizon.t
        )));
    }
    if cfg.horizon.steps < 2 {
        return Err(CliError::Config("horizon steps must be at least 2".into()));
    }

    let sigma0_mat = parse_matrix(&cfg.marginals.sigma0, "sigma0")?;
    let sigma_t_mat = parse_matrix(&cfg.marginals.sigma_t, "sigmaT")?;
    for (name, m) in [("sigma0", &sigma0_mat), ("sigmaT", &sigma_t_mat)] {
        if m.nrows() != n || m.ncols() != n {
            return Err(CliError::Config(format!(
                "{name} must be {n}x{n} to match the system, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
    }
    let sigma0 =
        GaussianMarginal::new(sigma0_mat).map_err(|e| CliError::Config(format!("sigma0: {e}")))?;
    let sigma_t =
        GaussianMarginal::new(sigma_t_mat).map_err(|e| CliError::Config(format!("sigmaT: {e}")))?;

    let simulate = cfg
        .simulate
        .as_ref()
        .map(|s| -> Result<SimulateSettings, CliError> {
            let stride = s
                .record_stride
                .unwrap_or_else(|| default_record_stride(s.sim_steps));
            let sim_cfg = SimConfig::new(s.paths, s.seed, s.sim_steps, stride)
                .map_err(|e| CliError::Config(format!("simulate: {e}")))?;
            Ok(SimulateSettings {
                cfg: sim_cfg,
                display_paths: s.display_paths,
            })
        })
        .transpose()?;

    let output = match &cfg.output {
        None => OutputSettings::default(),
        Some(o) => {
            let (mut csv, mut json) = (false, false);
            match &o.formats {
                None => {
                    csv = true;
                    json = true;
                }
                Some(formats) => {
                    for f in formats {
                        match f.as_str() {
                            "csv" => csv = true,
                            "json" => json = true,
                            other => {
                                return Err(CliError::Config(format!(
                                    "unknown output format \"{other}\""
                                )))
                            }
                        }
                    }
                    if !csv && !json {
                        return Err(CliError::Config("output formats list is empty".into()));
                    }
                }
            }
            if !o.tube_level.is_finite() || o.tube_level <= 0.0 {
                return Err(CliError::Config("tube_level must be positive".into()));
            }
            OutputSettings {
                dir: o.dir.as_ref().map(PathBuf::from),
                csv,
                json,
                tube_level: o.tube_level,
            }
        }
    };

    Ok(Problem {
        system,
        horizon: cfg.horizon.t,
        steps: cfg.horizon.steps,
        sigma0,
        sigma_t,
        simulate,
        output,
    })
}

/// Parse and validate a configuration from JSON text.
pub fn load_config_str(text: &str) -> Result<(ProblemConfig, Problem), CliError> {
    let cfg: ProblemConfig =
        serde_json::from_str(text).map_err(|e| CliError::Config(format!("parse error: {e}")))?;
    let problem = validate(&cfg)?;
    Ok((cfg, problem))
}

/// Parse and validate a configuration file.
pub fn load_config(path: &Path) -> Result<(ProblemConfig, Problem), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    load_config_str(&text)
}
