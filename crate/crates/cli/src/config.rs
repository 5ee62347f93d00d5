//! Run configuration: one versioned JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sticky_mfg::reward::default_horizon;
use sticky_mfg::simulate::{fingerprint, Record};
use sticky_mfg::{
    Family, FirmType, Heterogeneity, InitialOutput, JumpScheme, MarketParams, MfgEquilibrium, SearchOptions,
};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub market: MarketParams,
    pub limit_type: FirmType,
    #[serde(default)]
    pub population: PopulationSpec,
    pub sim: SimSpec,
    #[serde(default)]
    pub simulate: SimulateSpec,
    #[serde(default)]
    pub equilibrium: EquilibriumSpec,
    #[serde(default)]
    pub nashgap: NashGapSpec,
    #[serde(default)]
    pub fixedpoint: FixedPointSpec,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub seed: u64,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationSpec {
    /// Population size for `simulate` and `reward`.
    pub n: usize,
    /// Sizes for `gap` and convergence runs, strictly ascending.
    pub n_list: Vec<usize>,
    pub heterogeneity: Heterogeneity,
    /// Law of `X_i(0)`; lognormal around `x0` with 10% spread when absent.
    pub init: Option<InitialOutput>,
}

impl Default for PopulationSpec {
    fn default() -> Self {
        Self { n: 16, n_list: vec![4, 16, 64], heterogeneity: Heterogeneity::default(), init: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub dt: f64,
    /// Simulation and reward horizon; absent means the automatic truncation rule.
    #[serde(default)]
    pub horizon: Option<f64>,
    pub n_paths: usize,
    #[serde(default)]
    pub jump_scheme: JumpScheme,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryFormat {
    Csv,
    #[default]
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSpec {
    pub format: TrajectoryFormat,
    pub record: Record,
}

impl Default for SimulateSpec {
    fn default() -> Self {
        Self { format: TrajectoryFormat::Binary, record: Record::Firms(vec![0]) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EquilibriumSpec {
    /// Spacing of the exported grid.
    pub dt: f64,
    pub horizon: Option<f64>,
    /// Largest accepted relative residual of the defining identities.
    pub identity_tol: f64,
    /// Largest accepted mismatch of the initial conditions.
    pub initial_tol: f64,
}

impl Default for EquilibriumSpec {
    fn default() -> Self {
        Self { dt: 0.01, horizon: None, identity_tol: 1e-9, initial_tol: 1e-9 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NashGapSpec {
    pub family: Family,
    pub search: SearchOptions,
    pub extra_firms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedPointSpec {
    pub dt: f64,
    /// Iteration horizon; absent means 50 plus the settling time of the price.
    pub horizon: Option<f64>,
    /// Distance to the closed form is measured on `[0, window]`.
    pub window: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub relaxation: f64,
    pub tail_tol: f64,
}

impl Default for FixedPointSpec {
    fn default() -> Self {
        Self { dt: 0.005, horizon: None, window: 50.0, max_iter: 400, tol: 1e-9, relaxation: 1.0, tail_tol: 1e-10 }
    }
}

/// Command-line overrides, applied before hashing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub paths: Option<usize>,
    pub dt: Option<f64>,
    pub horizon: Option<f64>,
}

/// Which grid `--dt` and `--horizon` refer to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridTarget {
    Sim,
    Equilibrium,
    FixedPoint,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        match value.get("version") {
            Some(v) if v.as_u64() == Some(SCHEMA_VERSION as u64) => {}
            Some(v) => {
                return Err(CliError::Parse(format!("unsupported config version {v}, expected {SCHEMA_VERSION}")))
            }
            None => return Err(CliError::Parse("missing field `version`".into())),
        }
        serde_json::from_value(value).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn apply(&mut self, o: &Overrides, target: GridTarget) {
        if let Some(seed) = o.seed {
            self.seed = seed;
        }
        if let Some(out) = &o.out {
            self.output_dir = out.clone();
        }
        if let Some(paths) = o.paths {
            self.sim.n_paths = paths;
        }
        let (dt, horizon) = match target {
            GridTarget::Sim => (&mut self.sim.dt, &mut self.sim.horizon),
            GridTarget::Equilibrium => (&mut self.equilibrium.dt, &mut self.equilibrium.horizon),
            GridTarget::FixedPoint => (&mut self.fixedpoint.dt, &mut self.fixedpoint.horizon),
        };
        if let Some(v) = o.dt {
            *dt = v;
        }
        if o.horizon.is_some() {
            *horizon = o.horizon;
        }
    }

    /// Hash of everything that can change results; the output directory is excluded.
    pub fn hash(&self) -> String {
        let mut keyed = self.clone();
        keyed.output_dir = PathBuf::new();
        fingerprint(&keyed)
    }

    pub fn init(&self) -> InitialOutput {
        self.population.init.unwrap_or_else(|| {
            let x0 = self.market.x0;
            InitialOutput::lognormal(x0, (0.1 * x0).powi(2))
        })
    }

    pub fn sim_horizon(&self, eq: &MfgEquilibrium) -> f64 {
        self.sim.horizon.unwrap_or_else(|| default_horizon(eq))
    }

    pub fn equilibrium_horizon(&self, eq: &MfgEquilibrium) -> f64 {
        self.equilibrium.horizon.unwrap_or_else(|| default_horizon(eq))
    }

    pub fn fixedpoint_horizon(&self, eq: &MfgEquilibrium) -> f64 {
        self.fixedpoint.horizon.unwrap_or_else(|| 50.0 + eq.settling_time(12.0).min(150.0))
    }
}
