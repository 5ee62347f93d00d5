use std::fmt;
use std::process::ExitCode;

use sticky_mfg::equilibrium::fixed_point::FixedPointError;
use sticky_mfg::equilibrium::EquilibriumError;
use sticky_mfg::nashgap::GapError;
use sticky_mfg::params::ParamError;
use sticky_mfg::reward::RewardError;
use sticky_mfg::simulate::SimError;

/// A failure, classified by the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    Validation(Vec<String>),
    Parse(String),
    Numerical(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Validation(_) => 1,
            CliError::Parse(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Io(_) => 4,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(items) => {
                write!(f, "validation failed")?;
                for item in items {
                    write!(f, "\n  {item}")?;
                }
                Ok(())
            }
            CliError::Parse(msg) => write!(f, "parse error: {msg}"),
            CliError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            CliError::Io(msg) => write!(f, "io error: {msg}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ParamError> for CliError {
    fn from(e: ParamError) -> Self {
        CliError::Validation(vec![e.to_string()])
    }
}

impl From<EquilibriumError> for CliError {
    fn from(e: EquilibriumError) -> Self {
        match e {
            EquilibriumError::InvalidParams(v) => CliError::Validation(v.iter().map(|x| x.to_string()).collect()),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::AllPathsOverflowed { .. } => CliError::Numerical(e.to_string()),
            other => CliError::Validation(vec![other.to_string()]),
        }
    }
}

impl From<RewardError> for CliError {
    fn from(e: RewardError) -> Self {
        match e {
            RewardError::Sim(s) => s.into(),
            RewardError::InvalidRho(_) => CliError::Validation(vec![e.to_string()]),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<GapError> for CliError {
    fn from(e: GapError) -> Self {
        match e {
            GapError::Sim(s) => s.into(),
            GapError::Reward(r) => r.into(),
            GapError::Equilibrium(q) => q.into(),
            GapError::Params(p) => p.into(),
            GapError::DegenerateFamily | GapError::BudgetTooSmall { .. } | GapError::BadNList => {
                CliError::Validation(vec![e.to_string()])
            }
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<FixedPointError> for CliError {
    fn from(e: FixedPointError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<sticky_mfg::exppoly::ExpPolyError> for CliError {
    fn from(e: sticky_mfg::exppoly::ExpPolyError) -> Self {
        CliError::Numerical(e.to_string())
    }
}
