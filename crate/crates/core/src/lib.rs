//! Mean-field equilibrium of a market with sticky prices and random output
//! losses: closed-form solver, Monte Carlo engine and ε-Nash diagnostics.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod equilibrium;
pub mod export;
pub mod exppoly;
pub mod nashgap;
pub mod params;
pub mod reward;
pub mod rng;
pub mod simulate;

pub use equilibrium::{solve_mfg, CaseTag, CharRoots, CharacteristicData, MfgEquilibrium, SampledPath};
pub use exppoly::{ExpPoly, Term};
pub use nashgap::{Family, GapReport, SearchOptions};
pub use params::{FirmType, Heterogeneity, InitialOutput, MarketParams, Population, ValidationReport};
pub use reward::RewardEstimate;
pub use simulate::{ControlLaw, JumpScheme, PathGrid, SimConfig, TrajectorySet};
