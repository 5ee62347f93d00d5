//! Monte Carlo engine for the finite-n market.
//!
//! Each firm follows `dX = X(-μ dt + σ dW) + u dt`; the price relaxes toward
//! `β - X̄` at speed `α` and jumps by `(α/n) γᵢ Xᵢ` at firm `i`'s loss events,
//! the mark being the pre-step output. All noise comes from keyed streams
//! (see [`crate::rng`]), so paths can run in any order on any number of
//! threads and still reproduce bit for bit.

mod engine;
mod law;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exppoly::ExpPoly;
use crate::params::{FirmType, InitialOutput, MarketParams, Population};

pub(crate) use engine::{initial_output, FirmNoise};
pub use engine::{run_paths, Engine, PathObserver, StepState};
pub(crate) use law::CompiledLaw;
pub use law::{ControlLaw, DeterministicPath, PiecewiseConstant};

/// Paths whose output exceeds this magnitude are aborted and flagged.
pub const OVERFLOW_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimError {
    #[error("expected {expected} control laws, got {got}")]
    LawCount { expected: usize, got: usize },
    #[error("invalid control law: {0}")]
    InvalidLaw(String),
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("firm index {index} out of range for {n} firms")]
    FirmIndex { index: usize, n: usize },
    #[error("every path overflowed (first offender: path {first})")]
    AllPathsOverflowed { first: usize },
    #[error("trajectory grid does not match: {0}")]
    GridMismatch(String),
    #[error("firm {0} was not recorded")]
    NotRecorded(usize),
}

/// Uniform time grid `t_k = k·dt`, `k = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathGrid {
    pub dt: f64,
    pub n_steps: usize,
}

impl PathGrid {
    pub fn new(dt: f64, n_steps: usize) -> Self {
        Self { dt, n_steps }
    }

    /// Smallest grid with step `dt` covering `[0, horizon]`.
    pub fn covering(dt: f64, horizon: f64) -> Self {
        Self { dt, n_steps: (horizon / dt - 1e-9).ceil().max(1.0) as usize }
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    #[inline]
    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) || self.n_steps == 0 {
            return Err(SimError::InvalidConfig(format!("grid needs dt > 0 and n_steps ≥ 1, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    EulerMaruyama,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JumpScheme {
    /// `ΔN ~ Poisson(λ dt)` per step.
    #[default]
    PerStepPoisson,
    /// Exponential inter-arrival times binned onto the grid.
    ExactJumpTimes,
}

/// Which firms keep full paths in a [`TrajectorySet`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Record {
    #[default]
    All,
    Firms(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub grid: PathGrid,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default)]
    pub jump_scheme: JumpScheme,
    #[serde(default)]
    pub record: Record,
}

impl SimConfig {
    pub fn new(grid: PathGrid, n_paths: usize, seed: u64) -> Self {
        Self {
            grid,
            n_paths,
            seed,
            scheme: Scheme::EulerMaruyama,
            jump_scheme: JumpScheme::PerStepPoisson,
            record: Record::All,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.grid.validate()?;
        if self.n_paths == 0 {
            return Err(SimError::InvalidConfig("n_paths must be at least 1".into()));
        }
        Ok(())
    }
}

/// How the price evolves.
#[derive(Debug, Clone, PartialEq)]
pub enum PriceMode {
    /// Finite-n sticky price driven by the simulated firms.
    Market,
    /// Deterministic price path, e.g. the mean-field price.
    Prescribed(ExpPoly),
}

/// Recorded paths of one simulation run.
///
/// Arrays are laid out path-major with `n_steps + 1` entries per series.
/// The price at step `k` is the post-jump value; `jumps` at step `k` counts
/// the events in `(t_{k-1}, t_k]` and is zero at `k = 0`. Values after an
/// overflow are `NaN`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    pub grid: PathGrid,
    pub n_paths: usize,
    pub n_firms: usize,
    pub firms: Vec<usize>,
    pub seed: u64,
    pub config_hash: String,
    pub flagged: Vec<usize>,
    outputs: Vec<f64>,
    jumps: Vec<u32>,
    price: Vec<f64>,
    mean_output: Vec<f64>,
}

impl TrajectorySet {
    fn len(&self) -> usize {
        self.grid.n_steps + 1
    }

    pub fn slot(&self, firm: usize) -> Option<usize> {
        self.firms.iter().position(|f| *f == firm)
    }

    pub fn output(&self, path: usize, slot: usize) -> &[f64] {
        let m = self.len();
        let start = (path * self.firms.len() + slot) * m;
        &self.outputs[start..start + m]
    }

    pub fn jumps(&self, path: usize, slot: usize) -> &[u32] {
        let m = self.len();
        let start = (path * self.firms.len() + slot) * m;
        &self.jumps[start..start + m]
    }

    pub fn price(&self, path: usize) -> &[f64] {
        let m = self.len();
        &self.price[path * m..(path + 1) * m]
    }

    pub fn mean_output(&self, path: usize) -> &[f64] {
        let m = self.len();
        &self.mean_output[path * m..(path + 1) * m]
    }

    pub fn is_flagged(&self, path: usize) -> bool {
        self.flagged.binary_search(&path).is_ok()
    }

    /// `(outputs, jumps, price, mean_output)` in storage order.
    pub(crate) fn raw(&self) -> (&[f64], &[u32], &[f64], &[f64]) {
        (&self.outputs, &self.jumps, &self.price, &self.mean_output)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_raw(
        grid: PathGrid,
        n_paths: usize,
        n_firms: usize,
        firms: Vec<usize>,
        seed: u64,
        config_hash: String,
        flagged: Vec<usize>,
        arrays: (Vec<f64>, Vec<u32>, Vec<f64>, Vec<f64>),
    ) -> Self {
        let (outputs, jumps, price, mean_output) = arrays;
        Self { grid, n_paths, n_firms, firms, seed, config_hash, flagged, outputs, jumps, price, mean_output }
    }

    /// Bitwise comparison of all recorded arrays.
    pub fn bit_identical(&self, other: &TrajectorySet) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        self.grid == other.grid
            && self.firms == other.firms
            && self.jumps == other.jumps
            && self.flagged == other.flagged
            && bits(&self.outputs) == bits(&other.outputs)
            && bits(&self.price) == bits(&other.price)
            && bits(&self.mean_output) == bits(&other.mean_output)
    }
}

/// Hex SHA-256 of a serializable value's JSON form.
pub fn fingerprint<T: Serialize + ?Sized>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("config values serialize");
    hex::encode(Sha256::digest(&json))
}

struct Recorder {
    slots: Vec<usize>,
    len: usize,
    outputs: Vec<f64>,
    jumps: Vec<u32>,
    price: Vec<f64>,
    mean_output: Vec<f64>,
}

struct RecordedPath {
    outputs: Vec<f64>,
    jumps: Vec<u32>,
    price: Vec<f64>,
    mean_output: Vec<f64>,
    flagged: bool,
}

impl PathObserver for Recorder {
    type Output = RecordedPath;

    fn observe(&mut self, state: &StepState<'_>) {
        let k = state.step;
        for (s, &f) in self.slots.iter().enumerate() {
            self.outputs[s * self.len + k] = state.outputs[f];
            self.jumps[s * self.len + k] = state.jumps[f];
        }
        self.price[k] = state.price;
        self.mean_output[k] = state.mean_output;
    }

    fn finish(self, flagged: bool) -> RecordedPath {
        RecordedPath {
            outputs: self.outputs,
            jumps: self.jumps,
            price: self.price,
            mean_output: self.mean_output,
            flagged,
        }
    }
}

fn record(engine: &Engine) -> Result<TrajectorySet, SimError> {
    let cfg = engine.config();
    let n = engine.n_firms();
    let firms: Vec<usize> = match &cfg.record {
        Record::All => (0..n).collect(),
        Record::Firms(f) => {
            if let Some(&bad) = f.iter().find(|&&i| i >= n) {
                return Err(SimError::FirmIndex { index: bad, n });
            }
            f.clone()
        }
    };
    let len = cfg.grid.n_steps + 1;
    let paths = run_paths(engine, |_| Recorder {
        slots: firms.clone(),
        len,
        outputs: vec![f64::NAN; firms.len() * len],
        jumps: vec![0; firms.len() * len],
        price: vec![f64::NAN; len],
        mean_output: vec![f64::NAN; len],
    });
    let mut set = TrajectorySet {
        grid: cfg.grid,
        n_paths: cfg.n_paths,
        n_firms: n,
        firms,
        seed: cfg.seed,
        config_hash: engine.config_hash(),
        flagged: Vec::new(),
        outputs: Vec::with_capacity(paths.len() * paths[0].outputs.len()),
        jumps: Vec::with_capacity(paths.len() * paths[0].jumps.len()),
        price: Vec::with_capacity(paths.len() * len),
        mean_output: Vec::with_capacity(paths.len() * len),
    };
    for (p, path) in paths.into_iter().enumerate() {
        if path.flagged {
            set.flagged.push(p);
        }
        set.outputs.extend(path.outputs);
        set.jumps.extend(path.jumps);
        set.price.extend(path.price);
        set.mean_output.extend(path.mean_output);
    }
    if set.flagged.len() == set.n_paths {
        return Err(SimError::AllPathsOverflowed { first: set.flagged[0] });
    }
    if !set.flagged.is_empty() {
        log::warn!("{} of {} paths overflowed and were flagged", set.flagged.len(), set.n_paths);
    }
    Ok(set)
}

pub fn simulate_market(
    pop: &Population,
    laws: &[ControlLaw],
    market: &MarketParams,
    cfg: &SimConfig,
) -> Result<TrajectorySet, SimError> {
    record(&Engine::new(pop, laws, market, cfg)?)
}

/// Runs `base_laws` and the same profile with firm `i` switched to
/// `deviating_law`, on identical noise.
pub fn simulate_deviation(
    pop: &Population,
    base_laws: &[ControlLaw],
    i: usize,
    deviating_law: &ControlLaw,
    market: &MarketParams,
    cfg: &SimConfig,
) -> Result<(TrajectorySet, TrajectorySet), SimError> {
    if i >= pop.n() {
        return Err(SimError::FirmIndex { index: i, n: pop.n() });
    }
    let base = simulate_market(pop, base_laws, market, cfg)?;
    let mut laws = base_laws.to_vec();
    laws[i] = deviating_law.clone();
    let deviated = simulate_market(pop, &laws, market, cfg)?;
    Ok((base, deviated))
}

/// A single firm facing a prescribed deterministic price path.
pub fn simulate_representative(
    theta: &FirmType,
    law: &ControlLaw,
    price: &ExpPoly,
    init: &InitialOutput,
    market: &MarketParams,
    cfg: &SimConfig,
) -> Result<TrajectorySet, SimError> {
    let pop = Population::symmetric(1, *theta, *init);
    record(&Engine::with_price(&pop, std::slice::from_ref(law), market, cfg, PriceMode::Prescribed(price.clone()))?)
}

/// Second-moment statistics of one firm's output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FirmMoments {
    pub firm: usize,
    /// Sample mean of `X(t_k)²`.
    pub second_moment: Vec<f64>,
    pub std_err: Vec<f64>,
    /// `E[X₀²] e^{(σ²-2μ)t}`, only for `u ≡ 0`.
    pub closed_form: Option<Vec<f64>>,
    /// Mean of the per-path trapezoid `∫₀ᵀ e^{-ρt} X² dt`.
    pub rho_norm_sq: f64,
    pub rho_norm_sq_std_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub grid: PathGrid,
    pub n_paths: usize,
    pub n_flagged: usize,
    pub firms: Vec<FirmMoments>,
}

struct MomentObserver {
    n: usize,
    rho: f64,
    dt: f64,
    last: usize,
    squares: Vec<f64>,
    norms: Vec<f64>,
}

impl PathObserver for MomentObserver {
    type Output = (Vec<f64>, Vec<f64>, bool);

    fn observe(&mut self, state: &StepState<'_>) {
        let k = state.step;
        let w = if k == 0 || k == self.last { 0.5 } else { 1.0 } * self.dt * (-self.rho * state.t).exp();
        for (f, x) in state.outputs.iter().enumerate() {
            let x2 = x * x;
            self.squares[k * self.n + f] = x2;
            self.norms[f] += w * x2;
        }
    }

    fn finish(self, flagged: bool) -> Self::Output {
        (self.squares, self.norms, flagged)
    }
}

/// Sample `(mean, standard error)`.
pub fn mean_and_stderr(samples: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut mean, mut m2) = (0usize, 0.0, 0.0);
    for x in samples {
        n += 1;
        let d = x - mean;
        mean += d / n as f64;
        m2 += d * (x - mean);
    }
    if n < 2 {
        return (if n == 1 { mean } else { f64::NAN }, 0.0);
    }
    (mean, (m2 / (n - 1) as f64 / n as f64).sqrt())
}

pub fn moment_check(
    pop: &Population,
    laws: &[ControlLaw],
    market: &MarketParams,
    cfg: &SimConfig,
) -> Result<MomentReport, SimError> {
    let engine = Engine::new(pop, laws, market, cfg)?;
    let n = pop.n();
    let len = cfg.grid.n_steps + 1;
    let runs = run_paths(&engine, |_| MomentObserver {
        n,
        rho: market.rho,
        dt: cfg.grid.dt,
        last: cfg.grid.n_steps,
        squares: vec![0.0; n * len],
        norms: vec![0.0; n],
    });
    let kept: Vec<_> = runs.iter().filter(|r| !r.2).collect();
    let times = cfg.grid.times();
    let firms = (0..n)
        .map(|f| {
            let (second_moment, std_err) =
                (0..len).map(|k| mean_and_stderr(kept.iter().map(|r| r.0[k * n + f]))).unzip();
            let (rho_norm_sq, rho_norm_sq_std_err) = mean_and_stderr(kept.iter().map(|r| r.1[f]));
            let theta = &pop.types[f];
            let closed_form = matches!(laws[f], ControlLaw::Constant { value } if value == 0.0).then(|| {
                let m2 = pop.init.second_moment();
                times.iter().map(|t| m2 * ((theta.sigma * theta.sigma - 2.0 * theta.mu) * t).exp()).collect()
            });
            FirmMoments { firm: f, second_moment, std_err, closed_form, rho_norm_sq, rho_norm_sq_std_err }
        })
        .collect();
    Ok(MomentReport { grid: cfg.grid, n_paths: cfg.n_paths, n_flagged: runs.len() - kept.len(), firms })
}
