//! Reward functionals: Monte Carlo estimates on simulated paths and the exact
//! limiting reward of deterministic strategies.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::{decentralized_g, MfgEquilibrium, SampledPath};
use crate::exppoly::{ExpPoly, ExpPolyError};
use crate::params::{FirmType, InitialOutput};
use crate::simulate::{
    mean_and_stderr, run_paths, ControlLaw, DeterministicPath, Engine, PathObserver, PiecewiseConstant, PriceMode,
    SimConfig, SimError, StepState, TrajectorySet,
};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum RewardError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    ExpPoly(#[from] ExpPolyError),
    #[error("discount rate must be positive, got {0}")]
    InvalidRho(f64),
    #[error("feedback laws have no deterministic closed form")]
    NotDeterministic,
    #[error("every path was flagged; nothing to estimate")]
    NoPaths,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardEstimate {
    pub mean: f64,
    pub std_err: f64,
    /// Paths that entered the estimate.
    pub n_paths: usize,
    pub horizon: f64,
    /// `e^{-ρT}·mean|f(T)|/ρ` for the undiscounted integrand `f`.
    pub tail_bound: f64,
    /// Overflowed paths left out.
    pub n_excluded: usize,
}

impl RewardEstimate {
    /// Combine per-path integrals and end-point integrand magnitudes.
    pub fn from_samples(values: &[f64], end_abs: &[f64], horizon: f64, rho: f64, n_excluded: usize) -> Self {
        let (mean, std_err) = mean_and_stderr(values.iter().copied());
        let envelope = mean_and_stderr(end_abs.iter().copied()).0;
        Self {
            mean,
            std_err,
            n_paths: values.len(),
            horizon,
            tail_bound: (-rho * horizon).exp() * envelope.abs() / rho,
            n_excluded,
        }
    }
}

/// Trapezoid of `∫₀ᵀ e^{-ρt} f(t) dt` fed one grid point at a time.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DiscountedTrapezoid {
    rho: f64,
    dt: f64,
    last: usize,
    pub(crate) sum: f64,
    pub(crate) end: f64,
}

impl DiscountedTrapezoid {
    pub(crate) fn new(rho: f64, dt: f64, n_steps: usize) -> Self {
        Self { rho, dt, last: n_steps, sum: 0.0, end: 0.0 }
    }

    #[inline]
    pub(crate) fn add(&mut self, k: usize, f: f64) {
        let w = if k == 0 || k == self.last { 0.5 } else { 1.0 };
        self.sum += w * self.dt * (-self.rho * k as f64 * self.dt).exp() * f;
        if k == self.last {
            self.end = f;
        }
    }
}

/// Undiscounted running reward `(1−c)·P·X − r·u²`.
#[inline]
pub fn running_reward(theta: &FirmType, price: f64, x: f64, u: f64) -> f64 {
    (1.0 - theta.c) * price * x - theta.r * u * u
}

pub fn estimate_reward(
    traj: &TrajectorySet,
    i: usize,
    theta_i: &FirmType,
    law_i: &ControlLaw,
    rho: f64,
) -> Result<RewardEstimate, RewardError> {
    per_path(traj, i, law_i, rho, |_, x, p, u| running_reward(theta_i, p, x, u))
}

fn per_path(
    traj: &TrajectorySet,
    i: usize,
    law: &ControlLaw,
    rho: f64,
    f: impl Fn(f64, f64, f64, f64) -> f64,
) -> Result<RewardEstimate, RewardError> {
    if !(rho > 0.0) {
        return Err(RewardError::InvalidRho(rho));
    }
    let slot = traj.slot(i).ok_or(SimError::NotRecorded(i))?;
    let grid = traj.grid;
    let mut values = Vec::with_capacity(traj.n_paths);
    let mut ends = Vec::with_capacity(traj.n_paths);
    for path in 0..traj.n_paths {
        if traj.is_flagged(path) {
            continue;
        }
        let (x, p) = (traj.output(path, slot), traj.price(path));
        let mut acc = DiscountedTrapezoid::new(rho, grid.dt, grid.n_steps);
        for k in 0..=grid.n_steps {
            let t = grid.time(k);
            acc.add(k, f(t, x[k], p[k], law.value(t, x[k], p[k])));
        }
        values.push(acc.sum);
        ends.push(acc.end.abs());
    }
    if values.is_empty() {
        return Err(RewardError::NoPaths);
    }
    Ok(RewardEstimate::from_samples(&values, &ends, grid.horizon(), rho, traj.flagged.len()))
}

/// Streams firm `i`'s reward through a simulation without storing paths.
struct RewardObserver {
    firm: usize,
    theta: FirmType,
    acc: DiscountedTrapezoid,
}

impl PathObserver for RewardObserver {
    type Output = Option<(f64, f64)>;

    fn observe(&mut self, s: &StepState<'_>) {
        let i = self.firm;
        self.acc.add(s.step, running_reward(&self.theta, s.price, s.outputs[i], s.controls[i]));
    }

    fn finish(self, flagged: bool) -> Self::Output {
        (!flagged).then_some((self.acc.sum, self.acc.end.abs()))
    }
}

/// Per-path reward integrals of firm `i` (`None` for flagged paths).
pub fn reward_samples(engine: &Engine, i: usize, theta_i: &FirmType, rho: f64) -> Vec<Option<(f64, f64)>> {
    let grid = engine.config().grid;
    run_paths(engine, |_| RewardObserver {
        firm: i,
        theta: *theta_i,
        acc: DiscountedTrapezoid::new(rho, grid.dt, grid.n_steps),
    })
}

/// [`RewardObserver`] for all firms at once.
struct AllRewardsObserver<'a> {
    types: &'a [FirmType],
    accs: Vec<DiscountedTrapezoid>,
}

impl PathObserver for AllRewardsObserver<'_> {
    type Output = Option<Vec<(f64, f64)>>;

    fn observe(&mut self, s: &StepState<'_>) {
        for (i, acc) in self.accs.iter_mut().enumerate() {
            acc.add(s.step, running_reward(&self.types[i], s.price, s.outputs[i], s.controls[i]));
        }
    }

    fn finish(self, flagged: bool) -> Self::Output {
        (!flagged).then(|| self.accs.iter().map(|a| (a.sum, a.end.abs())).collect())
    }
}

/// Reward integrals of every firm in one pass, indexed `[firm][path]`.
pub fn reward_samples_all(engine: &Engine, types: &[FirmType], rho: f64) -> Vec<Vec<Option<(f64, f64)>>> {
    let grid = engine.config().grid;
    let paths = run_paths(engine, |_| AllRewardsObserver {
        types,
        accs: vec![DiscountedTrapezoid::new(rho, grid.dt, grid.n_steps); types.len()],
    });
    (0..types.len()).map(|i| paths.iter().map(|p| p.as_ref().map(|v| v[i])).collect()).collect()
}

pub fn summarize(samples: &[Option<(f64, f64)>], horizon: f64, rho: f64) -> Result<RewardEstimate, RewardError> {
    let kept: Vec<(f64, f64)> = samples.iter().flatten().copied().collect();
    if kept.is_empty() {
        return Err(RewardError::NoPaths);
    }
    let (values, ends): (Vec<f64>, Vec<f64>) = kept.into_iter().unzip();
    Ok(RewardEstimate::from_samples(&values, &ends, horizon, rho, samples.len() - values.len()))
}

/// Reward of one firm of type `theta` facing the mean-field price `eq.m_p`.
pub fn representative_reward(
    eq: &MfgEquilibrium,
    theta: &FirmType,
    law: &ControlLaw,
    init: &InitialOutput,
    cfg: &SimConfig,
) -> Result<RewardEstimate, RewardError> {
    let pop = crate::params::Population::symmetric(1, *theta, *init);
    let engine =
        Engine::with_price(&pop, std::slice::from_ref(law), &eq.market, cfg, PriceMode::Prescribed(eq.m_p.clone()))?;
    summarize(&reward_samples(&engine, 0, theta, eq.market.rho), cfg.grid.horizon(), eq.market.rho)
}

/// Horizon `T` with `e^{-ρT}·max(1, |p*·m_X(∞)|)/ρ < 10⁻⁴·|g₀x₀+h₀|`.
pub fn default_horizon(eq: &MfgEquilibrium) -> f64 {
    let rho = eq.market.rho;
    let (p_star, x_inf, _) = eq.stationary_limits();
    let scale = (p_star * x_inf).abs().max(1.0);
    let target = 1e-4 * eq.optimal_reward().abs().max(f64::MIN_POSITIVE);
    ((scale / (rho * target)).ln() / rho).max(1.0)
}

/// `R(u) = g₀x₀ + h₀ − penalty` for a firm of type `theta` facing `eq.m_p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitingReward {
    pub value: f64,
    pub optimum: f64,
    /// `r∫₀^∞ e^{-ρs}(u − g/2r)² ds`.
    pub penalty: f64,
    /// Zero for exact evaluations; fine-vs-coarse trapezoid gap for grid laws.
    pub quadrature_error: f64,
}

/// `(g, h)` of a firm of type `theta` facing the mean-field price.
pub fn value_coefficients(eq: &MfgEquilibrium, theta: &FirmType) -> Result<(ExpPoly, ExpPoly), ExpPolyError> {
    let g = decentralized_g(eq, theta)?;
    let h = g.product(&g)?.tail_transform(eq.market.rho)?.scale(1.0 / (4.0 * theta.r));
    Ok((g, h))
}

/// `∫₀^∞ e^{-ρs} (law(s) + shift(s))² ds` for open-loop laws.
fn discounted_square(law: &ControlLaw, shift: &ExpPoly, rho: f64) -> Result<(f64, f64), RewardError> {
    let square_on =
        |f: &ExpPoly, a: f64, b: f64| -> Result<f64, RewardError> { Ok(f.product(f)?.discounted_integral(a, b, rho)?) };
    let piecewise = |base: &ExpPoly, pc: &PiecewiseConstant| -> Result<f64, RewardError> {
        let mut total = 0.0;
        for (j, v) in pc.values.iter().enumerate() {
            let (a, b) = pc.bounds(j);
            total += square_on(&base.add(&ExpPoly::constant(*v)), a, b)?;
        }
        Ok(total)
    };
    match law {
        ControlLaw::LinearFeedback { .. } => Err(RewardError::NotDeterministic),
        ControlLaw::Deterministic { path: DeterministicPath::ExpPoly(f) } => {
            Ok((square_on(&f.add(shift), 0.0, f64::INFINITY)?, 0.0))
        }
        ControlLaw::Constant { value } => {
            Ok((square_on(&shift.add(&ExpPoly::constant(*value)), 0.0, f64::INFINITY)?, 0.0))
        }
        ControlLaw::PiecewiseConstant { schedule } => Ok((piecewise(shift, schedule)?, 0.0)),
        ControlLaw::Offset { base: DeterministicPath::ExpPoly(f), offset } => {
            Ok((piecewise(&f.add(shift), offset)?, 0.0))
        }
        ControlLaw::Deterministic { path: DeterministicPath::Grid(p) } => grid_square(p, |t| p.eval(t), shift, rho),
        ControlLaw::Offset { base: DeterministicPath::Grid(p), offset } => {
            grid_square(p, |t| p.eval(t) + offset.eval(t), shift, rho)
        }
    }
}

/// Trapezoid on the path's own grid, then the last value held constant to
/// infinity (integrated exactly).
fn grid_square(
    path: &SampledPath,
    u: impl Fn(f64) -> f64,
    shift: &ExpPoly,
    rho: f64,
) -> Result<(f64, f64), RewardError> {
    let n = path.n_steps();
    let f = |k: usize| {
        let t = path.time(k);
        let d = u(t) + shift.eval(t);
        (-rho * t).exp() * d * d
    };
    let trapezoid = |stride: usize| {
        let h = path.dt * stride as f64;
        let last = n - n % stride;
        let inner: f64 = (stride..last).step_by(stride).map(f).sum();
        (h * (0.5 * f(0) + inner + 0.5 * f(last)), last)
    };
    let (fine, _) = trapezoid(1);
    let err = if n >= 4 {
        let (coarse, last) = trapezoid(2);
        let rest: f64 = (last..n).map(|k| 0.5 * path.dt * (f(k) + f(k + 1))).sum();
        (fine - coarse - rest).abs()
    } else {
        0.0
    };
    let horizon = path.horizon();
    let tail = ExpPoly::constant(u(horizon)).add(shift);
    let tail = tail.product(&tail)?.discounted_integral(horizon, f64::INFINITY, rho)?;
    Ok((fine + tail, err))
}

pub fn limiting_reward_closed_form(
    u: &ControlLaw,
    eq: &MfgEquilibrium,
    theta: &FirmType,
    x0: f64,
) -> Result<LimitingReward, RewardError> {
    let (g, h) = value_coefficients(eq, theta)?;
    let optimum = g.eval(0.0) * x0 + h.eval(0.0);
    let shift = g.scale(-1.0 / (2.0 * theta.r));
    let (square, quadrature_error) = discounted_square(u, &shift, eq.market.rho)?;
    let penalty = theta.r * square;
    Ok(LimitingReward { value: optimum - penalty, optimum, penalty, quadrature_error: theta.r * quadrature_error })
}

/// `‖u‖²_ρ = ∫₀^∞ e^{-ρs} u(s)² ds` of an open-loop law.
pub fn rho_norm_sq(u: &ControlLaw, rho: f64) -> Result<f64, RewardError> {
    if !(rho > 0.0) {
        return Err(RewardError::InvalidRho(rho));
    }
    Ok(discounted_square(u, &ExpPoly::zero(), rho)?.0)
}

/// Monte Carlo `E∫₀ᵀ e^{-ρt} u(t)² dt` of `law` evaluated along firm `i`'s
/// recorded paths.
pub fn rho_norm_sq_estimate(
    traj: &TrajectorySet,
    i: usize,
    law: &ControlLaw,
    rho: f64,
) -> Result<RewardEstimate, RewardError> {
    per_path(traj, i, law, rho, |_, _, _, u| u * u)
}
