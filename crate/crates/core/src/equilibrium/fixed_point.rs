//! The consistency operator `L` on sampled mean-output paths, and a Picard
//! solver for its fixed point.
//!
//! Given a sampled `m_X`, `L` integrates the mean price ODE, forms `g` as the
//! discounted tail integral of the price and returns the mean output of the
//! representative firm under `u = g/(2r)`. All three integrals use the
//! trapezoidal rule on the input grid through exact exponential recursions,
//! so one application is `O(n)`. The error estimate compares against the same
//! computation on the grid with every other node.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{FirmType, MarketParams};
use crate::simulate::PathGrid;

/// A function sampled at `t_k = k·dt`, `k = 0..values.len()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledPath {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl SampledPath {
    pub fn new(dt: f64, values: Vec<f64>) -> Self {
        Self { dt, values }
    }

    pub fn from_fn(grid: &PathGrid, f: impl Fn(f64) -> f64) -> Self {
        Self { dt: grid.dt, values: (0..=grid.n_steps).map(|k| f(k as f64 * grid.dt)).collect() }
    }

    pub fn n_steps(&self) -> usize {
        self.values.len().saturating_sub(1)
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps() as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Linear interpolation, constant beyond either end.
    pub fn eval(&self, t: f64) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        let x = (t / self.dt).max(0.0);
        let k = x.floor() as usize;
        if k >= self.n_steps() {
            return *self.values.last().unwrap();
        }
        let w = x - k as f64;
        self.values[k] * (1.0 - w) + self.values[k + 1] * w
    }

    /// `max |self − other|` over nodes with `t ≤ up_to`.
    pub fn sup_diff(&self, other: &SampledPath, up_to: f64) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .enumerate()
            .take_while(|(k, _)| self.time(*k) <= up_to + 1e-12)
            .map(|(_, (a, b))| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_diff_fn(&self, f: impl Fn(f64) -> f64, up_to: f64) -> f64 {
        self.values
            .iter()
            .enumerate()
            .take_while(|(k, _)| self.time(*k) <= up_to + 1e-12)
            .map(|(k, v)| (v - f(self.time(k))).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LOptions {
    /// Target for the neglected tail of the inner `g` integral.
    pub tail_tol: f64,
    /// Fail when the estimated quadrature error exceeds this.
    pub max_error: Option<f64>,
}

impl Default for LOptions {
    fn default() -> Self {
        Self { tail_tol: 1e-10, max_error: None }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum FixedPointError {
    #[error("grid too coarse: estimated quadrature error {estimated:e} exceeds {requested:e}")]
    GridTooCoarse { estimated: f64, requested: f64 },
    #[error("input path needs at least three samples, got {0}")]
    TooShort(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LOutput {
    pub path: SampledPath,
    /// Estimated sup-norm quadrature error plus the tail truncation budget.
    pub error_bound: f64,
    /// Where the inner tail integral was truncated.
    pub tail_horizon: f64,
}

struct Raw {
    out: Vec<f64>,
    tail_horizon: f64,
}

fn apply_l_raw(m_x: &[f64], dt: f64, market: &MarketParams, theta: &FirmType, tail_tol: f64) -> Raw {
    let n = m_x.len() - 1;
    let slack = 1.0 - theta.lambda * theta.gamma;
    let kappa = theta.mu + market.rho;
    let ea = (-market.alpha * dt).exp();
    let ek = (-kappa * dt).exp();
    let em = (-theta.mu * dt).exp();
    let forcing = |x: f64| market.beta - slack * x;

    // Mean price on the input grid.
    let mut price = Vec::with_capacity(n + 1);
    price.push(market.p0);
    for k in 0..n {
        let next = ea * price[k] + 0.5 * market.alpha * dt * (ea * forcing(m_x[k]) + forcing(m_x[k + 1]));
        price.push(next);
    }
    // Extend with m_X held at its last value until the tail is negligible.
    let sup_p = price.iter().fold(0.0f64, |a, p| a.max(p.abs())).max(forcing(m_x[n]).abs());
    let extra_time = if sup_p > 0.0 { ((sup_p / (kappa * tail_tol)).ln() / kappa).max(0.0) } else { 0.0 };
    let extra = (extra_time / dt).ceil() as usize;
    let f_end = forcing(m_x[n]);
    for _ in 0..extra {
        let last = *price.last().unwrap();
        price.push(ea * last + 0.5 * market.alpha * dt * (ea * f_end + f_end));
    }

    // G(t) = ∫_t^∞ e^{−κ(s−t)} m_P(s) ds, backward; beyond the extension m_P is frozen.
    let total = price.len() - 1;
    let mut tail = vec![0.0; total + 1];
    tail[total] = price[total] / kappa;
    for k in (0..total).rev() {
        tail[k] = ek * tail[k + 1] + 0.5 * dt * (price[k] + ek * price[k + 1]);
    }

    let gain = (1.0 - theta.c) / (2.0 * theta.r);
    let mut out = Vec::with_capacity(n + 1);
    out.push(market.x0);
    for k in 0..n {
        let next = em * out[k] + 0.5 * dt * gain * (em * tail[k] + tail[k + 1]);
        out.push(next);
    }
    Raw { out, tail_horizon: total as f64 * dt }
}

/// One application of the consistency operator.
pub fn apply_l(
    m_x: &SampledPath,
    market: &MarketParams,
    theta: &FirmType,
    opts: &LOptions,
) -> Result<LOutput, FixedPointError> {
    if m_x.values.len() < 3 {
        return Err(FixedPointError::TooShort(m_x.values.len()));
    }
    let fine = apply_l_raw(&m_x.values, m_x.dt, market, theta, opts.tail_tol);
    let coarse_in: Vec<f64> = m_x.values.iter().step_by(2).copied().collect();
    let coarse = apply_l_raw(&coarse_in, 2.0 * m_x.dt, market, theta, opts.tail_tol);
    let quad = coarse.out.iter().enumerate().map(|(j, c)| (c - fine.out[2 * j]).abs()).fold(0.0, f64::max);
    // Trapezoidal error scales with dt², so the fine error is about a third
    // of the fine/coarse difference; report the full difference.
    let tail_budget = (1.0 - theta.c) / (2.0 * theta.r * theta.mu) * opts.tail_tol;
    let error_bound = quad + tail_budget;
    if let Some(requested) = opts.max_error {
        if error_bound > requested {
            return Err(FixedPointError::GridTooCoarse { estimated: error_bound, requested });
        }
    }
    Ok(LOutput { path: SampledPath::new(m_x.dt, fine.out), error_bound, tail_horizon: fine.tail_horizon })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardOptions {
    pub max_iter: usize,
    /// Stop when the sup-norm change between iterates drops below this.
    pub tol: f64,
    /// Relaxation weight `ω` in `m ← (1−ω)m + ω L(m)`; `1` is plain Picard.
    pub relaxation: f64,
    pub l_options: LOptions,
}

impl Default for PicardOptions {
    fn default() -> Self {
        Self { max_iter: 200, tol: 1e-10, relaxation: 1.0, l_options: LOptions::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PicardStatus {
    Converged { iterations: usize },
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardResult {
    pub path: SampledPath,
    /// Sup-norm change at each iteration.
    pub residuals: Vec<f64>,
    pub status: PicardStatus,
    /// Quadrature error bound reported by the last operator application.
    pub error_bound: f64,
}

impl PicardResult {
    pub fn converged(&self) -> bool {
        matches!(self.status, PicardStatus::Converged { .. })
    }
}

/// Iterate `L` from the uncontrolled mean `x₀e^{−μt}`.
pub fn picard_solve(
    market: &MarketParams,
    theta: &FirmType,
    grid: &PathGrid,
    opts: &PicardOptions,
) -> Result<PicardResult, FixedPointError> {
    let mut current = SampledPath::from_fn(grid, |t| market.x0 * (-theta.mu * t).exp());
    let mut residuals = Vec::new();
    let mut error_bound = f64::INFINITY;
    let w = opts.relaxation;
    for iter in 1..=opts.max_iter {
        let next = apply_l(&current, market, theta, &opts.l_options)?;
        error_bound = next.error_bound;
        let relaxed: Vec<f64> =
            current.values.iter().zip(&next.path.values).map(|(old, new)| (1.0 - w) * old + w * new).collect();
        let relaxed = SampledPath::new(current.dt, relaxed);
        let change = relaxed.sup_diff(&current, f64::INFINITY);
        residuals.push(change);
        current = relaxed;
        if change < opts.tol {
            return Ok(PicardResult {
                path: current,
                residuals,
                status: PicardStatus::Converged { iterations: iter },
                error_bound,
            });
        }
    }
    Ok(PicardResult { path: current, residuals, status: PicardStatus::MaxIterations, error_bound })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::solve_mfg;

    fn theta() -> FirmType {
        FirmType { mu: 1.0, sigma: 0.5, gamma: 0.5, lambda: 0.5, r: 0.5, c: 0.4 }
    }

    fn market() -> MarketParams {
        MarketParams { alpha: 0.8, beta: 2.0, rho: 0.5, p0: 1.2, x0: 0.9 }
    }

    /// Hand-derived `L(x̄)` for constant input `x̄ = x₀`.
    fn constant_input_oracle(m: &MarketParams, th: &FirmType, t: f64) -> f64 {
        let kappa = th.mu + m.rho;
        let pbar = m.beta - (1.0 - th.lambda * th.gamma) * m.x0;
        let a = m.alpha;
        let gain = (1.0 - th.c) / (2.0 * th.r);
        let mu = th.mu;
        let steady = pbar / kappa * (1.0 - (-mu * t).exp()) / mu;
        let transient = (m.p0 - pbar) / (kappa + a) * ((-a * t).exp() - (-mu * t).exp()) / (mu - a);
        (-mu * t).exp() * m.x0 + gain * (steady + transient)
    }

    #[test]
    fn constant_input_matches_closed_form() {
        let (m, th) = (market(), theta());
        let grid = PathGrid::new(0.002, 15_000);
        let input = SampledPath::from_fn(&grid, |_| m.x0);
        let out = apply_l(&input, &m, &th, &LOptions::default()).unwrap();
        let err = out.path.sup_diff_fn(|t| constant_input_oracle(&m, &th, t), grid.horizon());
        assert!(err < 1e-6, "err = {err:e}");
        assert!(err <= out.error_bound);
    }

    #[test]
    fn initial_value_is_x0() {
        let (m, th) = (market(), theta());
        let grid = PathGrid::new(0.05, 100);
        let input = SampledPath::from_fn(&grid, |t| 3.0 + t.sin());
        let out = apply_l(&input, &m, &th, &LOptions::default()).unwrap();
        assert_eq!(out.path.values[0], m.x0);
    }

    #[test]
    fn closed_form_is_fixed_point() {
        let (m, th) = (market(), theta());
        let eq = solve_mfg(&m, &th).unwrap();
        let grid = PathGrid::new(0.0025, 20_000);
        let input = SampledPath::from_fn(&grid, |t| eq.m_x.eval(t));
        let out = apply_l(&input, &m, &th, &LOptions::default()).unwrap();
        let res = out.path.sup_diff(&input, 50.0);
        assert!(res <= out.error_bound, "res {res:e} bound {:e}", out.error_bound);
        assert!(out.error_bound < 1e-5);
    }

    #[test]
    fn coarse_grid_rejected() {
        let (m, th) = (market(), theta());
        let grid = PathGrid::new(1.0, 60);
        let input = SampledPath::from_fn(&grid, |_| m.x0);
        let opts = LOptions { max_error: Some(1e-6), ..Default::default() };
        assert!(matches!(apply_l(&input, &m, &th, &opts), Err(FixedPointError::GridTooCoarse { .. })));
    }

    #[test]
    fn picard_matches_closed_form() {
        let (m, th) = (market(), theta());
        let eq = solve_mfg(&m, &th).unwrap();
        let grid = PathGrid::new(0.01, 10_000);
        let res = picard_solve(&m, &th, &grid, &PicardOptions::default()).unwrap();
        assert!(res.converged(), "{:?}", res.residuals);
        let dist = res.path.sup_diff_fn(|t| eq.m_x.eval(t), 50.0);
        assert!(dist < 1e-4, "dist {dist:e}");
    }

    #[test]
    fn sampled_path_interpolation() {
        let p = SampledPath::new(0.5, vec![0.0, 1.0, 3.0]);
        assert_eq!(p.eval(0.25), 0.5);
        assert_eq!(p.eval(0.75), 2.0);
        assert_eq!(p.eval(10.0), 3.0);
        assert_eq!(p.horizon(), 1.0);
    }
}
