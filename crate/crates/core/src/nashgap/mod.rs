//! Empirical ε-Nash diagnostics: best-response search against the
//! decentralized profile and mean-field convergence of the finite market.
//!
//! Search families are restricted, so every reported gap is a lower bound on
//! the true best-response improvement.

mod kernel;

pub use kernel::DeviationKernel;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::equilibrium::{decentralized_control, solve_mfg, EquilibriumError, MfgEquilibrium, SampledPath};
use crate::exppoly::{ExpPoly, ExpPolyError};
use crate::params::{make_population, FirmType, Heterogeneity, InitialOutput, MarketParams, ParamError, Population};
use crate::reward::{summarize, RewardError, RewardEstimate};
use crate::rng::derive_seed;
use crate::simulate::{
    mean_and_stderr, run_paths, ControlLaw, DeterministicPath, Engine, PathObserver, PiecewiseConstant, SimConfig,
    SimError, StepState,
};

/// Salt separating the evaluation seed from the search seed.
pub const EVALUATION_SALT: u64 = 0x6576_616c;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum GapError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Equilibrium(#[from] EquilibriumError),
    #[error(transparent)]
    ExpPoly(#[from] ExpPolyError),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("search family has no parameters")]
    DegenerateFamily,
    #[error("budget {budget} is below the family dimension + 1 = {needed}")]
    BudgetTooSmall { budget: usize, needed: usize },
    #[error("n_list must be non-empty and strictly ascending")]
    BadNList,
    #[error("baseline strategy has negative estimated reward {0}")]
    IrrationalBaseline(f64),
}

/// Deviation family of the searching firm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Family {
    /// `u^{*,i}(t) + v_j` on `k` log-spaced segments.
    PiecewiseConstant { segments: usize },
    /// `u^{*,i}(t) + c + b·X + k·P`.
    LinearFeedback,
}

impl Default for Family {
    fn default() -> Self {
        Family::PiecewiseConstant { segments: 16 }
    }
}

impl Family {
    pub fn dimension(&self) -> usize {
        match self {
            Family::PiecewiseConstant { segments } => *segments,
            Family::LinearFeedback => 3,
        }
    }

    pub fn id(&self) -> String {
        match self {
            Family::PiecewiseConstant { segments } => format!("piecewise_constant_{segments}"),
            Family::LinearFeedback => "linear_feedback".into(),
        }
    }

    /// Law with parameters `params` around the base strategy.
    pub fn law(&self, base: &ExpPoly, params: &[f64], horizon: f64, dt: f64) -> ControlLaw {
        match self {
            Family::PiecewiseConstant { segments } => ControlLaw::Offset {
                base: DeterministicPath::ExpPoly(base.clone()),
                offset: PiecewiseConstant {
                    breakpoints: PiecewiseConstant::log_spaced(horizon, *segments),
                    values: params.to_vec(),
                },
            },
            Family::LinearFeedback => {
                let n = (horizon / dt).round() as usize;
                let a = base.sample(dt, n).into_iter().map(|v| v + params[0]).collect();
                ControlLaw::LinearFeedback { a: SampledPath::new(dt, a), b: params[1], k: params[2] }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchOptions {
    /// Maximum number of objective evaluations, including the initial point.
    pub budget: usize,
    /// Cap on coordinate sweeps; `Some(0)` returns the initial point.
    pub max_sweeps: Option<usize>,
    /// First probe step; defaults to a fraction of the base control's size.
    pub initial_step: Option<f64>,
    /// A sweep gaining less than this (relative to |reward|) stops the search.
    pub rel_tol: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { budget: 400, max_sweeps: None, initial_step: None, rel_tol: 1e-12 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Converged,
    BudgetExhausted,
    SweepLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub law: ControlLaw,
    pub params: Vec<f64>,
    /// Incumbent reward on the search paths.
    pub reward: RewardEstimate,
    /// Initial-point reward on the same paths.
    pub baseline: RewardEstimate,
    pub evaluations: usize,
    /// Candidates dropped by the nonnegative-reward screen.
    pub discarded: usize,
    pub status: SearchStatus,
}

struct Objective<'a> {
    kernel: &'a DeviationKernel,
    family: Family,
    base: &'a ExpPoly,
    horizon: f64,
    rho: f64,
    evaluations: usize,
    discarded: usize,
}

impl Objective<'_> {
    fn law(&self, x: &[f64]) -> ControlLaw {
        self.family.law(self.base, x, self.horizon, self.kernel.config().grid.dt)
    }

    fn estimate(&mut self, x: &[f64]) -> Result<RewardEstimate, GapError> {
        self.evaluations += 1;
        let samples = self.kernel.evaluate(&self.law(x))?;
        Ok(summarize(&samples, self.horizon, self.rho)?)
    }

    /// Estimate, or `None` if screened out.
    fn value(&mut self, x: &[f64]) -> Result<Option<RewardEstimate>, GapError> {
        let est = self.estimate(x)?;
        if est.mean < 0.0 || !est.mean.is_finite() {
            self.discarded += 1;
            return Ok(None);
        }
        Ok(Some(est))
    }
}

/// Coordinate search with a three-point parabola per coordinate, all
/// evaluations on the kernel's fixed noise.
pub fn search_with_kernel(
    kernel: &DeviationKernel,
    base: &ExpPoly,
    family: Family,
    opts: &SearchOptions,
) -> Result<SearchOutcome, GapError> {
    let dim = family.dimension();
    if dim == 0 {
        return Err(GapError::DegenerateFamily);
    }
    if opts.budget < dim + 1 {
        return Err(GapError::BudgetTooSmall { budget: opts.budget, needed: dim + 1 });
    }
    let grid = kernel.config().grid;
    let horizon = grid.horizon();
    let rho = kernel.rho();
    let mut obj = Objective { kernel, family, base, horizon, rho, evaluations: 0, discarded: 0 };

    let mut x = vec![0.0; dim];
    let baseline = obj.estimate(&x)?;
    if baseline.mean < 0.0 {
        return Err(GapError::IrrationalBaseline(baseline.mean));
    }
    let mut best = baseline;
    let scale = (0..=grid.n_steps).map(|k| base.eval(grid.time(k)).abs()).fold(0.0, f64::max).max(1e-2);
    let h0 = opts.initial_step.unwrap_or(0.1 * scale);
    let mut step = vec![h0; dim];
    let mut status = SearchStatus::BudgetExhausted;
    let mut sweeps = 0;

    'outer: loop {
        if opts.max_sweeps.is_some_and(|m| sweeps >= m) {
            status = SearchStatus::SweepLimit;
            break;
        }
        let start = best.mean;
        for j in 0..dim {
            if obj.evaluations + 2 > opts.budget {
                break 'outer;
            }
            let h = step[j];
            let mut probe = x.clone();
            probe[j] = x[j] + h;
            let up = obj.value(&probe)?;
            probe[j] = x[j] - h;
            let down = obj.value(&probe)?;
            let mut moved: Option<(f64, RewardEstimate)> = None;
            if let (Some(u), Some(d)) = (&up, &down) {
                let curvature = (u.mean - 2.0 * best.mean + d.mean) / (h * h);
                let slope = (u.mean - d.mean) / (2.0 * h);
                if curvature < 0.0 && obj.evaluations < opts.budget {
                    let delta = (-slope / curvature).clamp(-10.0 * h, 10.0 * h);
                    probe[j] = x[j] + delta;
                    if let Some(v) = obj.value(&probe)? {
                        if v.mean > best.mean {
                            moved = Some((delta, v));
                        }
                    }
                }
            }
            for (d, v) in [(h, up), (-h, down)] {
                if let Some(v) = v {
                    if v.mean > moved.as_ref().map_or(best.mean, |m| m.1.mean) {
                        moved = Some((d, v));
                    }
                }
            }
            match moved {
                Some((delta, v)) => {
                    x[j] += delta;
                    best = v;
                    step[j] = delta.abs().clamp(1e-6 * h0, 10.0 * h0);
                }
                None => step[j] = (0.5 * h).max(1e-6 * h0),
            }
        }
        sweeps += 1;
        if best.mean - start <= opts.rel_tol * best.mean.abs() {
            status = SearchStatus::Converged;
            break;
        }
    }

    Ok(SearchOutcome {
        law: obj.law(&x),
        params: x,
        reward: best,
        baseline,
        evaluations: obj.evaluations,
        discarded: obj.discarded,
        status,
    })
}

/// Best response of firm `i` over `family`, the other firms playing
/// `base_laws`; firm `i`'s own base law must be an [`ExpPoly`].
pub fn best_response_search(
    pop: &Population,
    base_laws: &[ControlLaw],
    market: &MarketParams,
    i: usize,
    family: Family,
    opts: &SearchOptions,
    cfg: &SimConfig,
) -> Result<SearchOutcome, GapError> {
    let base = match base_laws.get(i) {
        Some(ControlLaw::Deterministic { path: DeterministicPath::ExpPoly(f) }) => f.clone(),
        Some(_) => {
            return Err(
                SimError::InvalidLaw("searching firm's base law must be an exponential polynomial".into()).into()
            )
        }
        None => return Err(SimError::FirmIndex { index: i, n: pop.n() }.into()),
    };
    let kernel = DeviationKernel::new(pop, base_laws, i, market, cfg)?;
    search_with_kernel(&kernel, &base, family, opts)
}

/// Decentralized strategies of every firm in `pop`.
pub fn decentralized_laws(eq: &MfgEquilibrium, pop: &Population) -> Result<Vec<ControlLaw>, GapError> {
    pop.types.iter().map(|t| Ok(ControlLaw::exppoly(decentralized_control(eq, t)?))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapConfig {
    pub sim: SimConfig,
    #[serde(default)]
    pub family: Family,
    #[serde(default)]
    pub search: SearchOptions,
    #[serde(default)]
    pub heterogeneity: Heterogeneity,
    pub init: InitialOutput,
    /// Extra randomly chosen firms to test besides firm 0.
    #[serde(default)]
    pub extra_firms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub n: usize,
    pub firm: usize,
    pub family: String,
    pub budget: usize,
    /// Baseline and incumbent on fresh evaluation paths, with common noise.
    pub baseline: RewardEstimate,
    pub best: RewardEstimate,
    pub gap: f64,
    pub gap_stderr: f64,
    /// Improvement on the search paths (optimistically biased).
    pub in_sample_gap: f64,
    pub seed: u64,
    pub evaluation_seed: u64,
    pub evaluations: usize,
    pub status: SearchStatus,
}

/// Paired mean and standard error of `b − a` over paths valid in both.
pub fn paired_difference(a: &[Option<(f64, f64)>], b: &[Option<(f64, f64)>]) -> (f64, f64) {
    mean_and_stderr(a.iter().zip(b).filter_map(|(x, y)| Some(y.as_ref()?.0 - x.as_ref()?.0)))
}

fn report_for(
    pop: &Population,
    laws: &[ControlLaw],
    market: &MarketParams,
    firm: usize,
    cfg: &GapConfig,
    seed: u64,
) -> Result<GapReport, GapError> {
    let base = match &laws[firm] {
        ControlLaw::Deterministic { path: DeterministicPath::ExpPoly(f) } => f.clone(),
        _ => unreachable!("decentralized laws are exponential polynomials"),
    };
    let search_cfg = SimConfig { seed, ..cfg.sim.clone() };
    let outcome = {
        let kernel = DeviationKernel::new(pop, laws, firm, market, &search_cfg)?;
        search_with_kernel(&kernel, &base, cfg.family, &cfg.search)?
    };
    let evaluation_seed = derive_seed(seed, EVALUATION_SALT);
    let eval_cfg = SimConfig { seed: evaluation_seed, ..cfg.sim.clone() };
    let kernel = DeviationKernel::new(pop, laws, firm, market, &eval_cfg)?;
    let base_samples = kernel.evaluate(&laws[firm])?;
    let best_samples = kernel.evaluate(&outcome.law)?;
    let horizon = eval_cfg.grid.horizon();
    let (gap, gap_stderr) = paired_difference(&base_samples, &best_samples);
    Ok(GapReport {
        n: pop.n(),
        firm,
        family: cfg.family.id(),
        budget: cfg.search.budget,
        baseline: summarize(&base_samples, horizon, market.rho)?,
        best: summarize(&best_samples, horizon, market.rho)?,
        gap,
        gap_stderr,
        in_sample_gap: outcome.reward.mean - outcome.baseline.mean,
        seed,
        evaluation_seed,
        evaluations: outcome.evaluations,
        status: outcome.status,
    })
}

/// Gap reports for each `n`, firm 0 first, then `extra_firms` sampled firms.
pub fn gap_curve(
    market: &MarketParams,
    limit_type: &FirmType,
    n_list: &[usize],
    cfg: &GapConfig,
) -> Result<Vec<GapReport>, GapError> {
    if n_list.is_empty() || n_list.windows(2).any(|w| w[1] <= w[0]) || n_list[0] == 0 {
        return Err(GapError::BadNList);
    }
    let eq = solve_mfg(market, limit_type)?;
    let mut reports = Vec::new();
    for &n in n_list {
        let seed = derive_seed(cfg.sim.seed, n as u64);
        let pop = make_population(n, *limit_type, &cfg.heterogeneity, cfg.init, seed)?;
        let laws = decentralized_laws(&eq, &pop)?;
        let mut firms = vec![0];
        let mut draw = seed;
        while firms.len() < (1 + cfg.extra_firms).min(n) {
            draw = derive_seed(draw, 1);
            let f = (draw % n as u64) as usize;
            if !firms.contains(&f) {
                firms.push(f);
            }
        }
        for firm in firms {
            reports.push(report_for(&pop, &laws, market, firm, cfg, seed)?);
        }
    }
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    /// `max_k E|P(t_k) − m_P(t_k)|²`.
    pub sup_price_gap: f64,
    /// `max_k E|X̄(t_k) − m_X(t_k)|²`.
    pub sup_output_gap: f64,
    /// `max_k E[P(t_k)² + X̄(t_k)²]`.
    pub max_second_moment: f64,
    pub seed: u64,
    pub n_flagged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// Least-squares slope of `ln(sup gap)` against `ln n`.
    pub price_slope: f64,
    pub output_slope: f64,
}

struct GapObserver<'a> {
    m_p: &'a [f64],
    m_x: &'a [f64],
    out: Vec<[f64; 3]>,
}

impl PathObserver for GapObserver<'_> {
    type Output = Option<Vec<[f64; 3]>>;

    fn observe(&mut self, s: &StepState<'_>) {
        let k = s.step;
        let dp = s.price - self.m_p[k];
        let dx = s.mean_output - self.m_x[k];
        self.out[k] = [dp * dp, dx * dx, s.price * s.price + s.mean_output * s.mean_output];
    }

    fn finish(self, flagged: bool) -> Self::Output {
        (!flagged).then_some(self.out)
    }
}

fn log_slope(ns: &[usize], ys: &[f64]) -> f64 {
    let xs: Vec<f64> = ns.iter().map(|n| (*n as f64).ln()).collect();
    let ls: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let k = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / k, ls.iter().sum::<f64>() / k);
    let cov: f64 = xs.iter().zip(&ls).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}

/// Mean-field gaps of each population under its decentralized profile.
/// Population `j` runs on seed `derive_seed(cfg.seed, n_j)`.
pub fn convergence_check(
    pops: &[Population],
    market: &MarketParams,
    cfg: &SimConfig,
) -> Result<ConvergenceTable, GapError> {
    let mut rows = Vec::with_capacity(pops.len());
    for pop in pops {
        let eq = solve_mfg(market, &pop.limit_type)?;
        let laws = decentralized_laws(&eq, pop)?;
        let seed = derive_seed(cfg.seed, pop.n() as u64);
        let run_cfg = SimConfig { seed, ..cfg.clone() };
        let engine = Engine::new(pop, &laws, market, &run_cfg)?;
        let (dt, steps) = (cfg.grid.dt, cfg.grid.n_steps);
        let m_p = eq.m_p.sample(dt, steps);
        let m_x = eq.m_x.sample(dt, steps);
        let paths = run_paths(&engine, |_| GapObserver { m_p: &m_p, m_x: &m_x, out: vec![[0.0; 3]; steps + 1] });
        let kept: Vec<&Vec<[f64; 3]>> = paths.iter().flatten().collect();
        let mut sums = vec![[0.0; 3]; steps + 1];
        for path in &kept {
            for (acc, v) in sums.iter_mut().zip(path.iter()) {
                for c in 0..3 {
                    acc[c] += v[c];
                }
            }
        }
        let count = kept.len().max(1) as f64;
        let sup = |c: usize| sums.iter().map(|s| s[c] / count).fold(0.0, f64::max);
        rows.push(ConvergenceRow {
            n: pop.n(),
            sup_price_gap: sup(0),
            sup_output_gap: sup(1),
            max_second_moment: sup(2),
            seed,
            n_flagged: paths.len() - kept.len(),
        });
    }
    let ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    let (price_slope, output_slope) = if rows.len() >= 2 {
        (
            log_slope(&ns, &rows.iter().map(|r| r.sup_price_gap).collect::<Vec<_>>()),
            log_slope(&ns, &rows.iter().map(|r| r.sup_output_gap).collect::<Vec<_>>()),
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(ConvergenceTable { rows, price_slope, output_slope })
}
