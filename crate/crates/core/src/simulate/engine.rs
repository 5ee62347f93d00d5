use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::params::{FirmType, InitialOutput, MarketParams, Population};
use crate::rng::{stream, StreamTag};

use super::law::CompiledLaw;
use super::{fingerprint, ControlLaw, JumpScheme, PriceMode, SimConfig, SimError, OVERFLOW_LIMIT};

/// Market state handed to observers at every grid point.
///
/// `jumps[i]` counts firm `i`'s events in the step that just ended.
pub struct StepState<'a> {
    pub step: usize,
    pub t: f64,
    pub outputs: &'a [f64],
    pub controls: &'a [f64],
    pub jumps: &'a [u32],
    pub price: f64,
    pub mean_output: f64,
}

/// Per-path consumer of simulated states.
pub trait PathObserver {
    type Output: Send;
    fn observe(&mut self, state: &StepState<'_>);
    /// Called once; `flagged` marks a path aborted on overflow.
    fn finish(self, flagged: bool) -> Self::Output;
}

/// Brownian and jump draws of one firm on one path.
pub(crate) struct FirmNoise {
    brownian: ChaCha8Rng,
    jumps: ChaCha8Rng,
    poisson: Option<Poisson<f64>>,
    exact: bool,
    rate: f64,
    dt: f64,
    next_arrival: f64,
}

impl FirmNoise {
    pub(crate) fn new(seed: u64, path: usize, firm: usize, lambda: f64, cfg: &SimConfig) -> Self {
        let dt = cfg.grid.dt;
        let brownian = stream(seed, path as u64, firm as u64, StreamTag::Brownian);
        let mut jumps = stream(seed, path as u64, firm as u64, StreamTag::Jumps);
        let exact = cfg.jump_scheme == JumpScheme::ExactJumpTimes;
        let next_arrival = if exact && lambda > 0.0 {
            <Exp1 as Distribution<f64>>::sample(&Exp1, &mut jumps) / lambda
        } else {
            f64::INFINITY
        };
        let poisson = (lambda * dt > 0.0).then(|| Poisson::new(lambda * dt).expect("positive finite intensity"));
        Self { brownian, jumps, poisson, exact, rate: lambda, dt, next_arrival }
    }

    /// `(Z, ΔN)` for step `k`, the interval `(t_k, t_{k+1}]`.
    #[inline]
    pub(crate) fn draw(&mut self, k: usize) -> (f64, u32) {
        let z: f64 = StandardNormal.sample(&mut self.brownian);
        let dn = if self.exact {
            let end = (k + 1) as f64 * self.dt;
            let mut count = 0;
            while self.next_arrival <= end {
                count += 1;
                let gap: f64 = Exp1.sample(&mut self.jumps);
                self.next_arrival += gap / self.rate;
            }
            count
        } else {
            match &self.poisson {
                Some(p) => p.sample(&mut self.jumps) as u32,
                None => 0,
            }
        };
        (z, dn)
    }
}

/// Initial output of `firm` on `path`.
pub(crate) fn initial_output(init: &InitialOutput, seed: u64, path: usize, firm: usize) -> f64 {
    init.sample(&mut stream(seed, path as u64, firm as u64, StreamTag::InitialOutput))
}

/// A validated market ready to simulate.
pub struct Engine {
    types: Vec<FirmType>,
    init: InitialOutput,
    laws: Vec<CompiledLaw>,
    market: MarketParams,
    cfg: SimConfig,
    prescribed: Option<Vec<f64>>,
    hash: String,
}

fn check_types(types: &[FirmType]) -> Result<(), SimError> {
    for (i, t) in types.iter().enumerate() {
        let fields = [t.mu, t.sigma, t.gamma, t.lambda, t.r, t.c];
        if fields.iter().any(|v| !v.is_finite()) || t.sigma < 0.0 || t.lambda < 0.0 {
            return Err(SimError::InvalidParams(format!("firm {i} has an unusable type {t:?}")));
        }
    }
    Ok(())
}

impl Engine {
    /// Degenerate types (`σ = 0`, `λ = 0`, `μ = 0`) are accepted; only
    /// non-finite values and negative `σ`, `λ` are rejected.
    pub fn new(
        pop: &Population,
        laws: &[ControlLaw],
        market: &MarketParams,
        cfg: &SimConfig,
    ) -> Result<Self, SimError> {
        Self::with_price(pop, laws, market, cfg, PriceMode::Market)
    }

    pub fn with_price(
        pop: &Population,
        laws: &[ControlLaw],
        market: &MarketParams,
        cfg: &SimConfig,
        price: PriceMode,
    ) -> Result<Self, SimError> {
        cfg.validate()?;
        if pop.n() == 0 {
            return Err(SimError::InvalidParams("population is empty".into()));
        }
        if laws.len() != pop.n() {
            return Err(SimError::LawCount { expected: pop.n(), got: laws.len() });
        }
        check_types(&pop.types)?;
        if pop.init.validate().is_err() {
            return Err(SimError::InvalidParams(format!("initial output law {:?}", pop.init)));
        }
        let m = market;
        if ![m.alpha, m.beta, m.rho, m.p0, m.x0].iter().all(|v| v.is_finite()) {
            return Err(SimError::InvalidParams("market parameters must be finite".into()));
        }
        for law in laws {
            law.validate()?;
        }
        let prescribed = match &price {
            PriceMode::Market => None,
            PriceMode::Prescribed(f) => Some(f.sample(cfg.grid.dt, cfg.grid.n_steps)),
        };
        let hash = fingerprint(&(pop, laws, market, cfg, prescribed.is_some()));
        let hash = match &price {
            PriceMode::Market => hash,
            PriceMode::Prescribed(f) => fingerprint(&(hash, f)),
        };
        Ok(Self {
            types: pop.types.clone(),
            init: pop.init,
            laws: laws.iter().map(|l| l.compile(&cfg.grid)).collect(),
            market: *market,
            cfg: cfg.clone(),
            prescribed,
            hash,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn n_firms(&self) -> usize {
        self.types.len()
    }

    pub fn config_hash(&self) -> String {
        self.hash.clone()
    }

    /// Simulates one path; returns `true` if it overflowed.
    pub fn run_path<O: PathObserver>(&self, path: usize, obs: &mut O) -> bool {
        let n = self.types.len();
        let grid = self.cfg.grid;
        let dt = grid.dt;
        let sqdt = dt.sqrt();
        let seed = self.cfg.seed;
        let m = &self.market;
        let mut noise: Vec<FirmNoise> =
            self.types.iter().enumerate().map(|(f, t)| FirmNoise::new(seed, path, f, t.lambda, &self.cfg)).collect();
        let mut x: Vec<f64> = (0..n).map(|f| initial_output(&self.init, seed, path, f)).collect();
        let mut u = vec![0.0; n];
        let mut jumps = vec![0u32; n];
        let mut p = match &self.prescribed {
            Some(v) => v[0],
            None => m.p0,
        };
        for k in 0..=grid.n_steps {
            let mean = x.iter().sum::<f64>() / n as f64;
            for f in 0..n {
                u[f] = self.laws[f].value(k, x[f], p);
            }
            obs.observe(&StepState {
                step: k,
                t: grid.time(k),
                outputs: &x,
                controls: &u,
                jumps: &jumps,
                price: p,
                mean_output: mean,
            });
            if k == grid.n_steps {
                break;
            }
            let mut jump_sum = 0.0;
            let mut overflow = false;
            for f in 0..n {
                let theta = &self.types[f];
                let (z, dn) = noise[f].draw(k);
                jumps[f] = dn;
                if dn > 0 {
                    jump_sum += theta.gamma * x[f] * dn as f64;
                }
                x[f] += x[f] * (-theta.mu * dt + theta.sigma * sqdt * z) + u[f] * dt;
                overflow |= !(x[f].abs() <= OVERFLOW_LIMIT);
            }
            p = match &self.prescribed {
                Some(v) => v[k + 1],
                None => p + m.alpha * (m.beta - mean - p) * dt + m.alpha / n as f64 * jump_sum,
            };
            if overflow {
                return true;
            }
        }
        false
    }
}

/// Runs every path in parallel; results come back in path order.
pub fn run_paths<O, F>(engine: &Engine, make: F) -> Vec<O::Output>
where
    O: PathObserver,
    F: Fn(usize) -> O + Sync,
{
    (0..engine.cfg.n_paths)
        .into_par_iter()
        .map(|path| {
            let mut obs = make(path);
            let flagged = engine.run_path(path, &mut obs);
            obs.finish(flagged)
        })
        .collect()
}
